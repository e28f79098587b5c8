"""Leader pricing: the ECP's three-point decaying-step search.

Each outer iteration probes ``(o - step, o, o + step) * price_cap``, lets the
MUs settle on a stable structure at every probe, and moves the normalised
price ``o`` toward the probe with the highest ECP utility. The step shrinks
by 1% per iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT_EPS, DEFAULT_STEP0
from .erc import ErcEquilibrium
from .model import CoalitionStructure
from .ocf import FormationOutcome, MarketContext, StructureEvaluation, form_coalitions

STEP_DECAY = 0.99
PRICE_FLOOR_FRACTION = 1e-6
DEFAULT_MAX_ITERATIONS = 2_000


class PricingNotConverged(RuntimeError):
    pass


@dataclass(frozen=True)
class PricingState:
    o: float
    o_pre: float
    step: float
    iteration: int
    structure_snapshot: CoalitionStructure

    def __post_init__(self) -> None:
        if not 0.0 <= self.o <= 1.0:
            raise ValueError(f"normalised price {self.o} outside [0, 1]")
        if not self.step > 0:
            raise ValueError("step must be positive")

    def probe_points(self) -> tuple[float, float, float]:
        return (self.o - self.step, self.o, self.o + self.step)


@dataclass(frozen=True)
class TrajectoryRecord:
    iteration: int
    p_low: float
    p_mid: float
    p_high: float
    u_low: float
    u_mid: float
    u_high: float
    o_next: float

    def to_line(self) -> str:
        vals = (self.p_low, self.p_mid, self.p_high, self.u_low, self.u_mid, self.u_high, self.o_next)
        return ", ".join([str(self.iteration)] + [f"{v:.6g}" for v in vals])


@dataclass(frozen=True)
class StackelbergResult:
    p_star: float
    final_evaluation: StructureEvaluation
    price_trajectory: tuple[TrajectoryRecord, ...] = field(repr=False)
    capped_probes: int = 0

    @property
    def final_structure(self) -> CoalitionStructure:
        return self.final_evaluation.structure

    @property
    def final_equilibrium(self) -> ErcEquilibrium:
        return self.final_evaluation.equilibrium

    @property
    def ecp_utility(self) -> float:
        return self.final_evaluation.ecp_utility

    @property
    def iterations(self) -> int:
        return len(self.price_trajectory)


def clamp_price(p: float, price_cap: float) -> float:
    """Project onto ``[floor, price_cap]``; the floor keeps demand finite."""
    return min(max(p, PRICE_FLOOR_FRACTION * price_cap), price_cap)


def child_seed(rng_seed: int, iteration: int, probe: int) -> int:
    return int(np.random.SeedSequence([int(rng_seed), iteration, probe]).generate_state(1)[0])


def probe_outcome(p_k: float, state: PricingState, ctx: MarketContext, rng_seed: int,
                  allow_cap: bool = False) -> FormationOutcome:
    price = clamp_price(p_k, ctx.params.price_cap)
    return form_coalitions(state.structure_snapshot, price, ctx, rng_seed, allow_cap=allow_cap)


def probe_price(p_k: float, state: PricingState, ctx: MarketContext, rng_seed: int) -> StructureEvaluation:
    """Stable structure and equilibrium at price ``p_k``, warm-started from the snapshot."""
    return probe_outcome(p_k, state, ctx, rng_seed).evaluation


def winning_probe(evals) -> int:
    """Index of the probe the search moves to: 0 low, 1 centre, 2 high.

    The centre keeps any tie it is part of; between the outer probes the
    upper one wins ties.
    """
    u_low, u_mid, u_high = (ev.ecp_utility for ev in evals)
    best = max(u_low, u_mid, u_high)
    if u_mid >= best:
        return 1
    return 2 if u_high >= best else 0


def pricing_step(state: PricingState, evals: tuple[StructureEvaluation, StructureEvaluation, StructureEvaluation]) -> PricingState:
    k = winning_probe(evals)
    o = (max(state.o - state.step, 0.0), state.o, min(state.o + state.step, 1.0))[k]
    return PricingState(
        o=o,
        o_pre=state.o,
        step=state.step * STEP_DECAY,
        iteration=state.iteration + 1,
        structure_snapshot=evals[k].structure,
    )


def solve_stackelberg(ctx: MarketContext, rng_seed: int, eps: float = DEFAULT_EPS,
                      step0: float = DEFAULT_STEP0, max_iterations: int = DEFAULT_MAX_ITERATIONS,
                      initial: CoalitionStructure | None = None,
                      allow_cap: bool = False) -> StackelbergResult:
    """Alternate price probes and coalition formation until the price settles.

    With ``allow_cap`` a probe whose coalition formation runs out of passes
    uses its last structure; such probes are counted in ``capped_probes``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not 0 < step0 <= 1:
        raise ValueError("step0 must lie in (0, 1]")
    p_bar = ctx.params.price_cap
    if initial is None:
        initial = CoalitionStructure.singletons(ctx.n_mus)
    state = PricingState(o=1.0, o_pre=0.0, step=step0, iteration=0, structure_snapshot=initial)
    trajectory = []
    winner = None
    capped = 0
    while abs(state.o - state.o_pre) > eps:
        if state.iteration >= max_iterations:
            raise PricingNotConverged(
                f"price search still moving after {max_iterations} iterations (o={state.o:.6g})")
        prices = [clamp_price(x * p_bar, p_bar) for x in state.probe_points()]
        outcomes = [probe_outcome(pk, state, ctx, child_seed(rng_seed, state.iteration, k), allow_cap)
                    for k, pk in enumerate(prices)]
        capped += sum(o.capped for o in outcomes)
        evals = tuple(o.evaluation for o in outcomes)
        nxt = pricing_step(state, evals)
        winner = evals[winning_probe(evals)]
        trajectory.append(TrajectoryRecord(state.iteration, *prices, *(ev.ecp_utility for ev in evals), nxt.o))
        state = nxt
    return StackelbergResult(p_star=state.o * p_bar, final_evaluation=winner, price_trajectory=tuple(trajectory),
                             capped_probes=capped)

