"""Brute-force checkers, slow on purpose and sharing as little code as possible.

Used by the tests and by ``ocfmine verify``. Every size guard is a hard
precondition: an oversized instance raises instead of being truncated.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .erc import ErcEquilibrium, ErcInput, gap_bound, nonce_cap, solve_erc
from .model import CoalitionStructure, mu_utility, reward_factor
from .ocf import UTILITY_TOL, MarketContext, form_coalitions
from .stackelberg import clamp_price

MAX_PROFILES = 10**7
FIXED_POINT_TOL = 1e-9
MAX_CYCLE_PERIOD = 8


@dataclass(frozen=True)
class Witness:
    """A strictly improving deviation; ``who`` is a coalition index or MU id."""

    who: int
    strategy: str
    delta: float

    def to_text(self) -> str:
        return f"who={self.who} strategy={self.strategy} delta={self.delta:.12g}"


@dataclass(frozen=True)
class OracleReport:
    verdict: bool
    witness: Witness | None = None
    note: str = ""

    def __post_init__(self) -> None:
        if not self.verdict and self.witness is None:
            raise ValueError("a failing report needs a witness")

    def to_text(self) -> str:
        head = "PASS" if self.verdict else "FAIL"
        parts = [head]
        if self.witness is not None:
            parts.append(self.witness.to_text())
        if self.note:
            parts.append(self.note)
        return " | ".join(parts)


# ---------------------------------------------------------------- ERC game

def _payoff_table(theta: float, p: float, cap: int, others: np.ndarray) -> np.ndarray:
    """Payoff of every own level 0..cap (rows) against every opponent total (columns)."""
    own = np.arange(cap + 1, dtype=float)[:, None]
    tot = own + others[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(tot > 0, own * theta / tot, 0.0) - own * p
    return u


def brute_force_erc(inp: ErcInput) -> list[tuple[int, ...]]:
    """Every integer profile from which no coalition can strictly gain alone.

    Exact floating comparison: a level is a best response when its payoff
    equals the row maximum, which is itself one of the computed payoffs.
    """
    caps = inp.caps
    M = len(caps)
    n_profiles = math.prod(c + 1 for c in caps)
    if n_profiles > MAX_PROFILES:
        raise ValueError(f"{n_profiles} profiles exceed the brute-force limit of {MAX_PROFILES}")
    if M == 0:
        return [()]
    total_cap = sum(caps)
    # is_best[m][l, s]: l is a best reply of coalition m to opponent total s
    is_best = []
    for m in range(M):
        others = np.arange(total_cap - caps[m] + 1, dtype=float)
        u = _payoff_table(inp.thetas[m], inp.price, caps[m], others)
        is_best.append(u >= u.max(axis=0, keepdims=True))
    grids = np.indices([c + 1 for c in caps]).reshape(M, -1).T
    total = grids.sum(axis=1)
    ok = np.ones(len(grids), dtype=bool)
    for m in range(M):
        own = grids[:, m]
        ok &= is_best[m][own, total - own]
    return [tuple(int(v) for v in row) for row in grids[ok]]


def deviation_gains(levels: Sequence[int], inp: ErcInput) -> list[tuple[float, int]]:
    """Per coalition: largest unilateral gain over all integer levels, and that level."""
    total = sum(levels)
    out = []
    for m, (theta, cap) in enumerate(zip(inp.thetas, inp.caps)):
        others = total - levels[m]
        u = _payoff_table(theta, inp.price, cap, np.array([float(others)]))[:, 0]
        k = int(np.argmax(u))
        out.append((float(u[k] - u[levels[m]]), k))
    return out


def epsilon_ne_check(eq: ErcEquilibrium, inp: ErcInput) -> OracleReport:
    """No coalition gains more than the gradient bound by any unilateral integer move."""
    for m, (gain, level) in enumerate(deviation_gains(eq.levels, inp)):
        bound = gap_bound(inp.thetas[m], eq.opponents(m), inp.price, inp.caps[m])
        if gain > bound:
            return OracleReport(False, Witness(m, f"l={level}", gain), f"G={bound:.12g}")
    return OracleReport(True)


@dataclass(frozen=True)
class IterationReport:
    """Outcome of real-valued best-response iteration."""

    status: str  # "fixed_point", "cycle" or "max_iters"
    levels: tuple[float, ...]
    iterations: int
    period: int = 0


def _br_map(x: np.ndarray, th: np.ndarray, caps: np.ndarray, p: float) -> np.ndarray:
    others = x.sum() - x
    return np.clip(np.sqrt(th * others / p) - others, 0.0, caps)


def best_response_iteration(inp: ErcInput, max_iters: int = 10_000,
                            damping: float | None = None) -> IterationReport:
    """Synchronous real best-response updates from the interior point ``cap / 2``.

    Plain synchronous updates oscillate with growing amplitude once four or
    more coalitions are active, and with two they can jump straight to the
    all-zero profile, where the formula's reply to zero opponents is zero.
    Each step therefore moves a fraction ``damping`` of the way to the best
    reply. By default this is ``min(0.5, 2 / M)``, and the run is repeated
    at a tenth of that step if it does not settle (tiny equilibria near zero,
    where the square-root reply is steep). A damped fixed point is an
    undamped one; the fixed-point test is on the undamped residual. With M=1
    the formula's fixed point is 0, not the monopoly level.
    """
    if damping is not None:
        return _iterate(inp, max_iters, damping)
    alpha = min(0.5, 2.0 / max(inp.n_coalitions, 1))
    report = _iterate(inp, max_iters, alpha)
    if report.status == "fixed_point":
        return report
    return _iterate(inp, max_iters, alpha / 10.0)


def _iterate(inp: ErcInput, max_iters: int, alpha: float) -> IterationReport:
    if inp.price <= 0:
        raise ValueError("best-response iteration needs a positive price")
    th = np.array(inp.thetas)
    caps = np.array(inp.caps, dtype=float)
    x = caps / 2.0
    recent: deque[np.ndarray] = deque(maxlen=MAX_CYCLE_PERIOD)
    for it in range(1, max_iters + 1):
        br = _br_map(x, th, caps, inp.price)
        gap = np.abs(br - x)
        if np.all(gap <= FIXED_POINT_TOL * np.maximum(1.0, np.abs(x))):
            return IterationReport("fixed_point", tuple(br.tolist()), it)
        x = (1.0 - alpha) * x + alpha * br
        for k, old in enumerate(reversed(recent), start=1):
            if np.array_equal(old, x):
                return IterationReport("cycle", tuple(x.tolist()), it, k)
        recent.append(x.copy())
    return IterationReport("max_iters", tuple(x.tolist()), max_iters)


def finite_difference_gradient(theta: float, sum_l_other: float, p: float, l: float,
                               h: float = 1e-4) -> float:
    """Central difference of the real-relaxed coalition payoff."""
    def u(x):
        return x * theta / (x + sum_l_other) - x * p
    return (u(l + h) - u(l - h)) / (2.0 * h)


# ---------------------------------------------------------------- stability

def _xi(coalitions: Sequence[frozenset[int]], price: float, ctx: MarketContext) -> list[float]:
    """Per-MU utility straight from the model formulas."""
    params = ctx.params
    cap = nonce_cap(params)
    structure = CoalitionStructure.build(coalitions)
    thetas = [reward_factor(c, ctx.profiles, ctx.pool, params) for c in structure.coalitions]
    eq = solve_erc(ErcInput(thetas, [cap] * len(thetas), price))
    total = eq.total_nonce
    counts = structure.membership_counts()
    xi = [0.0] * ctx.n_mus
    for members, theta, level in zip(structure.coalitions, thetas, eq.levels):
        if cap == 0:
            continue
        for n in members:
            if counts[n] <= ctx.capacity:
                xi[n] += mu_utility(level / len(members), total, theta, price)
    return xi


def _candidates(actor: int, coalitions: list[frozenset[int]], capacity: int):
    solo = frozenset((actor,))
    mine = [c for c in coalitions if actor in c]
    others = [c for c in coalitions if actor not in c]
    spare = len(mine) < capacity
    if spare:
        for t in others:
            yield "merge_A", None, t, [t], [t | solo]
    for s in mine:
        for t in others:
            yield "merge_B", s, t, [s, t], [s - solo, t | solo]
    if spare:
        yield "split_A", None, None, [], [solo]
    for s in mine:
        if len(s) > 1:
            yield "split_B", s, None, [s], [s - solo, solo]
    for s in mine:
        yield "leave", s, None, [s], [s - solo]


def _fmt(c) -> str:
    return "-" if c is None else "{" + ",".join(map(str, sorted(c))) + "}"


def brute_force_stability(structure: CoalitionStructure, price: float, ctx: MarketContext) -> OracleReport:
    """Try every move of every MU against every coalition; pass iff none is admissible."""
    coalitions = list(structure.coalitions)
    before = _xi(coalitions, price, ctx)
    present = set(coalitions)
    for actor in range(ctx.n_mus):
        for kind, src, tgt, remove, add in _candidates(actor, coalitions, ctx.capacity):
            after_set = (present - set(remove)) | {c for c in add if c}
            if after_set == present:
                continue
            after = _xi(list(after_set), price, ctx)
            gain = after[actor] - before[actor]
            if gain <= UTILITY_TOL * max(1.0, abs(before[actor])):
                continue
            if tgt is not None and any(
                    before[n] - after[n] > UTILITY_TOL * max(1.0, abs(before[n])) for n in tgt):
                continue
            return OracleReport(False, Witness(actor, f"{kind} source={_fmt(src)} target={_fmt(tgt)}", gain))
    return OracleReport(True)


# ---------------------------------------------------------------- pricing

def price_grid(price_cap: float, points: int = 50) -> list[float]:
    """Uniform grid over ``[0, price_cap]``; zero is lifted to the price floor."""
    return [clamp_price(float(x), price_cap) for x in np.linspace(0.0, price_cap, points)]


def grid_scan(ctx: MarketContext, rng_seed: int, points: int = 50) -> list[tuple[float, float]]:
    """ECP utility at every grid price, each reached from all-singleton play.

    Play that wanders past the pass limit contributes its last structure.
    """
    start = CoalitionStructure.singletons(ctx.n_mus)
    return [(p, form_coalitions(start, p, ctx, rng_seed, allow_cap=True).evaluation.ecp_utility)
            for p in price_grid(ctx.params.price_cap, points)]
