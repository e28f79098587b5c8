"""Edge-resource competition among formed coalitions.

Each coalition ``m`` picks a total nonce length ``l_m`` and earns
``l_m / L * theta_m - l_m * p`` where ``L`` is the system total. The
equilibrium is found in closed form over an active set, rounded to
integers coalition by coalition, and split evenly among members.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from . import _kernels as _k
from .model import SystemParams, coalition_utility, transmission_rate

INTERIOR = "interior"
ZERO = "zero"
CAPPED = "capped"


@dataclass(frozen=True)
class ErcInput:
    thetas: tuple[float, ...]
    caps: tuple[int, ...]
    price: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "thetas", tuple(float(t) for t in self.thetas))
        object.__setattr__(self, "caps", tuple(int(c) for c in self.caps))
        if len(self.thetas) != len(self.caps):
            raise ValueError("thetas and caps must have equal length")
        if any(t <= 0 for t in self.thetas):
            raise ValueError("reward factors must be positive")
        if any(c < 0 for c in self.caps):
            raise ValueError("nonce caps must be non-negative")
        if self.price < 0:
            raise ValueError("price must be non-negative")

    @classmethod
    def trusted(cls, thetas: tuple[float, ...], caps: tuple[int, ...], price: float) -> "ErcInput":
        """Skip validation for inputs assembled internally from checked data."""
        inp = object.__new__(cls)
        object.__setattr__(inp, "thetas", thetas)
        object.__setattr__(inp, "caps", caps)
        object.__setattr__(inp, "price", price)
        return inp

    @property
    def n_coalitions(self) -> int:
        return len(self.thetas)


@dataclass(frozen=True)
class RealSolution:
    """Real-valued equilibrium ``l^+`` with each coalition's regime."""

    levels: tuple[float, ...]
    status: tuple[str, ...]
    total: float
    loop_iterations: int


@dataclass(frozen=True)
class ErcEquilibrium:
    price: float
    thetas: tuple[float, ...]
    caps: tuple[int, ...]
    real: tuple[float, ...]
    status: tuple[str, ...]
    levels: tuple[int, ...]
    utilities: tuple[float, ...]

    @property
    def total_nonce(self) -> int:
        return sum(self.levels)

    def opponents(self, m: int) -> int:
        return self.total_nonce - self.levels[m]


REPAIR_STEPS_PER_COALITION = 16


def nonce_cap(params: SystemParams) -> int:
    """Largest integer nonce length whose mining delay fits in one block interval."""
    rate = transmission_rate(params)
    budget = params.avg_block_time * rate - params.header_size
    if budget <= 0:
        return 0
    bound = params.ecp_freq * budget / (params.cycles_per_nonce * rate)
    # guard against 599.9999999999 landing on 600 after floating error
    return max(0, math.floor(bound + 1e-12 * max(1.0, bound)))


def best_response(theta_m: float, sum_l_other: float, p: float, cap: float) -> float:
    """Clamped real-valued best response; ``cap`` when the price is zero."""
    if p <= 0:
        return float(cap)
    raw = math.sqrt(theta_m * sum_l_other / p) - sum_l_other
    return min(max(raw, 0.0), float(cap))


def unconstrained_best_response(theta_m: float, sum_l_other: float, p: float) -> float:
    return math.sqrt(theta_m * sum_l_other / p) - sum_l_other


_CODES = (INTERIOR, ZERO, CAPPED)


def _descending(thetas) -> np.ndarray:
    return np.argsort(-np.asarray(thetas, dtype=float), kind="stable")


def _aggregate_by_root(th: np.ndarray, cp: np.ndarray, p: float) -> float:
    # sum_m clamp(1 - p S / theta_m, 0, cap_m / S) - 1 is strictly decreasing in S
    live = cp > 0
    t, c = th[live], cp[live]

    def excess(S):
        return float(np.minimum(np.maximum(1.0 - p * S / t, 0.0), c / S).sum()) - 1.0

    hi = float(t.max()) / p
    return brentq(excess, hi * 1e-15, hi, xtol=1e-14 * hi, rtol=1e-15, maxiter=500)


def closed_form_ne(inp: ErcInput) -> RealSolution:
    """Real-valued equilibrium via an active-set loop over the closed form.

    Coalitions whose closed-form level is negative drop to zero, those above
    their cap are pinned there, and the aggregate is re-solved over the
    rest until the classification stops changing. A lone live coalition is
    a monopolist and buys exactly one nonce when that pays.
    """
    thetas, caps, p = inp.thetas, inp.caps, inp.price
    M = len(thetas)
    if M == 0:
        return RealSolution((), (), 0.0, 0)
    if p <= 0:
        levels = tuple(float(c) for c in caps)
        return RealSolution(levels, tuple(CAPPED for _ in caps), sum(levels), 0)

    live_ids = [m for m in range(M) if caps[m] > 0]
    if len(live_ids) <= 1:
        levels = [0.0] * M
        status = [ZERO] * M
        for m in live_ids:
            if thetas[m] > p:
                levels[m], status[m] = 1.0, (CAPPED if caps[m] == 1 else INTERIOR)
        return RealSolution(tuple(levels), tuple(status), sum(levels), 0)

    order = _descending(thetas)
    th = np.asarray(thetas, dtype=float)[order]
    cp = np.asarray(caps, dtype=float)[order]
    code, S, iterations, converged = _k.real_solution(th, cp, float(p))
    if not converged:
        S = _aggregate_by_root(th, cp, p)
        code = _k.classify(S, th, cp, float(p))
    x = np.where(code == 1, 0.0, np.where(code == 2, cp, S - p * S * S / th))
    levels = np.empty(M)
    levels[order] = x
    status = [None] * M
    for pos, m in enumerate(order.tolist()):
        status[m] = _CODES[code[pos]]
    return RealSolution(tuple(levels.tolist()), tuple(status), float(S), int(iterations))


def integer_best_response(theta_m: float, sum_l_other: int, p: float, cap: int) -> int:
    """Best integer level against a fixed opponent total; the smaller level wins ties."""
    return int(_k.integer_best_response(float(theta_m), float(sum_l_other), float(p), float(cap)))


def integer_ne(real: RealSolution, inp: ErcInput) -> ErcEquilibrium:
    """Integer equilibrium near the real solution ``l+``.

    Each interior coalition first takes the better of floor/ceil of its
    ``l+`` against its opponents' real-valued total (smaller level on ties).
    The profile is then repaired one switch at a time: among coalitions not
    playing an integer best response, the one with the highest reward
    factor switches to it, until every coalition is best-responding.
    Neither step depends on where a coalition sits in the list (exact
    reward-factor ties excepted, which keep list order).
    """
    thetas, caps, p = inp.thetas, inp.caps, inp.price
    M = len(thetas)
    if M == 0:
        return ErcEquilibrium(p, thetas, caps, real.levels, real.status, (), ())
    order = _descending(thetas)
    th = np.asarray(thetas, dtype=float)[order]
    cp = np.asarray(caps, dtype=float)[order]
    x = np.asarray(real.levels, dtype=float)[order]
    interior = np.array([real.status[m] == INTERIOR for m in order.tolist()])
    lv, ut, _ = _k.integer_solution(th, cp, float(p), x, interior, REPAIR_STEPS_PER_COALITION * M)
    levels = np.empty(M)
    utilities = np.empty(M)
    levels[order] = lv
    utilities[order] = ut
    return ErcEquilibrium(p, thetas, caps, real.levels, real.status,
                          tuple(int(v) for v in levels.tolist()), tuple(utilities.tolist()))


def coalition_payoffs(thetas: Sequence[float], cap: int, p: float) -> np.ndarray:
    """Equilibrium utilities ``u_m`` only, for identical caps; same result as :func:`solve_erc`."""
    M = len(thetas)
    if M <= 1 or p <= 0 or cap <= 0:
        return np.asarray(solve_erc(ErcInput(tuple(thetas), (cap,) * M, p)).utilities)
    order = _descending(thetas)
    th = np.asarray(thetas, dtype=float)[order]
    cp = np.full(M, float(cap))
    code, S, _, converged = _k.real_solution(th, cp, float(p))
    if not converged:
        S = _aggregate_by_root(th, cp, p)
        code = _k.classify(S, th, cp, float(p))
    x = np.where(code == 1, 0.0, np.where(code == 2, cp, S - p * S * S / th))
    _, ut, _ = _k.integer_solution(th, cp, float(p), x, code == 0, REPAIR_STEPS_PER_COALITION * M)
    out = np.empty(M)
    out[order] = ut
    return out


def solve_erc(inp: ErcInput) -> ErcEquilibrium:
    return integer_ne(closed_form_ne(inp), inp)


def allocate_uniform(equilibrium: ErcEquilibrium, coalitions: Sequence[frozenset[int]]) -> dict[tuple[int, int], tuple[float, float]]:
    """Even split of each coalition's nonce length and utility: ``{(n, m): (l_nm, u_nm)}``."""
    shares = {}
    for m, members in enumerate(coalitions):
        k = len(members)
        l_share = equilibrium.levels[m] / k
        u_share = equilibrium.utilities[m] / k
        for n in members:
            shares[(n, m)] = (l_share, u_share)
    return shares


def utility_gradient(theta_m: float, sum_l_other: float, p: float, l: float) -> float:
    """Derivative of the coalition payoff in its own nonce length."""
    total = l + sum_l_other
    if total <= 0:
        return math.inf
    return theta_m * sum_l_other / (total * total) - p


def gap_bound(theta_m: float, sum_l_other: float, p: float, cap: float) -> float:
    """Largest absolute payoff gradient over ``[0, cap]``.

    The gradient falls monotonically in ``l``, so the maximum sits at an
    endpoint. With no opponents the payoff jumps at zero and the bound is
    infinite.
    """
    if sum_l_other <= 0:
        return math.inf
    return max(abs(utility_gradient(theta_m, sum_l_other, p, 0.0)),
               abs(utility_gradient(theta_m, sum_l_other, p, float(cap))))
