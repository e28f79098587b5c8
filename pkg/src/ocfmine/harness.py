"""Parameter sweeps: run every mode on many seeds, average, write CSV.

A scenario (transaction pool plus each MU's collection) is rebuilt from
``(seed, params)`` for every grid point, so sweeps over N or I compare the
same underlying markets within a seed.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .config import PricingConfig
from .model import CoalitionStructure, SystemParams, assign_transactions, generate_pool
from .ocf import MarketContext, StructureEvaluation, form_coalitions
from .stackelberg import solve_stackelberg

log = logging.getLogger(__name__)

NON_COOP = "non_cooperative"
MODES = (NON_COOP, "J=1", "J=2", "J=3")
VARIABLES = ("price", "n_mus", "tx_count", "block_reward")
CLI_VARIABLES = {"price": "price", "mus": "n_mus", "tx": "tx_count", "reward": "block_reward"}
CSV_COLUMNS = ("mode", "variable", "value", "seeds", "u_ecp_mean", "u_ecp_ci95",
               "sys_utility_mean", "sys_utility_ci95", "total_nonce_mean", "n_avg_mean", "p_star_mean")
Z95 = 1.96
DEFAULT_SEEDS = 500

_PARAM_OF = {"n_mus": "n_mus", "tx_count": "block_tx_count", "block_reward": "block_reward"}


def mode_capacity(mode: str) -> int | None:
    """Membership limit J of a mode; None for non-cooperative play."""
    if mode == NON_COOP:
        return None
    if mode.startswith("J="):
        try:
            J = int(mode[2:])
        except ValueError:
            J = 0
        if J >= 1:
            return J
    raise ValueError(f"unknown mode {mode!r}; expected {NON_COOP} or J=<k>")


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    grid: tuple[float, ...]
    modes: tuple[str, ...]
    seeds: int
    base: SystemParams = field(default_factory=SystemParams)
    pricing: PricingConfig = field(default_factory=PricingConfig)
    first_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "grid", tuple(self.grid))
        object.__setattr__(self, "modes", tuple(self.modes))
        if self.variable not in VARIABLES:
            raise ValueError(f"unknown sweep variable {self.variable!r}")
        if not self.grid:
            raise ValueError("grid must not be empty")
        if list(self.grid) != sorted(self.grid):
            raise ValueError("grid must be sorted")
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        if not self.modes:
            raise ValueError("modes must not be empty")
        for m in self.modes:
            mode_capacity(m)

    @property
    def seed_list(self) -> list[int]:
        return list(range(self.first_seed, self.first_seed + self.seeds))

    def params_at(self, value: float) -> SystemParams:
        if self.variable == "price":
            return self.base
        name = _PARAM_OF[self.variable]
        v = int(value) if name != "block_reward" else float(value)
        return self.base.with_(**{name: v})


@dataclass(frozen=True)
class RunRecord:
    mode: str
    variable: str
    value: float
    seed: int
    u_ecp: float
    sys_utility: float
    total_nonce: int
    n_avg: float
    p_star: float | None = None
    stable: bool = True
    capped: bool = False


def build_context(mode: str, params: SystemParams, seed: int) -> MarketContext:
    pool = generate_pool(seed, params)
    profiles = assign_transactions(seed, pool, params)
    J = mode_capacity(mode)
    if J is None:
        return MarketContext(params.with_(collaboration_factor=1), pool, profiles, frozen=True)
    return MarketContext(params.with_(collaboration_factor=J), pool, profiles)


def _record(mode, variable, value, seed, ev: StructureEvaluation, p_star, stable, capped) -> RunRecord:
    return RunRecord(mode, variable, float(value), seed, ev.ecp_utility, ev.system_utility,
                     ev.total_nonce, ev.avg_members, p_star, stable, capped)


def run_mode(mode: str, params: SystemParams, price: float | None, seed: int,
             pricing: PricingConfig = PricingConfig(), variable: str = "price",
             value: float | None = None, allow_cap: bool = True) -> RunRecord:
    """One seed of one mode: at a fixed ``price``, or with the leader's search when None."""
    ctx = build_context(mode, params, seed)
    start = CoalitionStructure.singletons(params.n_mus)
    if value is None:
        value = price if price is not None else math.nan
    if price is not None:
        out = form_coalitions(start, price, ctx, seed, allow_cap=allow_cap)
        return _record(mode, variable, value, seed, out.evaluation, None, out.stable, out.capped)
    res = solve_stackelberg(ctx, seed, pricing.eps, pricing.step0, allow_cap=allow_cap)
    return _record(mode, variable, value, seed, res.final_evaluation, res.p_star,
                   True, res.capped_probes > 0)


def _job(args) -> RunRecord:
    spec, mode, value, seed = args
    params = spec.params_at(value)
    price = float(value) if spec.variable == "price" else None
    return run_mode(mode, params, price, seed, spec.pricing, spec.variable, value)


def run_sweep(spec: SweepSpec, workers: int = 1) -> list[RunRecord]:
    """Every (mode, grid value, seed) run, in that nesting order."""
    jobs = [(spec, mode, v, s) for mode in spec.modes for v in spec.grid for s in spec.seed_list]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_job, jobs, chunksize=4))
    else:
        records = []
        for i, job in enumerate(jobs, 1):
            records.append(_job(job))
            if i % 50 == 0:
                log.info("%d/%d runs", i, len(jobs))
    capped = sum(r.capped for r in records)
    if capped:
        log.warning("%d of %d runs hit the coalition-formation pass limit", capped, len(records))
    return records


def _sweep_of(variable: str):
    def run(spec: SweepSpec, workers: int = 1) -> list[RunRecord]:
        if spec.variable != variable:
            raise ValueError(f"expected a {variable} sweep, got {spec.variable}")
        return run_sweep(spec, workers)
    run.__name__ = f"run_{variable}_sweep"
    return run


run_price_sweep = _sweep_of("price")
run_mu_sweep = _sweep_of("n_mus")
run_tx_sweep = _sweep_of("tx_count")
run_reward_sweep = _sweep_of("block_reward")


# ---------------------------------------------------------------- aggregation

def mean_ci(values: Sequence[float]) -> tuple[float, float]:
    """Mean and 1.96 standard errors; independent of the order of ``values``."""
    n = len(values)
    if n == 0:
        return math.nan, math.nan
    mean = math.fsum(values) / n
    if n == 1:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, Z95 * math.sqrt(var / n)


@dataclass(frozen=True)
class SummaryRow:
    mode: str
    variable: str
    value: float
    seeds: int
    u_ecp_mean: float
    u_ecp_ci95: float
    sys_utility_mean: float
    sys_utility_ci95: float
    total_nonce_mean: float
    n_avg_mean: float
    p_star_mean: float | None


def aggregate(records: Iterable[RunRecord]) -> list[SummaryRow]:
    groups: dict[tuple, list[RunRecord]] = {}
    for r in records:
        groups.setdefault((r.mode, r.variable, r.value), []).append(r)

    def order(key):
        mode = key[0]
        return (MODES.index(mode) if mode in MODES else len(MODES), mode, key[2])

    rows = []
    for key in sorted(groups, key=order):
        rs = groups[key]
        u, u_ci = mean_ci([r.u_ecp for r in rs])
        s, s_ci = mean_ci([r.sys_utility for r in rs])
        stars = [r.p_star for r in rs if r.p_star is not None]
        rows.append(SummaryRow(
            *key, len(rs), u, u_ci, s, s_ci,
            mean_ci([float(r.total_nonce) for r in rs])[0],
            mean_ci([r.n_avg for r in rs])[0],
            mean_ci(stars)[0] if len(stars) == len(rs) else None,
        ))
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, int):
        return str(v)
    return f"{v:.6g}"


def emit_csv(rows: Iterable[SummaryRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])


def paired_improvement(records: Iterable[RunRecord], mode: str, baseline: str, value: float) -> float:
    """Seed-paired mean of ``(u_sys[mode] - u_sys[baseline]) / u_sys[baseline]``."""
    by_seed: dict[str, dict[int, float]] = {mode: {}, baseline: {}}
    for r in records:
        if r.value == value and r.mode in by_seed:
            by_seed[r.mode][r.seed] = r.sys_utility
    seeds = sorted(set(by_seed[mode]) & set(by_seed[baseline]))
    if not seeds:
        raise ValueError(f"no paired seeds for {mode} vs {baseline} at {value}")
    ratios = [(by_seed[mode][s] - by_seed[baseline][s]) / by_seed[baseline][s] for s in seeds]
    return math.fsum(ratios) / len(ratios)


def default_grid(variable: str) -> tuple[float, ...]:
    return {
        "price": (10, 25, 50, 100, 200, 300, 400, 500),
        "n_mus": (12, 14, 16, 18, 20, 22, 24),
        "tx_count": (2, 4, 6, 8, 10),
        "block_reward": (250, 500, 1000, 2000),
    }[variable]


__all__ = [
    "MODES", "NON_COOP", "VARIABLES", "CLI_VARIABLES", "CSV_COLUMNS", "DEFAULT_SEEDS",
    "SweepSpec", "RunRecord", "SummaryRow", "run_mode", "run_sweep", "run_price_sweep",
    "run_mu_sweep", "run_tx_sweep", "run_reward_sweep", "aggregate", "emit_csv", "mean_ci",
    "paired_improvement", "default_grid", "build_context", "mode_capacity",
]
