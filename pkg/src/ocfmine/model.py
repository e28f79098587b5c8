"""System parameters, transactions and the mining / offloading formulas.

Everything here is a pure function of immutable inputs. Physical quantities
are held in SI units; unit conversion happens in :mod:`ocfmine.config`.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Sequence

import numpy as np


class ConfigError(ValueError):
    """Raised when a parameter set violates its invariants."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class SystemParams:
    """Every constant of the mining market, in SI units.

    Defaults reproduce the reference simulation setting (N=20, B=1000, I=10).
    """

    n_mus: int = 20
    collaboration_factor: int = 3
    block_reward: float = 1000.0
    block_tx_count: int = 10
    difficulty: float = 0.5
    nonce_bits: int = 32
    avg_block_time: float = 600.0
    latency_factor: float = 5e-3
    header_size: float = 608.0
    tx_power: float = 0.1
    channel_gain: float = 1e-8
    noise_power: float = 1e-13
    bandwidth: float = 20e6
    ecp_freq: float = 1e9
    cycles_per_nonce: float = 1e9
    unit_cost: float = 0.8
    price_cap: float = 500.0
    tx_pool_size: int = 1000
    fee_range: tuple[float, float] = (0.0, 100.0)
    tx_per_mu: int = 100

    def __post_init__(self) -> None:
        object.__setattr__(self, "fee_range", tuple(float(x) for x in self.fee_range))
        self.validate()

    @property
    def poisson_rate(self) -> float:
        return 1.0 / self.avg_block_time

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)

    def validate(self) -> None:
        positive = (
            "n_mus", "block_tx_count", "avg_block_time", "tx_power", "channel_gain",
            "noise_power", "bandwidth", "ecp_freq", "cycles_per_nonce", "price_cap",
            "tx_pool_size", "tx_per_mu",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(name, f"must be strictly positive, got {getattr(self, name)!r}")
        for name in ("block_reward", "difficulty", "latency_factor", "header_size", "unit_cost"):
            if getattr(self, name) < 0:
                raise ConfigError(name, f"must be non-negative, got {getattr(self, name)!r}")
        for name in ("n_mus", "collaboration_factor", "block_tx_count", "nonce_bits",
                     "tx_pool_size", "tx_per_mu"):
            if int(getattr(self, name)) != getattr(self, name):
                raise ConfigError(name, "must be an integer")
        if self.collaboration_factor < 1:
            raise ConfigError("collaboration_factor", "must be >= 1")
        if self.difficulty > self.nonce_bits:
            raise ConfigError("difficulty", "must not exceed nonce_bits")
        if self.block_tx_count > self.tx_pool_size:
            raise ConfigError("block_tx_count", "must not exceed tx_pool_size")
        if self.tx_per_mu > self.tx_pool_size:
            raise ConfigError("tx_per_mu", "must not exceed tx_pool_size")
        if self.unit_cost >= self.price_cap:
            raise ConfigError("unit_cost", "must be below price_cap")
        lo, hi = self.fee_range
        if lo < 0 or hi < lo:
            raise ConfigError("fee_range", f"expected 0 <= min <= max, got {self.fee_range}")

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class Transaction:
    id: int
    fee: float


@dataclass(frozen=True)
class TransactionPool:
    fees: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.fees)

    def __getitem__(self, tx_id: int) -> Transaction:
        return Transaction(int(tx_id), float(self.fees[tx_id]))

    def __iter__(self):
        return (Transaction(i, float(f)) for i, f in enumerate(self.fees))


@dataclass(frozen=True)
class MinerProfile:
    id: int
    collected: frozenset[int]


def generate_pool(rng_seed: int, params: SystemParams) -> TransactionPool:
    """Draw ``tx_pool_size`` fees i.i.d. uniform on ``fee_range``."""
    rng = np.random.default_rng([int(rng_seed), 0x706F6F6C])
    lo, hi = params.fee_range
    fees = rng.uniform(lo, hi, size=params.tx_pool_size) if hi > lo else np.full(params.tx_pool_size, lo)
    fees.setflags(write=False)
    return TransactionPool(fees)


def assign_transactions(rng_seed: int, pool: TransactionPool, params: SystemParams) -> list[MinerProfile]:
    """Each MU samples ``tx_per_mu`` distinct transactions from the pool.

    MU ``n`` draws from its own child stream, so its collection does not
    depend on how many other MUs exist.
    """
    if params.tx_per_mu > len(pool):
        raise ConfigError("tx_per_mu", f"{params.tx_per_mu} exceeds pool size {len(pool)}")
    profiles = []
    for n in range(params.n_mus):
        rng = np.random.default_rng([int(rng_seed), 0x6D75, n])
        chosen = rng.choice(len(pool), size=params.tx_per_mu, replace=False)
        profiles.append(MinerProfile(n, frozenset(int(i) for i in chosen)))
    return profiles


def coalition_fee(members: Iterable[int], profiles: Sequence[MinerProfile],
                  pool: TransactionPool, block_tx_count: int) -> float:
    """Sum of the ``block_tx_count`` largest fees in the members' pooled transactions."""
    union: set[int] = set()
    for n in members:
        union |= profiles[n].collected
    fees = pool.fees
    return float(sum(heapq.nlargest(block_tx_count, (fees[i] for i in union))))


def orphan_probability(params: SystemParams) -> float:
    return -math.expm1(-params.poisson_rate * params.latency_factor * params.block_tx_count)


def success_probability(params: SystemParams) -> float:
    return math.exp(-params.poisson_rate * params.latency_factor * params.block_tx_count)


def reward_scale(params: SystemParams) -> float:
    """Verification success times per-nonce success: e^(-lambda z I) 2^(-pi)."""
    return success_probability(params) * 2.0 ** (-params.difficulty)


def reward_factor(members: Iterable[int], profiles: Sequence[MinerProfile],
                  pool: TransactionPool, params: SystemParams) -> float:
    fee = coalition_fee(members, profiles, pool, params.block_tx_count)
    return (params.block_reward + fee) * reward_scale(params)


def coalition_snr(params: SystemParams) -> float:
    return params.tx_power * params.channel_gain / params.noise_power


def transmission_rate(params: SystemParams) -> float:
    return params.bandwidth * math.log2(1.0 + coalition_snr(params))


def transmission_delay(params: SystemParams) -> float:
    return params.header_size / transmission_rate(params)


def computing_delay(l_m: float, params: SystemParams) -> float:
    return params.cycles_per_nonce * l_m / params.ecp_freq


def mining_delay(l_m: float, params: SystemParams) -> float:
    if l_m < 0:
        raise ValueError("nonce length must be non-negative")
    return transmission_delay(params) + computing_delay(l_m, params)


def coalition_utility(l_m: float, sum_l_other: float, theta_m: float, p: float) -> float:
    total = l_m + sum_l_other
    if total <= 0:
        return 0.0
    return l_m / total * theta_m - l_m * p


def mu_utility(l_nm: float, total_l_system: float, theta_m: float, p: float) -> float:
    if total_l_system <= 0:
        return 0.0
    return l_nm / total_l_system * theta_m - l_nm * p


def ecp_utility(total_nonce: float, p: float, c: float) -> float:
    return total_nonce * (p - c)


def _canonical(coalitions: Iterable[Iterable[int]]) -> tuple[frozenset[int], ...]:
    unique = {frozenset(c) for c in coalitions}
    unique.discard(frozenset())
    return tuple(sorted(unique, key=lambda c: sorted(c)))


@dataclass(frozen=True)
class CoalitionStructure:
    """A possibly overlapping set of coalitions.

    Coalitions are identified by member-set: duplicates collapse and empty
    coalitions vanish. They are kept in a canonical order (lexicographic on
    sorted member ids), which is the coalition index used everywhere else.
    MUs that appear in no coalition are idle.
    """

    coalitions: tuple[frozenset[int], ...]

    @classmethod
    def build(cls, coalitions: Iterable[Iterable[int]], n_mus: int | None = None,
              capacity: int | None = None) -> "CoalitionStructure":
        coalitions = [frozenset(int(n) for n in c) for c in coalitions]
        if any(not c for c in coalitions):
            raise ValueError("coalitions must be non-empty")
        structure = cls(_canonical(coalitions))
        structure.check(n_mus, capacity)
        return structure

    @classmethod
    def singletons(cls, n_mus: int) -> "CoalitionStructure":
        return cls(tuple(frozenset((n,)) for n in range(n_mus)))

    @classmethod
    def grand(cls, n_mus: int) -> "CoalitionStructure":
        return cls((frozenset(range(n_mus)),))

    def check(self, n_mus: int | None = None, capacity: int | None = None) -> None:
        for c in self.coalitions:
            if not c:
                raise ValueError("empty coalition")
            if n_mus is not None and (min(c) < 0 or max(c) >= n_mus):
                raise ValueError(f"MU id out of range in {sorted(c)}")
        if capacity is not None:
            for n, k in self.membership_counts().items():
                if k > capacity:
                    raise ValueError(f"MU {n} joins {k} coalitions, capacity is {capacity}")

    def __len__(self) -> int:
        return len(self.coalitions)

    def __iter__(self):
        return iter(self.coalitions)

    def membership_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for c in self.coalitions:
            for n in c:
                counts[n] = counts.get(n, 0) + 1
        return counts

    def memberships(self, n: int) -> list[int]:
        return [m for m, c in enumerate(self.coalitions) if n in c]

    def idle(self, n_mus: int) -> list[int]:
        counts = self.membership_counts()
        return [n for n in range(n_mus) if n not in counts]

    def replace(self, remove: Iterable[frozenset[int]] = (), add: Iterable[frozenset[int]] = ()) -> "CoalitionStructure":
        remove = set(remove)
        kept = [c for c in self.coalitions if c not in remove]
        return CoalitionStructure(_canonical(kept + list(add)))

    def to_text(self) -> str:
        return "".join(f"{m}: {' '.join(map(str, sorted(c)))}\n" for m, c in enumerate(self.coalitions))

    @classmethod
    def from_text(cls, text: str) -> "CoalitionStructure":
        coalitions = []
        for line in text.splitlines():
            if not line.strip():
                continue
            _, _, members = line.partition(":")
            coalitions.append([int(tok) for tok in members.split()])
        return cls.build(coalitions)


def avg_members(structure: CoalitionStructure) -> float:
    """Average coalition size; 0 for an empty structure."""
    if not structure.coalitions:
        return 0.0
    return sum(len(c) for c in structure.coalitions) / len(structure.coalitions)
