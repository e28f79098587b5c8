"""Overlapping coalition formation among MUs.

MUs reshape the coalition structure through five atomic moves. Joining a
coalition needs the consent of its incumbents; leaving needs none. Play
stops once an exhaustive scan finds no admissible move into a structure that
is still open (see :func:`form_coalitions`).
"""

from __future__ import annotations

import heapq
import math
import random
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as _k
from .erc import (REPAIR_STEPS_PER_COALITION, ErcEquilibrium, ErcInput, coalition_payoffs,
                  nonce_cap, solve_erc)
from .model import (
    CoalitionStructure,
    MinerProfile,
    SystemParams,
    TransactionPool,
    avg_members,
    ecp_utility,
    reward_scale,
)

MERGE_A = "merge_A"
MERGE_B = "merge_B"
SPLIT_A = "split_A"
SPLIT_B = "split_B"
LEAVE = "leave"
MOVE_KINDS = (MERGE_A, MERGE_B, SPLIT_A, SPLIT_B, LEAVE)
_KIND_RANK = {k: i for i, k in enumerate(MOVE_KINDS)}

# Utilities closer than this (relative to max(1, |xi|)) count as equal.
UTILITY_TOL = 1e-9

DEFAULT_MAX_PASSES = 10_000


class NonConvergenceError(RuntimeError):
    def __init__(self, message: str, recent: Sequence[CoalitionStructure]):
        super().__init__(message)
        self.recent = list(recent)


@dataclass(frozen=True)
class MoveProposal:
    actor: int
    kind: str
    source: int | None = None
    target: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in _KIND_RANK:
            raise ValueError(f"unknown move kind {self.kind!r}")
        needs_source = self.kind in (MERGE_B, SPLIT_B, LEAVE)
        needs_target = self.kind in (MERGE_A, MERGE_B)
        if needs_source != (self.source is not None) or needs_target != (self.target is not None):
            raise ValueError(f"{self.kind} has wrong source/target: {self.source}, {self.target}")

    def sort_key(self) -> tuple:
        return (_KIND_RANK[self.kind],
                -1 if self.target is None else self.target,
                -1 if self.source is None else self.source)


@dataclass(frozen=True)
class StructureEvaluation:
    structure: CoalitionStructure
    equilibrium: ErcEquilibrium
    xi: tuple[float, ...]
    ecp_utility: float
    avg_members: float

    @property
    def price(self) -> float:
        return self.equilibrium.price

    @property
    def total_nonce(self) -> int:
        return self.equilibrium.total_nonce

    @property
    def mu_utility_total(self) -> float:
        return sum(self.xi)

    @property
    def system_utility(self) -> float:
        return self.mu_utility_total + self.ecp_utility


@dataclass
class MarketContext:
    """Parameters and transaction data shared by every evaluation of one scenario.

    ``capacity`` is the per-MU membership limit J in force; ``frozen`` pins
    the structure (non-cooperative play). The reward-factor and evaluation
    caches are memoisation only and never change a result.
    """

    params: SystemParams
    pool: TransactionPool
    profiles: Sequence[MinerProfile]
    capacity: int | None = None
    frozen: bool = False
    max_cached: int = 50_000
    _theta: dict = field(default_factory=dict, repr=False)
    _evals: dict = field(default_factory=dict, repr=False)
    _fast: dict = field(default_factory=dict, repr=False)
    _arrays: tuple = field(default=(None, None), repr=False)
    _light: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.capacity is None:
            self.capacity = self.params.collaboration_factor
        if len(self.profiles) != self.params.n_mus:
            raise ValueError("one profile per MU is required")
        I = self.params.block_tx_count
        fees = self.pool.fees
        self._top = []
        for prof in self.profiles:
            top = heapq.nlargest(I, ((float(fees[i]), i) for i in prof.collected))
            self._top.append(top)
        self._scale = reward_scale(self.params)
        self.cap = nonce_cap(self.params)
        # padded copies of the per-MU top fees for the compiled move scan
        self._top_fee = np.zeros((len(self._top), max(I, 1)))
        self._top_id = np.full((len(self._top), max(I, 1)), -1, np.int64)
        for n, top in enumerate(self._top):
            for q, (f, i) in enumerate(top):
                self._top_fee[n, q], self._top_id[n, q] = f, i
        self._stamp = np.zeros(len(self.pool.fees), np.int64)

    @property
    def n_mus(self) -> int:
        return self.params.n_mus

    def theta(self, members: frozenset[int]) -> float:
        t = self._theta.get(members)
        if t is None:
            if len(members) == 1:
                (n,) = members
                fee = sum(f for f, _ in self._top[n])
            else:
                pooled = {}
                for n in members:
                    for f, i in self._top[n]:
                        pooled[i] = f
                fee = sum(heapq.nlargest(self.params.block_tx_count, pooled.values()))
            t = (self.params.block_reward + fee) * self._scale
            self._theta[members] = t
        return t

    def arrays(self, structure: CoalitionStructure):
        """Reward factors, membership matrix and sizes of ``structure`` (last one cached)."""
        if self._arrays[0] is not structure:
            coalitions = structure.coalitions
            th = np.array([self.theta(c) for c in coalitions])
            mem = np.zeros((len(coalitions), self.n_mus), np.bool_)
            for m, c in enumerate(coalitions):
                mem[m, list(c)] = True
            sizes = np.array([len(c) for c in coalitions], dtype=float)
            self._arrays = (structure, (th, mem, sizes))
        return self._arrays[1]

    def play_state(self, structure: CoalitionStructure, price: float) -> "_PlayState":
        """Structure with per-MU utilities only; equal to :meth:`evaluate`'s ``xi``."""
        key = (price, structure)
        st = self._light.get(key)
        if st is None:
            th, mem, sizes = self.arrays(structure)
            xi, ok = _k.structure_xi(mem, th, sizes, float(price), float(self.cap),
                                     self.capacity, REPAIR_STEPS_PER_COALITION)
            if not ok:
                xi = np.asarray(self.evaluate(structure, price).xi)
            st = _PlayState(structure, xi, price)
            if len(self._light) >= self.max_cached:
                self._light.clear()
            self._light[key] = st
        return st

    def evaluate(self, structure: CoalitionStructure, price: float) -> StructureEvaluation:
        key = (price, structure)
        ev = self._evals.get(key)
        if ev is None:
            ev = evaluate_structure(structure, price, self)
            if len(self._evals) >= self.max_cached:
                self._evals.clear()
            self._evals[key] = ev
        return ev


@dataclass(frozen=True)
class _PlayState:
    structure: CoalitionStructure
    xi: np.ndarray
    price: float


def evaluate_structure(structure: CoalitionStructure, price: float, ctx: MarketContext) -> StructureEvaluation:
    """ERC equilibrium of ``structure`` at ``price`` and each MU's summed share."""
    coalitions = structure.coalitions
    thetas = tuple(ctx.theta(c) for c in coalitions)
    caps = (ctx.cap,) * len(coalitions)
    eq = solve_erc(ErcInput.trusted(thetas, caps, float(price)))
    xi = [0.0] * ctx.n_mus
    counts = structure.membership_counts()
    limit = ctx.capacity
    for members, u_m in zip(coalitions, eq.utilities):
        # characteristic function is zero where the pair violates a constraint
        if ctx.cap == 0:
            continue
        share = u_m / len(members)
        for n in members:
            if counts[n] <= limit:
                xi[n] += share
    return StructureEvaluation(
        structure=structure,
        equilibrium=eq,
        xi=tuple(xi),
        ecp_utility=ecp_utility(eq.total_nonce, price, ctx.params.unit_cost),
        avg_members=avg_members(structure),
    )


def enumerate_moves(actor: int, structure: CoalitionStructure, capacity: int,
                    coalition: int | None = None) -> list[MoveProposal]:
    """Form-admissible moves of ``actor`` involving coalition ``coalition``.

    With ``coalition=None`` every coalition is considered. Creating a
    singleton does not involve another coalition and is always listed when
    capacity allows.
    """
    coalitions = structure.coalitions
    mine = [m for m, c in enumerate(coalitions) if actor in c]
    spare = len(mine) < capacity
    chosen = range(len(coalitions)) if coalition is None else (coalition,)
    moves: dict[tuple, MoveProposal] = {}

    def add(kind, source=None, target=None):
        moves[(kind, source, target)] = MoveProposal(actor, kind, source, target)

    for m in chosen:
        if actor not in coalitions[m]:
            if spare:
                add(MERGE_A, target=m)
            for s in mine:
                add(MERGE_B, source=s, target=m)
        else:
            for t, c in enumerate(coalitions):
                if actor not in c:
                    add(MERGE_B, source=m, target=t)
            if len(coalitions[m]) > 1:
                add(SPLIT_B, source=m)
            add(LEAVE, source=m)
    if spare and frozenset((actor,)) not in coalitions:
        add(SPLIT_A)
    return sorted(moves.values(), key=MoveProposal.sort_key)


def apply_move(structure: CoalitionStructure, move: MoveProposal) -> CoalitionStructure:
    coalitions = structure.coalitions
    a = move.actor
    solo = frozenset((a,))
    if move.kind == MERGE_A:
        t = coalitions[move.target]
        return structure.replace(remove=[t], add=[t | solo])
    if move.kind == MERGE_B:
        s, t = coalitions[move.source], coalitions[move.target]
        return structure.replace(remove=[s, t], add=[s - solo, t | solo])
    if move.kind == SPLIT_A:
        return structure.replace(add=[solo])
    if move.kind == SPLIT_B:
        s = coalitions[move.source]
        return structure.replace(remove=[s], add=[s - solo, solo])
    s = coalitions[move.source]
    return structure.replace(remove=[s], add=[s - solo])


def _improves(after: float, before: float) -> bool:
    return after - before > UTILITY_TOL * max(1.0, abs(before))


def _not_worse(after: float, before: float) -> bool:
    return before - after <= UTILITY_TOL * max(1.0, abs(before))


def admissible(move: MoveProposal, before: StructureEvaluation, after: StructureEvaluation) -> bool:
    """Actor strictly gains; for joins, no incumbent of the joined coalition loses."""
    if not _improves(after.xi[move.actor], before.xi[move.actor]):
        return False
    if move.kind in (MERGE_A, MERGE_B):
        incumbents = before.structure.coalitions[move.target]
        return all(_not_worse(after.xi[n], before.xi[n]) for n in incumbents)
    return True


def _payoffs_of(new: list, key: frozenset, price: float, ctx: MarketContext):
    """Coalition list in a fixed order with its equilibrium utilities (memoised)."""
    cache_key = (price, key)
    hit = ctx._fast.get(cache_key)
    if hit is not None:
        return hit
    thetas = [ctx.theta(c) for c in new]
    if len(set(thetas)) < len(thetas):
        # exact reward-factor ties fall back to list order, so use the canonical one
        new = sorted(new, key=sorted)
        thetas = [ctx.theta(c) for c in new]
    hit = (new, coalition_payoffs(thetas, ctx.cap, price))
    if len(ctx._fast) >= ctx.max_cached:
        ctx._fast.clear()
    ctx._fast[cache_key] = hit
    return hit


def _share(n: int, coalitions, utilities) -> float:
    return sum(u / len(c) for c, u in zip(coalitions, utilities) if n in c)


def _effect(actor: int, coalitions, present: frozenset, kind: str, source, target):
    """Coalition indices dropped and new member-sets added by a move (net of no-ops)."""
    solo = frozenset((actor,))
    if kind == MERGE_A:
        rem, add = (target,), (coalitions[target] | solo,)
    elif kind == MERGE_B:
        rem, add = (source, target), (coalitions[source] - solo, coalitions[target] | solo)
    elif kind == SPLIT_A:
        rem, add = (), (solo,)
    elif kind == SPLIT_B:
        rem, add = (source,), (coalitions[source] - solo, solo)
    else:
        rem, add = (source,), (coalitions[source] - solo,)
    add = [c for c in add if c]
    rem = tuple(i for i in rem if coalitions[i] not in add)
    return rem, [c for c in add if c not in present]


def _best_move(actor: int, state, ctx: MarketContext, coalition: int | None,
               closed=None) -> tuple[MoveProposal, CoalitionStructure] | None:
    """Largest-gain admissible move of ``actor`` and the structure it leads to.

    Gain ties go to the earlier move in :meth:`MoveProposal.sort_key` order.
    Moves into a structure whose coalition set is in ``closed`` are skipped.
    """
    structure = state.structure
    coalitions = structure.coalitions
    price = state.price
    before = np.asarray(state.xi, dtype=float)
    th, mem, sizes = ctx.arrays(structure)
    if price > 0 and ctx.cap > 0 and coalitions:
        kinds, src, tgt, gain, flag = _k.scan_moves(
            mem, th, sizes, actor, ctx.capacity, -1 if coalition is None else coalition,
            before, float(price), float(ctx.cap), UTILITY_TOL, REPAIR_STEPS_PER_COALITION,
            ctx._top_fee, ctx._top_id, ctx._stamp, ctx.params.block_tx_count,
            float(ctx.params.block_reward), ctx._scale)
        moves = [(MOVE_KINDS[k], None if s < 0 else s, None if t < 0 else t)
                 for k, s, t in zip(kinds.tolist(), src.tolist(), tgt.tolist())]
        flagged = np.flatnonzero(flag).tolist()
    else:
        moves = [(m.kind, m.source, m.target)
                 for m in enumerate_moves(actor, structure, ctx.capacity, coalition)]
        gain = np.full(len(moves), -math.inf)
        flagged = range(len(moves))
    present = frozenset(coalitions)
    for k in flagged:
        kind, source, target = moves[k]
        effect = _effect(actor, coalitions, present, kind, source, target)
        gain[k] = _slow_gain(actor, coalitions, present, effect, target, before, price, ctx)
    ranked = sorted((k for k in range(len(moves)) if gain[k] > 0),
                    key=lambda k: (-gain[k], _KIND_RANK[moves[k][0]],
                                   -1 if moves[k][2] is None else moves[k][2],
                                   -1 if moves[k][1] is None else moves[k][1]))
    for k in ranked:
        move = MoveProposal(actor, *moves[k])
        if closed:
            rem, add = _effect(actor, coalitions, present, *moves[k])
            key = (present - {coalitions[i] for i in rem}) | frozenset(add)
            if key in closed:
                continue
        return move, apply_move(structure, move)
    return None


def _slow_gain(actor, coalitions, present, effect, target, before, price, ctx) -> float:
    rem, add = effect
    if not rem and not add:
        return math.nan
    dropped = {coalitions[i] for i in rem}
    new = [c for c in coalitions if c not in dropped] + list(add)
    key = (present - dropped) | frozenset(add)
    new, utilities = _payoffs_of(new, key, price, ctx)
    after_actor = _share(actor, new, utilities)
    if not _improves(after_actor, before[actor]):
        return -math.inf
    if target is not None:
        if not all(_not_worse(_share(n, new, utilities), before[n]) for n in coalitions[target]):
            return -math.inf
    return after_actor - before[actor]


def find_deviation(current: StructureEvaluation, ctx: MarketContext,
                   closed=None) -> tuple[MoveProposal, StructureEvaluation] | None:
    """Exhaustive scan; returns the first MU's best admissible move, if any.

    Moves into a structure whose coalition set is in ``closed`` are skipped.
    """
    found = _scan(current, ctx, closed)
    if found is None:
        return None
    return found[0], ctx.evaluate(found[1], current.price)


def _scan(state, ctx: MarketContext, closed=None):
    for actor in range(ctx.n_mus):
        found = _best_move(actor, state, ctx, None, closed)
        if found is not None:
            return found
    return None


def is_stable(structure: CoalitionStructure, price: float, ctx: MarketContext) -> bool:
    return find_deviation(ctx.evaluate(structure, price), ctx) is None


DEFAULT_REVISIT_LIMIT = 3


@dataclass(frozen=True)
class FormationOutcome:
    """End state of one coalition-formation run.

    ``stable`` is the history-free verdict: no MU has any admissible move.
    It is False when the run stopped because every remaining deviation led
    into a structure that had used up its entries, or when ``capped``: the
    pass limit ran out and the caller asked for the last structure instead
    of an error.
    """
    evaluation: StructureEvaluation
    moves: int
    passes: int
    stable: bool
    capped: bool = False


class _History:
    """Entry counts per structure; a structure entered ``limit`` times is closed."""

    def __init__(self, start: CoalitionStructure, limit: int):
        if limit < 1:
            raise ValueError("revisit limit must be at least 1")
        self.limit = limit
        self.entries = Counter()
        self.closed: set[frozenset] = set()
        self.recent: deque[CoalitionStructure] = deque(maxlen=8)
        self.enter(start)

    def enter(self, structure: CoalitionStructure) -> None:
        key = frozenset(structure.coalitions)
        self.entries[key] += 1
        if self.entries[key] >= self.limit:
            self.closed.add(key)
        self.recent.append(structure)


def form_coalitions(initial: CoalitionStructure, price: float, ctx: MarketContext,
                    rng_seed: int | random.Random, exhaustive: bool = False,
                    max_passes: int = DEFAULT_MAX_PASSES,
                    revisit_limit: int = DEFAULT_REVISIT_LIMIT,
                    allow_cap: bool = False) -> FormationOutcome:
    """Run atomic moves until no MU can reach an open structure it prefers.

    Each pass visits the MUs in a random order; every MU draws one random
    coalition (or all of them when ``exhaustive``) and applies its largest
    admissible gain. A pass without moves triggers the exhaustive scan, whose
    witness is applied if one exists.

    With integer nonce levels the MUs' preferences can cycle, and some
    markets have no individually stable structure at all. Each structure may
    therefore be entered at most ``revisit_limit`` times in one run; after
    that, moves into it are not taken. The structure count is finite, so
    every run ends, but at N=20 it can take far longer than ``max_passes``:
    MUs keep trading places in the few coalitions that win a nonce. Hitting
    the limit raises :class:`NonConvergenceError` unless ``allow_cap``, in
    which case the last structure comes back with ``capped=True``.
    """
    initial.check(ctx.n_mus, ctx.capacity)
    if ctx.frozen:
        return FormationOutcome(ctx.evaluate(initial, price), 0, 0, True)
    rng = rng_seed if isinstance(rng_seed, random.Random) else random.Random(rng_seed)
    current = ctx.play_state(initial, price)
    history = _History(current.structure, revisit_limit)
    order = list(range(ctx.n_mus))
    moves = 0
    for passes in range(1, max_passes + 1):
        moved = False
        rng.shuffle(order)
        for actor in order:
            n_coal = len(current.structure.coalitions)
            target = None if exhaustive or n_coal == 0 else rng.randrange(n_coal)
            found = _best_move(actor, current, ctx, target, history.closed)
            if found is not None:
                current = ctx.play_state(found[1], price)
                history.enter(current.structure)
                moved = True
                moves += 1
        if not moved:
            found = _scan(current, ctx, history.closed)
            if found is None:
                stable = not history.closed or _scan(current, ctx) is None
                return FormationOutcome(ctx.evaluate(current.structure, price), moves, passes, stable)
            current = ctx.play_state(found[1], price)
            history.enter(current.structure)
            moves += 1
    if allow_cap:
        return FormationOutcome(ctx.evaluate(current.structure, price), moves, max_passes, False, True)
    raise NonConvergenceError(
        f"coalition formation still moving after {max_passes} passes at price {price}",
        history.recent)


def converge_structure(initial: CoalitionStructure, price: float, ctx: MarketContext,
                       rng_seed: int | random.Random, exhaustive: bool = False,
                       max_passes: int = DEFAULT_MAX_PASSES) -> StructureEvaluation:
    """Final evaluation of :func:`form_coalitions`."""
    return form_coalitions(initial, price, ctx, rng_seed, exhaustive, max_passes).evaluation


def random_structure(n_mus: int, capacity: int, rng: random.Random) -> CoalitionStructure:
    """Random valid structure: every MU joins between 1 and ``capacity`` of M slots."""
    n_slots = rng.randint(1, n_mus)
    slots: list[set[int]] = [set() for _ in range(n_slots)]
    for n in range(n_mus):
        k = rng.randint(1, min(capacity, n_slots))
        for s in rng.sample(range(n_slots), k):
            slots[s].add(n)
    return CoalitionStructure.build([s for s in slots if s], n_mus, capacity)


def structure_from_sets(sets: Iterable[Iterable[int]]) -> CoalitionStructure:
    return CoalitionStructure.build(sets)
