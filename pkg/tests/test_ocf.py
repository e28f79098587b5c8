import math
import random

import pytest

from conftest import make_market
from ocfmine import oracle
from ocfmine.harness import build_context
from ocfmine.model import CoalitionStructure, SystemParams
from ocfmine.ocf import (LEAVE, MERGE_A, MERGE_B, SPLIT_A, SPLIT_B, MoveProposal, NonConvergenceError,
                         StructureEvaluation, admissible, apply_move, enumerate_moves, evaluate_structure,
                         find_deviation, form_coalitions, is_stable, random_structure, structure_from_sets)


def _pair_market():
    """Two MUs with disjoint single transactions: pooling raises the fee sum."""
    return make_market([100.0, 100.0], [{0}, {1}], block_tx_count=2, collaboration_factor=1)


def test_symmetric_singletons_share_equally():
    ctx = make_market([50.0, 50.0], [{0, 1}, {0, 1}], block_tx_count=2)
    ev = evaluate_structure(CoalitionStructure.singletons(2), 40.0, ctx)
    assert ev.xi[0] == ev.xi[1] > 0


def test_zero_cap_zeroes_members():
    ctx = make_market([50.0, 50.0], [{0}, {1}], block_tx_count=2, header_size=600 * 2.7e8)
    assert ctx.cap == 0
    ev = evaluate_structure(CoalitionStructure.singletons(2), 40.0, ctx)
    assert ev.xi == (0.0, 0.0) and ev.total_nonce == 0


def test_three_mu_composition_golden():
    ctx = make_market([90.0, 60.0, 30.0, 10.0], [{0, 3}, {1}, {2, 3}], block_tx_count=2, collaboration_factor=2)
    s = structure_from_sets([[0, 1], [1, 2]])
    ev = evaluate_structure(s, 100.0, ctx)
    assert ev.equilibrium.levels == (2, 2)
    assert ev.xi == pytest.approx(tuple(oracle._xi(list(s.coalitions), 100.0, ctx)), rel=1e-12)
    # by hand: top-2 fee unions are 90+60 and 60+30; both coalitions buy 2 nonces
    scale = math.exp(-2 * 5e-3 / 600) * 2 ** -0.5
    u0 = 2 / 4 * (1000 + 150) * scale - 2 * 100
    u1 = 2 / 4 * (1000 + 90) * scale - 2 * 100
    assert ev.xi == pytest.approx((u0 / 2, u0 / 2 + u1 / 2, u1 / 2), rel=1e-12)
    assert ev.ecp_utility == pytest.approx(4 * 99.2)
    assert ev.system_utility == pytest.approx(sum(ev.xi) + ev.ecp_utility, rel=1e-12)


def test_enumeration_by_hand():
    s = structure_from_sets([[0, 1], [2]])
    got = enumerate_moves(2, s, capacity=1)
    assert got == [MoveProposal(2, MERGE_B, 1, 0), MoveProposal(2, LEAVE, 1)]
    got = enumerate_moves(2, s, capacity=2)
    assert got == [MoveProposal(2, MERGE_A, target=0), MoveProposal(2, MERGE_B, 1, 0), MoveProposal(2, LEAVE, 1)]
    got = enumerate_moves(0, s, capacity=2)
    assert {m.kind for m in got} == {MERGE_A, MERGE_B, SPLIT_A, SPLIT_B, LEAVE}
    # random coalition draw: only moves touching coalition 1
    got = enumerate_moves(0, s, capacity=2, coalition=1)
    assert all(m.target == 1 or m.kind == SPLIT_A for m in got)


def test_move_form_is_checked():
    with pytest.raises(ValueError):
        MoveProposal(0, MERGE_A)
    with pytest.raises(ValueError):
        MoveProposal(0, LEAVE, target=1)
    with pytest.raises(ValueError):
        MoveProposal(0, "teleport")


def test_apply_move_keeps_invariants():
    s = structure_from_sets([[0, 1], [2]])
    assert apply_move(s, MoveProposal(2, MERGE_B, 1, 0)) == structure_from_sets([[0, 1, 2]])
    assert apply_move(s, MoveProposal(2, LEAVE, 1)) == structure_from_sets([[0, 1]])
    assert apply_move(s, MoveProposal(0, SPLIT_B, 0)) == structure_from_sets([[0], [1], [2]])
    # joining a set that already exists merges with it
    t = structure_from_sets([[0, 1], [1]])
    assert apply_move(t, MoveProposal(0, LEAVE, 0)) == structure_from_sets([[1]])


def _ev(structure, xi):
    return StructureEvaluation(structure, None, tuple(xi), 0.0, 0.0)


def test_admissibility_rules():
    s = structure_from_sets([[0, 1], [2]])
    join = MoveProposal(2, MERGE_B, 1, 0)
    before = _ev(s, (10, 10, 10))
    assert not admissible(join, before, _ev(s, (10, 10, 10)))          # no progress
    assert not admissible(join, before, _ev(s, (9, 12, 11)))           # incumbent 0 loses
    assert admissible(join, before, _ev(s, (10, 12, 11)))
    leave = MoveProposal(0, SPLIT_B, 0)
    assert admissible(leave, before, _ev(s, (11, 1, 10)))              # no consent to leave
    assert not admissible(leave, before, _ev(s, (10 + 1e-12, 1, 10)))  # below the tolerance


def test_pair_merges_and_is_stable():
    ctx = _pair_market()
    single = CoalitionStructure.singletons(2)
    assert not is_stable(single, 10.0, ctx)
    move, after = find_deviation(ctx.evaluate(single, 10.0), ctx)
    assert admissible(move, ctx.evaluate(single, 10.0), after)
    out = form_coalitions(single, 10.0, ctx, 0)
    assert out.evaluation.structure == CoalitionStructure.grand(2)
    assert out.stable and not out.capped
    assert is_stable(CoalitionStructure.grand(2), 10.0, ctx)
    assert oracle.brute_force_stability(CoalitionStructure.grand(2), 10.0, ctx).verdict


def test_single_mu_is_immediately_stable():
    ctx = make_market([10.0], [{0}], block_tx_count=1)
    out = form_coalitions(CoalitionStructure.singletons(1), 25.0, ctx, 0)
    assert out.moves == 0 and out.stable
    assert out.evaluation.structure == CoalitionStructure.singletons(1)


def test_determinism_and_capacity():
    params = SystemParams(n_mus=8, collaboration_factor=2)
    ctx = build_context("J=2", params, 4)
    start = random_structure(8, 2, random.Random(4))
    a = form_coalitions(start, 60.0, ctx, 9)
    b = form_coalitions(start, 60.0, build_context("J=2", params, 4), 9)
    assert a.evaluation.structure == b.evaluation.structure and a.moves == b.moves
    counts = a.evaluation.structure.membership_counts()
    assert max(counts.values()) <= 2
    assert all(a.evaluation.structure.coalitions)


def test_frozen_context_does_not_move():
    ctx = build_context("non_cooperative", SystemParams(n_mus=6), 0)
    out = form_coalitions(CoalitionStructure.singletons(6), 30.0, ctx, 0)
    assert out.moves == 0 and out.evaluation.structure == CoalitionStructure.singletons(6)


def test_pass_limit_raises_or_returns_capped():
    ctx = build_context("J=3", SystemParams(), 1)
    start = CoalitionStructure.singletons(20)
    with pytest.raises(NonConvergenceError) as err:
        form_coalitions(start, 50.0, ctx, 1, max_passes=1)
    assert err.value.recent
    out = form_coalitions(start, 50.0, ctx, 1, max_passes=1, allow_cap=True)
    assert out.capped and not out.stable and out.passes == 1


@pytest.mark.parametrize("seed", range(6))
def test_compiled_play_matches_reference(seed):
    rng = random.Random(seed)
    J = 1 + seed % 3
    ctx = build_context(f"J={J}", SystemParams(n_mus=9, collaboration_factor=J), seed)
    for _ in range(15):
        s = random_structure(9, J, rng)
        price = rng.choice([0.5, 3.0, 40.0, 200.0, 499.0])
        fast = ctx.play_state(s, price).xi
        slow = ctx.evaluate(s, price).xi
        assert tuple(fast) == pytest.approx(slow, rel=1e-12, abs=1e-12)
        assert is_stable(s, price, ctx) == oracle.brute_force_stability(s, price, ctx).verdict
