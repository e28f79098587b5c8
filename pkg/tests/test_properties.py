import math
import random

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from ocfmine import oracle
from ocfmine.erc import (CAPPED, INTERIOR, ZERO, ErcInput, best_response, closed_form_ne, gap_bound,
                         solve_erc, unconstrained_best_response)
from ocfmine.harness import build_context, mean_ci
from ocfmine.model import (MinerProfile, SystemParams, TransactionPool, coalition_fee, coalition_utility,
                           mining_delay, mu_utility, orphan_probability, success_probability)
from ocfmine.ocf import MERGE_A, MERGE_B, admissible, apply_move, find_deviation, is_stable, random_structure
from ocfmine.stackelberg import STEP_DECAY, solve_stackelberg

SLOW = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])

thetas = st.floats(10.0, 2000.0)
prices = st.floats(1.0, 500.0)


@st.composite
def erc_inputs(draw, max_m=6, max_cap=50):
    M = draw(st.integers(1, max_m))
    return ErcInput(tuple(draw(st.lists(thetas, min_size=M, max_size=M))),
                    tuple(draw(st.lists(st.integers(5, max_cap), min_size=M, max_size=M))),
                    draw(prices))


@given(st.floats(0.0, 0.05), st.integers(1, 1000), st.floats(1.0, 1e4))
def test_orphan_and_success_are_complements(z, I, T):
    p = SystemParams(latency_factor=z, block_tx_count=min(I, 1000), avg_block_time=T)
    assert abs(orphan_probability(p) + success_probability(p) - 1.0) <= 2e-16


@given(st.lists(st.floats(0, 100), min_size=5, max_size=30), st.data())
def test_fee_grows_with_membership(fees, data):
    pool = TransactionPool(np.array(fees))
    n = len(fees)
    sets = data.draw(st.lists(st.sets(st.integers(0, n - 1), min_size=1), min_size=2, max_size=5))
    prof = [MinerProfile(k, frozenset(s)) for k, s in enumerate(sets)]
    I = data.draw(st.integers(1, 10))
    members = list(range(len(prof) - 1))
    assert coalition_fee(members + [len(prof) - 1], prof, pool, I) >= coalition_fee(members, prof, pool, I)


@given(thetas, st.integers(0, 200), prices, st.integers(0, 600))
def test_payoff_is_concave_in_own_level(theta, others, p, l):
    u = [coalition_utility(x, others, theta, p) for x in (l, l + 1, l + 2)]
    if others > 0 or l > 0:
        assert u[0] - 2 * u[1] + u[2] <= 1e-9 * max(1.0, theta)


@given(thetas, st.integers(1, 50), st.integers(0, 200), prices, st.integers(1, 8))
def test_member_shares_add_up(theta, l, others, p, k):
    total = sum(mu_utility(l / k, l + others, theta, p) for _ in range(k))
    assert math.isclose(total, coalition_utility(l, others, theta, p), rel_tol=1e-12, abs_tol=1e-9)


@given(st.integers(0, 10_000))
def test_delay_is_affine(l):
    p = SystemParams()
    assert math.isclose(mining_delay(l + 1, p) - mining_delay(l, p), p.cycles_per_nonce / p.ecp_freq, rel_tol=1e-9)


@given(erc_inputs())
def test_integer_ne_is_epsilon_equilibrium(inp):
    eq = solve_erc(inp)
    assert all(0 <= l <= c for l, c in zip(eq.levels, inp.caps))
    assert eq.total_nonce == sum(eq.levels)
    assert oracle.epsilon_ne_check(eq, inp).verdict


@given(erc_inputs())
def test_real_solution_regimes(inp):
    sol = closed_form_ne(inp)
    if inp.n_coalitions < 2:
        return
    S = sol.total
    for th, cap, l, status in zip(inp.thetas, inp.caps, sol.levels, sol.status):
        raw = unconstrained_best_response(th, S - l, inp.price)
        scale = max(1.0, abs(l))
        if status == INTERIOR:
            assert abs(best_response(th, S - l, inp.price, cap) - l) <= 1e-9 * scale
        elif status == ZERO:
            assert l == 0 and raw <= 1e-9 * max(1.0, S)
        else:
            assert status == CAPPED and l == cap and raw >= cap - 1e-9 * scale


@given(st.integers(2, 6), thetas, st.integers(5, 50), prices)
def test_symmetric_coalitions_get_equal_levels(M, theta, cap, p):
    sol = closed_form_ne(ErcInput((theta,) * M, (cap,) * M, p))
    assert max(sol.levels) - min(sol.levels) <= 1e-9 * max(1.0, max(sol.levels))


@SLOW
@given(erc_inputs(max_m=3, max_cap=12))
def test_solver_within_gap_of_every_exact_equilibrium(inp):
    eq = solve_erc(inp)
    for profile in oracle.brute_force_erc(inp):
        for m, (th, cap) in enumerate(zip(inp.thetas, inp.caps)):
            G = gap_bound(th, eq.opponents(m), inp.price, cap)
            assert coalition_utility(profile[m], eq.opponents(m), th, inp.price) <= eq.utilities[m] + G + 1e-9


@SLOW
@given(erc_inputs())
def test_iteration_agrees_with_closed_form(inp):
    if inp.n_coalitions < 2:
        return
    rep = oracle.best_response_iteration(inp)
    if rep.status == "fixed_point":
        ref = closed_form_ne(inp).levels
        assert all(abs(a - b) <= 1e-6 * max(1.0, abs(b)) for a, b in zip(rep.levels, ref))


@SLOW
@given(st.integers(0, 10_000), st.integers(3, 6), st.integers(1, 3), st.floats(1.0, 499.0))
def test_moves_progress_respect_consent_and_capacity(seed, N, J, price):
    ctx = build_context(f"J={J}", SystemParams(n_mus=N, collaboration_factor=J), seed)
    s = random_structure(N, J, random.Random(seed))
    before = ctx.evaluate(s, price)
    found = find_deviation(before, ctx)
    assert (found is None) == oracle.brute_force_stability(s, price, ctx).verdict
    if found is None:
        assert is_stable(s, price, ctx)
        return
    move, after = found
    assert after.structure == apply_move(s, move)
    assert admissible(move, before, after)
    assert after.xi[move.actor] > before.xi[move.actor]
    if move.kind in (MERGE_A, MERGE_B):
        for n in s.coalitions[move.target]:
            assert after.xi[n] >= before.xi[n] - 1e-9 * max(1.0, abs(before.xi[n]))
    assert all(after.structure.coalitions)
    assert max(after.structure.membership_counts().values()) <= J


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60), st.randoms())
def test_means_ignore_seed_order(xs, rnd):
    ys = list(xs)
    rnd.shuffle(ys)
    assert mean_ci(xs)[0] == mean_ci(ys)[0]
    assert math.isclose(mean_ci(xs)[1], mean_ci(ys)[1], rel_tol=1e-12, abs_tol=1e-12)


@SLOW
@given(st.integers(0, 1000), st.integers(2, 6), st.floats(0.05, 1.0))
def test_price_search_invariants(seed, N, step0):
    ctx = build_context("J=1", SystemParams(n_mus=N, collaboration_factor=1), seed)
    res = solve_stackelberg(ctx, seed, eps=1e-3, step0=step0)
    for rec in res.price_trajectory:
        assert 0 <= rec.p_low <= rec.p_high <= 500
        assert abs(rec.o_next - rec.p_mid / 500) <= step0 * STEP_DECAY ** rec.iteration + 1e-12
    assert 0 <= res.p_star <= 500
