import math

import pytest

from ocfmine.erc import (CAPPED, INTERIOR, ZERO, ErcInput, allocate_uniform, best_response, closed_form_ne,
                         coalition_payoffs, gap_bound, integer_best_response, integer_ne, nonce_cap,
                         solve_erc, unconstrained_best_response, utility_gradient)
from ocfmine.model import coalition_utility


def test_nonce_cap(table2):
    assert nonce_cap(table2) == 599
    assert nonce_cap(table2.with_(header_size=0.0)) == 600
    # header too large to send within the block time
    assert nonce_cap(table2.with_(header_size=600 * 2.7e8)) == 0


def test_best_response():
    assert best_response(1000, 5, 50, 599) == pytest.approx(5)
    assert best_response(1000, 0, 50, 599) == 0
    assert best_response(10, 100, 50, 599) == 0
    assert best_response(1000, 5, 50, 3) == 3
    assert best_response(1000, 5, 0, 17) == 17  # price floor case returns the cap
    assert unconstrained_best_response(10, 100, 50) < 0


def test_closed_form_examples():
    sol = closed_form_ne(ErcInput((1000.0, 1000.0), (599, 599), 50.0))
    assert sol.levels == pytest.approx((5, 5), rel=1e-12)
    assert sol.total == pytest.approx(10, rel=1e-12)
    sol = closed_form_ne(ErcInput((900.0,) * 3, (599,) * 3, 40.0))
    assert sol.levels == pytest.approx((5, 5, 5), rel=1e-12)
    sol = closed_form_ne(ErcInput((1000.0, 1000.0, 1.0), (599,) * 3, 1.0))
    assert sol.levels == pytest.approx((250, 250, 0), rel=1e-12)
    assert sol.status == (INTERIOR, INTERIOR, ZERO)


def test_capped_coalition():
    sol = closed_form_ne(ErcInput((1000.0, 1000.0), (2, 599), 50.0))
    assert sol.status[0] == CAPPED and sol.levels[0] == 2
    # the capped coalition still wants more; the other best-responds to it
    assert unconstrained_best_response(1000, sol.levels[1], 50) >= 2
    assert sol.levels[1] == pytest.approx(best_response(1000, 2, 50, 599), rel=1e-9)


def test_monopoly():
    assert solve_erc(ErcInput((900.0,), (599,), 50.0)).levels == (1,)
    assert solve_erc(ErcInput((40.0,), (599,), 50.0)).levels == (0,)
    eq = solve_erc(ErcInput((900.0,), (599,), 50.0))
    assert eq.utilities == pytest.approx((850.0,))


def test_integer_rounding_examples():
    eq = solve_erc(ErcInput((1000.0, 1000.0), (599, 599), 50.0))
    assert eq.levels == (5, 5)
    assert eq.utilities == pytest.approx((250, 250))
    # twenty near-identical coalitions at the cap price: l+ ~ 0.13 rounds to 0,
    # then the repair hands out the two unit slots that pay (theta/2 > p > theta/3)
    thetas = tuple(1400.0 + k for k in range(20))
    real = closed_form_ne(ErcInput(thetas, (599,) * 20, 500.0))
    assert all(0.1 < l < 0.2 for l in real.levels)
    eq = integer_ne(real, ErcInput(thetas, (599,) * 20, 500.0))
    assert sorted(eq.levels) == [0] * 18 + [1, 1]
    assert eq.levels[18:] == (1, 1)  # the highest reward factors win the slots


def test_two_point_rounding():
    th, others, p = 1000.0, 7, 30.0
    l = integer_best_response(th, others, p, 599)
    best = max(range(600), key=lambda x: (coalition_utility(x, others, th, p), -x))
    assert l == best


def test_integer_is_best_response_everywhere():
    inp = ErcInput((1200.0, 800.0, 650.0, 90.0), (599,) * 4, 20.0)
    eq = solve_erc(inp)
    for m, th in enumerate(inp.thetas):
        assert eq.levels[m] == integer_best_response(th, eq.opponents(m), inp.price, 599)


def test_coalition_payoffs_agree_with_solver():
    thetas = (1300.0, 1250.0, 1100.0, 1100.0, 700.0)
    for p in (5.0, 50.0, 300.0):
        fast = coalition_payoffs(thetas, 599, p)
        slow = solve_erc(ErcInput(thetas, (599,) * 5, p)).utilities
        assert tuple(fast) == pytest.approx(slow, abs=0)


def test_allocation():
    eq = solve_erc(ErcInput((1000.0, 1000.0), (599, 599), 50.0))
    shares = allocate_uniform(eq, [frozenset({0, 1}), frozenset({2})])
    assert shares[(0, 0)] == shares[(1, 0)] == (2.5, 125.0)
    assert shares[(2, 1)] == (5.0, 250.0)


def test_gap_bound_and_gradient():
    assert gap_bound(1000, 5, 50, 599) == pytest.approx(150)
    assert abs(utility_gradient(1000, 5, 50, 599)) == pytest.approx(49.986, abs=1e-3)
    assert utility_gradient(1000, 5, 50, 5) == pytest.approx(0, abs=1e-12)
    assert gap_bound(1000, 0, 50, 599) == math.inf
