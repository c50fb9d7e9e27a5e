import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drvcg.allocation import (Assignment, BidMatrix, Infeasible, MenuEntry, SizeLimit,
                              assignment_rows, assignment_to_dict, brute_force_solve,
                              clarke_rewards, clarke_rewards_fast, cost_independent_price,
                              coverage_costs, drop_reserve_dominated, optimal_value, solve,
                              solve_with_rewards, verify_market_clearing)

from _helpers import appendix_matrix, example_bids, linear_reserve, random_matrix


def ells_of(b, a):
    return {b.agents[i]: b.entry(i, j).ell * b.unit for i, j in a.pairs}


def test_example_selection_and_rewards():
    b = example_bids()
    a, sb = solve(b, 2)
    assert a.selected == [0, 1] and sb == 5
    r = clarke_rewards(b, 2)
    assert r.rewards == pytest.approx([15, 15, 0])
    assert clarke_rewards_fast(b, 2).rewards == r.rewards
    assert brute_force_solve(b, 2)[1] == 5


def test_appendix_columns():
    b, m = appendix_matrix(150)
    a, sb = solve(b, m)
    assert sb == 0 and ells_of(b, a) == {"1": 100, "2": 50} and a.reserve_units == 0
    b, m = appendix_matrix(400)
    a, sb = solve(b, m)
    assert sb == pytest.approx(87.5) and ells_of(b, a) == {"1": 150, "2": 150}
    assert a.reserve_units * b.unit == 100
    b, m = appendix_matrix(250)
    assert clarke_rewards(b, m).rewards == pytest.approx([68.75, 50])


def test_zero_target_and_trivial_cases():
    a, sb = solve(example_bids(), 0)
    assert a.pairs == [] and sb == 0
    single = BidMatrix.from_rows([[7.0]], [5])
    assert solve(single, 3)[1] == 7 and brute_force_solve(single, 3)[1] == 7
    with pytest.raises(Infeasible):
        clarke_rewards(single, 3)
    backed = BidMatrix.from_rows([[7.0]], [5], reserve=[0, 4, 8, 12])
    assert clarke_rewards(backed, 3).rewards == clarke_rewards_fast(backed, 3).rewards == [12.0]


def test_single_agent_reward_against_linear_reserve():
    m, unit = 4, 10.0
    b = BidMatrix.from_rows([[3.0]], [m], reserve=linear_reserve(m, unit), unit=unit)
    assert clarke_rewards(b, m).rewards == pytest.approx([0.5 * m * unit])


def test_infeasible_and_bad_input():
    with pytest.raises(Infeasible):
        solve(example_bids(), 4)
    with pytest.raises(Infeasible):
        brute_force_solve(example_bids(), 4)
    with pytest.raises(ValueError):
        solve(example_bids(), -1)
    with pytest.raises(ValueError):
        BidMatrix.from_rows([[float("inf")]], [1])
    with pytest.raises(SizeLimit):
        brute_force_solve(BidMatrix.from_rows([[1.0] * 9] * 8, list(range(1, 10))), 5, limit=1000)


def test_ties_prefer_no_reserve_then_low_indices():
    # reserve ties with agent 0; agents 1 and 2 tie with each other
    b = BidMatrix.from_rows([[2.0], [1.0], [1.0]], [2], reserve=[0, 1, 2])
    a, sb = solve(b, 2)
    assert sb == 1 and a.pairs == [(1, 0)] and a.reserve_units == 0
    b = BidMatrix.from_rows([[1.0], [1.0]], [1], reserve=[0, 1, 2])
    a, sb = solve(b, 1)
    assert a.pairs == [(0, 0)]


def test_cost_independent_price():
    b = example_bids()
    assert cost_independent_price(b, 2, 0, 0) == pytest.approx(15)
    scaled = BidMatrix.from_rows([[0.0], [50.0], [15.0]], [1], unit=100.0)
    assert cost_independent_price(scaled, 2, 1, 0) == cost_independent_price(b, 2, 1, 0)
    # others already cover the target: pinning the agent changes nothing
    roomy = BidMatrix(["a", "b"], [[MenuEntry(0, 0, 1.0)], [MenuEntry(0, 2, 0.0)]])
    assert cost_independent_price(roomy, 2, 0, 0) == 0


def test_market_clearing():
    assert verify_market_clearing(example_bids(), 2).ok
    b, m = appendix_matrix(150)
    assert verify_market_clearing(b, m).ok
    bad = Assignment([(2, 0), (1, 0)], 0, 2, 20.0)
    report = verify_market_clearing(example_bids(), 2, bad)
    assert not report.ok and any("agent 1" in v for v in report.violations)


def test_serialization_and_rows():
    b, m = appendix_matrix(400)
    again = BidMatrix.from_dict(json.loads(json.dumps(b.to_dict())))
    assert again == b
    a, sb, r = solve_with_rewards(b, m)
    d = assignment_to_dict(b, a, sb, r)
    assert d["reserve_units"] == 2 and d["sum_of_bids"] == pytest.approx(87.5)
    rows = assignment_rows(b, a, r)
    assert rows[-1][0] == "reserve" and rows[-1][1] == 100


def test_coverage_costs_are_monotone():
    b, m = appendix_matrix(1000)
    c = coverage_costs(b, m)
    assert np.all(np.diff(c) >= -1e-12) and optimal_value(b, m) == pytest.approx(387.5)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dp_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n, k, m = int(rng.integers(1, 7)), int(rng.integers(1, 4)), int(rng.integers(0, 25))
    b = random_matrix(rng, n, k, m, reserve=bool(rng.random() < 0.7))
    try:
        want = brute_force_solve(b, m)
    except Infeasible:
        with pytest.raises(Infeasible):
            solve(b, m)
        return
    a, sb = solve(b, m)
    assert sb == pytest.approx(want[1], abs=1e-9)
    assert a.sum_of_bids == pytest.approx(sb, abs=1e-9)
    assert a.total_commitment >= m
    assert a.reserve_units <= want[0].reserve_units


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_fast_rewards_match_naive(seed):
    rng = np.random.default_rng(seed)
    n, k, m = int(rng.integers(1, 15)), int(rng.integers(1, 6)), int(rng.integers(1, 40))
    b = random_matrix(rng, n, k, m, reserve=True)
    naive = clarke_rewards(b, m)
    fast = clarke_rewards_fast(b, m)
    assert fast.rewards == pytest.approx(naive.rewards, abs=1e-9)
    a, sb = solve(b, m)
    for i, j in a.pairs:
        assert fast[i] >= b.entry(i, j).bid - 1e-9
        # price decomposition: the optimum splits into the agent's bid and the rest
        rest = BidMatrix(b.agents, [m_ if t != i else [] for t, m_ in enumerate(b.menus)],
                         b.reserve, b.unit)
        need = max(0, m - b.entry(i, j).ell)
        assert sb == pytest.approx(optimal_value(rest, need) + b.entry(i, j).bid, abs=1e-9)
        assert fast[i] == pytest.approx(cost_independent_price(b, m, i, j), abs=1e-9)
    for i in range(b.n):
        if i not in a.selected:
            assert fast[i] == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pruning_keeps_every_value(seed):
    rng = np.random.default_rng(seed)
    n, k, m = int(rng.integers(1, 10)), int(rng.integers(1, 5)), int(rng.integers(1, 30))
    b = random_matrix(rng, n, k, m, reserve=True)
    pruned = drop_reserve_dominated(b, m)
    a0, v0, r0 = solve_with_rewards(b, m)
    a1, v1, r1 = solve_with_rewards(pruned, m)
    assert v1 == pytest.approx(v0, abs=1e-9)
    for i in range(b.n):
        loo0 = optimal_value(b.without(i), m)
        assert optimal_value(pruned.without(i), m) == pytest.approx(loo0, abs=1e-9)
    for i in a1.selected:
        assert r1[i] >= pruned.entry(i, a1.contract_of(i)).bid - 1e-9
