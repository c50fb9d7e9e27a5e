import json

import pytest
from hypothesis import given, strategies as st

from drvcg.contracts import (NULL_CONTRACT, Affine, Cliff, Contract, ContractError, Fixed, Linear,
                             Table, contract_grid, make_cliff, make_fixed, penalty, reserve_cost,
                             reserve_from_dict, reserve_to_dict, sce_contract_for_quantity,
                             sce_equivalent_of_bid)


def test_cliff_penalty_on_slope_and_plateau():
    c = make_cliff(225, 112.5, 1 / 3, 1 / 2)
    assert penalty(c, 160) == pytest.approx(32.5, abs=1e-12)
    assert penalty(c, 50) == 112.5
    assert penalty(c, 225) == 0.0


def test_fixed_penalty_is_a_step():
    c = make_fixed(100, 50)
    assert penalty(c, 99) == 50
    assert penalty(c, 100) == 0


def test_make_cliff_constraint():
    make_cliff(150, 75, 1 / 3, 1 / 2)
    lin = make_cliff(150, 0, 0, 1)
    assert penalty(lin, 100) == 50 and penalty(lin, 0) == 150
    with pytest.raises(ContractError):
        make_cliff(150, 40, 1 / 3, 1 / 2)
    with pytest.raises(ContractError):
        make_cliff(150, 75, 1.0, 0.5)
    with pytest.raises(ContractError):
        make_fixed(10, -1)


def test_sce_family():
    assert sce_contract_for_quantity(150) == Contract(150, Cliff(75, 1 / 3, 1 / 2))
    assert sce_contract_for_quantity(225) == Contract(225, Cliff(112.5, 1 / 3, 1 / 2))
    assert sce_contract_for_quantity(0).is_null
    assert sce_equivalent_of_bid(150) == sce_contract_for_quantity(225)
    assert sce_equivalent_of_bid(100) == sce_contract_for_quantity(150)
    assert sce_equivalent_of_bid(0).is_null


def test_contract_grid_families():
    sce = contract_grid(10, 30, "sce")
    assert [c.ell for c in sce] == [10, 20, 30]
    assert all(c.f == c.ell / 2 for c in sce)
    lin = contract_grid(50, 150, "linear")
    assert [(c.ell, c.f, c.scheme.alpha, c.scheme.beta) for c in lin] == \
        [(50, 0, 0, 1), (100, 0, 0, 1), (150, 0, 0, 1)]
    dbl = contract_grid(10, 30, "double")
    assert all(isinstance(c.scheme, Cliff) and c.f == c.ell for c in dbl)
    with pytest.raises(ContractError):
        contract_grid(0, 10)


def test_reserve_costs():
    assert reserve_cost(Linear(0.5), 100) == 50
    assert reserve_cost(Affine(4000, 0.1), 10000) == pytest.approx(5000)
    for r in (Linear(0.5), Affine(4000, 0.1), Table((100, 200), (10, 30))):
        assert reserve_cost(r, 0) == 0
    assert reserve_cost(Table((100, 200), (10, 30)), 150) == 30
    with pytest.raises(ContractError):
        Table((100, 200), (30, 10))


def test_serialization_round_trip():
    for c in (make_fixed(100, 50, id="a"), make_cliff(150, 75, 1 / 3, 0.5), NULL_CONTRACT):
        back = Contract.from_dict(json.loads(json.dumps(c.to_dict())))
        assert back == c
    for r in (Linear(0.5), Affine(4000, 0.1), Table((1.0, 2.0), (3.0, 4.0))):
        assert reserve_from_dict(json.loads(json.dumps(reserve_to_dict(r)))) == r
    with pytest.raises(ContractError):
        Contract.from_dict({"ell": 1, "scheme": {"kind": "weird"}})


ells = st.floats(1, 1000)
alphas = st.sampled_from([0.0, 0.1, 1 / 3, 0.5, 0.9])


@st.composite
def cliffs(draw):
    ell, alpha = draw(ells), draw(alphas)
    beta = draw(st.floats(0, 3))
    floor = ell * (1 - alpha) * beta if alpha > 0 else 0.0
    f = floor + draw(st.floats(0, 500))
    return make_cliff(ell, f, alpha, beta)


@given(cliffs(), st.floats(0, 2000), st.floats(0, 2000))
def test_penalty_monotone_and_zero_past_commitment(c, x1, x2):
    lo, hi = sorted((x1, x2))
    assert penalty(c, lo) >= penalty(c, hi)
    assert penalty(c, c.ell + hi) == 0


@given(cliffs(), st.floats(0, 1))
def test_cliff_bounded_by_plateau(c, frac):
    if c.scheme.alpha == 0:
        return
    x = frac * c.ell
    assert penalty(c, x) <= c.f + 1e-9
    if x < c.scheme.alpha * c.ell:
        assert penalty(c, x) == c.f


@given(ells, st.floats(0, 500), alphas, st.floats(0, 1.2))
def test_fixed_matches_flat_cliff_outside_the_slope(ell, f, alpha, frac):
    # Fixed and a zero-slope cliff agree except on [alpha*ell, ell), where the
    # cliff charges nothing and the fixed contract still charges f
    fixed, flat = make_fixed(ell, f), make_cliff(ell, f, alpha, 0.0)
    x = frac * ell
    if alpha * ell <= x < ell:
        assert penalty(flat, x) == 0 and penalty(fixed, x) == f
    else:
        assert penalty(flat, x) == penalty(fixed, x)


@given(ells, alphas.filter(lambda a: a > 0), st.floats(0.01, 3))
def test_continuity_at_cliff_edge(ell, alpha, beta):
    c = make_cliff(ell, ell * (1 - alpha) * beta, alpha, beta)
    assert penalty(c, alpha * ell) == pytest.approx(c.f, rel=1e-12, abs=1e-12)


def test_pieces_reproduce_penalty():
    for c in (make_fixed(100, 50), make_cliff(225, 112.5, 1 / 3, 0.5), make_cliff(150, 0, 0, 1)):
        for x in range(0, 260, 7):
            want = sum(a + b * x for x0, x1, a, b in c.pieces() if x0 <= x < x1)
            assert want == pytest.approx(penalty(c, x), abs=1e-12)
    assert Fixed(3.0).kind == "fixed"
