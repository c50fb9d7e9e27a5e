"""Fixtures and random instance generators shared by the test modules."""

import numpy as np

from drvcg.agents import AgentModel, Bernoulli, EffortLevel, Uniform
from drvcg.allocation import BidMatrix, MenuEntry
from drvcg.contracts import Linear, contract_grid, make_cliff, make_fixed, reserve_cost
from drvcg.mechanisms import truthful_bids


def example_agents():
    """Three free agents holding 100 kWh with reliabilities 1, 0.9 and 0.7."""
    return [AgentModel(str(k + 1), (EffortLevel(0.0, Bernoulli(100.0, p)),))
            for k, p in enumerate((1.0, 0.9, 0.7))]


def example_bids():
    return BidMatrix.from_rows([[0.0], [5.0], [15.0]], [1], unit=100.0)


def appendix_agents():
    return [AgentModel("1", (EffortLevel(0.0, Uniform(100.0, 200.0)),)),
            AgentModel("2", (EffortLevel(0.0, Uniform(50.0, 250.0)),))]


def appendix_matrix(M):
    """Truthful bids of the appendix pair on the 50 kWh linear grid, reserve at 0.5/kWh."""
    J = contract_grid(50, 1000, "linear")
    units = int(M // 50)
    return truthful_bids(appendix_agents(), J, 50).matrix(Linear(0.5), units), units


def linear_reserve(units, unit, slope=0.5):
    return [reserve_cost(Linear(slope), q * unit) for q in range(units + 1)]


def random_matrix(rng, n, k, m_target, reserve=True, absent=0.2, bid_hi=10.0):
    """Random bid matrix: k contract sizes in 1..m_target, some entries withheld."""
    ells = rng.integers(1, max(1, m_target) + 1, size=k)
    menus = []
    for _ in range(n):
        row = [MenuEntry(j, int(ells[j]), float(np.round(rng.uniform(0, bid_hi), 3)))
               for j in range(k) if rng.random() >= absent]
        menus.append(row)
    res = None
    if reserve:
        slope = float(rng.uniform(0.2, 2.0))
        res = [slope * q for q in range(m_target + 1)]
    return BidMatrix([str(i) for i in range(n)], menus, res, 1.0)


def random_level(rng, unit, max_units):
    cost = float(np.round(rng.uniform(0, 3), 2)) if rng.random() < 0.8 else 0.0
    if rng.random() < 0.5:
        q = float(rng.integers(1, max_units + 1) * unit)
        return EffortLevel(cost, Bernoulli(q, float(np.round(rng.uniform(0.3, 1.0), 2))))
    lo = float(rng.uniform(0, max_units * unit))
    return EffortLevel(cost, Uniform(lo, lo + float(rng.uniform(0.5, max_units)) * unit))


def random_agents(rng, n, max_units, unit=1.0, levels=2):
    return [AgentModel(str(i), tuple(random_level(rng, unit, max_units)
                                     for _ in range(rng.integers(1, levels + 1))))
            for i in range(n)]


def random_contracts(rng, k, max_units, unit=1.0):
    out = []
    for j in range(k):
        ell = float(rng.integers(1, max_units + 1) * unit)
        f = float(np.round(rng.uniform(0.5, 6), 2))
        if rng.random() < 0.5:
            out.append(make_fixed(ell, f, id=str(j)))
        else:
            alpha = float(rng.choice([0.0, 1 / 3, 0.5]))
            beta = f / (ell * (1 - alpha)) * float(rng.uniform(0.2, 1.0)) if alpha > 0 else \
                float(rng.uniform(0.1, 1.0))
            out.append(make_cliff(ell, f, alpha, beta, id=str(j)))
    return out
