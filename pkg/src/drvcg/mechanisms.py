"""End-to-end DR-VCG and DR-SCE runs: bids, selection, rewards, expected expense
and ex-post realization."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .agents import (AgentModel, Bernoulli, EffortLevel, Point, ReductionDistribution,
                     _contract_arrays, _penalty_vec, cost_plans_vec, outcome_to_dict, sample_outcome)
from .allocation import (VALUE_TOL, Assignment, BidMatrix, MenuEntry, RewardVector,
                         reserve_margins, solve_with_rewards)
from .contracts import Contract, ReserveSchedule, penalty, reserve_cost

GOLDEN = (math.sqrt(5) - 1) / 2


@dataclass
class Selection:
    """One selected agent together with what she committed to and will do."""

    agent: AgentModel
    level: EffortLevel
    reward: float  # VCG: up-front reward; SCE: expected payment
    expected_penalty: float = 0.0
    contract: Contract | None = None  # VCG
    bid: float | None = None  # SCE quantity bid (kWh)


@dataclass
class MechanismOutcome:
    mechanism: str  # "vcg" or "sce"
    M: float
    gamma: float
    selections: list[Selection]
    external_cost: float
    reserve_quantity: float
    expected_penalties: float
    expected_total_expense: float
    assignment: Assignment | None = None
    rewards: RewardVector | None = None
    sum_of_bids: float | None = None

    @property
    def target(self) -> float:
        return self.gamma * self.M

    @property
    def n_selected(self) -> int:
        return len(self.selections)

    @property
    def total_rewards(self) -> float:
        return sum(s.reward for s in self.selections)

    def to_dict(self) -> dict:
        return {
            "mechanism": self.mechanism,
            "M": self.M,
            "gamma": self.gamma,
            "target": self.target,
            "external_cost": self.external_cost,
            "reserve_quantity": self.reserve_quantity,
            "expected_penalties": self.expected_penalties,
            "expected_total_expense": self.expected_total_expense,
            "sum_of_bids": self.sum_of_bids,
            "selected": [
                {"agent": s.agent.id, "reward": s.reward, "expected_penalty": s.expected_penalty,
                 "level_cost": s.level.cost,
                 "outcome": outcome_to_dict(s.level.outcome),
                 **({"contract": s.contract.to_dict()} if s.contract is not None else {}),
                 **({"bid": s.bid} if s.bid is not None else {})}
                for s in self.selections
            ],
        }


# ---------------------------------------------------------------------------
# DR-VCG


def grid_units(x: float, unit: float, what: str = "quantity") -> int:
    k = round(x / unit)
    if abs(k * unit - x) > 1e-9 * max(1.0, abs(x)):
        raise ValueError(f"{what} {x} is not a multiple of the allocation unit {unit}")
    return int(k)


def target_units(M: float, gamma: float, unit: float) -> int:
    return int(math.ceil(gamma * M / unit - 1e-9))


def reserve_menu(reserve: ReserveSchedule | None, units: int, unit: float) -> list[float] | None:
    if reserve is None:
        return None
    return [reserve_cost(reserve, q * unit) for q in range(units + 1)]


@dataclass
class VCGBids:
    """Truthful bids of a population over a contract list, with the plans behind them."""

    agents: list[AgentModel]
    contracts: list[Contract]
    unit: float
    costs: np.ndarray  # (n, k) cost types
    penalties: np.ndarray  # (n, k) expected penalties under the optimal plan
    levels: np.ndarray  # (n, k) chosen level index

    def matrix(self, reserve: ReserveSchedule | None, units: int, prune: bool = False) -> BidMatrix:
        """Bid matrix for a target of ``units``; ``prune`` applies
        :func:`drop_reserve_dominated` before any menu entry is built."""
        ells = np.array([grid_units(c.ell, self.unit, "contract size") for c in self.contracts],
                        dtype=np.int64)
        menu = reserve_menu(reserve, units, self.unit)
        keep = np.broadcast_to(ells > 0, self.costs.shape) if prune else \
            np.ones(self.costs.shape, dtype=bool)
        margins = reserve_margins(menu, units, ells) if prune else None
        if margins is not None:
            keep = keep & (self.costs < margins[None, :] - VALUE_TOL)
        ell_list = ells.tolist()
        menus = []
        for i in range(len(self.agents)):
            js = np.flatnonzero(keep[i]).tolist()
            menus.append([MenuEntry(j, ell_list[j], b)
                          for j, b in zip(js, self.costs[i, js].tolist())])
        return BidMatrix([a.id for a in self.agents], menus, menu, self.unit)


def truthful_bids(agents: Sequence[AgentModel], J: Sequence[Contract], unit: float) -> VCGBids:
    n, k = len(agents), len(J)
    costs, pens, levels = np.zeros((n, k)), np.zeros((n, k)), np.zeros((n, k), dtype=int)
    for i, a in enumerate(agents):
        costs[i], pens[i], levels[i] = cost_plans_vec(a, J)
    return VCGBids(list(agents), list(J), unit, costs, pens, levels)


def default_unit(J: Sequence[Contract]) -> float:
    sizes = [round(c.ell) for c in J if c.ell > 0]
    if not sizes or any(abs(s - c.ell) > 1e-9 for s, c in zip(sizes, [c for c in J if c.ell > 0])):
        raise ValueError("cannot infer an allocation unit; pass unit explicitly")
    return float(math.gcd(*sizes))


def run_dr_vcg(agents: Sequence[AgentModel], J: Sequence[Contract],
               reserve: ReserveSchedule | None, M: float, gamma: float = 1.0,
               unit: float | None = None, bids: VCGBids | None = None,
               prune: bool = True) -> MechanismOutcome:
    """Run DR-VCG with truthful bids, procuring ``gamma * M``.

    With ``prune`` agents skip contracts on which they cannot beat the reserve
    (see :func:`drop_reserve_dominated`); rewards are unaffected.
    """
    if gamma < 1:
        raise ValueError("safety margin gamma must be at least 1")
    if bids is None:
        unit = unit if unit is not None else default_unit(J)
        bids = truthful_bids(agents, J, unit)
    unit = bids.unit
    units = target_units(M, gamma, unit)
    b = bids.matrix(reserve, units, prune=prune)
    assignment, value, rewards = solve_with_rewards(b, units)
    selections = []
    for i, j in assignment.pairs:
        agent = bids.agents[i]
        lvl = int(bids.levels[i, j])
        selections.append(Selection(agent, agent.all_levels[lvl], rewards[i],
                                    float(bids.penalties[i, j]), contract=bids.contracts[j],
                                    bid=b.entry(i, j).bid))
    ext = assignment.reserve_cost
    ef = sum(s.expected_penalty for s in selections)
    te = sum(s.reward for s in selections) + ext - ef
    return MechanismOutcome("vcg", M, gamma, selections, ext, assignment.reserve_units * unit,
                            ef, te, assignment, rewards, value)


# ---------------------------------------------------------------------------
# DR-SCE


def sce_reward(b: float, x: float) -> float:
    """Ex-post SCE payment: $0.5/kWh for reductions within 50%-150% of the bid, capped."""
    if x < b / 2:
        return 0.0
    return min(x, 3 * b / 2) / 2


def expected_sce_reward(b: float, o: ReductionDistribution) -> float:
    if isinstance(o, Point):
        return sce_reward(b, o.q)
    if isinstance(o, Bernoulli):
        return o.p * sce_reward(b, o.q) + (1 - o.p) * sce_reward(b, 0.0)
    lo, hi = o.lo, o.hi
    if hi == lo:
        return sce_reward(b, lo)
    width = hi - lo
    u, v = max(lo, b / 2), min(hi, 3 * b / 2)
    middle = (v * v - u * u) / 4 / width if v > u else 0.0
    top_from = max(lo, 3 * b / 2)
    top = 3 * b / 4 * (hi - top_from) / width if hi > top_from else 0.0
    return middle + top


def golden_section_max(fn, lo: float, hi: float, tol: float = 1e-9, max_iter: int = 200) -> float:
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iter):
        if b - a <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fn(d)
    return (a + b) / 2


def best_sce_bid(o: ReductionDistribution) -> float:
    """Quantity bid maximizing the expected SCE payment for one outcome distribution."""
    if isinstance(o, (Point, Bernoulli)):
        return float(o.q)
    lo, hi = o.lo, o.hi
    if 2 * hi / 3 <= 2 * lo:
        # the whole support is paid in full at any bid in [2hi/3, 2lo]
        return float(min(max((lo + hi) / 2, 2 * hi / 3), 2 * lo))
    fn = lambda b: expected_sce_reward(b, o)  # noqa: E731
    b = golden_section_max(fn, 0.0, 2 * hi)
    return _polish_vertex(fn, b, sorted({0.0, 2 * lo / 3, 2 * hi / 3, 2 * lo, 2 * hi}))


def _polish_vertex(fn, b: float, breaks: list[float]) -> float:
    # the expected payment is quadratic in b between breakpoints; the search
    # result is replaced by the exact vertex of its piece when that is a maximum
    for left, right in zip(breaks, breaks[1:]):
        if left <= b <= right and right > left:
            xs = np.array([left + (right - left) * t for t in (0.25, 0.5, 0.75)])
            c2, c1, _ = np.polyfit(xs, [fn(x) for x in xs], 2)
            if c2 < 0:
                v = -c1 / (2 * c2)
                if left <= v <= right and fn(v) >= fn(b) - 1e-12:
                    return float(round(v, 9))
            break
    return b


@dataclass(frozen=True)
class SCEBid:
    b: float
    level_index: int  # into AgentModel.all_levels
    level: EffortLevel
    expected_payment: float


def sce_optimal_bid(a: AgentModel) -> SCEBid | None:
    """The agent's best SCE bid and effort level, or None when no level is profitable."""
    best = None
    for idx, lv in enumerate(a.all_levels):
        if idx == 0:
            continue
        b = best_sce_bid(lv.outcome)
        if b <= 0:
            continue
        pay = expected_sce_reward(b, lv.outcome)
        if best is None or pay - lv.cost > best.expected_payment - best.level.cost + 1e-12:
            best = SCEBid(b, idx, lv, pay)
    if best is None or best.expected_payment - best.level.cost <= 0:
        return None
    return best


def sce_participants(agents: Sequence[AgentModel]) -> list[tuple[int, SCEBid]]:
    out = []
    for i, a in enumerate(agents):
        bid = sce_optimal_bid(a)
        if bid is not None:
            out.append((i, bid))
    return out


def run_dr_sce(agents: Sequence[AgentModel], reserve: ReserveSchedule | None, M: float,
               gamma: float = 1.0, order: Sequence[int] | np.random.Generator | None = None,
               participants: list[tuple[int, SCEBid]] | None = None) -> MechanismOutcome:
    """One DR-SCE run: agents are taken in ``order`` until their bids reach ``gamma*M``.

    ``order`` lists agent indices (non-participants are skipped) or is a seeded
    generator drawing a uniform permutation of the participants.
    """
    if participants is None:
        participants = sce_participants(agents)
    by_index = dict(participants)
    if order is None:
        seq = [i for i, _ in participants]
    elif isinstance(order, np.random.Generator):
        seq = [participants[k][0] for k in order.permutation(len(participants))]
    else:
        seq = [i for i in order if i in by_index]
    target = gamma * M
    selections, claimed = [], 0.0
    for i in seq:
        if claimed >= target - 1e-9:
            break
        bid = by_index[i]
        claimed += bid.b
        selections.append(Selection(agents[i], bid.level, bid.expected_payment, bid=bid.b))
    shortfall = max(0.0, target - claimed)
    if shortfall <= 1e-9:
        shortfall = 0.0
    ext = reserve_cost(reserve, shortfall) if (reserve is not None and shortfall) else 0.0
    reserve_q = shortfall if reserve is not None else 0.0
    te = sum(s.reward for s in selections) + ext
    return MechanismOutcome("sce", M, gamma, selections, ext, reserve_q, 0.0, te)


@dataclass
class ExpectedSCE:
    """DR-SCE averaged over the random selection order."""

    M: float
    gamma: float
    outcomes: list[MechanismOutcome]
    weights: list[float]
    exact: bool

    @property
    def expected_total_expense(self) -> float:
        return float(sum(w * o.expected_total_expense for o, w in zip(self.outcomes, self.weights)))

    @property
    def external_cost(self) -> float:
        return float(sum(w * o.external_cost for o, w in zip(self.outcomes, self.weights)))

    @property
    def mean_selected(self) -> float:
        return float(sum(w * o.n_selected for o, w in zip(self.outcomes, self.weights)))

    @property
    def reserve_use_probability(self) -> float:
        return float(sum(w for o, w in zip(self.outcomes, self.weights) if o.reserve_quantity > 0))


def expected_dr_sce(agents: Sequence[AgentModel], reserve: ReserveSchedule | None, M: float,
                    gamma: float = 1.0, seed: int | np.random.Generator = 0, orders: int = 200,
                    max_exact: int = 8,
                    participants: list[tuple[int, SCEBid]] | None = None) -> ExpectedSCE:
    """Average over all participant orders when there are at most ``max_exact``
    participants, otherwise over ``orders`` sampled permutations."""
    if participants is None:
        participants = sce_participants(agents)
    idx = [i for i, _ in participants]
    if len(idx) <= max_exact:
        # runs depending only on the selected prefix are merged
        groups: dict[tuple, tuple[MechanismOutcome, int]] = {}
        total = 0
        for perm in itertools.permutations(idx):
            out = run_dr_sce(agents, reserve, M, gamma, perm, participants)
            key = tuple(s.agent.id for s in out.selections)
            prev = groups.get(key)
            groups[key] = (out, 1 + (prev[1] if prev else 0))
            total += 1
        outcomes = [o for o, _ in groups.values()]
        weights = [c / total for _, c in groups.values()]
        return ExpectedSCE(M, gamma, outcomes, weights, True)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    outcomes = [run_dr_sce(agents, reserve, M, gamma, rng, participants) for _ in range(orders)]
    return ExpectedSCE(M, gamma, outcomes, [1.0 / orders] * orders, False)


# ---------------------------------------------------------------------------
# realization


@dataclass
class Realization:
    reductions: list[float]
    penalties: list[float]
    payments: list[float]
    reserve_quantity: float
    external_cost: float
    total_reduction: float
    met_target: bool

    @property
    def expense(self) -> float:
        return sum(self.payments) + self.external_cost


def realize(outcome: MechanismOutcome, rng: np.random.Generator,
            M: float | None = None) -> Realization:
    """Draw each selected agent's reduction and settle payments ex post.

    The target is judged against ``M`` (default: the outcome's M, without the
    safety margin).
    """
    xs, pens, pays = [], [], []
    for s in outcome.selections:
        x = float(sample_outcome(s.level.outcome, rng, 1)[0])
        xs.append(x)
        if outcome.mechanism == "vcg":
            f = penalty(s.contract, x)
            pens.append(f)
            pays.append(s.reward - f)
        else:
            pens.append(0.0)
            pays.append(sce_reward(s.bid, x))
    total = sum(xs) + outcome.reserve_quantity
    m = outcome.M if M is None else M
    return Realization(xs, pens, pays, outcome.reserve_quantity, outcome.external_cost,
                       total, total >= m - 1e-9)


def realized_expenses(outcome: MechanismOutcome, samples: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Vectorized ex-post expense over many independent realizations."""
    total = np.full(samples, outcome.external_cost)
    for s in outcome.selections:
        x = sample_outcome(s.level.outcome, rng, samples)
        if outcome.mechanism == "vcg":
            total += s.reward - _penalty_array(s.contract, x)
        else:
            b = s.bid
            total += np.where(x < b / 2, 0.0, np.minimum(x, 3 * b / 2) / 2)
    return total


def _penalty_array(c: Contract, x: np.ndarray) -> np.ndarray:
    ell, f, alpha, beta = (v[0] for v in _contract_arrays([c]))
    return _penalty_vec(ell, f, alpha, beta, x)
