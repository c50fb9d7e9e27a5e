"""Optimal contract-set selection and Clarke-pivot rewards.

All quantities here are integer allocation units. Coverage is tracked as the
remaining *need* clamped at zero, so a table row ``N[k, need]`` holds the
cheapest way for agents ``k..n-1`` to claim at least ``need`` units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

VALUE_TOL = 1e-9


class Infeasible(Exception):
    """No valid contract set covers the target."""


class SizeLimit(Exception):
    """Exhaustive enumeration would exceed the configured bound."""


@dataclass(frozen=True)
class MenuEntry:
    contract: int  # index into the published contract list
    ell: int  # commitment in allocation units
    bid: float


@dataclass
class BidMatrix:
    """Per-(agent, contract) bids. Pairs missing from a menu are "no bid".

    ``reserve[m]`` is the fallback cost of ``m`` units; the reserve acts as a
    virtual bidder holding at most one quantity.
    """

    agents: list[str]
    menus: list[list[MenuEntry]]
    reserve: list[float] | None = None
    unit: float = 1.0

    def __post_init__(self):
        if len(self.agents) != len(self.menus):
            raise ValueError("one menu per agent required")
        for menu in self.menus:
            for e in menu:
                if not (math.isfinite(e.bid) and e.bid >= 0):
                    raise ValueError(f"bids must be finite and nonnegative, got {e.bid}")
                if e.ell < 0:
                    raise ValueError("contract sizes must be nonnegative")
        if self.reserve is not None:
            if self.reserve and self.reserve[0] != 0:
                raise ValueError("reserve cost of zero units must be 0")

    @property
    def n(self) -> int:
        return len(self.agents)

    def bid(self, i: int, contract: int) -> float | None:
        for e in self.menus[i]:
            if e.contract == contract:
                return e.bid
        return None

    def entry(self, i: int, contract: int) -> MenuEntry:
        for e in self.menus[i]:
            if e.contract == contract:
                return e
        raise KeyError(f"agent {self.agents[i]} has no bid on contract {contract}")

    def without(self, i: int) -> "BidMatrix":
        return BidMatrix(self.agents[:i] + self.agents[i + 1:],
                         self.menus[:i] + self.menus[i + 1:], self.reserve, self.unit)

    def with_menu(self, i: int, menu: list[MenuEntry]) -> "BidMatrix":
        menus = list(self.menus)
        menus[i] = menu
        return BidMatrix(list(self.agents), menus, self.reserve, self.unit)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float | None]], ells: Sequence[int],
                  reserve: Sequence[float] | None = None, unit: float = 1.0,
                  agents: Sequence[str] | None = None) -> "BidMatrix":
        """Dense constructor: ``rows[i][j]`` is agent i's bid on a contract of
        ``ells[j]`` units, or None for no bid."""
        menus = [[MenuEntry(j, int(ells[j]), float(b)) for j, b in enumerate(row) if b is not None]
                 for row in rows]
        names = list(agents) if agents is not None else [str(i + 1) for i in range(len(rows))]
        return cls(names, menus, None if reserve is None else [float(r) for r in reserve], unit)

    def to_dict(self) -> dict:
        return {
            "unit": self.unit,
            "agents": list(self.agents),
            "menus": [[{"contract": e.contract, "ell": e.ell, "bid": e.bid} for e in m]
                      for m in self.menus],
            "reserve": None if self.reserve is None else list(self.reserve),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BidMatrix":
        menus = [[MenuEntry(int(e["contract"]), int(e["ell"]), float(e["bid"])) for e in m]
                 for m in d["menus"]]
        reserve = d.get("reserve")
        return cls([str(a) for a in d["agents"]], menus,
                   None if reserve is None else [float(r) for r in reserve],
                   float(d.get("unit", 1.0)))


@dataclass
class Assignment:
    pairs: list[tuple[int, int]]  # (agent index, contract index)
    reserve_units: int = 0
    total_commitment: int = 0  # units, agents plus reserve
    sum_of_bids: float = 0.0  # includes the reserve cost
    reserve_cost: float = 0.0

    def contract_of(self, i: int) -> int | None:
        for a, j in self.pairs:
            if a == i:
                return j
        return None

    @property
    def selected(self) -> list[int]:
        return [a for a, _ in self.pairs]


@dataclass
class RewardVector:
    rewards: list[float]
    leave_one_out: dict[int, float] = field(default_factory=dict)

    def __getitem__(self, i: int) -> float:
        return self.rewards[i]


# ---------------------------------------------------------------------------
# DP kernels


@numba.njit(cache=True)
def _relax(prev, ells, bids, out):
    m = prev.shape[0] - 1
    for need in range(m + 1):
        out[need] = prev[need]
    for j in range(ells.shape[0]):
        ell = ells[j]
        b = bids[j]
        top = ell if ell < m else m
        for need in range(1, top + 1):
            o = out[need]
            out[need] = b if b < o else o
        for need in range(top + 1, m + 1):
            v = prev[need - ell] + b
            o = out[need]
            out[need] = v if v < o else o


@numba.njit(cache=True)
def _reserve_margins(base, ells):
    # largest extra reserve cost of adding ell units on top of any reserve level
    m = base.shape[0] - 1
    out = np.empty(ells.shape[0])
    for j in range(ells.shape[0]):
        ell = ells[j]
        worst = 0.0
        for q in range(m + 1):
            hi = q + ell if q + ell < m else m
            d = base[hi] - base[q]
            if d > worst:
                worst = d
        out[j] = worst
    return out


@numba.njit(cache=True)
def _suffix_tables(offsets, ells, bids, m):
    n = offsets.shape[0] - 1
    tab = np.full((n + 1, m + 1), np.inf)
    tab[n, 0] = 0.0
    for k in range(n - 1, -1, -1):
        _relax(tab[k + 1], ells[offsets[k]:offsets[k + 1]], bids[offsets[k]:offsets[k + 1]], tab[k])
    return tab


@numba.njit(cache=True)
def _prefix_tables(offsets, ells, bids, base):
    n = offsets.shape[0] - 1
    m = base.shape[0] - 1
    tab = np.empty((n + 1, m + 1))
    tab[0] = base
    for k in range(n):
        _relax(tab[k], ells[offsets[k]:offsets[k + 1]], bids[offsets[k]:offsets[k + 1]], tab[k + 1])
    return tab


def _flatten(b: BidMatrix, m_target: int):
    offsets = np.zeros(b.n + 1, dtype=np.int64)
    ells, bids = [], []
    for i, menu in enumerate(b.menus):
        cheapest_full = None  # among entries covering the whole target only the cheapest matters
        kept = []
        for e in menu:
            if e.ell <= 0:
                continue
            if e.ell >= m_target:
                if cheapest_full is None or e.bid < cheapest_full.bid:
                    cheapest_full = e
                continue
            kept.append(e)
        if cheapest_full is not None:
            kept.append(cheapest_full)
        ells.extend(min(e.ell, m_target) for e in kept)
        bids.extend(e.bid for e in kept)
        offsets[i + 1] = len(ells)
    return offsets, np.array(ells, dtype=np.int64), np.array(bids, dtype=np.float64)


def _reserve_base(b: BidMatrix, m_target: int) -> np.ndarray:
    return _base_from_menu(b.reserve, m_target)


def _base_from_menu(reserve: list[float] | None, m_target: int) -> np.ndarray:
    """Cheapest reserve purchase claiming at least ``need`` units, per need."""
    base = np.full(m_target + 1, np.inf)
    base[0] = 0.0
    if reserve:
        r = np.asarray(reserve[:m_target + 1], dtype=float)
        # a reserve menu is nondecreasing, so buying exactly `need` is cheapest
        base[:len(r)] = np.minimum.accumulate(r[::-1])[::-1]
        base[0] = 0.0
    return base


def reserve_margins(reserve: list[float] | None, m_target: int, ells) -> np.ndarray | None:
    """Most the reserve ever charges for ``ell`` extra units, per entry of ``ells``.

    None when there is no reserve or it cannot cover the target.
    """
    base = _base_from_menu(reserve, m_target)
    if not reserve or math.isinf(base[-1]):
        return None
    return _reserve_margins(base, np.minimum(np.asarray(ells, dtype=np.int64), m_target))


def _close(a: float, b: float) -> bool:
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= VALUE_TOL * max(1.0, abs(a), abs(b))


def _check_target(m_target: int) -> int:
    if m_target < 0 or int(m_target) != m_target:
        raise ValueError(f"target must be a nonnegative integer number of units, got {m_target}")
    return int(m_target)


def coverage_costs(b: BidMatrix, m_target: int) -> np.ndarray:
    """Optimal sum of bids (reserve included) for every need ``0..m_target``."""
    m_target = _check_target(m_target)
    offsets, ells, bids = _flatten(b, m_target)
    return _prefix_tables(offsets, ells, bids, _reserve_base(b, m_target))[-1]


def optimal_value(b: BidMatrix, m_target: int) -> float:
    val = float(coverage_costs(b, m_target)[m_target])
    if math.isinf(val):
        raise Infeasible(f"no valid contract set covers {m_target} units")
    return val


def solve(b: BidMatrix, m_target: int) -> tuple[Assignment, float]:
    """Minimum sum of bids over valid sets claiming at least ``m_target`` units.

    Among optimal sets the one with the fewest reserve units wins, then the
    lexicographically smallest agent-index set, then smaller commitments.
    """
    m_target = _check_target(m_target)
    offsets, ells, bids = _flatten(b, m_target)
    suffix = _suffix_tables(offsets, ells, bids, m_target)
    return _solve_from(b, m_target, suffix, _reserve_base(b, m_target))


def _solve_from(b: BidMatrix, m_target: int, suffix: np.ndarray,
                base: np.ndarray) -> tuple[Assignment, float]:
    totals = base + suffix[0][m_target - np.arange(m_target + 1)]
    best = float(totals.min())
    if math.isinf(best):
        raise Infeasible(f"no valid contract set covers {m_target} units")
    q = next(int(k) for k in range(m_target + 1) if _close(float(totals[k]), best))
    pairs = _reconstruct(b, suffix, m_target - q, m_target)
    return _assignment(b, pairs, q, m_target), best


def _reconstruct(b: BidMatrix, suffix: np.ndarray, need: int, m_target: int) -> list[tuple[int, int]]:
    """Lexicographically smallest optimal agent set for agents ``0..n-1`` covering ``need``.

    Shorter sets compare smaller on a shared prefix; remaining ties prefer the
    smaller commitment.
    """
    memo: dict[tuple[int, int], tuple] = {}

    def best(pos: int, need: int) -> tuple:
        # returns ((agent, ...), ((agent, contract), ...))
        if need <= 0:
            return (), ()
        key = (pos, need)
        if key in memo:
            return memo[key]
        target = float(suffix[pos, need])
        for e_idx in range(pos, b.n):
            rest = suffix[e_idx + 1]
            cands = []
            for e in b.menus[e_idx]:
                if e.ell <= 0:
                    continue
                left = max(0, need - e.ell)
                if _close(e.bid + float(rest[left]), target):
                    cands.append((best(e_idx + 1, left), e.ell, e.contract))
            if cands:
                (agents, pairs), _, contract = min(cands, key=lambda c: (c[0][0], c[1], c[2]))
                memo[key] = ((e_idx,) + agents, ((e_idx, contract),) + pairs)
                return memo[key]
        raise RuntimeError("DP reconstruction failed")  # pragma: no cover

    return list(best(0, need)[1])


def _assignment(b: BidMatrix, pairs, q: int, m_target: int) -> Assignment:
    rcost = float(b.reserve[q]) if q else 0.0
    total_units = q + sum(b.entry(i, j).ell for i, j in pairs)
    sb = rcost + sum(b.entry(i, j).bid for i, j in pairs)
    return Assignment(list(pairs), q, total_units, sb, rcost)


def brute_force_solve(b: BidMatrix, m_target: int, limit: int = 2_000_000) -> tuple[Assignment, float]:
    """Exhaustive search over every per-agent choice and every reserve quantity."""
    m_target = _check_target(m_target)
    sizes = [len(menu) + 1 for menu in b.menus]
    if math.prod(sizes) > limit:
        raise SizeLimit(f"{math.prod(sizes)} combinations exceed the limit {limit}")
    cov = np.zeros(1, dtype=np.int64)
    cost = np.zeros(1)
    for menu in b.menus:
        opt_cov = np.array([0] + [e.ell for e in menu], dtype=np.int64)
        opt_cost = np.array([0.0] + [e.bid for e in menu])
        cov = (cov[:, None] + opt_cov[None, :]).ravel()
        cost = (cost[:, None] + opt_cost[None, :]).ravel()
    reserve = list(b.reserve or [0.0])[:max(1, m_target + 1)]
    best, best_combo, best_q = math.inf, -1, 0
    for q, rq in enumerate(reserve):
        total = np.where(cov + q >= m_target, cost + rq, np.inf)
        k = int(np.argmin(total))
        if total[k] < best - VALUE_TOL * max(1.0, abs(best) if math.isfinite(best) else 1.0):
            best, best_combo, best_q = float(total[k]), k, q
    if math.isinf(best):
        raise Infeasible(f"no valid contract set covers {m_target} units")
    pairs = []
    for i in range(b.n - 1, -1, -1):
        best_combo, choice = divmod(best_combo, sizes[i])
        if choice:
            pairs.append((i, b.menus[i][choice - 1].contract))
    return _assignment(b, sorted(pairs), best_q, m_target), best


def drop_reserve_dominated(b: BidMatrix, m_target: int) -> BidMatrix:
    """Remove bids that never beat topping up the reserve by the same quantity.

    Every optimal value, including all leave-one-out values, is unchanged; the
    only effect is that exact agent-versus-reserve ties go to the reserve.
    """
    ells = sorted({e.ell for m in b.menus for e in m if e.ell > 0})
    margins = reserve_margins(b.reserve, m_target, ells)
    if margins is None:
        return b
    margin = dict(zip(ells, margins.tolist()))
    menus = [[e for e in menu if e.ell > 0 and e.bid < margin[e.ell] - VALUE_TOL]
             for menu in b.menus]
    return BidMatrix(list(b.agents), menus, b.reserve, b.unit)


def clarke_rewards(b: BidMatrix, m_target: int) -> RewardVector:
    """VCG rewards with the Clarke pivot, one leave-one-out re-solve per winner."""
    assignment, best = solve(b, m_target)
    rewards = [0.0] * b.n
    loo = {}
    for i, j in assignment.pairs:
        without = optimal_value(b.without(i), m_target)
        loo[i] = without
        rewards[i] = without - (best - b.entry(i, j).bid)
    return RewardVector(rewards, loo)


def clarke_rewards_fast(b: BidMatrix, m_target: int,
                        solution: tuple[Assignment, float] | None = None) -> RewardVector:
    """Same rewards as :func:`clarke_rewards` from one prefix and one suffix table."""
    return solve_with_rewards(b, m_target, solution)[2]


def solve_with_rewards(b: BidMatrix, m_target: int,
                       solution: tuple[Assignment, float] | None = None
                       ) -> tuple[Assignment, float, RewardVector]:
    """:func:`solve` and :func:`clarke_rewards_fast` sharing their DP tables.

    The value without agent i combines the prefix table over agents before i
    (reserve included) with the suffix table over agents after i, over every
    split of the target.
    """
    m_target = _check_target(m_target)
    offsets, ells, bids = _flatten(b, m_target)
    base = _reserve_base(b, m_target)
    suffix = _suffix_tables(offsets, ells, bids, m_target)
    assignment, best = solution if solution is not None else _solve_from(b, m_target, suffix, base)
    prefix = _prefix_tables(offsets, ells, bids, base)
    split = np.arange(m_target + 1)
    rewards = [0.0] * b.n
    loo = {}
    for i, j in assignment.pairs:
        without = float(np.min(prefix[i] + suffix[i + 1][m_target - split]))
        if math.isinf(without):
            raise Infeasible(f"target not coverable without agent {b.agents[i]}")
        loo[i] = without
        rewards[i] = without - (best - b.entry(i, j).bid)
    return assignment, best, RewardVector(rewards, loo)


def _prices_for_agent(b: BidMatrix, m_target: int, i: int) -> dict[int, float]:
    others = coverage_costs(b.without(i), m_target)
    if math.isinf(others[m_target]):
        raise Infeasible(f"target not coverable without agent {b.agents[i]}")
    return {e.contract: float(others[m_target] - others[max(0, m_target - e.ell)])
            for e in b.menus[i]}


def cost_independent_price(b: BidMatrix, m_target: int, i: int, j: int) -> float:
    """Payment offered to agent ``i`` for contract ``j``, computed without her bids."""
    m_target = _check_target(m_target)
    ell = b.entry(i, j).ell
    others = coverage_costs(b.without(i), m_target)
    if math.isinf(others[m_target]):
        raise Infeasible(f"target not coverable without agent {b.agents[i]}")
    return float(others[m_target] - others[max(0, m_target - ell)])


@dataclass
class ClearingReport:
    violations: list[str]
    utilities: dict[int, dict[int, float]]

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_market_clearing(b: BidMatrix, m_target: int, assignment: Assignment | None = None,
                           tol: float = 1e-9) -> ClearingReport:
    """Check every agent holds a utility-maximizing contract at the offered prices."""
    if assignment is None:
        assignment, _ = solve(b, m_target)
    violations = []
    utilities = {}
    for i in range(b.n):
        if not b.menus[i]:
            continue
        prices = _prices_for_agent(b, m_target, i)
        util = {e.contract: prices[e.contract] - e.bid for e in b.menus[i]}
        utilities[i] = util
        best = max(util.values())
        j = assignment.contract_of(i)
        if j is None:
            if best > tol:
                violations.append(f"agent {b.agents[i]} unselected but contract "
                                  f"{max(util, key=util.get)} offers utility {best:.6g}")
        else:
            if util[j] < best - tol:
                violations.append(f"agent {b.agents[i]} holds contract {j} with utility "
                                  f"{util[j]:.6g} < best {best:.6g}")
            if util[j] < -tol:
                violations.append(f"agent {b.agents[i]} has negative utility {util[j]:.6g}")
    return ClearingReport(violations, utilities)


def assignment_rows(b: BidMatrix, assignment: Assignment, rewards: RewardVector | None = None):
    """CSV-ready rows ``(agent_id, contract_ell, bid, reward)`` including the reserve."""
    rows = []
    for i, j in assignment.pairs:
        e = b.entry(i, j)
        r = rewards[i] if rewards is not None else ""
        rows.append((b.agents[i], e.ell * b.unit, e.bid, r))
    if assignment.reserve_units:
        rows.append(("reserve", assignment.reserve_units * b.unit, assignment.reserve_cost, ""))
    return rows


def assignment_to_dict(b: BidMatrix, assignment: Assignment, value: float,
                       rewards: RewardVector | None = None) -> dict:
    return {
        "sum_of_bids": value,
        "reserve_units": assignment.reserve_units,
        "reserve_cost": assignment.reserve_cost,
        "total_commitment": assignment.total_commitment * b.unit,
        "selected": [
            {"agent": b.agents[i], "contract": j, "ell": b.entry(i, j).ell * b.unit,
             "bid": b.entry(i, j).bid,
             **({"reward": rewards[i]} if rewards is not None else {})}
            for i, j in assignment.pairs
        ],
    }
