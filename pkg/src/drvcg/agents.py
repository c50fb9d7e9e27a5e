"""Agent types: effort levels with stochastic reductions, and the cost types they induce."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .contracts import Contract, Fixed, penalty

TIE_TOL = 1e-12


@dataclass(frozen=True)
class Bernoulli:
    """Reduce ``q`` with probability ``p``, otherwise reduce nothing."""

    q: float
    p: float

    kind = "bernoulli"

    def __post_init__(self):
        if not 0 <= self.p <= 1 or self.q < 0:
            raise ValueError(f"invalid Bernoulli outcome q={self.q} p={self.p}")

    @property
    def mean(self) -> float:
        return self.p * self.q


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    kind = "uniform"

    def __post_init__(self):
        if not 0 <= self.lo <= self.hi:
            raise ValueError(f"invalid Uniform outcome [{self.lo}, {self.hi}]")

    @property
    def mean(self) -> float:
        return (self.lo + self.hi) / 2


@dataclass(frozen=True)
class Point:
    q: float

    kind = "point"

    def __post_init__(self):
        if self.q < 0:
            raise ValueError(f"invalid Point outcome q={self.q}")

    @property
    def mean(self) -> float:
        return self.q


ReductionDistribution = Union[Bernoulli, Uniform, Point]


def outcome_to_dict(o: ReductionDistribution) -> dict:
    if isinstance(o, Bernoulli):
        return {"kind": "bernoulli", "q": o.q, "p": o.p}
    if isinstance(o, Uniform):
        return {"kind": "uniform", "lo": o.lo, "hi": o.hi}
    return {"kind": "point", "q": o.q}


def outcome_from_dict(d: dict) -> ReductionDistribution:
    kind = d["kind"]
    if kind == "bernoulli":
        return Bernoulli(float(d["q"]), float(d["p"]))
    if kind == "uniform":
        return Uniform(float(d["lo"]), float(d["hi"]))
    if kind == "point":
        return Point(float(d["q"]))
    raise ValueError(f"unknown outcome kind {kind!r}")


@dataclass(frozen=True)
class EffortLevel:
    cost: float
    outcome: ReductionDistribution

    def __post_init__(self):
        if not (np.isfinite(self.cost) and self.cost >= 0):
            raise ValueError(f"effort cost must be finite and nonnegative, got {self.cost}")


NULL_LEVEL = EffortLevel(0.0, Point(0.0))


@dataclass(frozen=True)
class AgentModel:
    """An agent's private type.

    ``levels`` holds the agent's own effort levels; the free do-nothing level is
    always available on top of them and sits at index 0 of :attr:`all_levels`.
    """

    id: str
    levels: tuple[EffortLevel, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))

    @property
    def all_levels(self) -> tuple[EffortLevel, ...]:
        return (NULL_LEVEL,) + self.levels

    def to_dict(self) -> dict:
        return {"id": self.id,
                "levels": [{"cost": lv.cost, "outcome": outcome_to_dict(lv.outcome)}
                           for lv in self.levels]}

    @classmethod
    def from_dict(cls, d: dict) -> "AgentModel":
        levels = [EffortLevel(float(lv["cost"]), outcome_from_dict(lv["outcome"]))
                  for lv in d.get("levels", [])]
        return cls(str(d["id"]), tuple(levels))


@dataclass(frozen=True)
class CostPlan:
    level_index: int  # index into AgentModel.all_levels
    level: EffortLevel
    total_cost: float
    expected_penalty: float


def _uniform_piece_integral(lo, hi, x0, x1, a, b):
    # integral of (a + b x) over [x0, x1] ∩ [lo, hi], divided by the width hi - lo
    u = np.maximum(x0, lo)
    v = np.minimum(x1, hi)
    v = np.maximum(u, v)
    return (a * (v - u) + b * (v * v - u * u) / 2) / (hi - lo)


def expected_penalty(a: AgentModel | None, level: EffortLevel, c: Contract) -> float:
    """Exact expectation of the penalty of ``c`` when the agent works at ``level``.

    ``a`` is accepted for symmetry with the other agent operations; only the
    level's outcome distribution matters.
    """
    o = level.outcome
    if isinstance(o, Point):
        return penalty(c, o.q)
    if isinstance(o, Bernoulli):
        return o.p * penalty(c, o.q) + (1 - o.p) * penalty(c, 0.0)
    if o.hi == o.lo:
        return penalty(c, o.lo)
    total = 0.0
    for x0, x1, a0, b in c.pieces():
        total += float(_uniform_piece_integral(o.lo, o.hi, x0, x1, a0, b))
    return total


def optimal_plan(a: AgentModel, c: Contract) -> CostPlan:
    """Effort level minimizing investment plus expected penalty under ``c``.

    Ties go to the cheaper level, then to the lower index.
    """
    best = None
    for idx, lv in enumerate(a.all_levels):
        ef = expected_penalty(a, lv, c)
        total = lv.cost + ef
        if (best is None or total < best.total_cost - TIE_TOL
                or (abs(total - best.total_cost) <= TIE_TOL and lv.cost < best.level.cost)):
            best = CostPlan(idx, lv, total, ef)
    return best


def true_bids(a: AgentModel, J: Sequence[Contract]) -> list[float]:
    """The agent's cost type over ``J``, i.e. her truthful bid row."""
    return [optimal_plan(a, c).total_cost for c in J]


def sample_reduction(a: AgentModel | None, level: EffortLevel, rng: np.random.Generator) -> float:
    return float(sample_outcome(level.outcome, rng, 1)[0])


def sample_outcome(o: ReductionDistribution, rng: np.random.Generator, size: int) -> np.ndarray:
    if isinstance(o, Point):
        return np.full(size, float(o.q))
    if isinstance(o, Bernoulli):
        return np.where(rng.random(size) < o.p, float(o.q), 0.0)
    return rng.uniform(o.lo, o.hi, size)


# ---------------------------------------------------------------------------
# vectorized cost types, used on large contract grids


def _contract_arrays(J: Sequence[Contract]):
    ell = np.array([c.ell for c in J], dtype=float)
    f = np.array([c.scheme.f for c in J], dtype=float)
    # a Fixed contract is a cliff whose plateau spans the whole commitment
    alpha = np.array([1.0 if isinstance(c.scheme, Fixed) else c.scheme.alpha for c in J])
    beta = np.array([0.0 if isinstance(c.scheme, Fixed) else c.scheme.beta for c in J])
    return ell, f, alpha, beta


def _penalty_vec(ell, f, alpha, beta, x):
    return np.where(x >= ell, 0.0, np.where(x < alpha * ell, f, (ell - x) * beta))


def _expected_penalty_vec(arrays, o: ReductionDistribution) -> np.ndarray:
    ell, f, alpha, beta = arrays
    if isinstance(o, Point):
        return _penalty_vec(ell, f, alpha, beta, o.q)
    if isinstance(o, Bernoulli):
        return (o.p * _penalty_vec(ell, f, alpha, beta, o.q)
                + (1 - o.p) * _penalty_vec(ell, f, alpha, beta, 0.0))
    if o.hi == o.lo:
        return _penalty_vec(ell, f, alpha, beta, o.lo)
    edge = alpha * ell
    plateau = _uniform_piece_integral(o.lo, o.hi, 0.0, edge, f, 0.0)
    slope = _uniform_piece_integral(o.lo, o.hi, edge, ell, beta * ell, -beta)
    return plateau + slope


def cost_plans_vec(a: AgentModel, J: Sequence[Contract]):
    """Cost type and chosen level index over ``J`` as arrays.

    Same tie-breaking as :func:`optimal_plan`. Returns ``(total_cost,
    expected_penalty, level_index)``.
    """
    arrays = _contract_arrays(J)
    n = len(J)
    best_total = np.full(n, np.inf)
    best_ef = np.zeros(n)
    best_cost = np.full(n, np.inf)
    best_idx = np.zeros(n, dtype=int)
    for idx, lv in enumerate(a.all_levels):
        ef = _expected_penalty_vec(arrays, lv.outcome)
        total = lv.cost + ef
        better = (total < best_total - TIE_TOL) | (
            (np.abs(total - best_total) <= TIE_TOL) & (lv.cost < best_cost))
        best_total = np.where(better, total, best_total)
        best_ef = np.where(better, ef, best_ef)
        best_cost = np.where(better, lv.cost, best_cost)
        best_idx = np.where(better, idx, best_idx)
    return best_total, best_ef, best_idx
