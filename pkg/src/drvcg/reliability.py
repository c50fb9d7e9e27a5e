"""Probability that selected agents (plus reserve) reach a reduction target, and
the analytic failure bounds for fixed and cliff contract sets."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .agents import EffortLevel, Point, ReductionDistribution, Uniform, sample_outcome
from .contracts import Cliff, Contract, Fixed

Selected = Sequence[Union[ReductionDistribution, EffortLevel, tuple]]


class ResolutionError(ValueError):
    """A distribution atom does not sit on the requested grid."""


@dataclass(frozen=True)
class ReliabilityResult:
    probability: float
    method: str  # "exact" or "mc"
    samples: int | None = None
    half_width_95: float | None = None


def _outcome(item) -> ReductionDistribution:
    if isinstance(item, tuple):
        item = item[-1]
    if isinstance(item, EffortLevel):
        return item.outcome
    return item


def _grid_index(x: float, step: float) -> int:
    k = round(x / step)
    if abs(k * step - x) > 1e-9 * max(1.0, abs(x)):
        raise ResolutionError(f"{x} is not a multiple of the grid step {step}")
    return int(k)


def _pmf(o: ReductionDistribution, grid: float) -> tuple[np.ndarray, bool]:
    """Mass on a half-step lattice (index k <-> k*grid/2); flag marks continuous parts."""
    if isinstance(o, Uniform) and o.hi > o.lo:
        lo, hi = _grid_index(o.lo, grid), _grid_index(o.hi, grid)
        pmf = np.zeros(2 * hi)
        # each grid cell's mass sits at the cell midpoint
        pmf[2 * lo + 1:2 * hi:2] = 1.0 / (hi - lo)
        return pmf, True
    if isinstance(o, Uniform):
        q, p = o.lo, 1.0
    elif isinstance(o, Point):
        q, p = o.q, 1.0
    else:
        q, p = o.q, o.p
    k = _grid_index(q, grid)
    pmf = np.zeros(2 * k + 1)
    pmf[0] += 1 - p
    pmf[2 * k] += p
    return pmf, False


def reduction_pmf(selected: Selected, grid: float = 1.0) -> tuple[np.ndarray, bool]:
    total = np.ones(1)
    continuous = False
    for item in selected:
        pmf, cont = _pmf(_outcome(item), grid)
        continuous |= cont
        total = np.convolve(total, pmf)
    return total, continuous


def success_prob_exact(selected: Selected, reserve_quantity: float, m: float,
                       grid: float = 1.0) -> ReliabilityResult:
    """Pr(sum of reductions + reserve >= m) by convolving gridded distributions.

    Bernoulli and point outcomes are exact when their atoms sit on the grid;
    uniform outcomes are resolved to one mass per grid cell.
    """
    pmf, continuous = reduction_pmf(selected, grid)
    x = np.arange(pmf.size) * (grid / 2) + reserve_quantity
    if continuous:
        # every lattice atom stands for mass spread evenly over one grid cell
        frac = np.clip((x + grid / 2 - m) / grid, 0.0, 1.0)
    else:
        frac = (x >= m - 1e-9).astype(float)
    prob = float(np.clip(np.dot(pmf, frac), 0.0, 1.0))
    return ReliabilityResult(prob, "exact")


def mean_reduction(selected: Selected) -> float:
    return float(sum(_outcome(item).mean for item in selected))


def sample_totals(selected: Selected, reserve_quantity: float, samples: int,
                  rng: np.random.Generator) -> np.ndarray:
    total = np.full(samples, float(reserve_quantity))
    for item in selected:
        total += sample_outcome(_outcome(item), rng, samples)
    return total


def success_prob_mc(selected: Selected, reserve_quantity: float, m: float, samples: int,
                    seed: int | np.random.Generator = 0) -> ReliabilityResult:
    if samples < 1:
        raise ValueError("need at least one sample")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    totals = sample_totals(selected, reserve_quantity, samples, rng)
    p = float(np.mean(totals >= m - 1e-9))
    return ReliabilityResult(p, "mc", samples, 1.96 * math.sqrt(p * (1 - p) / samples))


# ---------------------------------------------------------------------------
# analytic bounds


def failure_bound_fixed(sb_star: float, f: float) -> float:
    """Upper bound on the miss probability when every contract carries penalty ``f``."""
    if f <= 0:
        raise ValueError("penalty f must be positive")
    return min(1.0, sb_star / f)


def shared_cliff_parameters(contracts: Iterable[Contract]) -> tuple[float, float]:
    """The common ``(f, alpha)`` of a cliff contract set; raises if they differ."""
    params = set()
    for c in contracts:
        s = c.scheme
        if isinstance(s, Fixed):
            params.add((s.f, 1.0))
        elif isinstance(s, Cliff):
            params.add((s.f, s.alpha))
    if len(params) != 1:
        raise ValueError(f"contracts do not share a single (f, alpha): {sorted(params)}")
    return params.pop()


def failure_bound_cliff(sb: float, f: float, alpha: float, m: float) -> tuple[float, float]:
    """``(alpha*m, bound)``: Pr(reduction < alpha*m) is at most ``sb/f``."""
    if f <= 0:
        raise ValueError("penalty f must be positive")
    return alpha * m, min(1.0, sb / f)


def expected_shortfall_bound(sb_star: float, f: float, m_prime: float) -> float:
    """Bound on ``m_prime - E[sum X]`` for unit Fixed contracts with penalty ``f``."""
    if f <= 0:
        raise ValueError("penalty f must be positive")
    if m_prime < 0:
        raise ValueError("target must be nonnegative")
    return sb_star / f
