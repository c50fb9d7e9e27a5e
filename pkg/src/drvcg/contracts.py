"""Penalty contracts, contract grids and reserve (fallback) cost schedules.

Energies are in kWh and money in dollars throughout the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

MONEY_TOL = 1e-9


class ContractError(ValueError):
    """Raised for contract or schedule parameters that violate a constraint."""


@dataclass(frozen=True)
class Fixed:
    f: float

    kind = "fixed"


@dataclass(frozen=True)
class Cliff:
    f: float
    alpha: float
    beta: float

    kind = "cliff"


PenaltyScheme = Union[Fixed, Cliff]


@dataclass(frozen=True)
class Contract:
    """A commitment to reduce ``ell`` kWh, enforced by a penalty scheme."""

    ell: float
    scheme: PenaltyScheme
    id: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.ell >= 0:
            raise ContractError(f"commitment must be nonnegative, got {self.ell}")

    @property
    def f(self) -> float:
        return self.scheme.f

    @property
    def is_null(self) -> bool:
        return self.ell == 0

    def pieces(self) -> list[tuple[float, float, float, float]]:
        """Linear pieces ``(x0, x1, a, b)`` with penalty ``a + b*x`` on ``[x0, x1)``.

        The penalty is zero outside the union of the pieces.
        """
        ell = self.ell
        s = self.scheme
        if ell == 0:
            return []
        if isinstance(s, Fixed):
            return [(0.0, ell, s.f, 0.0)]
        edge = s.alpha * ell
        out = []
        if edge > 0:
            out.append((0.0, edge, s.f, 0.0))
        if edge < ell and s.beta != 0:
            out.append((edge, ell, s.beta * ell, -s.beta))
        return out

    def to_dict(self) -> dict:
        s = self.scheme
        scheme = {"kind": s.kind, "f": s.f}
        if isinstance(s, Cliff):
            scheme.update(alpha=s.alpha, beta=s.beta)
        return {"id": self.id, "ell": self.ell, "scheme": scheme}

    @classmethod
    def from_dict(cls, d: dict) -> "Contract":
        s = d["scheme"]
        kind = s["kind"]
        if kind == "fixed":
            return make_fixed(d["ell"], s.get("f", 0.0), id=d.get("id", ""))
        if kind == "cliff":
            return make_cliff(d["ell"], s.get("f", 0.0), s.get("alpha", 0.0),
                              s.get("beta", 0.0), id=d.get("id", ""))
        raise ContractError(f"unknown penalty scheme kind {kind!r}")


def penalty(c: Contract, x: float) -> float:
    """Penalty owed under contract ``c`` after reducing ``x`` kWh."""
    if x >= c.ell:
        return 0.0
    s = c.scheme
    if isinstance(s, Fixed):
        return s.f
    if x < s.alpha * c.ell:
        return s.f
    return (c.ell - x) * s.beta


def make_fixed(ell: float, f: float, id: str = "") -> Contract:
    if f < 0:
        raise ContractError(f"penalty must be nonnegative, got {f}")
    return Contract(float(ell), Fixed(float(f)), id=id or f"fixed-{ell:g}")


def make_cliff(ell: float, f: float, alpha: float, beta: float, id: str = "") -> Contract:
    if ell < 0:
        raise ContractError(f"commitment must be nonnegative, got {ell}")
    if not 0 <= alpha < 1:
        raise ContractError(f"alpha must lie in [0, 1), got {alpha}")
    if beta < 0 or f < 0:
        raise ContractError("f and beta must be nonnegative")
    # alpha == 0 allows pure linear penalties with f unused
    if alpha > 0 and f < ell * (1 - alpha) * beta - MONEY_TOL:
        raise ContractError(
            f"cliff plateau f={f} below the slope segment ell*(1-alpha)*beta="
            f"{ell * (1 - alpha) * beta}")
    return Contract(float(ell), Cliff(float(f), float(alpha), float(beta)),
                    id=id or f"cliff-{ell:g}")


NULL_CONTRACT = Contract(0.0, Fixed(0.0), id="null")


def sce_contract_for_quantity(ell: float) -> Contract:
    """The cliff contract that reproduces the SCE payment rule at size ``ell``."""
    if ell == 0:
        return NULL_CONTRACT
    return make_cliff(ell, ell / 2, 1 / 3, 1 / 2, id=f"sce-{ell:g}")


def sce_equivalent_of_bid(b: float) -> Contract:
    """Contract ex-post equivalent to an SCE quantity bid of ``b`` kWh."""
    return sce_contract_for_quantity(3 * b / 2)


def double_contract_for_quantity(ell: float) -> Contract:
    # both plateau and slope of the SCE cliff doubled
    if ell == 0:
        return NULL_CONTRACT
    return make_cliff(ell, ell, 1 / 3, 1.0, id=f"double-{ell:g}")


def linear_contract_for_quantity(ell: float) -> Contract:
    if ell == 0:
        return NULL_CONTRACT
    return make_cliff(ell, 0.0, 0.0, 1.0, id=f"linear-{ell:g}")


FAMILIES: dict[str, Callable[[float], Contract]] = {
    "sce": sce_contract_for_quantity,
    "double": double_contract_for_quantity,
    "linear": linear_contract_for_quantity,
}


def contract_grid(step: float, max: float,
                  family: str | Callable[[float], Contract] = "sce") -> list[Contract]:
    """Contracts of sizes ``step, 2*step, ..., max`` built from a family template."""
    if step <= 0 or max < step:
        raise ContractError("need step > 0 and max >= step")
    make = FAMILIES[family] if isinstance(family, str) else family
    count = int(math.floor(max / step + 1e-9))
    return [make(step * k) for k in range(1, count + 1)]


# ---------------------------------------------------------------------------
# Reserve schedules


@dataclass(frozen=True)
class Linear:
    slope: float

    kind = "linear"

    def cost(self, m: float) -> float:
        return self.slope * m


@dataclass(frozen=True)
class Affine:
    """Fixed start-up cost plus a per-kWh rate; free when unused."""

    fixed: float
    slope: float

    kind = "affine"

    def cost(self, m: float) -> float:
        if m <= 0:
            return 0.0
        return self.fixed + self.slope * m


@dataclass(frozen=True)
class Table:
    quantities: tuple[float, ...]
    costs: tuple[float, ...]

    kind = "table"

    def __post_init__(self):
        if len(self.quantities) != len(self.costs):
            raise ContractError("table quantities and costs differ in length")
        if any(b < a for a, b in zip(self.costs, self.costs[1:])):
            raise ContractError("reserve table costs must be nondecreasing")
        if any(b <= a for a, b in zip(self.quantities, self.quantities[1:])):
            raise ContractError("reserve table quantities must increase")

    def cost(self, m: float) -> float:
        if m <= 0:
            return 0.0
        for q, c in zip(self.quantities, self.costs):
            if q >= m - 1e-9:
                return c
        raise ContractError(f"reserve table does not cover {m} kWh")

    def capacity(self) -> float:
        return self.quantities[-1] if self.quantities else 0.0


ReserveSchedule = Union[Linear, Affine, Table]


def reserve_cost(r: ReserveSchedule, m: float) -> float:
    if m < 0:
        raise ContractError("reserve quantity must be nonnegative")
    return float(r.cost(m))


def reserve_to_dict(r: ReserveSchedule) -> dict:
    if isinstance(r, Table):
        return {"kind": "table", "quantities": list(r.quantities), "costs": list(r.costs)}
    d = {"kind": r.kind, "slope": r.slope}
    if isinstance(r, Affine):
        d["fixed"] = r.fixed
    return d


def reserve_from_dict(d: dict | None) -> ReserveSchedule | None:
    if d is None:
        return None
    kind = d["kind"]
    if kind == "linear":
        return Linear(float(d["slope"]))
    if kind == "affine":
        return Affine(float(d["fixed"]), float(d["slope"]))
    if kind == "table":
        return Table(tuple(map(float, d["quantities"])), tuple(map(float, d["costs"])))
    raise ContractError(f"unknown reserve kind {kind!r}")
