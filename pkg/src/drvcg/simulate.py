"""Synthetic populations, scenario sweeps over the safety margin, and the
appendix golden tables."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .agents import AgentModel, Bernoulli, EffortLevel, Uniform
from .contracts import Linear, ReserveSchedule, contract_grid, reserve_from_dict, reserve_to_dict
from .mechanisms import expected_dr_sce, run_dr_vcg, sce_participants, truthful_bids
from .reliability import success_prob_exact, success_prob_mc

log = logging.getLogger(__name__)

CSV_HEADER = ["gamma", "mechanism", "mean_expense", "mean_reliability", "failure_fraction",
              "mean_selected", "instances", "seed"]
DEFAULT_GAMMAS = tuple(round(1 + 0.1 * k, 1) for k in range(11))


@dataclass
class PopulationSpec:
    n: int = 100
    t_levels: int = 1
    zipf_exponent: float = 1.0
    zipf_support: int = 500
    capacity_scale: float = 10.0
    p_lo: float = 0.7
    p_hi: float = 1.0
    unit_cost_lo: float = 0.2
    unit_cost_hi: float = 1.0


def zipf_pmf(support: int, exponent: float) -> np.ndarray:
    """Finite zeta distribution on ``1..support``."""
    w = np.arange(1, support + 1, dtype=float) ** -exponent
    return w / w.sum()


def sample_population(spec: PopulationSpec, seed: int | np.random.Generator) -> list[AgentModel]:
    """Agents with ``t_levels`` Bernoulli effort levels sharing one reliability each."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n, t = spec.n, spec.t_levels
    pmf = zipf_pmf(spec.zipf_support, spec.zipf_exponent)
    caps = (rng.choice(spec.zipf_support, size=(n, t), p=pmf) + 1) * spec.capacity_scale
    rel = rng.uniform(spec.p_lo, spec.p_hi, size=n)
    unit_costs = rng.uniform(spec.unit_cost_lo, spec.unit_cost_hi, size=(n, t))
    agents = []
    for i in range(n):
        order = np.argsort(caps[i], kind="stable")
        levels = tuple(EffortLevel(float(unit_costs[i, k] * caps[i, k]),
                                   Bernoulli(float(caps[i, k]), float(rel[i])))
                       for k in order)
        agents.append(AgentModel(f"a{i}", levels))
    return agents


@dataclass
class ContractSpec:
    step: float = 10.0
    max: float = 5000.0
    family: str = "sce"


@dataclass
class Scenario:
    population: PopulationSpec = field(default_factory=PopulationSpec)
    M: float = 10000.0
    gamma_grid: tuple[float, ...] = DEFAULT_GAMMAS
    contracts: ContractSpec = field(default_factory=ContractSpec)
    reserve: ReserveSchedule = field(default_factory=lambda: Linear(0.5))
    instances: int = 100
    mc_samples: int = 2000
    sce_orders: int = 20
    master_seed: int = 0
    mechanisms: tuple[str, ...] = ("vcg", "sce")

    def __post_init__(self):
        self.gamma_grid = tuple(float(g) for g in self.gamma_grid)
        self.mechanisms = tuple(self.mechanisms)
        if not self.mechanisms or set(self.mechanisms) - {"vcg", "sce"}:
            raise ValueError("mechanisms must be a non-empty subset of ('vcg', 'sce')")
        if any(not 1 <= g <= 2 for g in self.gamma_grid):
            raise ValueError("safety margins must lie in [1, 2]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["reserve"] = reserve_to_dict(self.reserve)
        d["gamma_grid"] = list(self.gamma_grid)
        d["mechanisms"] = list(self.mechanisms)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        if "population" in d:
            d["population"] = PopulationSpec(**d["population"])
        if "contracts" in d:
            d["contracts"] = ContractSpec(**d["contracts"])
        if "reserve" in d:
            d["reserve"] = reserve_from_dict(d["reserve"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**d)


def instance_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(index)])


@dataclass
class InstanceRecord:
    gamma: float
    mechanism: str
    expense: float
    reliability: float
    failure: float
    selected: float
    rewards: float = 0.0
    external: float = 0.0
    penalties: float = 0.0


def run_instance(s: Scenario, index: int) -> list[InstanceRecord]:
    pop_ss, vcg_ss, sce_ss = instance_seed(s.master_seed, index).spawn(3)
    agents = sample_population(s.population, np.random.default_rng(pop_ss))
    J = contract_grid(s.contracts.step, s.contracts.max, s.contracts.family)
    bids = truthful_bids(agents, J, s.contracts.step) if "vcg" in s.mechanisms else None
    participants = sce_participants(agents) if "sce" in s.mechanisms else None
    vcg_rng = np.random.default_rng(vcg_ss)
    sce_rng = np.random.default_rng(sce_ss)
    per_order = max(1, -(-s.mc_samples // s.sce_orders))
    out = []
    for gamma in s.gamma_grid:
        if "vcg" in s.mechanisms:
            out.append(_vcg_record(s, agents, J, bids, gamma, vcg_rng))
        if "sce" in s.mechanisms:
            out.append(_sce_record(s, agents, participants, gamma, sce_rng, per_order))
    return out


def _vcg_record(s, agents, J, bids, gamma, rng) -> InstanceRecord:
    v = run_dr_vcg(agents, J, s.reserve, s.M, gamma, bids=bids)
    rel = success_prob_mc([x.level for x in v.selections], v.reserve_quantity, s.M,
                          s.mc_samples, rng).probability
    return InstanceRecord(gamma, "vcg", v.expected_total_expense, rel,
                          float(v.reserve_quantity > 0), v.n_selected, v.total_rewards,
                          v.external_cost, v.expected_penalties)


def _sce_record(s, agents, participants, gamma, sce_rng, per_order) -> InstanceRecord:
    e = expected_dr_sce(agents, s.reserve, s.M, gamma, sce_rng, orders=s.sce_orders,
                        max_exact=0, participants=participants)
    rel = sum(w * success_prob_mc([x.level for x in o.selections], o.reserve_quantity, s.M,
                                  per_order, sce_rng).probability
              for o, w in zip(e.outcomes, e.weights))
    return InstanceRecord(gamma, "sce", e.expected_total_expense, rel,
                          e.reserve_use_probability, e.mean_selected,
                          e.expected_total_expense - e.external_cost, e.external_cost, 0.0)


def _run_instance_star(args):
    return run_instance(*args)


@dataclass
class ResultTable:
    rows: list[dict]
    seed: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([fmt(r["gamma"]), r["mechanism"], fmt(r["mean_expense"]),
                        fmt(r["mean_reliability"]), fmt(r["failure_fraction"]),
                        fmt(r["mean_selected"]), r["instances"], r["seed"]])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "rows": self.rows}, indent=2, sort_keys=True)

    def get(self, gamma: float, mechanism: str) -> dict:
        for r in self.rows:
            if abs(r["gamma"] - gamma) < 1e-9 and r["mechanism"] == mechanism:
                return r
        raise KeyError((gamma, mechanism))


def expense_at_reliability(table: ResultTable, mechanism: str, target: float) -> float:
    """Expense where the reliability frontier first reaches ``target``.

    The frontier is made monotone by a running maximum over increasing margins and
    interpolated linearly between grid points; ``inf`` if it never gets there.
    """
    rows = sorted((r for r in table.rows if r["mechanism"] == mechanism), key=lambda r: r["gamma"])
    best, prev = -1.0, None
    for r in rows:
        rel, cost = r["mean_reliability"], r["mean_expense"]
        if rel > best and rel >= target:
            if prev is None or prev[0] >= target:
                return cost
            w = (target - prev[0]) / (rel - prev[0])
            return prev[1] + w * (cost - prev[1])
        if rel > best:
            best, prev = rel, (rel, cost)
    return float("inf")


def fmt(x) -> str:
    """Six significant digits, no exponent for ordinary magnitudes."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    s = f"{float(x):.6g}"
    return "0" if s == "-0" else s


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("DRVCG_THREADS", "1")))
    except ValueError:
        return 1


def run_scenario(s: Scenario, threads: int | None = None) -> ResultTable:
    """Average both mechanisms over ``s.instances`` seeded populations per margin."""
    threads = thread_count() if threads is None else threads
    log.info("scenario seed=%d instances=%d threads=%d", s.master_seed, s.instances, threads)
    jobs = [(s, k) for k in range(s.instances)]
    if threads > 1 and s.instances > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            per_instance = list(pool.map(_run_instance_star, jobs))
    else:
        per_instance = [run_instance(*j) for j in jobs]
    rows = []
    for gamma in s.gamma_grid:
        for mech in s.mechanisms:
            recs = [r for inst in per_instance for r in inst
                    if r.gamma == gamma and r.mechanism == mech]
            k = len(recs)
            rows.append({
                "gamma": gamma, "mechanism": mech,
                "mean_expense": sum(r.expense for r in recs) / k,
                "mean_reliability": sum(r.reliability for r in recs) / k,
                "failure_fraction": sum(r.failure for r in recs) / k,
                "mean_selected": sum(r.selected for r in recs) / k,
                "instances": k, "seed": s.master_seed,
            })
    return ResultTable(rows, s.master_seed)


# ---------------------------------------------------------------------------
# appendix tables

APPENDIX_GOALS = (50, 100, 150, 200, 250, 300, 400, 1000)


def appendix_agents() -> list[AgentModel]:
    return [AgentModel("1", (EffortLevel(0.0, Uniform(100.0, 200.0)),)),
            AgentModel("2", (EffortLevel(0.0, Uniform(50.0, 250.0)),))]


def _probabilities(levels, reserve_q: float, M: float) -> tuple[float, float, float]:
    return tuple(success_prob_exact(levels, reserve_q, frac * M).probability
                 for frac in (1.0, 0.75, 0.5))


def reproduce_appendix_tables(goals=APPENDIX_GOALS) -> tuple[list[dict], list[dict]]:
    """DR-VCG with linear penalties (first table) and order-averaged DR-SCE (second)."""
    agents = appendix_agents()
    J = contract_grid(50, max(goals), "linear")
    reserve = Linear(0.5)
    table1, table2 = [], []
    for M in goals:
        v = run_dr_vcg(agents, J, reserve, M, 1.0, unit=50)
        ells = {s.agent.id: s.contract.ell for s in v.selections}
        rewards = {s.agent.id: s.reward for s in v.selections}
        p = _probabilities([s.level for s in v.selections], v.reserve_quantity, M)
        table1.append({
            "M": M, "selected": sorted(ells), "reserve": v.reserve_quantity,
            "social_cost": v.sum_of_bids, "ell_1": ells.get("1"), "ell_2": ells.get("2"),
            "r_1": rewards.get("1"), "r_2": rewards.get("2"),
            "payments": v.total_rewards + v.external_cost,
            "expense": v.expected_total_expense,
            "p_full": p[0], "p_three_quarters": p[1], "p_half": p[2],
        })
        e = expected_dr_sce(agents, reserve, M, 1.0)
        probs = np.zeros(3)
        for o, w in zip(e.outcomes, e.weights):
            probs += w * np.array(_probabilities([s.level for s in o.selections],
                                                 o.reserve_quantity, M))
        table2.append({
            "M": M, "n_selected": e.mean_selected, "reserve": e.outcomes[0].reserve_quantity,
            "expense": e.expected_total_expense,
            "p_full": float(probs[0]), "p_three_quarters": float(probs[1]),
            "p_half": float(probs[2]),
        })
    return table1, table2


def table_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    keys = list(rows[0])
    w.writerow(keys)
    for r in rows:
        w.writerow([("+".join(v) if isinstance(v, list) else "" if v is None else fmt(v))
                    for v in (r[k] for k in keys)])
    return buf.getvalue()
