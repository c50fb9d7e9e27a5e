"""Command-line entry point.

Exit status: 0 on success, 1 when no valid contract set exists, 2 on bad input.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys

import numpy as np

from .agents import AgentModel, Bernoulli, EffortLevel, outcome_from_dict
from .allocation import (BidMatrix, Infeasible, SizeLimit, assignment_to_dict, solve_with_rewards,
                         verify_market_clearing)
from .contracts import Contract, ContractError, contract_grid, make_fixed, reserve_from_dict
from .mechanisms import expected_dr_sce, grid_units, run_dr_sce, run_dr_vcg
from .reliability import ResolutionError, success_prob_exact, success_prob_mc
from .simulate import Scenario, fmt, reproduce_appendix_tables, run_scenario, table_csv

log = logging.getLogger("drvcg")

DEFAULT_SEED = 0


class InputError(Exception):
    pass


class _StderrHandler(logging.StreamHandler):
    # looks up sys.stderr at emit time so redirected streams are honoured
    def emit(self, record):
        self.stream = sys.stderr
        super().emit(record)


def _configure_logging() -> None:
    root = logging.getLogger("drvcg")
    if not any(isinstance(h, _StderrHandler) for h in root.handlers):
        h = _StderrHandler()
        h.setFormatter(logging.Formatter("%(name)s: %(message)s"))
        root.addHandler(h)
    root.setLevel(logging.INFO)
    root.propagate = False


def _load(path: str | None) -> dict:
    if path is None:
        raise InputError("--input is required")
    try:
        with (sys.stdin if path == "-" else open(path)) as fh:
            data = json.load(fh)
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise InputError(f"{path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise InputError(f"{path} must hold a JSON object")
    return data


def _emit(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _json(d) -> str:
    return json.dumps(d, indent=2, sort_keys=True) + "\n"


def _target(args, data: dict, key: str = "M") -> float:
    m = args.target if args.target is not None else data.get(key)
    if m is None:
        raise InputError(f"no target given (use --target or a '{key}' field)")
    return float(m)


def _gamma(args, data: dict) -> float:
    return float(args.gamma if args.gamma is not None else data.get("gamma", 1.0))


def _agents(data: dict) -> list[AgentModel]:
    if "agents" not in data:
        raise InputError("missing 'agents'")
    return [AgentModel.from_dict(a) for a in data["agents"]]


def _contracts(data: dict) -> list[Contract]:
    if "contracts" in data:
        return [Contract.from_dict(c) for c in data["contracts"]]
    if "contract_grid" in data:
        g = data["contract_grid"]
        return contract_grid(float(g["step"]), float(g["max"]), g.get("family", "sce"))
    raise InputError("missing 'contracts' or 'contract_grid'")


# ---------------------------------------------------------------------------
# commands


def cmd_solve(args) -> int:
    data = _load(args.input)
    b = BidMatrix.from_dict(data)
    m = grid_units(_target(args, data), b.unit, "target")
    a, value, rewards = solve_with_rewards(b, m)
    _emit(_json(assignment_to_dict(b, a, value, rewards)), args.output)
    return 0


def cmd_verify(args) -> int:
    data = _load(args.input)
    b = BidMatrix.from_dict(data)
    m = grid_units(_target(args, data), b.unit, "target")
    report = verify_market_clearing(b, m)
    _emit(_json({"ok": report.ok, "violations": report.violations}), args.output)
    for v in report.violations:
        log.warning(v)
    return 0


def cmd_vcg(args) -> int:
    data = _load(args.input)
    out = run_dr_vcg(_agents(data), _contracts(data), reserve_from_dict(data.get("reserve")),
                     _target(args, data), _gamma(args, data), unit=data.get("unit"))
    _emit(_json(out.to_dict()), args.output)
    return 0


def cmd_sce(args) -> int:
    data = _load(args.input)
    agents = _agents(data)
    reserve = reserve_from_dict(data.get("reserve"))
    M, gamma = _target(args, data), _gamma(args, data)
    if args.expected:
        e = expected_dr_sce(agents, reserve, M, gamma, seed=args.seed,
                            orders=args.samples or 200)
        doc = {"mechanism": "sce", "M": M, "gamma": gamma, "exact": e.exact,
               "expected_total_expense": e.expected_total_expense,
               "external_cost": e.external_cost, "mean_selected": e.mean_selected,
               "reserve_use_probability": e.reserve_use_probability,
               "orders": [dict(o.to_dict(), weight=w) for o, w in zip(e.outcomes, e.weights)]}
    else:
        doc = run_dr_sce(agents, reserve, M, gamma, np.random.default_rng(args.seed)).to_dict()
    _emit(_json(doc), args.output)
    return 0


def cmd_reliability(args) -> int:
    data = _load(args.input)
    if "selected" not in data:
        raise InputError("missing 'selected'")
    outcomes = [outcome_from_dict(s["outcome"] if "outcome" in s else s) for s in data["selected"]]
    m = _target(args, data)
    reserve_q = float(data.get("reserve_quantity", 0.0))
    if args.mc is not None:
        r = success_prob_mc(outcomes, reserve_q, m, args.mc, args.seed)
    else:
        r = success_prob_exact(outcomes, reserve_q, m, float(data.get("grid", 1.0)))
    doc = {"probability": r.probability, "method": r.method, "m": m}
    if r.samples:
        doc.update(samples=r.samples, half_width_95=r.half_width_95)
    _emit(_json(doc), args.output)
    return 0


def cmd_simulate(args) -> int:
    data = _load(args.input)
    try:
        s = Scenario.from_dict(data)
    except TypeError as e:
        raise InputError(str(e)) from e
    if args.seed_given:
        s.master_seed = args.seed
    if args.gamma is not None:
        s.gamma_grid = (float(args.gamma),)
    if args.samples is not None:
        s.mc_samples = args.samples
    if args.target is not None:
        s.M = float(args.target)
    log.info("master_seed=%d", s.master_seed)
    _emit(run_scenario(s).to_csv(), args.output)
    return 0


def example1_csv() -> str:
    agents = [AgentModel(str(k + 1), (EffortLevel(0.0, Bernoulli(100.0, p)),))
              for k, p in enumerate((1.0, 0.9, 0.7))]
    out = run_dr_vcg(agents, [make_fixed(100, 50)], None, 200, 1.0, unit=100)
    fail = 1 - success_prob_exact([s.level for s in out.selections], 0, 200).probability
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["agent", "ell", "bid", "reward"])
    for s in out.selections:
        w.writerow([s.agent.id, fmt(s.contract.ell), fmt(s.bid), fmt(s.reward)])
    w.writerow(["sum_of_bids", "", fmt(out.sum_of_bids), ""])
    w.writerow(["expense", "", "", fmt(out.expected_total_expense)])
    w.writerow(["failure_probability", "", "", fmt(fail)])
    return buf.getvalue()


def cmd_reproduce(args) -> int:
    if args.table == "example1":
        _emit(example1_csv(), args.output)
        return 0
    t1, t2 = reproduce_appendix_tables()
    _emit(table_csv(t1 if args.table == "1" else t2), args.output)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drvcg", description="Demand-response contract mechanisms.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, *extra):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--input", "-i", help="input JSON file ('-' for stdin)")
        sp.add_argument("--output", "-o", help="output file (default stdout)")
        sp.add_argument("--seed", type=int, default=None, help=f"RNG seed (default {DEFAULT_SEED})")
        sp.add_argument("--target", type=float, help="reduction goal M in energy units")
        sp.add_argument("--gamma", type=float, help="safety margin")
        for e in extra:
            e(sp)
        sp.set_defaults(func=fn)
        return sp

    add("solve", cmd_solve, "optimal contract set and rewards for a bid matrix")
    add("verify", cmd_verify, "check market clearing at the offered prices")
    add("vcg", cmd_vcg, "run DR-VCG on agents, contracts and a reserve")
    add("sce", cmd_sce, "run DR-SCE",
        lambda sp: sp.add_argument("--expected", action="store_true",
                                   help="average over selection orders"),
        lambda sp: sp.add_argument("--samples", type=int, help="orders to sample when averaging"))

    def rel_flags(sp):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--exact", action="store_true", help="exact convolution (default)")
        g.add_argument("--mc", type=int, metavar="N", help="Monte Carlo with N samples")

    add("reliability", cmd_reliability, "probability that selected agents reach the goal", rel_flags)
    add("simulate", cmd_simulate, "run a scenario sweep and print CSV",
        lambda sp: sp.add_argument("--samples", type=int, help="Monte Carlo samples per instance"))
    add("reproduce", cmd_reproduce, "print a golden table",
        lambda sp: sp.add_argument("--table", choices=["1", "2", "example1"], required=True))
    return p


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = DEFAULT_SEED
    log.info("seed=%d", args.seed)
    try:
        return args.func(args)
    except Infeasible as e:
        print(f"drvcg: infeasible: {e}", file=sys.stderr)
        return 1
    except (InputError, SizeLimit, ContractError, ResolutionError, ValueError, KeyError, TypeError) as e:
        print(f"drvcg: input error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
