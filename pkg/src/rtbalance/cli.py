"""Command-line entry point: validate inputs, run power flow and dispatch scenarios.

Exit codes: 0 success, 1 invalid input, 2 solver failure, 3 suite mismatch
against an expected-values file.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import coordinator as co
from . import netmodel
from .pdispatch import ScenarioError
from .powerflow import PowerFlowError, dump_solution, solve_power_flow
from .sensitivity import build_sensitivities

log = logging.getLogger("rtbalance")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_MISMATCH = 0, 1, 2, 3


class InputError(Exception):
    """Bad user input; the message is shown as-is."""


def sig6(value):
    """Round floats to 6 significant digits, recursively; non-finite floats become null."""
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if not math.isfinite(v):
            return None
        return float(f"{v:.6g}") if v != 0.0 else 0.0
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, dict):
        return {str(k): sig6(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [sig6(v) for v in value]
    if isinstance(value, np.ndarray):
        return [sig6(v) for v in value.tolist()]
    return value


def dumps(doc):
    return json.dumps(sig6(doc), sort_keys=True, indent=2) + "\n"


def _fmt(v):
    return f"{v:.6g}"


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc.strerror}") from None


def _read(path, what):
    try:
        return netmodel.read_text(path)
    except FileNotFoundError:
        raise InputError(f"{what} file not found: {path}") from None
    except OSError as exc:
        raise InputError(f"cannot read {what} file {path}: {exc.strerror}") from None


def _load_inputs(args):
    case_src = _read(args.case, "case") if args.case else netmodel.read_text(
        netmodel.bundled_path("case30.json"))
    case = netmodel.load_case(case_src)
    market_src = _read(args.market, "market") if args.market else netmodel.read_text(
        netmodel.bundled_path("market.json"))
    schedule, bids, contracts = netmodel.load_market(market_src, case)
    return case, schedule, bids, contracts


def _scenario(ref):
    """A scenario file path, or the name of a bundled scenario."""
    if os.path.exists(ref):
        return co.load_scenario(_read(ref, "scenario"))
    if os.path.exists(netmodel.bundled_path("scenarios", f"{ref}.json")):
        return co.bundled_scenario(ref)
    raise InputError(f"scenario not found: {ref} (neither a file nor a bundled scenario name; "
                     f"bundled: {', '.join(co.BUNDLED_SUITE)})")


# ---------------------------------------------------------------- tables

def dispatch_table(doc):
    """Text table laid out like the published dispatch tables."""
    cols = ["Participant", "Increase (MW)", "Decrease (MW)", "Reserve called (MW)",
            "Curtailment (MW)", "Replacement (MW)"]
    rows = []
    curt_by_party = {}
    for d in doc.get("curtailment", {}).values():
        for side in ("seller", "buyer"):
            who = d.get(f"{side}_name")
            if who:
                curt_by_party[who] = curt_by_party.get(who, 0.0) + d[side]
    names = list(doc.get("p_dispatch", {}))
    names += sorted(set(curt_by_party) - set(names))
    for nm in names:
        d = doc["p_dispatch"].get(nm)
        gen = nm.startswith("G-")
        cut = curt_by_party.get(nm)
        vals = [d["dp_plus"], d["dp_minus"]] if d else [None, None]
        vals.append(d["dp_res"] if d and gen else None)
        vals.append(cut)
        vals.append(d["dp_rep"] if d and gen else None)
        if all(v is None or abs(v) < 5e-7 for v in vals):
            continue
        rows.append([nm] + ["/" if v is None else _fmt(0.0 if abs(v) < 5e-7 else v) for v in vals])
    widths = [max(len(c), *(len(r[k]) for r in rows)) if rows else len(c) for k, c in enumerate(cols)]
    line = "  ".join(c.ljust(w) for c, w in zip(cols, widths)).rstrip()
    out = [f"scenario {doc['scenario']['name']}: {doc['convergence']} after {doc['iterations']} "
           f"outer iterations", line, "-" * len(line)]
    for r in rows:
        out.append("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip())
    if "costs" in doc:
        c = doc["costs"]
        out.append("")
        out.append("cost: energy {}  reserve {}  curtailment {}  replacement {}  total {}".format(
            *(_fmt(c[k]) for k in ("c_p1", "c_p2", "c_p3", "c_p4", "total"))))
        out.append(f"system lambda {_fmt(doc['lambda'])} $/MWh")
    for f in doc.get("flows", []):
        if abs(f["dual"]) > 1e-9:
            out.append(f"branch {f['branch']} ({f['from']}-{f['to']}): {_fmt(f['mw'])} MW, "
                       f"limit {_fmt(f['limit'])}, dual {_fmt(f['dual'])}")
    return "\n".join(out) + "\n"


SERIES = {
    "lmp": ["bus", "lambda", "loss", "congestion", "rho"],
    "reactive": ["bus", "rho_q"],
    "flows": ["branch", "from", "to", "mw", "limit", "dual"],
    "voltages": ["bus", "v"],
}


def series_csv(doc, series):
    key = {"lmp": "prices", "reactive": "prices", "flows": "flows", "voltages": "voltages"}[series]
    if key not in doc:
        raise InputError(f"result has no {key} (did the run fail?)")
    cols = SERIES[series]
    lines = [",".join(cols)]
    for row in doc[key]:
        cells = []
        for c in cols:
            v = row.get(c)
            cells.append("" if v is None else (_fmt(v) if isinstance(v, float) else str(v)))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def dispatch_csv(doc):
    lines = ["participant,dp_plus,dp_minus,dp_res,dp_rep"]
    for nm, d in doc.get("p_dispatch", {}).items():
        lines.append(",".join([nm] + [_fmt(d[k]) for k in ("dp_plus", "dp_minus", "dp_res", "dp_rep")]))
    return "\n".join(lines) + "\n"


def _enrich(doc, contracts):
    """Attach participant labels to contract curtailment rows (for the table)."""
    by_id = {c.id: c for c in contracts}
    for cid, d in doc.get("curtailment", {}).items():
        c = by_id.get(cid)
        if c is not None:
            d["seller_name"] = f"G-{c.seller_bus}"
            d["buyer_name"] = f"C-{c.buyer_bus}"
    return doc


# ---------------------------------------------------------------- commands

def cmd_validate(args):
    case = netmodel.load_case(_read(args.case, "case")) if args.case else None
    if case is None:
        case = netmodel.load_case(netmodel.read_text(netmodel.bundled_path("case30.json")))
    problems = []
    if args.market or not args.case:
        src = _read(args.market, "market") if args.market else netmodel.read_text(
            netmodel.bundled_path("market.json"))
        schedule, bids, contracts = netmodel.load_market(src, case)
        problems = netmodel.validate_consistency(case, schedule, contracts, bids).problems
    if args.scenario:
        sc = _scenario(args.scenario)
        co.effective_limits(case, sc)
        sc.load_change(case)
    if problems:
        for p in problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_INPUT
    print("ok")
    return EXIT_OK


def cmd_pf(args):
    case, schedule, _, _ = _load_inputs(args)
    gen = np.zeros(case.n_bus)
    for p in schedule:
        if p.side == "generator":
            gen[case.bus_index(p.bus)] += p.p0
    load_p = np.array([b.base_load_p for b in case.buses])
    load_q = np.array([b.base_load_q for b in case.buses])
    if args.scenario:
        load_p = load_p + _scenario(args.scenario).load_change(case)
    pf = solve_power_flow(case, gen - load_p, -load_q)
    if not pf.converged:
        print(f"error: power flow did not converge in {pf.iterations} iterations", file=sys.stderr)
        return EXIT_SOLVER
    _write(args.out, dumps(dump_solution(pf, case)))
    if args.dump_sens:
        _write(args.dump_sens, dumps(build_sensitivities(case, pf).to_json()))
    return EXIT_OK


def _options(args):
    kw = {}
    if getattr(args, "solver", None):
        kw["solver"] = args.solver
    if getattr(args, "max_outer", None):
        kw["max_outer"] = args.max_outer
    if getattr(args, "round_taps", False):
        kw["round_taps"] = True
    return co.DispatchOptions(**kw)


def cmd_run(args):
    case, schedule, bids, contracts = _load_inputs(args)
    sc = _scenario(args.scenario)
    if args.alpha is not None:
        sc = sc.with_alpha(args.alpha)
    res = co.run_dispatch(case, schedule, bids, contracts, sc, _options(args))
    doc = _enrich(co.result_to_dict(res, case), contracts)
    if args.out:
        _write(args.out, dumps(doc))
    if args.dump_pf and res.final_pf is not None:
        _write(args.dump_pf, dumps(dump_solution(res.final_pf, case)))
    if args.dump_sens and res.sens is not None:
        _write(args.dump_sens, dumps(res.sens.to_json()))
    if args.format == "json":
        if args.out in (None, "-"):
            pass
        else:
            _write(None, dumps(doc))
    elif args.format == "csv":
        _write(None, dispatch_csv(doc))
    else:
        _write(None, dispatch_table(doc))
    if not res.converged:
        print(f"error: dispatch {res.convergence}: {res.message}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_suite(args):
    case, schedule, bids, contracts = _load_inputs(args)
    refs = args.scenarios or list(co.BUNDLED_SUITE)
    scenarios = [(getattr(_scenario(r), "name"), _scenario(r)) for r in refs]
    expected = None
    if args.expected:
        try:
            expected = json.loads(_read(args.expected, "expected-values"))
        except json.JSONDecodeError as exc:
            raise InputError(f"invalid JSON in {args.expected}: {exc.msg}") from None
        expected = expected.get("scenarios", expected)
    options = _options(args)
    report = co.run_case_suite(scenarios, case, schedule, bids, contracts, options, expected)
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
    for e in report.entries:
        if args.out_dir and e.document is not None:
            _write(os.path.join(args.out_dir, f"{e.name}.json"), dumps(_enrich(e.document, contracts)))
        verdict = "ok" if not e.mismatches else f"{len(e.mismatches)} mismatches"
        checks = f", {e.checks} checks {verdict}" if e.checks else ""
        detail = f" ({e.error})" if e.error and e.status != co.CONVERGED else ""
        print(f"{e.name}: {e.status}{detail}{checks}")
        for m in e.mismatches:
            print(f"  mismatch {m}")
    if args.alpha_sweep:
        base = scenarios[0][1]
        sweep = co.alpha_sweep(base, case, schedule, bids, contracts, options=options)
        for e in sweep.entries:
            total = e.result.p.costs["total"] if e.result is not None and e.result.p else float("nan")
            print(f"{e.name}: {e.status}, total cost {_fmt(total)}")
        if args.out_dir:
            _write(os.path.join(args.out_dir, f"{base.name}_alpha_sweep_lmp.csv"), sweep.sweep_csv)
        report.entries.extend(sweep.entries)
    if report.mismatches:
        return EXIT_MISMATCH
    if report.solver_failures:
        return EXIT_SOLVER
    return EXIT_OK


def cmd_report(args):
    try:
        doc = json.loads(_read(args.input, "result"))
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON in {args.input}: {exc.msg}") from None
    if args.format == "json":
        text = dumps(doc)
    elif args.format == "csv":
        text = dispatch_csv(doc) if args.series == "dispatch" else series_csv(doc, args.series)
    else:
        text = dispatch_table(doc)
    _write(args.out, text)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(
        prog="rtbalance",
        description="Real-time balancing-market dispatch with AC power flow coordination.",
        epilog="Set DISPATCH_LOG=debug|info|warning to control audit logging on stderr.")
    sub = p.add_subparsers(dest="command", required=True)

    def inputs(sp):
        sp.add_argument("--case", help="network case JSON (default: bundled IEEE 30-bus)")
        sp.add_argument("--market", help="market JSON with participants, bids and contracts "
                                         "(default: bundled market)")

    sp = sub.add_parser("validate", help="check case, market and scenario files")
    inputs(sp)
    sp.add_argument("--scenario", help="scenario file or bundled scenario name")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("pf", help="AC power flow at the scheduled base point")
    inputs(sp)
    sp.add_argument("--scenario", help="apply this scenario's load change before solving")
    sp.add_argument("--out", help="write the solution JSON here (default: stdout)")
    sp.add_argument("--dump-sens", metavar="PATH", help="also write loss/flow/tap sensitivities")
    sp.set_defaults(func=cmd_pf)

    sp = sub.add_parser("run", help="run the balancing dispatch for one scenario")
    inputs(sp)
    sp.add_argument("--scenario", required=True, help="scenario file or bundled scenario name")
    sp.add_argument("--alpha", type=float, help="override the replacement-reserve ratio (0..1)")
    sp.add_argument("--out", help="write the result JSON here")
    sp.add_argument("--format", choices=("table", "json", "csv"), default="table",
                    help="what to print on stdout (default: table)")
    sp.add_argument("--dump-pf", metavar="PATH", help="write the final AC power flow")
    sp.add_argument("--dump-sens", metavar="PATH", help="write the final sensitivities")
    sp.add_argument("--solver", choices=("interior-point", "simplex"), help="LP solver")
    sp.add_argument("--max-outer", type=int, help="outer iteration cap (default 10)")
    sp.add_argument("--round-taps", action="store_true", help="round taps to physical steps")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("suite", help="run several scenarios, optionally against expected values")
    inputs(sp)
    sp.add_argument("scenarios", nargs="*", help="scenario files or bundled names "
                                                 "(default: the bundled suite)")
    sp.add_argument("--expected", help="expected-values JSON: {scenario: [{path, value, tol}]}")
    sp.add_argument("--out-dir", help="write one result JSON per scenario here")
    sp.add_argument("--alpha-sweep", action="store_true",
                    help="also sweep alpha over 0, 0.5, 1 on the first scenario and merge LMPs")
    sp.add_argument("--solver", choices=("interior-point", "simplex"), help="LP solver")
    sp.add_argument("--max-outer", type=int, help="outer iteration cap (default 10)")
    sp.set_defaults(func=cmd_suite)

    sp = sub.add_parser("report", help="render a saved result as a table or CSV")
    sp.add_argument("--in", dest="input", required=True, help="result JSON from 'run --out'")
    sp.add_argument("--format", choices=("table", "json", "csv"), default="table")
    sp.add_argument("--series", choices=("lmp", "reactive", "flows", "voltages", "dispatch"),
                    default="lmp", help="CSV series (default: lmp)")
    sp.add_argument("--out", help="output file (default: stdout)")
    sp.set_defaults(func=cmd_report)
    return p


def _configure_logging():
    level = os.environ.get("DISPATCH_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None):
    _configure_logging()
    args = build_parser().parse_args(argv)
    if getattr(args, "alpha", None) is not None and not 0.0 <= args.alpha <= 1.0:
        print(f"error: --alpha must lie in [0, 1], got {args.alpha}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except netmodel.ValidationError as exc:
        for prob in exc.problems:
            print(f"error: {prob}", file=sys.stderr)
        return EXIT_INPUT
    except (netmodel.CaseFormatError, ScenarioError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PowerFlowError as exc:
        print(f"error: power flow failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
