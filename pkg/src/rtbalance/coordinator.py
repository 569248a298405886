"""Outer loop coupling AC power flow with the P and Q balancing LPs.

Each iteration: AC power flow at the current dispatch, linearise, solve the
P LP (adding contract curtailment only after a curtailment-free LP turns out
infeasible in congestion mode), solve the Q LP, apply both, and check flows,
voltages and the slack mismatch. Corrections are applied in full until the
worst violation grows, after which the step is halved.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import netmodel
from .lpsolver import INFEASIBLE as LP_INFEASIBLE, IPParams, solve_interior_point, solve_simplex
from .pdispatch import (LinearizationPoint, PScenario, build_p_subproblem,
                        effective_limits, extract_p_dispatch, system_balance_residual)
from .powerflow import PowerFlowError, PowerFlowOptions, solve_power_flow
from .pricing import compute_lmps
from .qdispatch import (QPoint, build_q_subproblem, extract_q_dispatch,
                        generator_q, nearest_step, voltage_violation)
from .sensitivity import build_sensitivities

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITERATIONS = "max-iterations"
INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class DispatchOptions:
    max_outer: int = 10
    flow_tol_mw: float = 1e-5
    voltage_tol: float = 1e-6
    mismatch_tol_mw: float = 1e-5
    step_tol_mw: float = 1e-5
    pf: PowerFlowOptions = PowerFlowOptions(tol=1e-10, max_iter=30)
    lp: IPParams = IPParams()
    solver: str = "interior-point"
    q_load_model: str = "constant-pf"      # or "constant-q"; a scenario may override
    reactive: bool = True
    round_taps: bool = False
    keep_lps: bool = True


@dataclass
class DispatchResult:
    scenario: PScenario
    convergence: str
    outer_iterations: int
    p: object = None
    q: object = None
    prices: object = None
    final_pf: object = None
    sens: object = None
    initial_pf: object = None
    audit: list = field(default_factory=list)
    curtailment_used: bool = False
    lps: list = field(default_factory=list)
    runtime_s: float = 0.0
    message: str = ""
    certificate: dict | None = None
    load_p: np.ndarray | None = None
    load_q: np.ndarray | None = None
    v_set: dict | None = None
    taps: dict | None = None

    @property
    def converged(self):
        return self.convergence == CONVERGED


def _solver(options):
    if options.solver == "simplex":
        return lambda lp: solve_simplex(lp)
    return lambda lp: solve_interior_point(lp, options.lp)


def _gen_vector(case, schedule):
    gen = np.zeros(case.n_bus)
    for p in schedule:
        if p.side == "generator":
            gen[case.bus_index(p.bus)] += p.p0
    return gen


def _load_q(case, load_p, model):
    base_p = np.array([b.base_load_p for b in case.buses])
    base_q = np.array([b.base_load_q for b in case.buses])
    if model == "constant-q":
        return base_q.copy()
    ratio = np.divide(load_p, base_p, out=np.ones_like(load_p), where=base_p > 0)
    return base_q * ratio


def _flow_violation(pf, case, limits):
    worst = 0.0
    for k, br in enumerate(case.branches):
        lim = limits[br.id]
        if math.isfinite(lim):
            worst = max(worst, abs(pf.branch_flow_p[k]) - lim)
    return worst


def _scaled(qd, w):
    def sc(d):
        return {k: w * v for k, v in d.items()}
    return replace(qd, dq_plus=sc(qd.dq_plus), dq_minus=sc(qd.dq_minus), dt_plus=sc(qd.dt_plus),
                   dt_minus=sc(qd.dt_minus), dv=sc(qd.dv))


def _refresh(frozen, fresh):
    """Frozen sensitivities combined with the flows and losses of the current point."""
    return replace(frozen, branch_flow_p=fresh.branch_flow_p, branch_loss=fresh.branch_loss,
                   total_loss=fresh.total_loss, v=fresh.v)


REVERSAL_MIN_MW = 0.1


def _reverses(move, prev):
    """True when ``move`` mostly undoes ``prev`` (a vertex-to-vertex cycle).

    Small reversals are ordinary Newton overshoot and are left alone.
    """
    a, b = float(np.linalg.norm(move)), float(np.linalg.norm(prev))
    if a <= REVERSAL_MIN_MW or b <= REVERSAL_MIN_MW:
        return False
    return float(move @ prev) < -0.5 * a * b


def run_dispatch(case, schedule, bids, contracts, scenario, options=None):
    """Run the coordinated balancing dispatch for one scenario."""
    options = options or DispatchOptions()
    t_start = time.perf_counter()
    solve = _solver(options)
    limits = effective_limits(case, scenario)
    s = case.slack_index
    BL = scenario.load_change(case)
    gen0 = _gen_vector(case, schedule)
    load_p0 = np.array([b.base_load_p for b in case.buses])
    load_q0 = np.array([b.base_load_q for b in case.buses])
    result = DispatchResult(scenario, MAX_ITERATIONS, 0)

    def power_flow(inj_p, load_q, v_set, taps, warm=None):
        kw = {"v0": warm.v, "theta0": warm.theta} if warm is not None else {}
        # reactive injections at PV buses are outputs of the power flow
        return solve_power_flow(case, inj_p, -load_q, options.pf, v_set=v_set, taps=taps, **kw)

    taps_vec = np.array([br.tap if br.is_transformer else 1.0 for br in case.branches])
    try:
        base_pf = power_flow(gen0 - load_p0, load_q0, None, taps_vec)
    except PowerFlowError as exc:
        result.convergence, result.message = INFEASIBLE, f"base power flow failed: {exc}"
        return result
    if not base_pf.converged:
        result.convergence, result.message = INFEASIBLE, "base power flow did not converge"
        return result
    slack_ref = base_pf.p_inj[s] + load_p0[s]
    loss_ref = base_pf.total_loss

    load_p = load_p0 + BL
    load_q = _load_q(case, load_p, scenario.q_load_model or options.q_load_model)
    v_set = {b.id: b.v_set for b in case.buses}
    tap_ids = [br.id for br in case.branches if br.is_transformer]
    tap_pos = {br.id: k for k, br in enumerate(case.branches)}

    x_applied = None            # P LP variable vector currently applied
    u_bus = np.zeros(case.n_bus)
    q_total = None              # accumulated reactive corrections
    q_priced = None             # last reactive LP solved against a voltage violation
    curtail = False
    omega = 1.0
    prev_worst = math.inf
    pf = None
    pd = qd = sens = None
    frozen = prev_sens = prev_move = None
    for it in range(1, options.max_outer + 1):
        inj = gen0 - load_p + u_bus
        try:
            pf = power_flow(inj, load_q, v_set, taps_vec, warm=pf)
        except PowerFlowError as exc:
            result.convergence, result.message = INFEASIBLE, f"power flow failed: {exc}"
            break
        if not pf.converged:
            result.convergence, result.message = INFEASIBLE, "power flow diverged"
            break
        if it == 1:
            result.initial_pf = pf
        mismatch = pf.p_inj[s] + load_p[s] - (slack_ref + u_bus[s])
        fviol = _flow_violation(pf, case, limits)
        vviol = voltage_violation(case, pf.v)
        entry = {"iteration": it, "flow_violation_mw": fviol, "voltage_violation_pu": vviol,
                 "slack_mismatch_mw": mismatch, "loss_mw": pf.total_loss, "omega": omega,
                 "curtailment": curtail}
        result.audit.append(entry)
        log.info("outer %d: flow viol %.3g MW, voltage viol %.3g pu, mismatch %.3g MW",
                 it, fviol, vviol, mismatch)
        worst = max(fviol, 100.0 * vviol, abs(mismatch), 0.0)
        if it > 2 and worst > 1.5 * prev_worst:
            omega = max(omega / 2.0, 1.0 / 16.0)
            entry["omega"] = omega
        prev_worst = worst

        # P sub-problem at this operating point
        fresh = build_sensitivities(case, pf)
        sens = fresh if frozen is None else _refresh(frozen, fresh)
        point = LinearizationPoint(u_bus.copy(), float(mismatch), float(pf.total_loss - loss_ref))
        lp, vm = build_p_subproblem(case, schedule, bids, contracts, scenario, sens, point, curtail)
        sol = solve(lp)
        if sol.status == LP_INFEASIBLE and scenario.mode == "congestion" and scenario.curtailment_enabled \
                and contracts and not curtail:
            entry["curtailment_trigger"] = f"P sub-problem without curtailment is {sol.status}"
            log.info("P sub-problem %s without curtailment; adding curtailment variables", sol.status)
            if options.keep_lps:
                result.lps.append(("P", it, lp, sol.status))
            curtail = True
            entry["curtailment"] = True
            lp, vm = build_p_subproblem(case, schedule, bids, contracts, scenario, sens, point, True)
            sol = solve(lp)
        if options.keep_lps:
            result.lps.append(("P", it, lp, sol.status))
        if not sol.optimal:
            result.convergence = INFEASIBLE
            result.message = f"P sub-problem {sol.status} at outer iteration {it}"
            result.certificate = sol.certificate
            break
        x_new = np.asarray(sol.x)
        if x_applied is None or len(x_applied) != len(x_new):
            x_applied = np.zeros_like(x_new)
            prev_move = None
        market = np.ones(len(x_new), dtype=bool)
        market[list(vm.theta_vars.values())] = False
        move = np.where(market, x_new - x_applied, 0.0)
        if (it > 2 and frozen is None and prev_move is not None and prev_sens is not None
                and _reverses(move, prev_move)):
            # the new linearisation undoes the last step: keep the sensitivities that
            # produced the applied solution and refresh only the operating-point terms
            frozen = prev_sens
            entry["linearization_frozen"] = True
            log.info("outer %d: step reversal detected; freezing sensitivities", it)
            sens = _refresh(frozen, fresh)
            lp, vm = build_p_subproblem(case, schedule, bids, contracts, scenario, sens, point, curtail)
            sol = solve(lp)
            if options.keep_lps:
                result.lps.append(("P", it, lp, sol.status))
            if not sol.optimal:
                result.convergence = INFEASIBLE
                result.message = f"P sub-problem {sol.status} at outer iteration {it}"
                result.certificate = sol.certificate
                break
            x_new = np.asarray(sol.x)
            move = np.where(market, x_new - x_applied, 0.0)
        pd = extract_p_dispatch(sol, vm, lp)
        p_step = float(np.max(np.abs(move), initial=0.0))

        # Q sub-problem at the same point
        q_step = 0.0
        if options.reactive:
            qpt = QPoint.from_pf(case, schedule, pf, load_q)
            qlp, qvm = build_q_subproblem(case, schedule, bids, sens, qpt, v0=pf.v)
            qsol = solve(qlp)
            if options.keep_lps:
                result.lps.append(("Q", it, qlp, qsol.status))
            if not qsol.optimal:
                result.convergence = INFEASIBLE
                result.message = f"Q sub-problem {qsol.status} at outer iteration {it}"
                result.certificate = qsol.certificate
                break
            qd = extract_q_dispatch(qsol, qvm, qlp)
            if vviol > options.voltage_tol:
                q_priced = qd
                dv = np.array([qd.dv[b] for b in case.bus_ids])
                dt = qd.tap_changes()
                q_step = max([float(np.max(np.abs(dv)))] + [abs(v) for v in dt.values()])
            else:
                # inside the voltage band the zero correction is optimal; drop solver noise
                qd = _scaled(qd, 0.0)
                dv, dt = np.zeros(case.n_bus), {}
        entry["p_step_mw"], entry["q_step"] = p_step, q_step

        ok = (fviol <= options.flow_tol_mw and vviol <= options.voltage_tol
              and abs(mismatch) <= options.mismatch_tol_mw)
        if it > 1 and ok and p_step <= options.step_tol_mw and q_step <= options.voltage_tol:
            result.convergence = CONVERGED
            break

        # Step 6: apply corrections
        prev_move, prev_sens = omega * move, sens
        x_applied = x_applied + omega * (x_new - x_applied)
        u_bus = vm.U @ x_applied
        if options.reactive:
            for k, bb in enumerate(case.buses):
                if k == s or bb.kind in ("generator", "mixed"):
                    v_set[bb.id] = float(pf.v[k] + omega * dv[k])
            for bid, d in dt.items():
                taps_vec[tap_pos[bid]] += omega * d
            step = _scaled(qd, omega)
            q_total = step if q_total is None else q_total.accumulate(step)
    result.outer_iterations = len(result.audit)
    if qd is not None:
        last = q_priced or qd
        q_total = qd if q_total is None else q_total.accumulate(_scaled(qd, 0.0))
        qd = replace(q_total, prices=dict(last.prices), objective=last.objective,
                     vmap=last.vmap, lp=last.lp, solution=last.solution)
    result.p, result.q, result.final_pf, result.sens = pd, qd, pf, sens
    result.curtailment_used = curtail
    if pd is not None and sens is not None:
        result.prices = compute_lmps(pd, sens, qd)
    if options.round_taps and result.converged:
        result.taps = {bid: nearest_step(taps_vec[tap_pos[bid]], case.branch(bid).tap) for bid in tap_ids}
    else:
        result.taps = {bid: float(taps_vec[tap_pos[bid]]) for bid in tap_ids}
    result.load_p, result.load_q, result.v_set = load_p, load_q, dict(v_set)
    result.runtime_s = time.perf_counter() - t_start
    return result


def balance_residual(result):
    return system_balance_residual(result.p, result.scenario)


def replacement_residual(result):
    pd = result.p
    return pd.total_rep - result.scenario.alpha * pd.total_res


def bound_violations(result, schedule, contracts, tol=1e-6):
    """List every violated headroom, floor, reserve or contract bound."""
    pd = result.p
    out = []
    sold = {}
    for c in contracts:
        sold[c.seller_bus] = sold.get(c.seller_bus, 0.0) + c.amount_mw
    for p in schedule:
        nm = p.name
        if pd.dp_plus[nm] + pd.dp_rep[nm] > p.p_max - p.p0 - p.reserve_mw + tol:
            out.append(f"{nm}: headroom exceeded")
        floor = p.p0 - max(sold.get(p.bus, 0.0), p.p_min) if p.side == "generator" else p.p0 - p.p_min
        if pd.dp_minus[nm] > floor + tol:
            out.append(f"{nm}: decrement below floor")
        if pd.dp_res[nm] > p.reserve_mw + tol:
            out.append(f"{nm}: reserve call above contracted reserve")
        for key in ("dp_plus", "dp_minus", "dp_res", "dp_rep"):
            if getattr(pd, key)[nm] < -tol:
                out.append(f"{nm}: negative {key}")
    for c in contracts:
        cut = pd.dp_ij.get(c.id)
        if cut and max(cut["seller"], cut["buyer"]) > c.amount_mw + tol:
            out.append(f"{c.id}: curtailment above contract amount")
    return out


def corrected_inputs(case, schedule, contracts, result):
    """Schedule, case and contracts with the converged dispatch folded in.

    Re-running the dispatch on these inputs with no load change should find
    nothing left to do.
    """
    pd = result.p
    parts = []
    for p in schedule:
        nm = p.name
        sgn = 1.0 if p.side == "generator" else 1.0
        cut = 0.0
        for c in contracts:
            d = pd.dp_ij.get(c.id)
            if d and p.side == "generator" and c.seller_bus == p.bus:
                cut += d["seller"]
        p0 = p.p0 + sgn * (pd.dp_plus[nm] - pd.dp_minus[nm] + pd.dp_res[nm]) - cut
        parts.append(replace(p, p0=p0, reserve_mw=p.reserve_mw - pd.dp_res[nm] + pd.dp_rep[nm]))
    new_contracts = []
    for c in contracts:
        d = pd.dp_ij.get(c.id)
        amt = c.amount_mw - (max(d["seller"], d["buyer"]) if d else 0.0)
        if amt > 1e-9:
            new_contracts.append(replace(c, amount_mw=amt))
    # bus loads: scenario change, consumer adjustments and buyer-side curtailment
    load_p = np.array(result.load_p, dtype=float)
    for p in schedule:
        if p.side == "consumer":
            load_p[case.bus_index(p.bus)] += pd.dp_plus[p.name] - pd.dp_minus[p.name]
    for c in contracts:
        d = pd.dp_ij.get(c.id)
        if d:
            load_p[case.bus_index(c.buyer_bus)] -= d["buyer"]
    load_q = np.array(result.load_q, dtype=float)
    buses = []
    for k, b in enumerate(case.buses):
        buses.append(replace(b, base_load_p=float(load_p[k]), base_load_q=float(load_q[k]),
                             v_set=float(result.v_set[b.id])))
    branches = tuple(replace(br, tap=float(result.taps[br.id])) if br.is_transformer else br
                     for br in case.branches)
    limits = effective_limits(case, result.scenario)
    branches = tuple(replace(br, flow_limit=limits[br.id]) for br in branches)
    new_case = replace(case, buses=tuple(buses), branches=branches)
    new_schedule = netmodel.MarketSchedule(tuple(parts))
    return new_case, new_schedule, new_contracts


def load_scenario(source):
    doc = json.loads(source) if isinstance(source, str) else dict(source)
    cur = doc.get("curtailment", {}) or {}
    overrides = {o["contract"]: o["mode"] for o in cur.get("overrides", [])}
    limits = {int(r["branch"]): float(r["limit_mw"]) for r in doc.get("branch_limits", [])}
    alloc = None
    if doc.get("load_allocation"):
        alloc = {int(r["bus"]): float(r["eta"]) for r in doc["load_allocation"]}
    return PScenario(
        name=doc.get("name", "scenario"),
        delta_p_sys=float(doc.get("delta_p_sys_mw", 0.0)),
        alpha=float(doc.get("alpha", 1.0)),
        mode=doc.get("mode", "normal"),
        curtailment_enabled=bool(cur.get("enabled", True)),
        curtailment_overrides=overrides,
        branch_limits=limits,
        load_allocation=alloc,
        q_load_model=doc.get("q_load_model"),
    )


def scenario_to_dict(sc):
    d = {"name": sc.name, "delta_p_sys_mw": sc.delta_p_sys, "alpha": sc.alpha, "mode": sc.mode,
         "curtailment": {"enabled": sc.curtailment_enabled,
                         "overrides": [{"contract": k, "mode": v}
                                       for k, v in sorted(sc.curtailment_overrides.items())]},
         "branch_limits": [{"branch": k, "limit_mw": v} for k, v in sorted(sc.branch_limits.items())]}
    if sc.q_load_model:
        d["q_load_model"] = sc.q_load_model
    if sc.load_allocation:
        d["load_allocation"] = [{"bus": k, "eta": v} for k, v in sorted(sc.load_allocation.items())]
    return d


def bundled_scenario(name):
    return load_scenario(netmodel.read_text(netmodel.bundled_path("scenarios", f"{name}.json")))


BUNDLED_SUITE = ("normal100", "line36", "line18", "voltage")


def _finite(v):
    v = float(v)
    return v if math.isfinite(v) else None


def result_to_dict(result, case):
    """Plain-data view of a dispatch result (the result JSON document)."""
    doc = {"scenario": scenario_to_dict(result.scenario), "converged": result.converged,
           "convergence": result.convergence, "iterations": result.outer_iterations,
           "message": result.message, "curtailment_used": result.curtailment_used,
           "audit": [{k: (_finite(v) if isinstance(v, (float, np.floating)) else v)
                      for k, v in entry.items()} for entry in result.audit]}
    pd = result.p
    if pd is None:
        return doc
    doc["p_dispatch"] = {
        nm: {"dp_plus": pd.dp_plus[nm], "dp_minus": pd.dp_minus[nm], "dp_res": pd.dp_res[nm],
             "dp_rep": pd.dp_rep[nm]} for nm in pd.dp_plus}
    doc["curtailment"] = {cid: dict(d) for cid, d in pd.dp_ij.items()}
    doc["costs"] = dict(pd.costs)
    doc["lambda"] = pd.lam
    if result.q is not None:
        q = result.q
        doc["q_dispatch"] = {
            "generators": {nm: {"dq_plus": q.dq_plus.get(nm, 0.0), "dq_minus": q.dq_minus.get(nm, 0.0)}
                           for nm in sorted(set(q.dq_plus) | set(q.dq_minus))},
            "taps": {str(k): v for k, v in (result.taps or {}).items()},
            "v_set": {str(k): v for k, v in (result.v_set or {}).items()
                      if case.bus(k).kind != "load"},
        }
    rep = result.prices
    if rep is not None:
        doc["prices"] = [{"bus": r["bus"], "lambda": r["lambda"], "loss": r["loss"],
                          "congestion": r["congestion"], "rho": r["rho"], "rho_q": r["rho_q"]}
                         for r in rep.rows()]
        doc["replacement_prices"] = rep.rho_rep
        doc["price_forms"] = {nm: {"form": f.form, "value": f.value, "bid": f.bid,
                                   "multiplier": f.multiplier, "pays": f.pays}
                              for nm, f in sorted(rep.forms.items())}
        doc["curtailment_cost"] = rep.curtailment_cost
    pf = result.final_pf
    limits = effective_limits(case, result.scenario)
    doc["flows"] = [{"branch": br.id, "from": br.from_bus, "to": br.to_bus,
                     "mw": float(pf.branch_flow_p[k]), "limit": _finite(limits[br.id]),
                     "dual": pd.mu_max.get(br.id, 0.0) - pd.mu_min.get(br.id, 0.0)}
                    for k, br in enumerate(case.branches)]
    doc["voltages"] = [{"bus": b, "v": float(v)} for b, v in zip(case.bus_ids, pf.v)]
    return doc


def lookup(doc, path):
    """Resolve ``a.b[key=value].c`` inside a result document."""
    cur = doc
    for seg in path.split("."):
        sel = None
        if "[" in seg and seg.endswith("]"):
            seg, sel = seg[:-1].split("[", 1)
        if seg:
            cur = cur[seg]
        if sel is not None:
            key, val = sel.split("=", 1)
            cur = next(item for item in cur if str(item[key]) == val)
    return cur


@dataclass
class SuiteEntry:
    name: str
    status: str                  # converged / max-iterations / infeasible / error
    result: DispatchResult | None = None
    document: dict | None = None
    error: str = ""
    mismatches: list = field(default_factory=list)
    checks: int = 0


@dataclass
class SuiteReport:
    entries: list
    sweep_csv: str | None = None

    @property
    def solver_failures(self):
        return [e for e in self.entries if e.status != CONVERGED]

    @property
    def mismatches(self):
        return [(e.name, m) for e in self.entries for m in e.mismatches]


def compare_expected(doc, expectations):
    """Check ``[{path, value, tol}]`` or ``[{path, min, max}]`` entries; returns mismatch strings."""
    out = []
    for exp in expectations:
        try:
            got = lookup(doc, exp["path"])
        except (KeyError, StopIteration, TypeError, ValueError):
            out.append(f"{exp['path']}: missing")
            continue
        if "value" not in exp:
            lo, hi = exp.get("min", -math.inf), exp.get("max", math.inf)
            if got is None or not lo <= float(got) <= hi:
                out.append(f"{exp['path']}: got {got}, expected within [{lo}, {hi}]")
            continue
        want, tol = exp["value"], float(exp.get("tol", 1e-6))
        if isinstance(want, bool) or not isinstance(want, (int, float)):
            if got != want:
                out.append(f"{exp['path']}: got {got!r}, expected {want!r}")
        elif got is None or abs(float(got) - float(want)) > tol:
            out.append(f"{exp['path']}: got {got}, expected {want} +/- {tol}")
    return out


def run_case_suite(scenarios, case, schedule, bids, contracts, options=None, expected=None):
    """Run each scenario in isolation; one failure never stops the rest.

    ``scenarios`` holds PScenario objects or (name, PScenario) pairs;
    ``expected`` maps scenario name to a list of ``{path, value, tol}``.
    """
    entries = []
    expected = expected or {}
    for sc in scenarios:
        name, sc = (sc if isinstance(sc, tuple) else (sc.name, sc))
        try:
            res = run_dispatch(case, schedule, bids, contracts, sc, options)
            doc = result_to_dict(res, case)
            entry = SuiteEntry(name, res.convergence, res, doc, res.message)
        except Exception as exc:       # isolate: report and continue with the next scenario
            log.exception("scenario %s failed", name)
            entries.append(SuiteEntry(name, "error", error=str(exc)))
            continue
        checks = expected.get(name, [])
        entry.checks = len(checks)
        entry.mismatches = compare_expected(doc, checks)
        entries.append(entry)
    return SuiteReport(entries)


def alpha_sweep(scenario, case, schedule, bids, contracts, alphas=(0.0, 0.5, 1.0), options=None):
    """Re-run one scenario over several alphas; returns the suite and a merged LMP CSV."""
    runs = [(f"{scenario.name}@alpha={a:g}", replace(scenario, alpha=float(a))) for a in alphas]
    report = run_case_suite(runs, case, schedule, bids, contracts, options)
    header = ["bus"] + [f"rho_alpha_{a:g}" for a in alphas]
    lines = [",".join(header)]
    for k, bus in enumerate(case.bus_ids):
        row = [str(bus)]
        for e in report.entries:
            ok = e.result is not None and e.result.prices is not None
            row.append(f"{e.result.prices.rho_p[k]:.6g}" if ok else "")
        lines.append(",".join(row))
    report.sweep_csv = "\n".join(lines) + "\n"
    return report
