"""Active-power balancing sub-problem.

The LP decides total adjustments relative to the market schedule (not
increments per outer iteration), linearised around the current AC operating
point:

* one system balance row, loss-weighted by the marginal loss factors, whose
  dual is the system lambda;
* one nodal row per non-slack bus tying the angle corrections to the
  loss-corrected injection change (informational: angles carry no cost);
* the replacement row ``sum(rep) - alpha * sum(res) = 0``;
* branch rows ``f_k + GSF (u - u_k)`` within the flow limits;
* per-participant headroom / floor rows.

Replacement reserve is a capacity product: it consumes headroom but injects
no energy, so it never appears in a balance row.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .lpsolver import LinearProgram

log = logging.getLogger(__name__)

MODES = ("normal", "congestion")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class PScenario:
    name: str = "scenario"
    delta_p_sys: float = 0.0
    alpha: float = 1.0
    mode: str = "normal"
    curtailment_enabled: bool = True
    curtailment_overrides: dict = field(default_factory=dict)   # contract id -> mode
    branch_limits: dict = field(default_factory=dict)           # branch id -> MW
    load_allocation: dict | None = None                          # bus id -> eta
    q_load_model: str | None = None                              # overrides the run option

    def __post_init__(self):
        if self.q_load_model not in (None, "constant-pf", "constant-q"):
            raise ScenarioError(f"unknown reactive load model {self.q_load_model!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ScenarioError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.mode not in MODES:
            raise ScenarioError(f"mode must be one of {MODES}, got {self.mode!r}")

    def load_change(self, case):
        """Per-bus load change BL_i = eta_i * delta_p_sys (MW)."""
        if self.load_allocation:
            raw = np.array([float(self.load_allocation.get(b, 0.0)) for b in case.bus_ids])
            if np.any(raw < 0) or raw.sum() <= 0:
                raise ScenarioError("load allocation factors must be non-negative, not all zero")
            eta = raw / raw.sum()
        else:
            eta = np.array(case.load_allocation())
        return eta * self.delta_p_sys

    def with_alpha(self, alpha):
        from dataclasses import replace
        return replace(self, alpha=alpha)


@dataclass(frozen=True)
class LinearizationPoint:
    """Where the LP is linearised: accumulated dispatch and AC mismatch."""
    u_bus: np.ndarray              # MW, signed injection change from dispatch per bus
    mismatch_mw: float             # AC slack output minus what the dispatch assigns it
    loss_change_mw: float          # AC losses minus losses at the unloaded schedule

    @classmethod
    def initial(cls, case, delta_p_sys):
        return cls(np.zeros(case.n_bus), float(delta_p_sys), 0.0)


@dataclass(frozen=True)
class Curtailment:
    """How one contract's curtailment variable enters the nodal balances."""
    contract: object
    mode: str
    coefs: dict                    # bus id -> injection coefficient


def _both_sides(c):
    return Curtailment(c, "both-sides", {c.seller_bus: -1.0, c.buyer_bus: 1.0})


def apply_single_side_curtailment(contracts, side_selection):
    """Curtailment fragments for contracts cut on one side only.

    ``side_selection`` maps contract id to ``"seller-only"`` or
    ``"buyer-only"``. The untouched side keeps its schedule, so whatever the
    curtailed side stops injecting (or consuming) has to be covered by the
    other balancing resources.
    """
    out = []
    for c in contracts:
        mode = side_selection.get(c.id, c.curtailment_mode)
        if mode == "both-sides":
            raise ScenarioError(f"contract {c.id}: both-sides curtailment is not single-sided")
        if mode == "seller-only":
            out.append(Curtailment(c, mode, {c.seller_bus: -1.0}))
        elif mode == "buyer-only":
            out.append(Curtailment(c, mode, {c.buyer_bus: 1.0}))
        else:
            raise ScenarioError(f"contract {c.id}: unknown curtailment mode {mode!r}")
    return out


def curtailment_fragments(contracts, overrides=None):
    overrides = overrides or {}
    out = []
    for c in contracts:
        mode = overrides.get(c.id, c.curtailment_mode)
        out.append(_both_sides(c) if mode == "both-sides"
                   else apply_single_side_curtailment([c], {c.id: mode})[0])
    return out


@dataclass
class PVar:
    name: str
    kind: str                      # dp_plus, dp_minus, dp_res, dp_rep, dp_ij, theta
    owner: str                     # participant name, contract id or bus label
    price: float
    inj: dict                      # bus id -> injection coefficient
    step: int = 0


@dataclass
class PVarMap:
    vars: list
    bus_ids: list
    sys_row: int
    nodal_rows: dict               # bus id -> eq row
    rep_row: int | None
    branch_rows: dict              # branch id -> ineq row
    head_rows: dict                # participant -> headroom inequality row
    floor_rows: dict               # participant -> ineq row (decrement + curtailment)
    theta_vars: dict               # bus id -> var index
    loss_sens: np.ndarray
    flow_sens: np.ndarray
    point: LinearizationPoint
    scenario: PScenario
    curtailments: list
    participants: dict             # name -> Participant
    branch_ids: list
    branch_flow0: np.ndarray
    branch_limits: dict
    U: np.ndarray = None           # u_bus = U @ x

    def index(self, name):
        for k, v in enumerate(self.vars):
            if v.name == name:
                return k
        raise KeyError(name)

    def of_kind(self, kind):
        return [k for k, v in enumerate(self.vars) if v.kind == kind]


def _signed(part):
    """Injection sign of an increase in the participant's own quantity."""
    return 1.0 if part.side == "generator" else -1.0


def effective_limits(case, scenario):
    lims = {br.id: br.flow_limit for br in case.branches}
    for bid, mw in scenario.branch_limits.items():
        if bid not in lims:
            raise ScenarioError(f"scenario references unknown branch {bid}")
        lims[bid] = float(mw)
    return lims


def build_p_subproblem(case, schedule, bids, contracts, scenario, sens, point=None,
                       curtailment=False):
    """Assemble the P sub-problem LP and the map needed to read it back."""
    point = point or LinearizationPoint.initial(case, scenario.delta_p_sys)
    for cid in scenario.curtailment_overrides:
        if cid not in {c.id for c in contracts}:
            raise ScenarioError(f"scenario references unknown contract {cid}")
    lims = effective_limits(case, scenario)
    use_curtail = curtailment and scenario.mode == "congestion" and scenario.curtailment_enabled
    sold = {}
    for c in contracts:
        sold[c.seller_bus] = sold.get(c.seller_bus, 0.0) + c.amount_mw

    variables, lo, hi = [], [], []

    def add(var, lower, upper):
        variables.append(var)
        lo.append(lower)
        hi.append(upper)
        return len(variables) - 1

    parts = {p.name: p for p in schedule}
    for p in schedule:
        b = bids.of(p.name)
        sgn = _signed(p)
        head = p.p_max - p.p0 - p.reserve_mw
        if p.side == "generator":
            floor = p.p0 - max(sold.get(p.bus, 0.0), p.p_min)
        else:
            floor = p.p0 - p.p_min
        for k, (q, price) in enumerate(b.incr.blocks(head)):
            add(PVar(f"{p.name}.dp_plus[{k}]", "dp_plus", p.name, price, {p.bus: sgn}, k), 0.0, q)
        for k, (q, price) in enumerate(b.decr.blocks(floor)):
            add(PVar(f"{p.name}.dp_minus[{k}]", "dp_minus", p.name, price, {p.bus: -sgn}, k), 0.0, q)
        if p.reserve_mw > 0 and b.reserve_energy_price is not None:
            add(PVar(f"{p.name}.dp_res", "dp_res", p.name, b.reserve_energy_price,
                     {p.bus: sgn}), 0.0, p.reserve_mw)
        if b.reserve_capacity_price is not None:
            # kept at alpha = 0 too; the replacement row then pins it to zero
            add(PVar(f"{p.name}.dp_rep", "dp_rep", p.name, b.reserve_capacity_price, {}),
                0.0, max(head, 0.0))

    curtailments = curtailment_fragments(contracts, scenario.curtailment_overrides) if use_curtail else []
    for cf in curtailments:
        add(PVar(f"{cf.contract.id}.dp_ij", "dp_ij", cf.contract.id, cf.contract.curtail_price,
                 dict(cf.coefs)), 0.0, cf.contract.amount_mw)

    s = case.slack_index
    theta_vars = {}
    for k, bus in enumerate(case.bus_ids):
        if k == s:
            continue
        theta_vars[bus] = add(PVar(f"theta[{bus}]", "theta", f"bus {bus}", 0.0, {}), -math.inf, math.inf)

    n = len(variables)
    idx = {bus: k for k, bus in enumerate(case.bus_ids)}
    U = np.zeros((case.n_bus, n))            # u_bus = U @ x
    for j, v in enumerate(variables):
        for bus, coef in v.inj.items():
            U[idx[bus], j] += coef
    ls = np.asarray(sens.loss_sens)
    gsf = np.asarray(sens.flow_sens)
    uk = np.asarray(point.u_bus, dtype=float)

    # equality rows: system balance, nodal rows, replacement
    A_eq, b_eq, eq_names = [], [], []
    A_eq.append((1.0 - ls) @ U)
    b_eq.append(point.mismatch_mw + float((1.0 - ls) @ uk))
    eq_names.append("system")
    nodal_rows = {}
    bp = np.asarray(sens.bprime) * case.base_mva
    nonslack = [bus for k, bus in enumerate(case.bus_ids) if k != s]
    for r, bus in enumerate(nonslack):
        row = (1.0 - ls[idx[bus]]) * U[idx[bus]].copy()
        for cidx, bus2 in enumerate(nonslack):
            row[theta_vars[bus2]] -= bp[r, cidx]
        nodal_rows[bus] = len(A_eq)
        A_eq.append(row)
        b_eq.append(0.0)
        eq_names.append(f"node[{bus}]")
    rep_row = None
    rep_idx = [j for j, v in enumerate(variables) if v.kind == "dp_rep"]
    res_idx = [j for j, v in enumerate(variables) if v.kind == "dp_res"]
    if rep_idx or res_idx:
        row = np.zeros(n)
        row[rep_idx] = 1.0
        row[res_idx] = -scenario.alpha
        rep_row = len(A_eq)
        A_eq.append(row)
        b_eq.append(0.0)
        eq_names.append("replacement")

    A_in, lo_in, hi_in, in_names = [], [], [], []
    branch_rows = {}
    for l, br in enumerate(case.branches):
        lim = lims[br.id]
        if not math.isfinite(lim):
            continue
        row = gsf[l] @ U
        shift = float(sens.branch_flow_p[l] - gsf[l] @ uk)
        branch_rows[br.id] = len(A_in)
        A_in.append(row)
        lo_in.append(-lim - shift)
        hi_in.append(lim - shift)
        in_names.append(f"branch[{br.id}]")
    head_rows, floor_rows = {}, {}
    for p in schedule:
        cols = [j for j, v in enumerate(variables) if v.owner == p.name and v.kind in ("dp_plus", "dp_rep")]
        if cols:
            row = np.zeros(n)
            row[cols] = 1.0
            head_rows[p.name] = len(A_in)
            A_in.append(row)
            lo_in.append(-math.inf)
            hi_in.append(p.p_max - p.p0 - p.reserve_mw)
            in_names.append(f"headroom[{p.name}]")
        cut = [j for j, v in enumerate(variables)
               if v.kind == "dp_ij" and v.inj.get(p.bus, 0.0) < 0 and p.side == "generator"]
        if cut:
            row = np.zeros(n)
            row[cut] = 1.0
            row[[j for j, v in enumerate(variables) if v.owner == p.name and v.kind == "dp_minus"]] = 1.0
            floor_rows[p.name] = len(A_in)
            A_in.append(row)
            lo_in.append(-math.inf)
            hi_in.append(p.p0 - p.p_min)
            in_names.append(f"floor[{p.name}]")

    lp = LinearProgram(
        c=np.array([v.price for v in variables]),
        A_eq=np.array(A_eq), b_eq=np.array(b_eq),
        A_ineq=np.array(A_in).reshape(-1, n), lo_ineq=np.array(lo_in), hi_ineq=np.array(hi_in),
        lo=np.array(lo), hi=np.array(hi),
        names=[v.name for v in variables], eq_names=eq_names, ineq_names=in_names,
    )
    vmap = PVarMap(variables, list(case.bus_ids), 0, nodal_rows, rep_row, branch_rows,
                   head_rows, floor_rows, theta_vars, ls, gsf, point, scenario, curtailments,
                   parts, [br.id for br in case.branches], np.asarray(sens.branch_flow_p), lims, U)
    log.debug("P sub-problem: %d variables, %d equality rows, %d inequality rows",
              n, len(b_eq), len(lo_in))
    return lp, vmap


class DispatchError(RuntimeError):
    def __init__(self, message, status=None, certificate=None):
        super().__init__(message)
        self.status = status
        self.certificate = certificate


@dataclass
class PDispatch:
    dp_plus: dict
    dp_minus: dict
    dp_res: dict
    dp_rep: dict
    dp_ij: dict                    # contract id -> {"seller": MW, "buyer": MW}
    dtheta: dict                   # bus id -> rad
    u_bus: np.ndarray              # MW per bus, signed injection change
    dp_loss_bus: np.ndarray
    dp_loss: float                 # predicted total loss change from the unloaded schedule
    costs: dict
    lam: float
    mu_max: dict                   # branch id -> $/MWh (upper flow limit active)
    mu_min: dict
    mu_plus: dict                  # participant -> headroom multiplier
    mu_minus: dict
    mu_res: dict
    mu_rep: float | None
    mu_ij: dict
    objective: float
    var_values: dict               # variable name -> MW
    var_mu: dict                   # variable name -> own bound/row multiplier
    vmap: PVarMap = field(repr=False, default=None)
    lp: LinearProgram = field(repr=False, default=None)
    solution: object = field(repr=False, default=None)

    @property
    def total_rep(self):
        return float(sum(self.dp_rep.values()))

    @property
    def total_res(self):
        return float(sum(self.dp_res.values()))

    def participant_delta(self, name):
        """Net signed change of the participant's own quantity (MW)."""
        return (self.dp_plus.get(name, 0.0) - self.dp_minus.get(name, 0.0)
                + self.dp_res.get(name, 0.0))


SNAP_TOL = 1e-9


def extract_p_dispatch(sol, vmap, lp=None):
    """Map an optimal LP solution back onto participants, contracts and branches."""
    if not sol.optimal:
        raise DispatchError(f"P sub-problem is {sol.status}", sol.status, sol.certificate)
    x = np.array(sol.x, dtype=float)
    if lp is not None:
        # solver round-off next to a bound is reported as the bound itself
        for bound in (lp.lo, lp.hi):
            near = np.isfinite(bound) & (np.abs(x - bound) <= SNAP_TOL * (1.0 + np.abs(bound)))
            x[near] = bound[near]
    names = list(vmap.participants)
    sums = {k: {nm: 0.0 for nm in names} for k in ("dp_plus", "dp_minus", "dp_res", "dp_rep")}
    dp_ij = {}
    costs = {"c_p1": 0.0, "c_p2": 0.0, "c_p3": 0.0, "c_p4": 0.0}
    bucket = {"dp_plus": "c_p1", "dp_minus": "c_p1", "dp_res": "c_p2", "dp_ij": "c_p3", "dp_rep": "c_p4"}
    for j, v in enumerate(vmap.vars):
        val = float(max(x[j], 0.0)) if v.kind != "theta" else float(x[j])
        if v.kind in sums:
            sums[v.kind][v.owner] += val
        elif v.kind == "dp_ij":
            cf = next(c for c in vmap.curtailments if c.contract.id == v.owner)
            dp_ij[v.owner] = {
                "seller": val if cf.contract.seller_bus in v.inj else 0.0,
                "buyer": val if cf.contract.buyer_bus in v.inj else 0.0,
                "mode": cf.mode,
            }
        if v.kind in bucket:
            costs[bucket[v.kind]] += v.price * val
    costs["total"] = sum(costs.values())

    y_eq, y_in = np.asarray(sol.y_eq), np.asarray(sol.y_ineq)
    lam = float(y_eq[vmap.sys_row])
    mu_max, mu_min = {}, {}
    for bid, r in vmap.branch_rows.items():
        mu_max[bid] = float(max(-y_in[r], 0.0))
        mu_min[bid] = float(max(y_in[r], 0.0))

    # multiplier of every variable's own limits: everything except the balance rows
    A_eq = lp.A_eq if lp is not None else None
    own = np.asarray(sol.z_hi) - np.asarray(sol.z_lo)
    if lp is not None:
        other_eq = [r for r in range(len(y_eq)) if r == vmap.rep_row]
        other_in = list(vmap.head_rows.values()) + list(vmap.floor_rows.values())
        own = own - A_eq[other_eq].T @ y_eq[other_eq] - lp.A_ineq[other_in].T @ y_in[other_in]
    var_values = {v.name: float(x[j]) for j, v in enumerate(vmap.vars)}
    var_mu = {v.name: float(own[j]) for j, v in enumerate(vmap.vars)}

    z_hi = np.asarray(sol.z_hi)
    mu_plus = {nm: float(max(-y_in[r], 0.0)) for nm, r in vmap.head_rows.items()}
    mu_minus, mu_res, mu_ij = {}, {}, {}
    for j, v in enumerate(vmap.vars):
        if v.kind == "dp_minus":
            extra = max(-y_in[vmap.floor_rows[v.owner]], 0.0) if v.owner in vmap.floor_rows else 0.0
            mu_minus[v.owner] = max(mu_minus.get(v.owner, 0.0), float(z_hi[j]) + float(extra))
        elif v.kind == "dp_res":
            mu_res[v.owner] = float(z_hi[j])
        elif v.kind == "dp_ij":
            mu_ij[v.owner] = float(z_hi[j])
    mu_rep = float(y_eq[vmap.rep_row]) if vmap.rep_row is not None else None

    u_bus = vmap.U @ x
    ls = vmap.loss_sens
    dp_loss_bus = ls * u_bus
    pt = vmap.point
    dp_loss = float(pt.loss_change_mw + ls @ (u_bus - pt.u_bus))
    dtheta = {bus: float(x[j]) for bus, j in vmap.theta_vars.items()}
    return PDispatch(
        dp_plus=sums["dp_plus"], dp_minus=sums["dp_minus"], dp_res=sums["dp_res"],
        dp_rep=sums["dp_rep"], dp_ij=dp_ij, dtheta=dtheta, u_bus=u_bus,
        dp_loss_bus=dp_loss_bus, dp_loss=dp_loss, costs=costs, lam=lam,
        mu_max=mu_max, mu_min=mu_min, mu_plus=mu_plus, mu_minus=mu_minus, mu_res=mu_res,
        mu_rep=mu_rep, mu_ij=mu_ij, objective=float(sol.obj), var_values=var_values,
        var_mu=var_mu, vmap=vmap, lp=lp, solution=sol,
    )


def system_balance_residual(pd, scenario):
    """Sum of dispatch injections minus loss change minus the load change (MW)."""
    return float(pd.u_bus.sum() - pd.dp_loss - scenario.delta_p_sys)
