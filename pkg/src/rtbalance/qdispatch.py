"""Reactive-power and transformer-tap sub-problem.

The LP decides corrections from the current AC operating point:

    dQgen_i = base * V_i * sum_j B''_ij dV_j + sum_k dQ_i/dt_k dt_k

with voltage bounds ``V^min - V^0 <= dV <= V^max - V^0``. When every voltage
is inside its limits the zero correction is optimal, so the sub-problem only
acts on violations. The dual of each bus row is the reactive nodal price.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .lpsolver import LinearProgram

log = logging.getLogger(__name__)

DEFAULT_Q_PRICE = 1e-4        # $/MVArh when no reactive bid is supplied
DEFAULT_TAP_PRICE = 1e-4      # $ per tap step
TAP_STEP = 0.00625


class QDispatchError(RuntimeError):
    def __init__(self, message, status=None, certificate=None):
        super().__init__(message)
        self.status = status
        self.certificate = certificate


@dataclass(frozen=True)
class QPoint:
    """Reactive state of the current AC operating point."""
    q_gen: dict                    # participant -> MVAr
    taps: dict                     # transformer branch id -> ratio

    @classmethod
    def from_pf(cls, case, schedule, pf, load_q):
        t = {br.id: float(pf.taps[k]) for k, br in enumerate(case.branches) if br.is_transformer}
        return cls(generator_q(case, schedule, pf, load_q), t)


def generator_q(case, schedule, pf, load_q):
    """Reactive output of each generator: network injection plus local load."""
    out = {}
    for p in schedule:
        if p.side != "generator":
            continue
        k = case.bus_index(p.bus)
        share = len(schedule.at_bus(p.bus, "generator"))
        out[p.name] = float(pf.q_inj[k] + load_q[k]) / share
    return out


@dataclass
class QVarMap:
    names: list
    kinds: list
    owners: list
    bus_rows: dict                 # bus id -> eq row
    dv_vars: dict                  # bus id -> var index
    point: QPoint
    v0: np.ndarray


@dataclass
class QDispatch:
    dq_plus: dict
    dq_minus: dict
    dt_plus: dict
    dt_minus: dict
    dv: dict                       # bus id -> p.u.
    prices: dict                   # bus id -> $/MVArh
    objective: float
    status: str = "optimal"
    vmap: QVarMap = field(repr=False, default=None)
    lp: LinearProgram = field(repr=False, default=None)
    solution: object = field(repr=False, default=None)

    def tap_changes(self):
        return {bid: self.dt_plus[bid] - self.dt_minus[bid] for bid in self.dt_plus}

    def accumulate(self, other):
        """Sum of two consecutive corrections; prices are taken from ``other``."""
        def add(a, b):
            return {k: a.get(k, 0.0) + b.get(k, 0.0) for k in set(a) | set(b)}
        return QDispatch(add(self.dq_plus, other.dq_plus), add(self.dq_minus, other.dq_minus),
                         add(self.dt_plus, other.dt_plus), add(self.dt_minus, other.dt_minus),
                         add(self.dv, other.dv), dict(other.prices), other.objective, other.status,
                         other.vmap, other.lp, other.solution)


def build_q_subproblem(case, schedule, bids, sens, point, v0=None, regularization=DEFAULT_Q_PRICE,
                       tap_step=TAP_STEP):
    """Assemble the reactive LP around the current AC point."""
    v0 = np.asarray(sens.v if v0 is None else v0, dtype=float)
    base = case.base_mva
    names, kinds, owners, c, lo, hi = [], [], [], [], [], []
    cols = {}                               # bus id -> list of (var index, coefficient)

    def add(name, kind, owner, cost, lower, upper, bus=None, coef=0.0):
        names.append(name)
        kinds.append(kind)
        owners.append(owner)
        c.append(cost)
        lo.append(lower)
        hi.append(upper)
        if bus is not None:
            cols.setdefault(bus, []).append((len(names) - 1, coef))
        return len(names) - 1

    for p in schedule:
        if p.side != "generator":
            continue
        b = bids.of(p.name)
        wp = b.w_plus if b.w_plus is not None else 0.0
        wm = b.w_minus if b.w_minus is not None else 0.0
        q0 = point.q_gen[p.name]
        add(f"{p.name}.dq_plus", "dq_plus", p.name, wp + regularization, 0.0,
            max(p.q_max - q0, 0.0), p.bus, 1.0)
        add(f"{p.name}.dq_minus", "dq_minus", p.name, wm + regularization, 0.0,
            max(q0 - p.q_min, 0.0), p.bus, -1.0)

    trs = [br for br in case.branches if br.is_transformer]
    tap_cols = {}
    for br in trs:
        price = bids.tap_prices.get(br.id, DEFAULT_TAP_PRICE) / tap_step
        t0 = point.taps[br.id]
        up = add(f"tap[{br.id}].dt_plus", "dt_plus", br.id, price, 0.0, max(br.tap_max - t0, 0.0))
        dn = add(f"tap[{br.id}].dt_minus", "dt_minus", br.id, price, 0.0, max(t0 - br.tap_min, 0.0))
        tap_cols[br.id] = (up, dn)

    dv_vars = {}
    for k, bus in enumerate(case.bus_ids):
        bb = case.buses[k]
        # a bound that excludes zero forces the correction
        dv_vars[bus] = add(f"dv[{bus}]", "dv", bus, 0.0, bb.v_min - v0[k], bb.v_max - v0[k])

    n = len(names)
    B = np.asarray(sens.bdoubleprime_full)
    T = np.asarray(sens.tap_sens)
    A = np.zeros((case.n_bus, n))
    rhs = np.zeros(case.n_bus)
    dv_idx = [dv_vars[b] for b in case.bus_ids]
    for k, bus in enumerate(case.bus_ids):
        for j, coef in cols.get(bus, []):
            A[k, j] += coef
        A[k, dv_idx] -= base * v0[k] * B[k]
        for col, br in enumerate(trs):
            up, dn = tap_cols[br.id]
            A[k, up] -= T[k, col]
            A[k, dn] += T[k, col]

    lp = LinearProgram(np.array(c), A, rhs, np.zeros((0, n)), np.zeros(0), np.zeros(0),
                       np.array(lo), np.array(hi), names,
                       [f"qbal[{b}]" for b in case.bus_ids], [])
    vmap = QVarMap(names, kinds, owners, {b: k for k, b in enumerate(case.bus_ids)}, dv_vars,
                   point, v0)
    return lp, vmap


def extract_q_dispatch(sol, vmap, lp=None):
    if not sol.optimal:
        raise QDispatchError(f"Q sub-problem is {sol.status}", sol.status, sol.certificate)
    out = {"dq_plus": {}, "dq_minus": {}, "dt_plus": {}, "dt_minus": {}}
    dv = {}
    for j, (nm, kind, owner) in enumerate(zip(vmap.names, vmap.kinds, vmap.owners)):
        val = float(sol.x[j])
        if kind == "dv":
            dv[owner] = val
        else:
            out[kind][owner] = max(val, 0.0)
    prices = {bus: float(sol.y_eq[r]) for bus, r in vmap.bus_rows.items()}
    return QDispatch(out["dq_plus"], out["dq_minus"], out["dt_plus"], out["dt_minus"], dv, prices,
                     float(sol.obj), sol.status, vmap, lp, sol)


def voltage_violation(case, v):
    worst = 0.0
    for bb, vv in zip(case.buses, v):
        worst = max(worst, bb.v_min - vv, vv - bb.v_max)
    return worst


def has_voltage_violation(case, v, tol=0.0):
    return voltage_violation(case, v) > tol


def nearest_step(t, t_ref, step=TAP_STEP):
    """Round a tap ratio to the physical step grid anchored at ``t_ref``."""
    return t_ref + step * math.floor((t - t_ref) / step + 0.5)
