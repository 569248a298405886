"""Newton-Raphson AC power flow in polar coordinates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


class PowerFlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class PowerFlowOptions:
    tol: float = 1e-6          # p.u., infinity norm of the mismatch
    max_iter: int = 30


@dataclass
class PowerFlowSolution:
    bus_ids: list
    v: np.ndarray
    theta: np.ndarray
    p_inj: np.ndarray            # MW
    q_inj: np.ndarray            # MVAr
    branch_flow_p: np.ndarray    # MW, sending end
    branch_flow_p_to: np.ndarray
    branch_flow_q: np.ndarray
    branch_flow_q_to: np.ndarray
    total_loss: float            # MW
    converged: bool
    iterations: int
    base_mva: float
    taps: np.ndarray
    mismatch_history: list = field(default_factory=list)

    def index(self, bus_id):
        return self.bus_ids.index(bus_id)

    @property
    def v_complex(self):
        return self.v * np.exp(1j * self.theta)


def branch_admittances(case, taps=None):
    """Per-branch (Yff, Yft, Ytf, Ytt) arrays, tap on the from side."""
    nl = len(case.branches)
    r = np.array([br.r for br in case.branches])
    x = np.array([br.x for br in case.branches])
    bc = np.array([br.b_shunt for br in case.branches])
    if taps is None:
        taps = np.array([br.tap if br.is_transformer else 1.0 for br in case.branches])
    ys = 1.0 / (r + 1j * x)
    ytt = ys + 0.5j * bc
    yff = ytt / taps**2
    yft = -ys / taps
    ytf = -ys / taps
    assert yff.shape == (nl,)
    return yff, yft, ytf, ytt


def make_ybus(case, taps=None):
    n = case.n_bus
    yff, yft, ytf, ytt = branch_admittances(case, taps)
    f = np.array([case.bus_index(br.from_bus) for br in case.branches], dtype=int)
    t = np.array([case.bus_index(br.to_bus) for br in case.branches], dtype=int)
    Y = np.zeros((n, n), dtype=complex)
    np.add.at(Y, (f, f), yff)
    np.add.at(Y, (f, t), yft)
    np.add.at(Y, (t, f), ytf)
    np.add.at(Y, (t, t), ytt)
    ysh = np.array([(b.gs + 1j * b.bs) / case.base_mva for b in case.buses])
    Y[np.diag_indices(n)] += ysh
    return Y


def bus_types(case, pv=None):
    """Return (slack index, pv indices, pq indices)."""
    s = case.slack_index
    if pv is None:
        pv = [k for k, b in enumerate(case.buses) if b.kind in ("generator", "mixed") and k != s]
    else:
        pv = sorted(case.bus_index(b) for b in pv if case.bus_index(b) != s)
    pq = [k for k in range(case.n_bus) if k != s and k not in set(pv)]
    return s, np.array(pv, dtype=int), np.array(pq, dtype=int)


def injection_derivatives(Y, V):
    """dS/dVm and dS/dVa of the complex bus injections."""
    I = Y @ V
    Vnorm = V / np.abs(V)
    dS_dVm = np.diag(V) @ np.conj(Y @ np.diag(Vnorm)) + np.diag(np.conj(I) * Vnorm)
    dS_dVa = 1j * np.diag(V) @ np.conj(np.diag(I) - Y @ np.diag(V))
    return dS_dVm, dS_dVa


def solve_power_flow(case, p_inj, q_inj, options=None, *, pv=None, v_set=None,
                     v0=None, theta0=None, taps=None):
    """Solve the AC power flow for scheduled injections (MW / MVAr per bus).

    ``p_inj`` at the slack and ``q_inj`` at PV buses are ignored. Divergence
    returns ``converged=False``; a singular Jacobian raises PowerFlowError.
    """
    options = options or PowerFlowOptions()
    base = case.base_mva
    n = case.n_bus
    s, pvi, pqi = bus_types(case, pv)
    pvpq = np.concatenate([pvi, pqi]).astype(int)
    if taps is None:
        taps = np.array([br.tap if br.is_transformer else 1.0 for br in case.branches])
    Y = make_ybus(case, taps)

    vm = np.ones(n) if v0 is None else np.array(v0, dtype=float)
    va = np.zeros(n) if theta0 is None else np.array(theta0, dtype=float)
    vs = np.array([b.v_set for b in case.buses])
    if v_set is not None:
        for bus_id, val in v_set.items():
            vs[case.bus_index(bus_id)] = val
    vm[s] = vs[s]
    vm[pvi] = vs[pvi]
    sbus = (np.asarray(p_inj, dtype=float) + 1j * np.asarray(q_inj, dtype=float)) / base

    V = vm * np.exp(1j * va)
    history = []
    converged = False
    it = 0
    while True:
        mis = V * np.conj(Y @ V) - sbus
        F = np.concatenate([mis[pvpq].real, mis[pqi].imag])
        norm = float(np.max(np.abs(F))) if F.size else 0.0
        history.append(norm)
        if norm < options.tol:
            converged = True
            break
        if it >= options.max_iter or not np.isfinite(norm):
            break
        it += 1
        dS_dVm, dS_dVa = injection_derivatives(Y, V)
        J = np.block([
            [dS_dVa[np.ix_(pvpq, pvpq)].real, dS_dVm[np.ix_(pvpq, pqi)].real],
            [dS_dVa[np.ix_(pqi, pvpq)].imag, dS_dVm[np.ix_(pqi, pqi)].imag],
        ])
        try:
            dx = sla.solve(J, -F)
        except (sla.LinAlgError, ValueError) as exc:
            raise PowerFlowError(f"singular Jacobian at iteration {it}") from exc
        npv = len(pvpq)
        va[pvpq] += dx[:npv]
        vm[pqi] += dx[npv:]
        V = vm * np.exp(1j * va)

    return _solution(case, V, Y, taps, converged, it, history)


def _solution(case, V, Y, taps, converged, iterations, history):
    base = case.base_mva
    S = V * np.conj(Y @ V) * base
    yff, yft, ytf, ytt = branch_admittances(case, taps)
    f = np.array([case.bus_index(br.from_bus) for br in case.branches], dtype=int)
    t = np.array([case.bus_index(br.to_bus) for br in case.branches], dtype=int)
    sf = V[f] * np.conj(yff * V[f] + yft * V[t]) * base
    st = V[t] * np.conj(ytf * V[f] + ytt * V[t]) * base
    return PowerFlowSolution(
        bus_ids=list(case.bus_ids), v=np.abs(V), theta=np.angle(V),
        p_inj=S.real, q_inj=S.imag,
        branch_flow_p=sf.real, branch_flow_p_to=st.real,
        branch_flow_q=sf.imag, branch_flow_q_to=st.imag,
        total_loss=float(S.real.sum()), converged=converged, iterations=iterations,
        base_mva=base, taps=np.array(taps, dtype=float), mismatch_history=history,
    )


def branch_flow(solution, branch):
    """(p_from, p_to, q_from, q_to) in MW/MVAr for one branch of a solved case."""
    V = solution.v_complex
    i, j = solution.index(branch.from_bus), solution.index(branch.to_bus)
    t = branch.tap if branch.is_transformer else 1.0
    ys = 1.0 / (branch.r + 1j * branch.x)
    ytt = ys + 0.5j * branch.b_shunt
    sf = V[i] * np.conj(ytt / t**2 * V[i] - ys / t * V[j]) * solution.base_mva
    st = V[j] * np.conj(-ys / t * V[i] + ytt * V[j]) * solution.base_mva
    return float(sf.real), float(st.real), float(sf.imag), float(st.imag)


def scheduled_injections(case, gen_p, gen_q=None, load_p=None, load_q=None):
    """Net bus injections from per-bus generation and load vectors (MW/MVAr)."""
    n = case.n_bus
    load_p = np.array([b.base_load_p for b in case.buses]) if load_p is None else np.asarray(load_p)
    load_q = np.array([b.base_load_q for b in case.buses]) if load_q is None else np.asarray(load_q)
    gen_q = np.zeros(n) if gen_q is None else np.asarray(gen_q)
    return np.asarray(gen_p) - load_p, gen_q - load_q


def dump_solution(solution, case):
    return {
        "converged": solution.converged,
        "iterations": solution.iterations,
        "total_loss_mw": solution.total_loss,
        "buses": [{"bus": b, "v": float(v), "theta_deg": float(np.degrees(a)),
                   "p_mw": float(p), "q_mvar": float(q)}
                  for b, v, a, p, q in zip(solution.bus_ids, solution.v, solution.theta,
                                           solution.p_inj, solution.q_inj)],
        "branches": [{"branch": br.id, "from": br.from_bus, "to": br.to_bus,
                      "p_from_mw": float(pf), "p_to_mw": float(pt), "q_from_mvar": float(qf)}
                     for br, pf, pt, qf in zip(case.branches, solution.branch_flow_p,
                                               solution.branch_flow_p_to, solution.branch_flow_q)],
    }
