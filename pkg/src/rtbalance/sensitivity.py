"""Linearisation at an AC operating point.

B' / B'' matrices, marginal loss factors, DC shift factors and transformer
tap sensitivities of the reactive injections.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .powerflow import branch_admittances, bus_types, injection_derivatives, make_ybus


class SensitivityError(RuntimeError):
    pass


@dataclass(frozen=True)
class SensitivityBundle:
    bus_ids: list
    slack_index: int
    nonslack: np.ndarray          # bus positions kept in the reduced B'
    bprime: np.ndarray            # reduced B', p.u.
    bdoubleprime: np.ndarray      # reduced to PQ buses, p.u.
    bdoubleprime_full: np.ndarray
    pq: np.ndarray
    loss_sens: np.ndarray         # dLoss/dP_i, slack entry 0
    flow_sens: np.ndarray         # branches x buses, MW/MW
    tap_sens: np.ndarray          # buses x transformers, MVAr per unit ratio
    transformer_ids: list
    branch_flow_p: np.ndarray     # MW at the operating point
    branch_loss: np.ndarray       # MW per branch at the operating point
    total_loss: float
    v: np.ndarray
    base_mva: float

    def to_json(self):
        return {
            "bus_ids": list(self.bus_ids),
            "loss_sens": self.loss_sens.tolist(),
            "flow_sens": self.flow_sens.tolist(),
            "tap_sens": self.tap_sens.tolist(),
            "transformers": list(self.transformer_ids),
            "bprime": self.bprime.tolist(),
            "bdoubleprime": self.bdoubleprime.tolist(),
            "branch_flow_mw": self.branch_flow_p.tolist(),
        }


def _incidence(case):
    nl, n = len(case.branches), case.n_bus
    A = np.zeros((nl, n))
    for k, br in enumerate(case.branches):
        A[k, case.bus_index(br.from_bus)] = 1.0
        A[k, case.bus_index(br.to_bus)] = -1.0
    return A


def build_bprime(case, reduced=True):
    """B' from branch reactances only; slack row/column dropped when reduced."""
    x = np.array([br.x for br in case.branches])
    if np.any(x == 0):
        raise SensitivityError("zero reactance branch")
    A = _incidence(case)
    B = A.T @ np.diag(1.0 / x) @ A
    if not reduced:
        return B
    keep = [k for k in range(case.n_bus) if k != case.slack_index]
    return B[np.ix_(keep, keep)]


def build_bdoubleprime(case, reduced=True, pv=None):
    """B'' = -Im(Ybus) with line charging, shunts and taps; PV/slack removed when reduced."""
    B = -make_ybus(case).imag
    if not reduced:
        return B
    _, _, pq = bus_types(case, pv)
    return B[np.ix_(pq, pq)]


def dc_flow_sensitivities(case):
    """DC generation shift factors from the reduced B' (MW per MW, slack absorbing)."""
    x = np.array([br.x for br in case.branches])
    A = _incidence(case)
    keep = [k for k in range(case.n_bus) if k != case.slack_index]
    Bred = build_bprime(case)
    try:
        X = sla.solve(Bred, np.eye(len(keep)), assume_a="pos")
    except sla.LinAlgError as exc:
        raise SensitivityError("singular reduced B'") from exc
    gsf = np.zeros((len(case.branches), case.n_bus))
    gsf[:, keep] = np.diag(1.0 / x) @ A[:, keep] @ X
    return gsf


def _jacobian(Y, V, pvpq, pq):
    dS_dVm, dS_dVa = injection_derivatives(Y, V)
    J = np.block([
        [dS_dVa[np.ix_(pvpq, pvpq)].real, dS_dVm[np.ix_(pvpq, pq)].real],
        [dS_dVa[np.ix_(pq, pvpq)].imag, dS_dVm[np.ix_(pq, pq)].imag],
    ])
    return J, dS_dVm, dS_dVa


def flow_sensitivities(case, pf=None, method="ac", pv=None):
    """Sending-end branch flow change per MW injected at each bus, slack absorbing.

    ``method="ac"`` differentiates the AC flows through the power-flow
    Jacobian at ``pf`` (so the slack's loss pickup is included);
    ``method="dc"`` returns the classic B'-based factors. The slack column is
    zero either way.
    """
    if method == "dc" or pf is None:
        return dc_flow_sensitivities(case)
    Y = make_ybus(case, pf.taps)
    V = pf.v_complex
    n, nl = case.n_bus, len(case.branches)
    s, pvi, pqi = bus_types(case, pv)
    pvpq = np.concatenate([pvi, pqi]).astype(int)
    J, _, _ = _jacobian(Y, V, pvpq, pqi)
    yff, yft, _, _ = branch_admittances(case, pf.taps)
    f = np.array([case.bus_index(br.from_bus) for br in case.branches], dtype=int)
    t = np.array([case.bus_index(br.to_bus) for br in case.branches], dtype=int)
    Yf = np.zeros((nl, n), dtype=complex)
    Yf[np.arange(nl), f] = yff
    Yf[np.arange(nl), t] = yft
    Cf = np.zeros((nl, n))
    Cf[np.arange(nl), f] = 1.0
    If = Yf @ V
    Vnorm = V / np.abs(V)
    dSf_dVa = 1j * (np.conj(If)[:, None] * Cf * V[None, :] - V[f][:, None] * np.conj(Yf * V[None, :]))
    dSf_dVm = V[f][:, None] * np.conj(Yf * Vnorm[None, :]) + np.conj(If)[:, None] * Cf * Vnorm[None, :]
    G = np.hstack([dSf_dVa[:, pvpq].real, dSf_dVm[:, pqi].real])
    try:
        Z = sla.solve(J.T, G.T)
    except sla.LinAlgError as exc:
        raise SensitivityError("singular power-flow Jacobian") from exc
    out = np.zeros((nl, n))
    out[:, pvpq] = Z[:len(pvpq)].T
    return out


def loss_sensitivities(case, pf, pv=None):
    """Marginal loss factors dLoss/dP_i at the AC point (transposed Jacobian).

    Each entry is the change in total MW losses for 1 MW more injection at
    bus i with the slack compensating; the slack entry is zero.
    """
    Y = make_ybus(case, pf.taps)
    V = pf.v_complex
    s, pvi, pqi = bus_types(case, pv)
    pvpq = np.concatenate([pvi, pqi]).astype(int)
    J, dS_dVm, dS_dVa = _jacobian(Y, V, pvpq, pqi)
    grad = np.concatenate([dS_dVa[s, pvpq].real, dS_dVm[s, pqi].real])
    try:
        y = sla.solve(J.T, grad)
    except sla.LinAlgError as exc:
        raise SensitivityError("singular power-flow Jacobian") from exc
    out = np.zeros(case.n_bus)
    out[pvpq] = 1.0 + y[:len(pvpq)]
    return out


def tap_sensitivities(case, pf):
    """dQ_i/dt_k of the network reactive injections at fixed voltages (MVAr per unit ratio)."""
    V = pf.v_complex
    trs = [k for k, br in enumerate(case.branches) if br.is_transformer]
    out = np.zeros((case.n_bus, len(trs)))
    for col, k in enumerate(trs):
        br = case.branches[k]
        t = pf.taps[k]
        ys = 1.0 / (br.r + 1j * br.x)
        ytt = ys + 0.5j * br.b_shunt
        f, to = case.bus_index(br.from_bus), case.bus_index(br.to_bus)
        dyff = -2.0 * ytt / t**3
        dyft = ys / t**2
        dsf = V[f] * np.conj(dyff * V[f] + dyft * V[to])
        dst = V[to] * np.conj(dyft * V[f])
        out[f, col] = dsf.imag * case.base_mva
        out[to, col] = dst.imag * case.base_mva
    return out


def branch_losses(case, pf):
    return pf.branch_flow_p + pf.branch_flow_p_to


def build_sensitivities(case, pf, pv=None):
    s = case.slack_index
    _, _, pq = bus_types(case, pv)
    return SensitivityBundle(
        bus_ids=list(case.bus_ids),
        slack_index=s,
        nonslack=np.array([k for k in range(case.n_bus) if k != s], dtype=int),
        bprime=build_bprime(case),
        bdoubleprime=build_bdoubleprime(case, pv=pv),
        bdoubleprime_full=build_bdoubleprime(case, reduced=False),
        pq=pq,
        loss_sens=loss_sensitivities(case, pf, pv),
        flow_sens=flow_sensitivities(case, pf, pv=pv),
        tap_sens=tap_sensitivities(case, pf),
        transformer_ids=[br.id for br in case.branches if br.is_transformer],
        branch_flow_p=np.array(pf.branch_flow_p, dtype=float),
        branch_loss=branch_losses(case, pf),
        total_loss=pf.total_loss,
        v=np.array(pf.v, dtype=float),
        base_mva=case.base_mva,
    )

