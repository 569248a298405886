"""Locational marginal prices decomposed into energy, loss and congestion parts.

With the system lambda ``lam`` (dual of the system balance row), marginal
loss factors ``ls`` and branch multipliers split by active side,

    rho_i = lam - ls_i * lam - sum_l (mu_max_l - mu_min_l) * GSF_li

which is the marginal cost of serving one more MW of load at bus ``i``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np


class PricingError(ValueError):
    pass


@dataclass
class PriceForm:
    participant: str
    form: str                      # incremental, decremental, reserve-energy, curtailment-partner
    value: float                   # $/MWh
    bid: float
    multiplier: float
    pays: bool = False             # True for a partner charged the imbalance cost


@dataclass
class PriceReport:
    lam: float
    bus_ids: list
    loss_component: np.ndarray
    congestion_component: np.ndarray
    rho_p: np.ndarray
    rho_q: np.ndarray | None = None
    rho_rep: dict | None = None    # participant -> $/MW
    mu_rep: float | None = None
    curtailment_cost: float = 0.0  # allocated separately, never inside rho_p
    forms: dict = field(default_factory=dict)

    def at(self, bus):
        return float(self.rho_p[self.bus_ids.index(bus)])

    def rows(self):
        out = []
        for k, bus in enumerate(self.bus_ids):
            out.append({
                "bus": bus, "lambda": self.lam,
                "loss": float(self.loss_component[k]),
                "congestion": float(self.congestion_component[k]),
                "rho": float(self.rho_p[k]),
                "rho_q": None if self.rho_q is None else float(self.rho_q[k]),
            })
        return out


def compute_lmps(pd, sens, q=None):
    """Per-bus prices from the duals of a solved P sub-problem."""
    if pd is None or pd.lam is None or pd.mu_max is None:
        raise PricingError("dispatch carries no dual values")
    ls = np.asarray(sens.loss_sens)
    gsf = np.asarray(sens.flow_sens)
    pos = {bid: k for k, bid in enumerate(pd.vmap.branch_ids)}
    net = np.zeros(gsf.shape[0])
    for bid in pd.mu_max:
        net[pos[bid]] = pd.mu_max[bid] - pd.mu_min[bid]
    lam = pd.lam
    loss = -ls * lam
    cong = -(net @ gsf)
    rho = lam + loss + cong
    rho_q = None
    if q is not None:
        rho_q = np.array([q.prices[b] for b in sens.bus_ids])
    report = PriceReport(lam, list(sens.bus_ids), loss, cong, rho, rho_q,
                         replacement_price(pd), pd.mu_rep, pd.costs.get("c_p3", 0.0))
    for name in pd.vmap.participants:
        form = participant_price_form(pd, name)
        if form is not None:
            report.forms[name] = form
    for cf in pd.vmap.curtailments:
        form = partner_price_form(pd, cf.contract.id)
        if form is not None:
            report.forms[form.participant] = form
    return report


def _nodal(pd, bus):
    """rho at a bus straight from the LP duals (same formula, used for forms)."""
    vm = pd.vmap
    k = vm.bus_ids.index(bus)
    pos = {bid: j for j, bid in enumerate(vm.branch_ids)}
    cong = sum((pd.mu_max[b] - pd.mu_min[b]) * vm.flow_sens[pos[b], k] for b in pd.mu_max)
    return pd.lam * (1.0 - vm.loss_sens[k]) - cong


def participant_price_form(pd, name):
    """Which marginal-bid branch prices this participant, with its value.

    Returns None when the participant made no contribution (nodal price applies).
    The value equals the nodal price at the participant's bus by optimality.
    """
    vm = pd.vmap
    part = vm.participants.get(name)
    if part is None:
        raise PricingError(f"unknown participant {name}")
    sgn = 1.0 if part.side == "generator" else -1.0
    tol = 1e-6
    picks = []
    for v in vm.vars:
        if v.owner != name or v.kind not in ("dp_plus", "dp_minus", "dp_res"):
            continue
        val = pd.var_values[v.name]
        if val > tol:
            picks.append(v)
    if not picks:
        return None
    # the marginal block is the last accepted step of the dominant product
    order = {"dp_res": 0, "dp_plus": 1, "dp_minus": 2}
    v = sorted(picks, key=lambda u: (order[u.kind], -u.step))[0]
    mu = pd.var_mu[v.name]
    if v.kind == "dp_plus":
        return PriceForm(name, "incremental", sgn * (v.price + mu), v.price, mu)
    if v.kind == "dp_minus":
        return PriceForm(name, "decremental", -sgn * (v.price + mu), v.price, mu)
    return PriceForm(name, "reserve-energy", sgn * (v.price + mu), v.price, mu)


def partner_price_form(pd, contract_id):
    """Price for the non-curtailed partner of a single-side curtailment.

    The partner is charged the dispatch cost of the imbalance it leaves
    behind, signed by its side: a buyer pays ``b_ij + mu_ij``, a seller sees
    the negative of that.
    """
    vm = pd.vmap
    cf = next((c for c in vm.curtailments if c.contract.id == contract_id), None)
    if cf is None:
        raise PricingError(f"contract {contract_id} has no curtailment variable")
    if cf.mode == "both-sides":
        return None
    c = cf.contract
    if cf.mode == "seller-only":
        partner_bus, beta = c.buyer_bus, 1
        label = f"C-{c.buyer_bus}"
    else:
        partner_bus, beta = c.seller_bus, 0
        label = f"G-{c.seller_bus}"
    mu = pd.mu_ij.get(contract_id, 0.0)
    value = (-1) ** (beta + 1) * (c.curtail_price + mu)
    return PriceForm(label, "curtailment-partner", value, c.curtail_price, mu, pays=True)


def replacement_price(pd):
    """Replacement reserve price per participant: mu_rep plus its headroom multiplier.

    Absent (None) when alpha is zero or no reserve energy was called.
    """
    if pd.mu_rep is None or pd.vmap.scenario.alpha <= 0 or pd.total_res <= 1e-9:
        return None
    out = {}
    for v in pd.vmap.vars:
        if v.kind == "dp_rep":
            out[v.owner] = pd.mu_rep + pd.mu_plus.get(v.owner, 0.0)
    return out


def decomposition_residual(report):
    return float(np.max(np.abs(report.rho_p - (report.lam + report.loss_component
                                                + report.congestion_component))))


def _fmt(v):
    return "" if v is None else f"{v:.6g}"


def price_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bus", "lambda", "loss_component", "congestion_component", "rho_p", "rho_q"])
    for row in report.rows():
        w.writerow([row["bus"], _fmt(row["lambda"]), _fmt(row["loss"]), _fmt(row["congestion"]),
                    _fmt(row["rho"]), _fmt(row["rho_q"])])
    return buf.getvalue()
