import copy

import numpy as np
import pytest

from rtbalance.lpsolver import solve_simplex
from rtbalance.pricing import (compute_lmps, decomposition_residual, partner_price_form,
                               participant_price_form, price_csv, replacement_price)

from conftest import TIGHT18, dispatch


def with_extra_load(pd, bus, h):
    """The final P LP with ``h`` MW more load at ``bus``."""
    lp, vm = copy.deepcopy(pd.lp), pd.vmap
    k = vm.bus_ids.index(bus)
    lp.b_eq[vm.sys_row] += (1.0 - vm.loss_sens[k]) * h
    for bid, row in vm.branch_rows.items():
        shift = vm.flow_sens[vm.branch_ids.index(bid), k] * h
        lp.lo_ineq[row] += shift
        lp.hi_ineq[row] += shift
    return lp


@pytest.mark.parametrize("name", ["normal100", "line18"])
def test_nodal_price_is_the_cost_of_one_more_mw(bundled, name):
    res = dispatch(bundled, name)
    pd = res.p
    h = 1e-3
    for bus in (3, 8, 15, 24, 30):
        up = solve_simplex(with_extra_load(pd, bus, h)).obj
        dn = solve_simplex(with_extra_load(pd, bus, -h)).obj
        assert (up - dn) / (2 * h) == pytest.approx(res.prices.at(bus), abs=1e-5)


@pytest.mark.parametrize("name", ["normal100", "line18", "voltage"])
def test_decomposition_identity(bundled, name):
    rep = dispatch(bundled, name).prices
    assert decomposition_residual(rep) < 1e-10
    assert np.all(rep.loss_component[[0]] == 0.0)       # slack bus carries no loss term


def test_no_congestion_component_without_binding_lines(bundled):
    rep = dispatch(bundled, "normal100").prices
    assert np.max(np.abs(rep.congestion_component)) < 1e-8


def test_price_form_equals_nodal_price(bundled):
    res = dispatch(bundled, "line18")
    for name, form in res.prices.forms.items():
        if form.form == "curtailment-partner":
            continue
        bus = res.p.vmap.participants[name].bus
        assert form.value == pytest.approx(res.prices.at(bus), abs=1e-6), name


def test_incremental_form_for_marginal_generator(bundled):
    res = dispatch(bundled, "normal100")
    form = participant_price_form(res.p, "G-13")
    assert form.form == "incremental"
    assert form.bid == pytest.approx(15.0)


def test_replacement_price_absent_at_alpha_zero(bundled):
    res = dispatch(bundled, "normal100", alpha=0.0)
    assert replacement_price(res.p) is None


def test_replacement_price_present_when_reserve_replaced(bundled):
    res = dispatch(bundled, "line18")
    rho_rep = replacement_price(res.p)
    assert rho_rep and all(v >= -1e-9 for v in rho_rep.values())


def test_seller_only_partner_pays(bundled):
    res = dispatch(bundled, "line18", branch_limits=TIGHT18, curtailment_overrides={"B1": "seller-only"})
    form = partner_price_form(res.p, "B1")
    assert form.pays
    assert form.participant == "C-30"
    assert form.value == pytest.approx(form.bid + form.multiplier)


def test_curtailment_cost_kept_out_of_nodal_prices(bundled):
    res = dispatch(bundled, "line18", branch_limits=TIGHT18)
    rep = res.prices
    assert rep.curtailment_cost == pytest.approx(res.p.costs["c_p3"])
    assert rep.curtailment_cost > 0


def test_csv_has_six_significant_digits(bundled):
    text = price_csv(dispatch(bundled, "normal100").prices)
    header, first = text.splitlines()[:2]
    assert header == "bus,lambda,loss_component,congestion_component,rho_p,rho_q"
    for cell in first.split(",")[1:5]:
        digits = cell.replace("-", "").replace(".", "").lstrip("0")
        assert len(digits.split("e")[0]) <= 6


def test_missing_duals_rejected(bundled):
    from rtbalance.pricing import PricingError
    res = dispatch(bundled, "normal100")
    broken = copy.copy(res.p)
    broken.lam = None
    with pytest.raises(PricingError):
        compute_lmps(broken, res.sens)
