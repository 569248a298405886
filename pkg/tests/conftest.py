import numpy as np
import pytest

from rtbalance import netmodel
from rtbalance.coordinator import bundled_scenario, run_dispatch


def toy_case(r=0.0, limits=None):
    """Three buses in a triangle; lossless when ``r`` is zero."""
    limits = limits or {}
    doc = {"base_mva": 100, "slack_bus": 1, "buses": [
        {"id": 1, "kind": "generator", "v_min": 0.9, "v_max": 1.1, "v_set": 1.0},
        {"id": 2, "kind": "generator", "v_min": 0.9, "v_max": 1.1, "v_set": 1.0},
        {"id": 3, "kind": "consumer", "load_p_mw": 50, "load_q_mvar": 10, "v_min": 0.9, "v_max": 1.1}],
        "branches": [
            {"id": k, "from": f, "to": t, "r_pu": r, "x_pu": 0.05, **(
                {"limit_mw": limits[k]} if k in limits else {})}
            for k, (f, t) in enumerate([(1, 2), (2, 3), (1, 3)], start=1)]}
    return netmodel.load_case(doc)


def toy_market(case, contracts=()):
    doc = {"participants": [
        {"bus": 1, "side": "generator", "p0_mw": 30, "p_min_mw": 0, "p_max_mw": 100,
         "q_min": -100, "q_max": 100,
         "bids": {"incr": [{"mw": 10, "price": 20}, {"price": 40}], "decr": [{"price": 5}]}},
        {"bus": 2, "side": "generator", "p0_mw": 20, "p_min_mw": 0, "p_max_mw": 45,
         "q_min": -100, "q_max": 100, "reserve_mw": 5,
         "bids": {"incr": [{"price": 25}], "decr": [{"price": 5}],
                  "reserve_energy_price": 22, "reserve_capacity_price": 1}}],
        "contracts": list(contracts)}
    return netmodel.load_market(doc, case)


@pytest.fixture(scope="session")
def bundled():
    return netmodel.load_bundled()


@pytest.fixture(scope="session")
def base_pf(bundled):
    from rtbalance.powerflow import solve_power_flow
    case, schedule, _, _ = bundled
    gen = np.zeros(case.n_bus)
    for p in schedule:
        if p.side == "generator":
            gen[case.bus_index(p.bus)] += p.p0
    load_p = np.array([b.base_load_p for b in case.buses])
    load_q = np.array([b.base_load_q for b in case.buses])
    return solve_power_flow(case, gen - load_p, -load_q)


# line 18 at 18.5 MW cannot be relieved without cutting the bilateral contract
TIGHT18 = {18: 18.5}

_RUNS = {}


def dispatch(bundled, name, **changes):
    """Memoised bundled-scenario runs shared across test modules."""
    from dataclasses import replace
    key = (name, repr(sorted(changes.items())))
    if key not in _RUNS:
        case, schedule, bids, contracts = bundled
        sc = bundled_scenario(name)
        if changes:
            sc = replace(sc, **changes)
        _RUNS[key] = run_dispatch(case, schedule, bids, contracts, sc)
    return _RUNS[key]


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])


def total_generation(res, case, schedule, contracts):
    """Total generator output after dispatch, slack taken from the final power flow."""
    s = case.slack_index
    total = res.final_pf.p_inj[s] + res.load_p[s]
    pd = res.p
    for p in schedule:
        if p.side != "generator" or case.bus_index(p.bus) == s:
            continue
        nm = p.name
        total += p.p0 + pd.dp_plus[nm] - pd.dp_minus[nm] + pd.dp_res[nm]
        for ct in contracts:
            if ct.seller_bus == p.bus and ct.id in pd.dp_ij:
                total -= pd.dp_ij[ct.id]["seller"]
    return total
