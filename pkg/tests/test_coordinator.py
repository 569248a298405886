from dataclasses import replace

import numpy as np
import pytest

from rtbalance import coordinator as co
from rtbalance.pdispatch import PScenario, ScenarioError

from conftest import TIGHT18, dispatch, total_generation

SCENARIOS = ["normal100", "line36", "line18", "voltage"]


@pytest.mark.parametrize("name", SCENARIOS)
def test_bundled_scenarios_converge(bundled, name):
    res = dispatch(bundled, name)
    assert res.converged, res.message
    assert 2 <= res.outer_iterations <= co.DispatchOptions().max_outer
    last = res.audit[-1]
    assert last["flow_violation_mw"] <= 1e-5
    assert last["voltage_violation_pu"] <= 1e-6
    assert abs(last["slack_mismatch_mw"]) <= 1e-5


@pytest.mark.parametrize("name", SCENARIOS)
def test_audit_records_every_iteration(bundled, name):
    res = dispatch(bundled, name)
    assert [a["iteration"] for a in res.audit] == list(range(1, res.outer_iterations + 1))
    for a in res.audit:
        for key in ("flow_violation_mw", "voltage_violation_pu", "slack_mismatch_mw", "loss_mw",
                    "omega", "p_step_mw", "q_step"):
            assert key in a


@pytest.mark.parametrize("name", SCENARIOS)
def test_violation_settles_monotonically(bundled, name):
    audit = dispatch(bundled, name).audit
    worst = [max(a["flow_violation_mw"], 100 * a["voltage_violation_pu"], abs(a["slack_mismatch_mw"]))
             for a in audit]
    tail = worst[-3:]
    assert all(b <= a + 1e-9 for a, b in zip(tail, tail[1:]))


def test_curtailment_only_after_infeasible_attempt(bundled):
    res = dispatch(bundled, "line18", branch_limits=TIGHT18)
    assert res.curtailment_used
    triggers = [a for a in res.audit if "curtailment_trigger" in a]
    assert len(triggers) == 1
    assert "infeasible" in triggers[0]["curtailment_trigger"]
    assert not dispatch(bundled, "normal100").curtailment_used
    # at 19 MW the curtailment-free LP is feasible, so the contract is left alone
    loose = dispatch(bundled, "line18")
    assert not loose.curtailment_used and not any("curtailment_trigger" in a for a in loose.audit)


def test_curtailment_disabled_reports_infeasible(bundled):
    res = dispatch(bundled, "line18", branch_limits=TIGHT18, curtailment_enabled=False)
    assert res.convergence == co.INFEASIBLE
    assert res.certificate is not None


def test_seller_only_cut_shifts_injection_by_the_buyer_cut(bundled):
    case, schedule, _, contracts = bundled
    both = dispatch(bundled, "line18", branch_limits=TIGHT18)
    seller = dispatch(bundled, "line18", branch_limits=TIGHT18, curtailment_overrides={"B1": "seller-only"})
    cut, one = both.p.dp_ij["B1"], seller.p.dp_ij["B1"]
    assert cut["seller"] == cut["buyer"] > 0
    assert one["buyer"] == 0.0 and one["seller"] > cut["seller"]
    shift = total_generation(seller, case, schedule, contracts) - total_generation(both, case, schedule, contracts)
    dloss = seller.final_pf.total_loss - both.final_pf.total_loss
    assert shift == pytest.approx(cut["buyer"] + dloss, abs=1e-4)


@pytest.mark.parametrize("name", SCENARIOS)
def test_invariants_hold(bundled, name):
    case, schedule, _, contracts = bundled
    res = dispatch(bundled, name)
    assert abs(co.balance_residual(res)) < 1e-6 * case.base_mva
    assert abs(co.replacement_residual(res)) < 1e-6
    assert co.bound_violations(res, schedule, contracts) == []


@pytest.mark.parametrize("name", SCENARIOS)
def test_rerun_on_corrected_inputs_is_a_fixed_point(bundled, name):
    case, schedule, bids, contracts = bundled
    res = dispatch(bundled, name)
    nc, ns, ncon = co.corrected_inputs(case, schedule, contracts, res)
    sc = replace(res.scenario, delta_p_sys=0.0, branch_limits={}, load_allocation=None)
    again = co.run_dispatch(nc, ns, bids, ncon, sc)
    assert again.converged
    pd = again.p
    for d in (pd.dp_plus, pd.dp_minus, pd.dp_res, pd.dp_rep):
        assert max(abs(v) for v in d.values()) < 1e-4
    for cut in pd.dp_ij.values():
        assert max(cut.values()) < 1e-4


def test_bad_base_case_is_reported_not_raised(bundled):
    case, schedule, bids, contracts = bundled
    # a huge load change drives the power flow past its solvable region
    sc = replace(co.bundled_scenario("normal100"), delta_p_sys=5000.0)
    res = co.run_dispatch(case, schedule, bids, contracts, sc)
    assert not res.converged
    assert res.message


def test_simplex_backend_agrees(bundled):
    case, schedule, bids, contracts = bundled
    ref = dispatch(bundled, "normal100")
    res = co.run_dispatch(case, schedule, bids, contracts, co.bundled_scenario("normal100"),
                          co.DispatchOptions(solver="simplex"))
    assert res.converged
    assert res.p.costs["total"] == pytest.approx(ref.p.costs["total"], rel=1e-6)


def test_round_taps_lands_on_step_grid(bundled):
    case, schedule, bids, contracts = bundled
    res = co.run_dispatch(case, schedule, bids, contracts, co.bundled_scenario("voltage"),
                          co.DispatchOptions(round_taps=True))
    for bid, t in res.taps.items():
        steps = (t - case.branch(bid).tap) / 0.00625
        assert steps == pytest.approx(round(steps), abs=1e-9)


def test_reversal_detector():
    a = np.array([30.0, -30.0])
    assert co._reverses(-a, a)
    assert not co._reverses(a, a)
    assert not co._reverses(-0.01 * a / 30, a)     # tiny moves are overshoot, not cycling


# ------------------------------------------------------------ scenario files

def test_scenario_round_trip():
    for name in SCENARIOS:
        sc = co.bundled_scenario(name)
        assert co.load_scenario(co.scenario_to_dict(sc)) == sc


def test_scenario_rejects_bad_alpha():
    with pytest.raises(ScenarioError):
        co.load_scenario({"delta_p_sys_mw": 10, "alpha": 1.5})


def test_scenario_defaults():
    sc = co.load_scenario({"name": "x", "delta_p_sys_mw": 12})
    assert sc == PScenario("x", 12.0)


# ------------------------------------------------------------ documents and suites

def test_result_document_shape(bundled):
    case = bundled[0]
    doc = co.result_to_dict(dispatch(bundled, "line18", branch_limits=TIGHT18), case)
    assert doc["converged"] and doc["curtailment_used"]
    assert doc["curtailment"]["B1"]["seller"] == doc["curtailment"]["B1"]["buyer"] > 0
    assert len(doc["prices"]) == case.n_bus
    assert len(doc["flows"]) == len(case.branches)
    assert co.lookup(doc, "flows[branch=18].mw") == pytest.approx(18.5, abs=1e-3)
    assert co.lookup(doc, "p_dispatch.G-8.dp_res") == doc["p_dispatch"]["G-8"]["dp_res"]


def test_compare_expected_reports_mismatches():
    doc = {"a": {"b": 1.0}, "rows": [{"k": 1, "v": 5.0}], "flag": True}
    ok = [{"path": "a.b", "value": 1.05, "tol": 0.1}, {"path": "rows[k=1].v", "min": 4, "max": 6},
          {"path": "flag", "value": True}]
    assert co.compare_expected(doc, ok) == []
    bad = [{"path": "a.b", "value": 2.0, "tol": 0.1}, {"path": "rows[k=2].v", "value": 0},
           {"path": "flag", "value": False}, {"path": "rows[k=1].v", "max": 4}]
    assert len(co.compare_expected(doc, bad)) == 4


def test_suite_isolates_failures(bundled):
    case, schedule, bids, contracts = bundled
    good = co.bundled_scenario("normal100")
    broken = replace(good, name="broken", branch_limits={999: 10.0})
    report = co.run_case_suite([broken, good], case, schedule, bids, contracts,
                               expected={"normal100": [{"path": "converged", "value": True}]})
    status = {e.name: e.status for e in report.entries}
    assert status["broken"] != co.CONVERGED
    assert status["normal100"] == co.CONVERGED
    assert report.mismatches == []
    assert [e.name for e in report.solver_failures] == ["broken"]


def test_alpha_sweep_csv(bundled):
    case, schedule, bids, contracts = bundled
    sweep = co.alpha_sweep(co.bundled_scenario("normal100"), case, schedule, bids, contracts)
    lines = sweep.sweep_csv.strip().splitlines()
    assert lines[0] == "bus,rho_alpha_0,rho_alpha_0.5,rho_alpha_1"
    assert len(lines) == case.n_bus + 1
    costs = [e.result.p.costs["total"] for e in sweep.entries]
    assert all(b >= a - 1e-6 for a, b in zip(costs, costs[1:]))
