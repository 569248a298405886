import numpy as np
import pytest

from rtbalance.coordinator import bundled_scenario, load_scenario, run_dispatch
from rtbalance.lpsolver import solve_interior_point, solve_simplex
from rtbalance.pdispatch import (LinearizationPoint, PScenario, ScenarioError,
                                 apply_single_side_curtailment, build_p_subproblem,
                                 curtailment_fragments, effective_limits, extract_p_dispatch,
                                 system_balance_residual)
from rtbalance.powerflow import solve_power_flow
from rtbalance.sensitivity import build_sensitivities

from conftest import dispatch, toy_case, toy_market
from oracles import base_injections, highs


def toy_run(delta, alpha=1.0, limits=None, mode="normal"):
    case = toy_case(r=0.0, limits=limits)
    schedule, bids, contracts = toy_market(case)
    sc = load_scenario({"delta_p_sys_mw": delta, "alpha": alpha, "mode": mode})
    return run_dispatch(case, schedule, bids, contracts, sc)


def test_copper_plate_merit_order():
    # needs 28 MW: G-1 block @20 (10), G-2 reserve @22 + replacement @1 (5), G-2 increment @25 (13)
    res = toy_run(28.0)
    pd = res.p
    assert res.converged
    assert pd.dp_plus["G-1"] == pytest.approx(10.0, abs=1e-6)
    assert pd.dp_res["G-2"] == pytest.approx(5.0, abs=1e-6)
    assert pd.dp_rep["G-2"] == pytest.approx(5.0, abs=1e-6)
    assert pd.dp_plus["G-2"] == pytest.approx(13.0, abs=1e-6)
    assert pd.lam == pytest.approx(25.0, abs=1e-6)
    assert pd.costs["c_p1"] == pytest.approx(10 * 20 + 13 * 25, abs=1e-5)
    assert pd.costs["c_p2"] == pytest.approx(5 * 22, abs=1e-5)
    assert pd.costs["c_p4"] == pytest.approx(5 * 1, abs=1e-5)


def test_alpha_zero_drops_replacement():
    pd = toy_run(28.0, alpha=0.0).p
    assert sum(pd.dp_rep.values()) == 0.0
    assert pd.dp_res["G-2"] == pytest.approx(5.0, abs=1e-6)
    assert pd.costs["c_p4"] == 0.0


def test_negative_change_uses_decrements():
    pd = toy_run(-10.0).p
    assert pd.dp_minus["G-1"] + pd.dp_minus["G-2"] == pytest.approx(10.0, abs=1e-6)
    # accepted decrements are a cost, so one more MW of load saves the decrement price
    assert pd.lam == pytest.approx(-5.0, abs=1e-6)


def test_headroom_includes_replacement():
    # G-2 can add 20 MW in total (45 - 20 - 5), shared between increments and replacement
    pd = toy_run(40.0).p
    assert pd.dp_plus["G-2"] + pd.dp_rep["G-2"] <= 20.0 + 1e-6


def test_congested_toy_line_binds():
    # flow 1-3 = (P1 + 78) / 3 on the lossless triangle, so a 39 MW cap holds G-1 at 39 MW
    res = toy_run(28.0, limits={3: 39.0}, mode="congestion")
    pd = res.p
    assert res.converged and not res.curtailment_used
    assert res.final_pf.branch_flow_p[2] == pytest.approx(39.0, abs=1e-4)
    assert pd.dp_plus["G-1"] == pytest.approx(9.0, abs=1e-5)
    assert pd.dp_res["G-2"] == pytest.approx(5.0, abs=1e-5)
    assert pd.dp_plus["G-2"] == pytest.approx(14.0, abs=1e-5)
    assert pd.mu_max[3] > 0


def test_infeasible_congestion_without_contracts():
    res = toy_run(28.0, limits={3: 30.0}, mode="congestion")
    assert res.convergence == "infeasible"
    assert res.certificate is not None


@pytest.fixture(scope="module")
def loaded_lp(bundled):
    case, schedule, bids, contracts = bundled
    sc = bundled_scenario("normal100")
    p, q = base_injections(case, schedule)
    load = sc.load_change(case)
    pf = solve_power_flow(case, p - load, q)
    sens = build_sensitivities(case, pf)
    point = LinearizationPoint.initial(case, sc.delta_p_sys)
    return build_p_subproblem(case, schedule, bids, contracts, sc, sens, point)


def test_variable_inventory(loaded_lp):
    lp, vm = loaded_lp
    kinds = [v.kind for v in vm.vars]
    assert kinds.count("theta") == 29          # slack angle is the reference
    assert kinds.count("dp_ij") == 0
    assert lp.n == 49
    assert vm.rep_row is not None


def test_decrement_bound_respects_bilateral_sale(loaded_lp):
    lp, vm = loaded_lp
    k = vm.index("G-13.dp_minus[0]")
    # G-13 may only go down to the 10.6 MW it sold bilaterally
    assert lp.hi[k] == pytest.approx(16.91 - 10.6, abs=1e-9)


def test_p_lp_matches_highs(loaded_lp):
    lp, _ = loaded_lp
    ok, ref, _ = highs(lp)
    sol = solve_interior_point(lp)
    assert ok and sol.optimal
    assert sol.obj == pytest.approx(ref, rel=1e-7)
    assert solve_simplex(lp).obj == pytest.approx(ref, rel=1e-7)


def test_balance_identity(bundled):
    res = dispatch(bundled, "normal100")
    assert abs(system_balance_residual(res.p, res.scenario)) < 1e-6


def test_extract_rejects_failed_solution(loaded_lp):
    from rtbalance.lpsolver import LPSolution
    from rtbalance.pdispatch import DispatchError
    with pytest.raises(DispatchError):
        extract_p_dispatch(LPSolution(status="infeasible"), loaded_lp[1])


def test_single_side_fragments(bundled):
    contracts = bundled[3]
    seller = apply_single_side_curtailment(contracts, {"B1": "seller-only"})[0]
    assert seller.coefs == {13: -1.0}
    buyer = apply_single_side_curtailment(contracts, {"B1": "buyer-only"})[0]
    assert buyer.coefs == {30: 1.0}
    with pytest.raises(ScenarioError):
        apply_single_side_curtailment(contracts, {"B1": "both-sides"})
    both = curtailment_fragments(contracts)[0]
    assert both.coefs == {13: -1.0, 30: 1.0}


@pytest.mark.parametrize("kwargs", [{"alpha": 1.5}, {"mode": "panic"},
                                    {"q_load_model": "constant-z"}])
def test_scenario_validation(kwargs):
    with pytest.raises(ScenarioError):
        PScenario(**kwargs)


def test_unknown_branch_in_scenario(bundled):
    with pytest.raises(ScenarioError):
        effective_limits(bundled[0], PScenario(branch_limits={99: 1.0}))


def test_load_change_default_is_proportional(bundled):
    case = bundled[0]
    bl = PScenario(delta_p_sys=100.0).load_change(case)
    loads = np.array([b.base_load_p for b in case.buses])
    np.testing.assert_allclose(bl, 100.0 * loads / loads.sum())
