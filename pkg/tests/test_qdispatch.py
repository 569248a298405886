import numpy as np
import pytest

from rtbalance.coordinator import voltage_violation
from rtbalance.lpsolver import solve_interior_point, solve_simplex
from rtbalance.qdispatch import (QPoint, TAP_STEP, build_q_subproblem, extract_q_dispatch,
                                 has_voltage_violation, nearest_step)
from rtbalance.sensitivity import build_sensitivities

from conftest import dispatch


@pytest.fixture(scope="module")
def base_q(bundled, base_pf):
    case, schedule, bids, _ = bundled
    sens = build_sensitivities(case, base_pf)
    load_q = np.array([b.base_load_q for b in case.buses])
    point = QPoint.from_pf(case, schedule, base_pf, load_q)
    return build_q_subproblem(case, schedule, bids, sens, point, v0=base_pf.v)


def test_no_violation_means_no_correction(base_q):
    lp, vm = base_q
    sol = solve_interior_point(lp)
    qd = extract_q_dispatch(sol, vm, lp)
    assert sol.obj == pytest.approx(0.0, abs=1e-9)
    assert max(abs(v) for v in qd.dv.values()) < 1e-8
    assert all(abs(v) < 1e-8 for v in qd.tap_changes().values())


def test_q_lp_agrees_with_simplex(base_q):
    lp, _ = base_q
    assert solve_interior_point(lp).obj == pytest.approx(solve_simplex(lp).obj, abs=1e-9)


def test_voltage_bounds_are_measured_from_current_point(base_q, base_pf, bundled):
    lp, vm = base_q
    case = bundled[0]
    for k, bus in enumerate(case.bus_ids):
        j = vm.dv_vars[bus]
        assert lp.lo[j] == pytest.approx(case.buses[k].v_min - base_pf.v[k])
        assert lp.hi[j] == pytest.approx(case.buses[k].v_max - base_pf.v[k])


def test_generator_limits_clip_at_zero(base_q):
    lp, vm = base_q
    for j, kind in enumerate(vm.kinds):
        if kind in ("dq_plus", "dq_minus", "dt_plus", "dt_minus"):
            assert lp.lo[j] == 0.0 and lp.hi[j] >= 0.0


def test_voltage_case_is_restored(bundled):
    res = dispatch(bundled, "voltage")
    case = bundled[0]
    assert res.converged
    assert voltage_violation(case, res.initial_pf.v) > 0
    v, k26 = res.final_pf.v, case.bus_index(26)
    assert res.initial_pf.v[k26] <= 0.85
    for bb, vv in zip(case.buses, v):
        assert bb.v_min - 1e-3 <= vv <= bb.v_max + 1e-3
    assert not has_voltage_violation(case, v, tol=1e-3)


def test_reactive_price_peaks_near_the_weak_bus(bundled):
    res = dispatch(bundled, "voltage")
    case = bundled[0]
    prices = res.q.prices
    top = max(prices, key=lambda b: prices[b])
    neighbours = {26} | {br.to_bus if br.from_bus == 26 else br.from_bus
                         for br in case.branches if 26 in (br.from_bus, br.to_bus)}
    assert top in neighbours
    assert prices[top] > 0


def test_nearest_step():
    assert nearest_step(0.978 + 0.004, 0.978) == pytest.approx(0.978 + TAP_STEP)
    assert nearest_step(0.978 + 0.003, 0.978) == pytest.approx(0.978)
    assert nearest_step(0.978 - 0.004, 0.978) == pytest.approx(0.978 - TAP_STEP)


def test_accumulate_sums_corrections(bundled):
    res = dispatch(bundled, "voltage")
    q = res.q
    twice = q.accumulate(q)
    for bus, v in q.dv.items():
        assert twice.dv[bus] == pytest.approx(2 * v)
    assert twice.prices == q.prices
