"""Independent reference computations used by several test modules."""
import numpy as np
import scipy.optimize as sopt

from rtbalance.lpsolver import OPTIMAL
from rtbalance.powerflow import PowerFlowOptions, make_ybus, solve_power_flow


def base_injections(case, schedule):
    gen = np.zeros(case.n_bus)
    for p in schedule:
        if p.side == "generator":
            gen[case.bus_index(p.bus)] += p.p0
    load_p = np.array([b.base_load_p for b in case.buses])
    load_q = np.array([b.base_load_q for b in case.buses])
    return gen - load_p, -load_q


def fd_loss_and_flow(case, p_inj, q_inj, h=0.01):
    """Central differences of total loss and sending-end flows per MW at each bus."""
    opts = PowerFlowOptions(tol=1e-12, max_iter=30)
    n, nl = case.n_bus, len(case.branches)
    dloss, dflow = np.zeros(n), np.zeros((nl, n))
    for k in range(n):
        if k == case.slack_index:
            continue
        res = []
        for sgn in (1.0, -1.0):
            p = np.array(p_inj, dtype=float)
            p[k] += sgn * h
            res.append(solve_power_flow(case, p, q_inj, opts))
        dloss[k] = (res[0].total_loss - res[1].total_loss) / (2 * h)
        dflow[:, k] = (res[0].branch_flow_p - res[1].branch_flow_p) / (2 * h)
    return dloss, dflow


def fd_tap(case, pf, h=1e-5):
    """dQ_i/dt_k at frozen bus voltages, by differencing the admittance matrix."""
    V = pf.v_complex
    trs = [k for k, br in enumerate(case.branches) if br.is_transformer]
    out = np.zeros((case.n_bus, len(trs)))
    for col, k in enumerate(trs):
        qs = []
        for sgn in (1.0, -1.0):
            taps = np.array(pf.taps, dtype=float)
            taps[k] += sgn * h
            Y = make_ybus(case, taps)
            qs.append((V * np.conj(Y @ V)).imag * case.base_mva)
        out[:, col] = (qs[0] - qs[1]) / (2 * h)
    return out


def highs(lp):
    """Solve a LinearProgram with scipy's HiGHS; returns (status_ok, objective, x)."""
    A_ub, b_ub = [], []
    for a, lo, hi in zip(lp.A_ineq, lp.lo_ineq, lp.hi_ineq):
        if np.isfinite(hi):
            A_ub.append(a)
            b_ub.append(hi)
        if np.isfinite(lo):
            A_ub.append(-a)
            b_ub.append(-lo)
    res = sopt.linprog(
        lp.c, A_ub=np.array(A_ub) if A_ub else None, b_ub=np.array(b_ub) if b_ub else None,
        A_eq=lp.A_eq if len(lp.b_eq) else None, b_eq=lp.b_eq if len(lp.b_eq) else None,
        bounds=[(None if not np.isfinite(l) else l, None if not np.isfinite(u) else u)
                for l, u in zip(lp.lo, lp.hi)], method="highs")
    return res.status == 0, (res.fun if res.status == 0 else None), res.x


def random_lp(rng, n=8, me=3, mi=4, feasible=True):
    """Random bounded LP built around a known feasible point."""
    from rtbalance.lpsolver import LinearProgram
    x0 = rng.uniform(-2, 2, n)
    lo = x0 - rng.uniform(0.1, 3, n)
    hi = x0 + rng.uniform(0.1, 3, n)
    free = rng.random(n) < 0.15
    lo[free], hi[free] = -np.inf, np.inf
    A_eq = rng.normal(size=(me, n))
    b_eq = A_eq @ x0
    A_in = rng.normal(size=(mi, n))
    ax = A_in @ x0
    lo_in = ax - rng.uniform(0.1, 2, mi)
    hi_in = ax + rng.uniform(0.1, 2, mi)
    one_sided = rng.random(mi) < 0.3
    hi_in[one_sided] = np.inf
    c = rng.normal(size=n)
    if not feasible:
        # x[0] pinned one unit above its own upper bound
        lo[0], hi[0] = x0[0] - 1.0, x0[0] + 1.0
        row = np.zeros(n)
        row[0] = 1.0
        A_eq = np.vstack([A_eq, row])
        b_eq = np.append(b_eq, hi[0] + 1.0)
    return LinearProgram.build(c=c, A_eq=A_eq, b_eq=b_eq, A_ineq=A_in, lo_ineq=lo_in, hi_ineq=hi_in,
                               lo=lo, hi=hi)


__all__ = ["OPTIMAL", "base_injections", "fd_loss_and_flow", "fd_tap", "highs", "random_lp"]
