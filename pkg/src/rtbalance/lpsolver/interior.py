"""Primal-dual interior point method (homogeneous self-dual, Mehrotra corrector).

The bounded LP is first rewritten in standard form ``min c'x, Ax = b, x >= 0``:
finite lower bounds are shifted out, finite upper bounds become explicit rows,
free variables are split and every two-sided row gets a bounded surplus
variable. The homogeneous embedding detects infeasibility through the
``tau / kappa`` pair without a phase one.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .problem import INFEASIBLE, ITERATION_LIMIT, OPTIMAL, UNBOUNDED, LPSolution, kkt_residuals

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IPParams:
    tol: float = 1e-10            # feasibility and relative gap (equilibrated units)
    max_iter: int = 200
    step_fraction: float = 0.9995
    polish: bool = True           # active-set refinement of the final iterate


@dataclass
class _StandardForm:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    offset: float                 # constant objective term from bound shifts
    # recovery maps: original x = x_shift + P @ x_std
    P: np.ndarray
    x_shift: np.ndarray
    n_orig: int
    n_eq: int
    n_ineq: int


FIXED_TOL = 1e-9                  # bound width below which a variable is a constant


def _column(n, j, val=1.0):
    e = np.zeros(n)
    e[j] = val
    return e


def to_standard_form(lp):
    """Rewrite ``lp`` as (A, b, c) with nonnegative variables.

    The surplus of each two-sided row is modelled as an extra original-space
    variable ``s_i = a_i x`` carrying the row bounds, so rows and variables
    share one bound-handling path.
    """
    n, me, mi = lp.n, len(lp.b_eq), len(lp.lo_ineq)
    # extended variable vector v = (x, s) with bounds (lo, hi) and (lo_ineq, hi_ineq)
    lo = np.concatenate([lp.lo, lp.lo_ineq])
    hi = np.concatenate([lp.hi, lp.hi_ineq])
    cext = np.concatenate([lp.c, np.zeros(mi)])
    Aext = np.zeros((me + mi, n + mi))
    Aext[:me, :n] = lp.A_eq
    Aext[me:, :n] = lp.A_ineq
    Aext[me:, n:] = -np.eye(mi)
    bext = np.concatenate([lp.b_eq, np.zeros(mi)])

    cols, cost, shift = [], [], np.zeros(n + mi)
    ub_rows = []                  # (std column index, upper bound width)
    for j in range(n + mi):
        l, h = lo[j], hi[j]
        if np.isfinite(l) and np.isfinite(h) and h - l <= FIXED_TOL * (1.0 + max(abs(l), abs(h))):
            shift[j] = l           # fixed: a constant, no column
        elif np.isfinite(l):
            shift[j] = l
            cols.append(_column(n + mi, j))
            cost.append(cext[j])
            if np.isfinite(h):
                ub_rows.append((len(cols) - 1, h - l))
        elif np.isfinite(h):
            shift[j] = h
            cols.append(_column(n + mi, j, -1.0))
            cost.append(-cext[j])
        else:
            cols.append(_column(n + mi, j))
            cost.append(cext[j])
            cols.append(_column(n + mi, j, -1.0))
            cost.append(-cext[j])
    P = np.array(cols).T if cols else np.zeros((n + mi, 0))
    A = Aext @ P
    b = bext - Aext @ shift
    c = np.array(cost)
    if ub_rows:
        k = len(ub_rows)
        nstd = A.shape[1]
        Aub = np.zeros((k, nstd + k))
        for r, (col, width) in enumerate(ub_rows):
            Aub[r, col] = 1.0
            Aub[r, nstd + r] = 1.0
        A = np.vstack([np.hstack([A, np.zeros((A.shape[0], k))]), Aub])
        b = np.concatenate([b, [w for _, w in ub_rows]])
        c = np.concatenate([c, np.zeros(k)])
        P = np.hstack([P, np.zeros((n + mi, k))])
    offset = float(cext @ shift)
    return _StandardForm(A, b, c, offset, P, shift, n, me, mi)


def _normal_solver(M):
    try:
        factor = sla.cho_factor(M, lower=True, check_finite=False)

        def solve(r):
            return sla.cho_solve(factor, r, check_finite=False)
        # cholesky may "succeed" on a numerically singular matrix
        if not np.all(np.isfinite(factor[0])):
            raise sla.LinAlgError("non-finite factor")
        return solve
    except (sla.LinAlgError, ValueError):
        def solve(r):
            return sla.lstsq(M, r, check_finite=False)[0]
        return solve


def _step_length(x, dx, z, dz, tau, dtau, kappa, dkappa, frac):
    alpha = 1.0
    for v, dv in ((x, dx), (z, dz)):
        neg = dv < 0
        if np.any(neg):
            alpha = min(alpha, frac * float(np.min(v[neg] / -dv[neg])))
    if dtau < 0:
        alpha = min(alpha, frac * tau / -dtau)
    if dkappa < 0:
        alpha = min(alpha, frac * kappa / -dkappa)
    return alpha


def _ray_status(b, c, x, y, tau, kappa):
    """Classify a vanishing tau: a dual ray (b'y > 0) certifies primal infeasibility."""
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
        return INFEASIBLE
    by, cx = float(b @ y), float(c @ x)
    if by > 0 and by >= -cx:
        return INFEASIBLE
    if cx < 0:
        return UNBOUNDED
    return INFEASIBLE


STALLED = "stalled"
POLISH_ACCEPT = 1e-9               # KKT score at which a snapped vertex is taken
RAY_TOL = 1e-7


def _ray_verified(sf, status, x, y):
    """Check the Farkas ray behind an infeasible or unbounded verdict.

    Infeasible: A'y <= 0 with b'y > 0. Unbounded: A x = 0, x >= 0, c'x < 0.
    Both are tested after normalising the ray to unit objective.
    """
    if status == INFEASIBLE:
        by = float(sf.b @ y)
        if not np.isfinite(by) or by <= 0:
            return False
        return float(np.max(sf.A.T @ y, initial=0.0)) / by <= RAY_TOL
    cx = float(sf.c @ x)
    if not np.isfinite(cx) or cx >= 0:
        return False
    return float(np.max(np.abs(sf.A @ x), initial=0.0)) / -cx <= RAY_TOL


def _equilibrate(A, passes=8):
    """Ruiz scaling factors (r, s) so that diag(r) A diag(s) has entries near one."""
    m, n = A.shape
    r, s = np.ones(m), np.ones(n)
    As = np.abs(A)
    for _ in range(passes):
        rn = np.sqrt(np.max(As, axis=1, initial=0.0))
        cn = np.sqrt(np.max(As, axis=0, initial=0.0))
        rn[rn == 0] = 1.0
        cn[cn == 0] = 1.0
        As = As / rn[:, None] / cn[None, :]
        r, s = r / rn, s / cn
    return r, s


def _hsd(A, b, c, params):
    """Solve the homogeneous self-dual embedding; returns iterate and flags.

    A breakdown with tau bounded away from zero is reported as ``stalled`` with
    the best iterate seen, so the caller can refine it instead of misreading a
    numerical failure as infeasibility.
    """
    m, n = A.shape
    x, z = np.ones(n), np.ones(n)
    y = np.zeros(m)
    tau, kappa = 1.0, 1.0
    rp0 = np.linalg.norm(b * tau - A @ x)
    rd0 = np.linalg.norm(c * tau - A.T @ y - z)
    mu0 = (x @ z + tau * kappa) / (n + 1)
    history = []
    status = ITERATION_LIMIT
    best, best_merit = None, np.inf
    stall = 0
    it = 0

    def breakdown():
        if tau < 1e-8 * max(1.0, kappa):
            return _ray_status(b, c, x, y, tau, kappa)
        return STALLED

    for it in range(1, params.max_iter + 1):
        rp = b * tau - A @ x
        rd = c * tau - A.T @ y - z
        rg = c @ x - b @ y + kappa
        mu = (x @ z + tau * kappa) / (n + 1)

        Dinv = x / z
        M = (A * Dinv) @ A.T
        if not np.all(np.isfinite(M)):
            status = breakdown()
            break
        solve = _normal_solver(M)

        def sym_solve(r1, r2):
            v = solve(r2 + A @ (Dinv * r1))
            u = Dinv * (A.T @ v - r1)
            return u, v

        try:
            p, q = sym_solve(c, b)
        except (sla.LinAlgError, ValueError):
            status = breakdown()
            break
        gamma = 0.0
        dx = dz = None
        dtau = dkappa = 0.0
        for corr in range(2):
            eta = 1.0 - gamma
            rxs = gamma * mu - x * z
            rtk = gamma * mu - tau * kappa
            if corr == 1:
                rxs = rxs - dx * dz
                rtk = rtk - dtau * dkappa
            u, v = sym_solve(eta * rd - rxs / x, eta * rp)
            dtau = ((eta * rg + rtk / tau - (-c @ u + b @ v))
                    / (kappa / tau + (-c @ p + b @ q)))
            dx = u + p * dtau
            dy = v + q * dtau
            dz = (rxs - z * dx) / x
            dkappa = (rtk - kappa * dtau) / tau
            alpha = _step_length(x, dx, z, dz, tau, dtau, kappa, dkappa, 1.0)
            gamma = (1 - alpha) ** 2 * min(0.1, 1 - alpha)
        alpha = _step_length(x, dx, z, dz, tau, dtau, kappa, dkappa, params.step_fraction)
        if not np.isfinite(alpha):
            status = breakdown()
            break
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa

        pobj = c @ x / tau
        dobj = b @ y / tau
        rho_p = np.linalg.norm(b * tau - A @ x) / max(1.0, rp0) / tau
        rho_d = np.linalg.norm(c * tau - A.T @ y - z) / max(1.0, rd0) / tau
        rho_a = abs(c @ x - b @ y) / (tau + abs(b @ y))
        rho_mu = ((x @ z + tau * kappa) / (n + 1)) / mu0
        history.append({"iter": it, "pobj": float(pobj), "dobj": float(dobj),
                        "gap": float((x @ z + tau * kappa) / tau**2),
                        "rho_p": float(rho_p), "rho_d": float(rho_d), "tau": float(tau),
                        "kappa": float(kappa), "alpha": float(alpha)})
        merit = max(rho_p, rho_d, rho_a)
        if np.isfinite(merit) and merit < best_merit:
            best_merit = merit
            best = (x.copy(), y.copy(), z.copy(), tau, kappa)
        if rho_p < params.tol and rho_d < params.tol and rho_a < params.tol:
            status = OPTIMAL
            break
        if rho_mu < params.tol and tau < params.tol * max(1.0, kappa):
            status = _ray_status(b, c, x, y, tau, kappa)
            break
        if tau < 1e-12 * kappa:
            status = _ray_status(b, c, x, y, tau, kappa)
            break
        if not np.isfinite(rho_mu):
            status = breakdown()
            break
        stall = stall + 1 if alpha < 1e-8 else 0
        if stall >= 5:
            status = breakdown()
            break
        # the embedding is homogeneous: rescale so the iterates stay representable
        scale = max(tau, kappa)
        if scale > 1e6 or scale < 1e-6:
            x, y, z = x / scale, y / scale, z / scale
            tau, kappa = tau / scale, kappa / scale
            mu0 = mu0 / scale**2
            rp0, rd0 = rp0 / scale, rd0 / scale
    if status in (STALLED, ITERATION_LIMIT) and best is not None:
        x, y, z, tau, kappa = best
        status = STALLED
    return x, y, z, tau, kappa, status, it, history


def _polish(lp, x, y_eq, y_in, tol):
    """Snap to the active set suggested by the interior iterate and re-solve for duals.

    Keeps the interior iterate if the refined point is worse.
    """
    n = lp.n
    d_lo = x - lp.lo
    d_hi = lp.hi - x
    ax = lp.A_ineq @ x
    scale = 1.0 + np.max(np.abs(x), initial=0.0)
    thr = 1e-6 * scale
    at_lo = np.isfinite(lp.lo) & (d_lo < thr)
    at_hi = np.isfinite(lp.hi) & (d_hi < thr) & ~at_lo
    row_lo = np.isfinite(lp.lo_ineq) & (ax - lp.lo_ineq < thr)
    row_hi = np.isfinite(lp.hi_ineq) & (lp.hi_ineq - ax < thr) & ~row_lo

    xs = x.copy()
    xs[at_lo] = lp.lo[at_lo]
    xs[at_hi] = lp.hi[at_hi]
    fixed = at_lo | at_hi
    free = ~fixed
    rows = [lp.A_eq]
    rhs = [lp.b_eq - lp.A_eq[:, fixed] @ xs[fixed]]
    act = row_lo | row_hi
    if np.any(act):
        target = np.where(row_lo, lp.lo_ineq, lp.hi_ineq)[act]
        rows.append(lp.A_ineq[act])
        rhs.append(target - lp.A_ineq[act][:, fixed] @ xs[fixed])
    Aa = np.vstack(rows)
    ra = np.concatenate(rhs)
    if np.any(free) and Aa.shape[0]:
        B = Aa[:, free]
        # minimum-norm correction keeps the point close to the interior iterate
        resid = ra - B @ xs[free]
        corr = sla.lstsq(B, resid, check_finite=False)[0]
        xs[free] = xs[free] + corr

    # duals: c = A_eq' y + A_act' w + z, with z nonzero only on fixed columns
    Ad = np.vstack([lp.A_eq, lp.A_ineq[act]]) if np.any(act) else lp.A_eq
    if Ad.shape[0]:
        sol = sla.lstsq(Ad[:, free].T, lp.c[free], check_finite=False)[0] if np.any(free) else \
            np.concatenate([y_eq, y_in[act]])
        ye = sol[:len(lp.b_eq)]
        yi = np.zeros(len(lp.lo_ineq))
        yi[act] = sol[len(lp.b_eq):]
    else:
        ye = np.zeros(0)
        yi = np.zeros(len(lp.lo_ineq))
    return xs, ye, yi


def _bound_duals(lp, y_eq, y_in):
    d = lp.c - lp.A_eq.T @ y_eq - lp.A_ineq.T @ y_in
    return np.maximum(d, 0.0), np.maximum(-d, 0.0)


def _assemble(lp, x, y_eq, y_in, status, it, history):
    z_lo, z_hi = _bound_duals(lp, y_eq, y_in)
    sol = LPSolution(status=status, x=x, obj=lp.objective(x), y_eq=y_eq, y_ineq=y_in,
                     z_lo=z_lo, z_hi=z_hi, iterations=it, history=history, solver="interior-point")
    from .problem import dual_objective
    sol.duality_gap = abs(sol.obj - dual_objective(lp, sol)) / (1.0 + abs(sol.obj))
    return sol


def _score(lp, sol):
    r = kkt_residuals(lp, sol)
    return max(r["primal"], r["dual"], r["complementarity"], sol.duality_gap)


def solve_interior_point(lp, params=None):
    """Solve a bounded-variable LP; returns an :class:`LPSolution` with full duals."""
    params = params or IPParams()
    sf = to_standard_form(lp)
    if sf.A.shape[1] == 0:
        x = sf.x_shift[:lp.n].copy()
        ok = np.allclose(sf.b, 0.0)
        return LPSolution(OPTIMAL if ok else INFEASIBLE, x=x, obj=lp.objective(x),
                          y_eq=np.zeros(len(lp.b_eq)), y_ineq=np.zeros(len(lp.lo_ineq)),
                          z_lo=np.zeros(lp.n), z_hi=np.zeros(lp.n), solver="interior-point")
    r, sc = _equilibrate(sf.A)
    As = sf.A * r[:, None] * sc[None, :]
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        xs, ys, zs, tau, kappa, status, it, history = _hsd(As, r * sf.b, sc * sf.c, params)
    log.debug("ipm: %s after %d iterations (tau=%.3g kappa=%.3g)", status, it, tau, kappa)
    ys = r * ys
    if status in (INFEASIBLE, UNBOUNDED) and not _ray_verified(sf, status, sc * xs, ys):
        log.debug("ipm: %s claim not confirmed by its ray", status)
        status = ITERATION_LIMIT
    if status not in (OPTIMAL, STALLED):
        cert = {"tau": float(tau), "kappa": float(kappa),
                "farkas_y": (ys / max(kappa, 1e-300)).tolist()}
        return LPSolution(status=status, iterations=it, history=history, certificate=cert,
                          solver="interior-point")
    v = sf.x_shift + sf.P @ (sc * xs / tau)
    x = v[:lp.n]
    y = ys / tau
    me, mi = sf.n_eq, sf.n_ineq
    y_eq, y_in = y[:me], y[me:me + mi]
    best = _assemble(lp, x, y_eq, y_in, OPTIMAL, it, history)
    if params.polish or status == STALLED:
        try:
            xp, yep, yip = _polish(lp, x, y_eq, y_in, params.tol)
        except (sla.LinAlgError, ValueError):
            xp = None
        if xp is not None:
            # the snapped vertex with the interior duals usually certifies best on
            # degenerate problems; prefer a snapped point whenever it certifies
            cands = [_assemble(lp, xp, y_eq, y_in, OPTIMAL, it, history),
                     _assemble(lp, xp, yep, yip, OPTIMAL, it, history)]
            good = [cd for cd in cands if _score(lp, cd) <= POLISH_ACCEPT]
            if good:
                best = good[0]
            else:
                best = min(cands + [best], key=lambda cd: _score(lp, cd))
    if status == STALLED:
        # accept a stalled run only when the refined point certifies optimality
        if _score(lp, best) > params.tol:
            log.debug("ipm stalled at KKT score %.3g", _score(lp, best))
            best.status = ITERATION_LIMIT
    return best
