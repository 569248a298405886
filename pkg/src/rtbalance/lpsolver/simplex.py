"""Bounded-variable revised simplex with Bland's rule.

Used as a correctness oracle for the interior point solver. Row surpluses
``s = A_ineq x`` become bounded columns, so every constraint is an equality
and every variable carries its own (possibly infinite) bounds. Phase one
minimises the sum of artificials; phase two pins them to zero.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .problem import INFEASIBLE, ITERATION_LIMIT, OPTIMAL, UNBOUNDED, LPSolution, dual_objective

_EPS = 1e-9


class _Tableau:
    def __init__(self, A, b, lo, hi):
        self.A, self.b, self.lo, self.hi = A, b, lo, hi
        m, n = A.shape
        self.m, self.n = m, n

    def basis_solve(self, basis, rhs, transpose=False):
        B = self.A[:, basis]
        return sla.solve(B.T if transpose else B, rhs, check_finite=False)


def _initial_values(lo, hi):
    v = np.zeros(len(lo))
    for j, (l, h) in enumerate(zip(lo, hi)):
        if np.isfinite(l):
            v[j] = l
        elif np.isfinite(h):
            v[j] = h
    return v


def _simplex_phase(tab, c, basis, v, max_iter):
    """Run Bland-rule bounded simplex from a feasible basis; mutates basis and v."""
    A, lo, hi = tab.A, tab.lo, tab.hi
    n = tab.n
    for it in range(max_iter):
        pi = tab.basis_solve(basis, c[basis], transpose=True)
        d = c - A.T @ pi
        in_basis = np.zeros(n, dtype=bool)
        in_basis[basis] = True
        enter, direction = -1, 0
        for j in range(n):
            if in_basis[j] or lo[j] == hi[j]:
                continue
            at_lo = np.isfinite(lo[j]) and v[j] <= lo[j] + _EPS
            at_hi = np.isfinite(hi[j]) and v[j] >= hi[j] - _EPS
            if d[j] < -_EPS and not at_hi:
                enter, direction = j, 1
                break
            if d[j] > _EPS and not at_lo:
                enter, direction = j, -1
                break
        if enter < 0:
            return OPTIMAL, it, pi
        alpha = tab.basis_solve(basis, A[:, enter])
        # step t >= 0 along v_enter += direction * t, v_B -= direction * t * alpha
        t_best = hi[enter] - lo[enter]
        leave = -1
        for pos, bj in enumerate(basis):
            rate = direction * alpha[pos]
            if rate > _EPS:
                lim = (v[bj] - lo[bj]) / rate if np.isfinite(lo[bj]) else np.inf
            elif rate < -_EPS:
                lim = (hi[bj] - v[bj]) / -rate if np.isfinite(hi[bj]) else np.inf
            else:
                continue
            if not np.isfinite(lim):
                continue
            lim = max(lim, 0.0)
            if lim < t_best - 1e-12 or (abs(lim - t_best) <= 1e-12 and leave >= 0
                                         and bj < basis[leave]):
                t_best, leave = lim, pos
        if not np.isfinite(t_best):
            return UNBOUNDED, it, pi
        v[enter] += direction * t_best
        v[basis] -= direction * t_best * alpha
        if leave >= 0:
            out = basis[leave]
            # snap the leaving variable onto the bound it reached
            rate = direction * alpha[leave]
            v[out] = lo[out] if rate > 0 else hi[out]
            basis[leave] = enter
    return ITERATION_LIMIT, max_iter, None


def solve_simplex(lp, max_iter=None):
    """Vertex-optimal solution of ``lp`` with basis duals."""
    n, me, mi = lp.n, len(lp.b_eq), len(lp.lo_ineq)
    m = me + mi
    A = np.zeros((m, n + mi))
    A[:me, :n] = lp.A_eq
    A[me:, :n] = lp.A_ineq
    A[me:, n:] = -np.eye(mi)
    b = np.concatenate([lp.b_eq, np.zeros(mi)])
    lo = np.concatenate([lp.lo, lp.lo_ineq])
    hi = np.concatenate([lp.hi, lp.hi_ineq])
    c = np.concatenate([lp.c, np.zeros(mi)])
    nx = n + mi
    max_iter = max_iter or 50 * (m + nx + 10)

    v = _initial_values(lo, hi)
    r = b - A @ v
    sign = np.where(r >= 0, 1.0, -1.0)
    Aa = np.hstack([A, np.diag(sign)])
    lo_a = np.concatenate([lo, np.zeros(m)])
    hi_a = np.concatenate([hi, np.full(m, np.inf)])
    va = np.concatenate([v, np.abs(r)])
    basis = list(range(nx, nx + m))

    tab = _Tableau(Aa, b, lo_a, hi_a)
    c1 = np.concatenate([np.zeros(nx), np.ones(m)])
    status, it1, _ = _simplex_phase(tab, c1, basis, va, max_iter)
    if status == ITERATION_LIMIT:
        return LPSolution(status=ITERATION_LIMIT, iterations=it1, solver="simplex")
    infeas = float(np.sum(va[nx:]))
    if infeas > 1e-7 * (1.0 + float(np.max(np.abs(b), initial=0.0))):
        return LPSolution(status=INFEASIBLE, iterations=it1, solver="simplex",
                          certificate={"phase1_infeasibility": infeas})
    # phase two: artificials fixed at zero
    tab.hi = hi_a.copy()
    tab.hi[nx:] = 0.0
    va[nx:] = 0.0
    c2 = np.concatenate([c, np.zeros(m)])
    status, it2, pi = _simplex_phase(tab, c2, basis, va, max_iter)
    if status != OPTIMAL:
        return LPSolution(status=status, iterations=it1 + it2, solver="simplex")
    # recompute basic values from the basis for accuracy
    nonbasic = np.ones(nx + m, dtype=bool)
    nonbasic[basis] = False
    va[basis] = tab.basis_solve(basis, b - Aa[:, nonbasic] @ va[nonbasic])
    x = va[:n]
    y_eq, y_in = pi[:me], pi[me:]
    dcol = lp.c - lp.A_eq.T @ y_eq - lp.A_ineq.T @ y_in
    sol = LPSolution(status=OPTIMAL, x=x.copy(), obj=lp.objective(x), y_eq=y_eq, y_ineq=y_in,
                     z_lo=np.maximum(dcol, 0.0), z_hi=np.maximum(-dcol, 0.0),
                     iterations=it1 + it2, solver="simplex")
    sol.duality_gap = abs(sol.obj - dual_objective(lp, sol)) / (1.0 + abs(sol.obj))
    return sol
