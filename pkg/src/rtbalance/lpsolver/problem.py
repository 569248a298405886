"""Bounded-variable linear programs and their solutions.

Sign conventions for the duals (minimisation, ``y = d obj / d rhs``):

* ``y_eq``      -- sensitivity of the optimum to ``b_eq``.
* ``y_ineq``    -- one signed value per two-sided row; positive when the lower
  side is active, negative when the upper side is active.
* ``z_lo, z_hi`` -- non-negative bound multipliers, so that
  ``c - A_eq' y_eq - A_ineq' y_ineq - z_lo + z_hi = 0`` at optimality.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration-limit"


class LPError(ValueError):
    pass


@dataclass
class LinearProgram:
    c: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_ineq: np.ndarray
    lo_ineq: np.ndarray
    hi_ineq: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    names: list = field(default_factory=list)
    eq_names: list = field(default_factory=list)
    ineq_names: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.c)
        self.c = np.asarray(self.c, dtype=float)
        self.A_eq = np.asarray(self.A_eq, dtype=float).reshape(-1, n)
        self.b_eq = np.asarray(self.b_eq, dtype=float).reshape(-1)
        self.A_ineq = np.asarray(self.A_ineq, dtype=float).reshape(-1, n)
        self.lo_ineq = np.asarray(self.lo_ineq, dtype=float).reshape(-1)
        self.hi_ineq = np.asarray(self.hi_ineq, dtype=float).reshape(-1)
        self.lo = np.asarray(self.lo, dtype=float).reshape(-1)
        self.hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if not self.names:
            self.names = [f"x{j}" for j in range(n)]
        if not self.eq_names:
            self.eq_names = [f"eq{i}" for i in range(len(self.b_eq))]
        if not self.ineq_names:
            self.ineq_names = [f"row{i}" for i in range(len(self.lo_ineq))]
        self.check()

    @property
    def n(self):
        return len(self.c)

    def check(self):
        n = self.n
        problems = []
        if self.A_eq.shape != (len(self.b_eq), n):
            problems.append("A_eq/b_eq shape mismatch")
        if self.A_ineq.shape[0] != len(self.lo_ineq) or len(self.lo_ineq) != len(self.hi_ineq):
            problems.append("A_ineq/lo_ineq/hi_ineq shape mismatch")
        if len(self.lo) != n or len(self.hi) != n:
            problems.append("bound vectors have the wrong length")
        if np.any(self.lo > self.hi):
            problems.append("lo > hi for some variable")
        if np.any(self.lo_ineq > self.hi_ineq):
            problems.append("lo_ineq > hi_ineq for some row")
        if len(set(self.names)) != len(self.names) or len(self.names) != n:
            problems.append("variable names must be unique, one per variable")
        if problems:
            raise LPError("; ".join(problems))

    @classmethod
    def build(cls, c, A_eq=None, b_eq=None, A_ineq=None, lo_ineq=None, hi_ineq=None,
              lo=None, hi=None, names=None, eq_names=None, ineq_names=None):
        n = len(c)
        A_eq = np.zeros((0, n)) if A_eq is None else A_eq
        b_eq = np.zeros(0) if b_eq is None else b_eq
        A_ineq = np.zeros((0, n)) if A_ineq is None else np.atleast_2d(A_ineq)
        m = A_ineq.shape[0]
        lo_ineq = np.full(m, -np.inf) if lo_ineq is None else lo_ineq
        hi_ineq = np.full(m, np.inf) if hi_ineq is None else hi_ineq
        lo = np.zeros(n) if lo is None else lo
        hi = np.full(n, np.inf) if hi is None else hi
        return cls(c, A_eq, b_eq, A_ineq, lo_ineq, hi_ineq, lo, hi,
                   list(names or []), list(eq_names or []), list(ineq_names or []))

    def objective(self, x):
        return float(self.c @ x)


@dataclass
class LPSolution:
    status: str
    x: np.ndarray | None = None
    obj: float = float("nan")
    y_eq: np.ndarray | None = None
    y_ineq: np.ndarray | None = None
    z_lo: np.ndarray | None = None
    z_hi: np.ndarray | None = None
    iterations: int = 0
    duality_gap: float = float("nan")
    certificate: dict | None = None
    history: list = field(default_factory=list)
    solver: str = ""

    @property
    def optimal(self):
        return self.status == OPTIMAL

    def value(self, lp, name):
        return float(self.x[lp.names.index(name)])


def kkt_residuals(lp, sol):
    """Scaled primal, dual and complementarity residuals of a solution."""
    x = sol.x
    ax_eq = lp.A_eq @ x
    ax_in = lp.A_ineq @ x
    scale_b = 1.0 + max(np.max(np.abs(lp.b_eq), initial=0.0),
                        np.max(np.abs(lp.lo_ineq[np.isfinite(lp.lo_ineq)]), initial=0.0),
                        np.max(np.abs(lp.hi_ineq[np.isfinite(lp.hi_ineq)]), initial=0.0),
                        np.max(np.abs(lp.lo[np.isfinite(lp.lo)]), initial=0.0),
                        np.max(np.abs(lp.hi[np.isfinite(lp.hi)]), initial=0.0))
    viol = [np.abs(ax_eq - lp.b_eq),
            np.maximum(lp.lo_ineq - ax_in, 0.0), np.maximum(ax_in - lp.hi_ineq, 0.0),
            np.maximum(lp.lo - x, 0.0), np.maximum(x - lp.hi, 0.0)]
    primal = max((float(np.max(v, initial=0.0)) for v in viol), default=0.0) / scale_b

    r = lp.c - lp.A_eq.T @ sol.y_eq - lp.A_ineq.T @ sol.y_ineq - sol.z_lo + sol.z_hi
    dual = float(np.max(np.abs(r), initial=0.0)) / (1.0 + float(np.max(np.abs(lp.c), initial=0.0)))
    # sign feasibility of the multipliers
    bad = [np.maximum(-sol.z_lo, 0), np.maximum(-sol.z_hi, 0),
           np.where(np.isfinite(lp.lo), 0.0, np.abs(sol.z_lo)),
           np.where(np.isfinite(lp.hi), 0.0, np.abs(sol.z_hi)),
           np.where(np.isfinite(lp.lo_ineq), 0.0, np.maximum(sol.y_ineq, 0.0)),
           np.where(np.isfinite(lp.hi_ineq), 0.0, np.maximum(-sol.y_ineq, 0.0))]
    dual = max(dual, max(float(np.max(v, initial=0.0)) for v in bad))

    def gap(mult, slack):
        slack = np.where(np.isfinite(slack), slack, 0.0)
        return np.abs(mult * slack)

    yl = np.maximum(sol.y_ineq, 0.0)
    yh = np.maximum(-sol.y_ineq, 0.0)
    comp = [gap(sol.z_lo, x - lp.lo), gap(sol.z_hi, lp.hi - x),
            gap(yl, ax_in - lp.lo_ineq), gap(yh, lp.hi_ineq - ax_in)]
    scale = 1.0 + abs(sol.obj)
    complementarity = max(float(np.max(v, initial=0.0)) for v in comp) / scale
    return {"primal": primal, "dual": dual, "complementarity": complementarity}


def dual_objective(lp, sol):
    def fin(v):
        return np.where(np.isfinite(v), v, 0.0)
    yl = np.maximum(sol.y_ineq, 0.0)
    yh = np.maximum(-sol.y_ineq, 0.0)
    return float(lp.b_eq @ sol.y_eq + fin(lp.lo_ineq) @ yl - fin(lp.hi_ineq) @ yh
                 + fin(lp.lo) @ sol.z_lo - fin(lp.hi) @ sol.z_hi)
