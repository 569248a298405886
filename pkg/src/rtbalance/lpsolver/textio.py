"""Plain-text LP dump for cross-checking with external tools.

Layout, one item per line::

    obj <name> <coef> ...
    eq <row> <rhs> : <name> <coef> ...
    row <row> <lo> <hi> : <name> <coef> ...
    bound <name> <lo> <hi>

Infinite bounds are written as ``-inf`` / ``inf``; zero coefficients omitted.
"""
from __future__ import annotations

import numpy as np

from .problem import LinearProgram


def _terms(names, coefs):
    return " ".join(f"{nm} {v:.17g}" for nm, v in zip(names, coefs) if v != 0.0)


def dump_lp(lp):
    out = [f"obj {_terms(lp.names, lp.c)}".rstrip()]
    for nm, row, rhs in zip(lp.eq_names, lp.A_eq, lp.b_eq):
        out.append(f"eq {nm} {rhs:.17g} : {_terms(lp.names, row)}".rstrip())
    for nm, row, lo, hi in zip(lp.ineq_names, lp.A_ineq, lp.lo_ineq, lp.hi_ineq):
        out.append(f"row {nm} {lo:.17g} {hi:.17g} : {_terms(lp.names, row)}".rstrip())
    for nm, lo, hi in zip(lp.names, lp.lo, lp.hi):
        out.append(f"bound {nm} {lo:.17g} {hi:.17g}")
    return "\n".join(out) + "\n"


def _pairs(tokens):
    return [(tokens[k], float(tokens[k + 1])) for k in range(0, len(tokens), 2)]


def parse_lp(text):
    """Inverse of :func:`dump_lp`."""
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    names = [ln[1] for ln in lines if ln[0] == "bound"]
    idx = {nm: k for k, nm in enumerate(names)}
    n = len(names)

    def vec(pairs):
        v = np.zeros(n)
        for nm, val in pairs:
            v[idx[nm]] = val
        return v

    c = np.zeros(n)
    A_eq, b_eq, eq_names = [], [], []
    A_in, lo_in, hi_in, in_names = [], [], [], []
    lo, hi = np.zeros(n), np.zeros(n)
    for ln in lines:
        kind = ln[0]
        if kind == "obj":
            c = vec(_pairs(ln[1:]))
        elif kind == "eq":
            sep = ln.index(":")
            eq_names.append(ln[1])
            b_eq.append(float(ln[2]))
            A_eq.append(vec(_pairs(ln[sep + 1:])))
        elif kind == "row":
            sep = ln.index(":")
            in_names.append(ln[1])
            lo_in.append(float(ln[2]))
            hi_in.append(float(ln[3]))
            A_in.append(vec(_pairs(ln[sep + 1:])))
        elif kind == "bound":
            lo[idx[ln[1]]] = float(ln[2])
            hi[idx[ln[1]]] = float(ln[3])
        else:
            raise ValueError(f"unknown LP line kind {kind!r}")
    return LinearProgram(c, np.array(A_eq).reshape(-1, n), np.array(b_eq),
                         np.array(A_in).reshape(-1, n), np.array(lo_in), np.array(hi_in),
                         lo, hi, names, eq_names, in_names)
