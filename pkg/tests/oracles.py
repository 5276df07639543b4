"""Independent reference computations in sympy rationals.

Nothing here calls into the package beyond reading structure constants and
metrics, so agreement with it is a real cross-check.
"""
from itertools import combinations_with_replacement

import numpy as np
import sympy


def _mat(a):
    a = np.asarray(a, dtype=object)
    return sympy.Matrix(a.shape[0], a.shape[1] if a.ndim > 1 else 1,
                        [sympy.Rational(str(x)) if not isinstance(x, float) else sympy.nsimplify(x) for x in a.ravel()])


def _constants(alg):
    c = np.asarray(alg.structure_constants, dtype=object)
    n = c.shape[0]
    return [[[sympy.Rational(str(c[k, i, j])) for j in range(n)] for i in range(n)] for k in range(n)], n


def _bracket(C, n, x, y):
    return sympy.Matrix([sum(C[k][i][j] * x[i] * y[j] for i in range(n) for j in range(n)) for k in range(n)])


def arnold_q(alg):
    """``q~(z, x) = g^{-1} ad_x^T g z`` straight from ``<[x,y],z> = <q~(z,x), y>``."""
    C, n = _constants(alg)
    g = _mat(alg.metric)
    ginv = g.inv()

    def ad(x):
        return sympy.Matrix(n, n, lambda k, j: sum(C[k][i][j] * x[i] for i in range(n)))

    def qt(z, x):
        return ginv * ad(x).T * g * z

    return lambda u, v: (qt(u, v) + qt(v, u)) / 2


def _span_rank(vectors, n):
    if not vectors:
        return sympy.zeros(0, n), 0
    M = sympy.Matrix.hstack(*vectors).T
    R, piv = M.rref()
    return R[: len(piv), :], len(piv)


def langevin_closure_rank(alg, columns):
    """Rank of the smallest q-closed subspace containing the forcing columns."""
    n = alg.dim
    q = arnold_q(alg)
    vecs = [sympy.Matrix([sympy.Rational(str(x)) for x in col]) for col in columns]
    basis, r = _span_rank(vecs, n)
    while True:
        rows = [basis.row(i).T for i in range(r)]
        new = rows + [q(u, v) for u, v in combinations_with_replacement(rows, 2)]
        basis2, r2 = _span_rank(new, n)
        if r2 == r:
            return r
        basis, r = basis2, r2


def p_hull_rank(alg, samples):
    """Rank of the smallest subalgebra containing ``Z - Z`` and invariant under every ``ad z``."""
    C, n = _constants(alg)
    pts = [sympy.Matrix([sympy.Rational(str(x)) for x in p]) for p in samples]
    diffs = [p - pts[0] for p in pts[1:]]
    basis, r = _span_rank(diffs, n)
    if r == 0:
        return 0
    while True:
        rows = [basis.row(i).T for i in range(r)]
        new = list(rows)
        new += [_bracket(C, n, u, v) for u in rows for v in rows]
        new += [_bracket(C, n, z, u) for z in pts for u in rows]
        basis2, r2 = _span_rank(new, n)
        if r2 == r:
            return r
        basis, r = basis2, r2
