"""Rank and span computations in exact rational or floating arithmetic.

Exact arrays are numpy object arrays holding :class:`fractions.Fraction`.
Everything here dispatches on dtype so the closure algorithms above it can
stay agnostic of the arithmetic.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np

RANK_RTOL = 1e-10


def is_exact(arr) -> bool:
    return isinstance(arr, np.ndarray) and arr.dtype == object


def to_exact(arr) -> np.ndarray:
    """Convert to an object array of Fractions.

    Floats are converted by their exact binary value; strings like ``"1/3"``
    are parsed.
    """
    arr = np.asarray(arr, dtype=object)
    out = np.empty(arr.shape, dtype=object)
    for idx, v in np.ndenumerate(arr):
        out[idx] = Fraction(v) if not isinstance(v, Fraction) else v
    return out


def to_float(arr) -> np.ndarray:
    return np.asarray(arr, dtype=float)


def exact_zeros(shape) -> np.ndarray:
    out = np.empty(shape, dtype=object)
    out.fill(Fraction(0))
    return out


def exact_eye(n: int) -> np.ndarray:
    out = exact_zeros((n, n))
    for i in range(n):
        out[i, i] = Fraction(1)
    return out


def rref(mat) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form over the rationals.

    Returns the reduced matrix and the pivot columns. The nonzero rows of the
    result are a canonical basis of the row space, so two generating sets of
    the same subspace give identical output.
    """
    m = [list(row) for row in to_exact(np.atleast_2d(mat))]
    n_rows = len(m)
    n_cols = len(m[0]) if n_rows else 0
    pivots: list[int] = []
    r = 0
    for c in range(n_cols):
        piv = next((i for i in range(r, n_rows) if m[i][c] != 0), None)
        if piv is None:
            continue
        m[r], m[piv] = m[piv], m[r]
        p = m[r][c]
        m[r] = [v / p for v in m[r]]
        for i in range(n_rows):
            if i != r and m[i][c] != 0:
                f = m[i][c]
                m[i] = [a - f * b for a, b in zip(m[i], m[r])]
        pivots.append(c)
        r += 1
        if r == n_rows:
            break
    out = np.empty((n_rows, n_cols), dtype=object)
    for i, row in enumerate(m):
        out[i, :] = row
    return out, pivots


def exact_inverse(mat) -> np.ndarray:
    mat = to_exact(mat)
    n = mat.shape[0]
    aug = np.concatenate([mat, exact_eye(n)], axis=1)
    red, pivots = rref(aug)
    if pivots[:n] != list(range(n)):
        raise np.linalg.LinAlgError("singular matrix")
    return red[:, n:]


def inverse(mat) -> np.ndarray:
    if is_exact(mat):
        return exact_inverse(mat)
    return np.linalg.inv(mat)


def row_basis(vectors, exact: bool | None = None, rtol: float = RANK_RTOL):
    """Basis of the span of the rows of ``vectors``.

    Returns ``(basis, margin)``. In exact mode the basis is the nonzero part
    of the RREF and ``margin`` is ``inf``. In float mode the basis is
    orthonormal (right singular vectors above ``rtol * s_max``) and
    ``margin`` is the smallest ratio between a singular value and the cutoff
    on either side of it, so callers can tell when the rank decision was
    close.
    """
    vectors = np.atleast_2d(vectors)
    n = vectors.shape[1]
    if exact is None:
        exact = is_exact(vectors)
    if vectors.shape[0] == 0:
        return (exact_zeros((0, n)) if exact else np.zeros((0, n))), np.inf
    if exact:
        red, pivots = rref(vectors)
        return red[: len(pivots)], np.inf
    vf = to_float(vectors)
    _, s, vt = np.linalg.svd(vf, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((0, n)), np.inf
    cutoff = rtol * s[0]
    keep = s > cutoff
    # margin: how far the nearest singular value sits from the cutoff, as a
    # multiplicative factor (>= 1)
    ratios = np.where(s > 0, s / cutoff, 0.0)
    margin = np.inf
    for r in ratios:
        if r == 0.0:
            continue
        margin = min(margin, r if r >= 1.0 else 1.0 / r)
    return vt[keep], margin


def rank(vectors, exact: bool | None = None, rtol: float = RANK_RTOL) -> int:
    return row_basis(vectors, exact=exact, rtol=rtol)[0].shape[0]


def span_residual(basis, v) -> float:
    """Distance from ``v`` to the row span of ``basis`` (float)."""
    v = to_float(v)
    b = to_float(np.atleast_2d(basis))
    if b.shape[0] == 0:
        return float(np.linalg.norm(v))
    coef, *_ = np.linalg.lstsq(b.T, v, rcond=None)
    return float(np.linalg.norm(b.T @ coef - v))


def in_span_exact(basis, v) -> bool:
    basis = to_exact(np.atleast_2d(basis))
    if basis.shape[0] == 0:
        return all(x == 0 for x in to_exact(v))
    r0 = len(rref(basis)[1])
    r1 = len(rref(np.vstack([basis, to_exact(v)[None, :]]))[1])
    return r0 == r1
