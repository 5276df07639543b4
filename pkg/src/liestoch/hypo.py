"""Algebraic Hörmander checks for the two forcing models.

Langevin model: the Fokker-Planck operator is hypoelliptic iff the smallest
subspace containing the forcing range and closed under the symmetric Arnold
form is the whole algebra. Constrained model on ``G x Z``: hypoelliptic iff
the p-hull of ``Z`` (smallest subalgebra containing ``Z - Z`` and invariant
under ``ad z0``) is the whole algebra.

Both are computed by saturating a subspace until its rank stops growing,
either in exact rationals (canonical RREF bases) or in floats (orthonormal
bases with a relative singular value cutoff).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import lie, linalg
from .lie import ArnoldForm, LieAlgebraSpec
from .linalg import RANK_RTOL, is_exact, to_exact, to_float

NEAR_CUTOFF_FACTOR = 10.0


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    vectors: np.ndarray  # (rank, n), rows independent

    @classmethod
    def span(cls, vectors, dim: int | None = None, exact: bool | None = None, rtol: float = RANK_RTOL):
        vectors = np.asarray(vectors, dtype=object if exact or (exact is None and is_exact(vectors)) else float)
        if vectors.ndim == 1:
            vectors = vectors.reshape(-1, dim) if dim else vectors[None, :]
        basis, _ = linalg.row_basis(vectors, exact=exact, rtol=rtol)
        return cls(basis)

    @property
    def rank(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def exact(self) -> bool:
        return is_exact(self.vectors)

    def contains(self, v, tol: float = 1e-9) -> bool:
        if self.exact and is_exact(v):
            return linalg.in_span_exact(self.vectors, v)
        return linalg.span_residual(self.vectors, v) <= tol * max(1.0, float(np.linalg.norm(to_float(v))))

    def same_space(self, other: "SubspaceBasis", tol: float = 1e-9) -> bool:
        if self.rank != other.rank:
            return False
        return all(self.contains(v, tol) for v in other.vectors)

    def to_list(self):
        if self.exact:
            return [[str(x) for x in row] for row in self.vectors]
        return [[float(x) + 0.0 for x in row] for row in self.vectors]


@dataclass(frozen=True, eq=False)
class ForcingSpec:
    sigma: np.ndarray  # (n, r), columns are forcing directions

    def __post_init__(self):
        if self.sigma.ndim != 2 or self.sigma.shape[1] < 1:
            raise ValueError("sigma must be an (n, r) array with r >= 1")
        if np.any(np.all(to_float(self.sigma) == 0.0, axis=0)):
            raise ValueError("sigma has a zero column")

    @classmethod
    def from_columns(cls, columns, exact: bool = False):
        cols = np.asarray(columns, dtype=object if exact else float)
        if cols.ndim == 1:
            cols = cols[None, :]
        return cls(cols.T.copy())

    @property
    def h(self):
        return self.sigma @ self.sigma.T

    def range_basis(self, exact: bool | None = None, rtol: float = RANK_RTOL) -> SubspaceBasis:
        return SubspaceBasis.span(self.sigma.T, exact=exact, rtol=rtol)


@dataclass(eq=False)
class HullReport:
    verdict: bool | None  # None when inconclusive
    closure_basis: SubspaceBasis
    iterations: int
    witness: SubspaceBasis | None
    mode: str
    tolerance: float | None
    kind: str
    rank_history: list = field(default_factory=list)
    certified: bool = True
    notes: list = field(default_factory=list)

    @property
    def inconclusive(self) -> bool:
        return self.verdict is None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "verdict": self.verdict,
            "inconclusive": self.inconclusive,
            "rank": self.closure_basis.rank,
            "dim": self.closure_basis.dim,
            "closure_basis": self.closure_basis.to_list(),
            "witness": None if self.witness is None else self.witness.to_list(),
            "iterations": self.iterations,
            "rank_history": list(self.rank_history),
            "mode": self.mode,
            "tolerance": self.tolerance,
            "certified": self.certified,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# closure machinery
# ---------------------------------------------------------------------------


def _saturate(basis: np.ndarray, generate, exact: bool, rtol: float, max_iter: int):
    """Grow ``basis`` by ``generate(basis)`` until the rank is stable.

    Returns ``(basis, iterations, rank_history, margin)``.
    """
    history = [basis.shape[0]]
    margin = np.inf
    it = 0
    while it < max_iter:
        it += 1
        if basis.shape[0] == 0:
            break
        new = generate(basis)
        stacked = np.concatenate([basis, new.reshape(-1, basis.shape[1])], axis=0)
        basis, m = linalg.row_basis(stacked, exact=exact, rtol=rtol)
        margin = min(margin, m)
        history.append(basis.shape[0])
        if history[-1] == history[-2]:
            break
    return basis, it, history, margin


def _pairwise_q(form_q: np.ndarray):
    def gen(B):
        return np.einsum("kij,ai,bj->abk", form_q, B, B)

    return gen


def _pairwise_bracket(c: np.ndarray, z0=None):
    def gen(B):
        out = np.einsum("kij,ai,bj->abk", c, B, B).reshape(-1, B.shape[1])
        if z0 is not None:
            out = np.concatenate([out, np.einsum("kij,i,bj->bk", c, z0, B)], axis=0)
        return out

    return gen


def _as_mode(arr, exact: bool):
    return to_exact(arr) if exact else to_float(arr)


def q_invariant_closure(seed: SubspaceBasis, form: ArnoldForm, rtol: float = RANK_RTOL) -> SubspaceBasis:
    """Smallest subspace containing ``seed`` and closed under the symmetric Arnold form."""
    basis, *_ = _q_closure(seed, form, rtol)
    return SubspaceBasis(basis)


def _q_closure(seed: SubspaceBasis, form: ArnoldForm, rtol: float):
    if seed.rank == 0:
        raise ValueError("seed must be nonempty")
    exact = seed.exact and form.exact
    q = _as_mode(form.qsym, exact)
    start, m0 = linalg.row_basis(_as_mode(seed.vectors, exact), exact=exact, rtol=rtol)
    basis, it, hist, margin = _saturate(start, _pairwise_q(q), exact, rtol, form.dim + 1)
    return basis, it, hist, min(m0, margin)


def lie_generated_subalgebra(S: SubspaceBasis, alg: LieAlgebraSpec, rtol: float = RANK_RTOL) -> SubspaceBasis:
    if S.rank == 0:
        raise ValueError("generating set must be nonempty")
    exact = S.exact and alg.exact
    c = _as_mode(alg.structure_constants, exact)
    start, _ = linalg.row_basis(_as_mode(S.vectors, exact), exact=exact, rtol=rtol)
    basis, *_ = _saturate(start, _pairwise_bracket(c), exact, rtol, alg.dim + 1)
    return SubspaceBasis(basis)


def p_hull(samples, alg: LieAlgebraSpec, exact: bool | None = None, rtol: float = RANK_RTOL) -> SubspaceBasis:
    """Smallest subalgebra containing all differences of ``samples`` and
    invariant under ``ad`` of the first sample."""
    basis, *_ = _p_hull(samples, alg, exact, rtol)
    return SubspaceBasis(basis)


def _p_hull(samples, alg, exact, rtol):
    samples = np.asarray(samples, dtype=object if (exact or (exact is None and is_exact(samples))) else float)
    if samples.ndim == 1:
        samples = samples[None, :]
    if samples.shape[0] == 0:
        raise ValueError("p_hull needs at least one sample")
    if exact is None:
        exact = is_exact(samples) and alg.exact
    samples = _as_mode(samples, exact)
    c = _as_mode(alg.structure_constants, exact)
    z0 = samples[0]
    diffs = samples[1:] - z0
    start, m0 = linalg.row_basis(diffs.reshape(-1, alg.dim), exact=exact, rtol=rtol)
    basis, it, hist, margin = _saturate(start, _pairwise_bracket(c, z0), exact, rtol, alg.dim + 1)
    return basis, it, hist, min(m0, margin)


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------


def _closed_under(basis: np.ndarray, generate, tol: float = 1e-8) -> bool:
    if basis.shape[0] == 0:
        return True
    images = generate(basis).reshape(-1, basis.shape[1])
    if is_exact(basis) and is_exact(images):
        r = len(linalg.rref(basis)[1])
        return len(linalg.rref(np.vstack([basis, images]))[1]) == r
    bf = to_float(basis)
    scale = max(1.0, float(np.max(np.abs(to_float(images)), initial=0.0)))
    return all(linalg.span_residual(bf, v) <= tol * scale for v in to_float(images))


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------


def _rationalize_vectors(arr):
    out = np.empty(np.shape(arr), dtype=object)
    for idx, v in np.ndenumerate(np.asarray(arr)):
        if isinstance(v, Fraction):
            out[idx] = v
            continue
        f = Fraction(float(v)).limit_denominator(10**6)
        if float(f) != float(v):
            raise lie.AlgebraError("not rational")
        out[idx] = f
    return out


def check_langevin_hormander(
    alg: LieAlgebraSpec,
    form: ArnoldForm | None,
    forcing: ForcingSpec,
    exact: bool = False,
    rtol: float = RANK_RTOL,
) -> HullReport:
    """Nondegeneracy of the Arnold form with respect to the forcing range.

    Float mode falls back to exact rationals when a rank decision lands within
    a factor 10 of the cutoff, or reports inconclusive if the inputs have no
    exact form.
    """
    notes = []
    if exact:
        try:
            ealg = alg.as_exact()
            sigma = _rationalize_vectors(forcing.sigma)
        except lie.AlgebraError as exc:
            raise lie.AlgebraError(f"exact mode needs rational inputs: {exc}") from exc
        eform = lie.arnold_form(ealg)
        seed = SubspaceBasis.span(sigma.T, exact=True)
        basis, it, hist, _ = _q_closure(seed, eform, rtol)
        return _langevin_report(ealg, eform, basis, it, hist, "exact", None, notes)

    falg = alg.as_float()
    fform = (form or lie.arnold_form(alg)).as_float()
    seed_rows, m_seed = linalg.row_basis(to_float(forcing.sigma).T, exact=False, rtol=rtol)
    basis, it, hist, margin = _q_closure(SubspaceBasis(seed_rows), fform, rtol)
    margin = min(margin, m_seed)
    if margin < NEAR_CUTOFF_FACTOR:
        try:
            rep = check_langevin_hormander(alg, None, forcing, exact=True, rtol=rtol)
            rep.notes.append(f"float rank decision within {margin:.3g}x of cutoff; recomputed exactly")
            return rep
        except lie.AlgebraError:
            rep = _langevin_report(falg, fform, basis, it, hist, "float", rtol, notes)
            rep.verdict = None
            rep.notes.append(f"float rank decision within {margin:.3g}x of cutoff and inputs not rational")
            return rep
    return _langevin_report(falg, fform, basis, it, hist, "float", rtol, notes)


def _langevin_report(alg, form, basis, it, hist, mode, rtol, notes):
    verdict = basis.shape[0] == alg.dim
    closure = SubspaceBasis(basis)
    certified = _closed_under(basis, _pairwise_q(form.qsym if mode == "exact" else to_float(form.qsym)))
    return HullReport(
        verdict=verdict,
        closure_basis=closure,
        iterations=it,
        witness=None if verdict else closure,
        mode=mode,
        tolerance=rtol,
        kind="langevin",
        rank_history=hist,
        certified=certified,
        notes=notes,
    )


def check_constrained_hormander(
    chart,
    alg: LieAlgebraSpec,
    n_samples: int = 8,
    max_samples: int = 4096,
    exact: bool = False,
    rtol: float = RANK_RTOL,
) -> HullReport:
    """p-hull test on points sampled from a chart.

    Sample counts double from ``n_samples`` until the hull rank has not grown
    over two consecutive doublings. Analyticity of the chart is assumed, not
    verified.
    """
    notes = [
        "chart assumed analytic (not verified)",
        "sample adequacy: rank stable over two consecutive doublings",
    ]
    alg_m = alg.as_exact() if exact else alg.as_float()
    k = max(1, int(n_samples))
    ranks = []
    stable = 0
    result = None
    margin = np.inf
    while True:
        pts = chart.sample_points(k)
        if exact:
            pts = to_exact(pts)
        basis, it, hist, m = _p_hull(pts, alg_m, exact, rtol)
        margin = min(margin, m)
        r = basis.shape[0]
        if ranks and r == ranks[-1]:
            stable += 1
        else:
            stable = 0
        ranks.append(r)
        result = (basis, it, hist)
        if stable >= 2 or r == alg.dim:
            break
        if k * 2 > max_samples:
            closure = SubspaceBasis(basis)
            return HullReport(None, closure, it, None, "exact" if exact else "float", None if exact else rtol,
                              "constrained", ranks, True, notes + [f"rank did not stabilize by {k} samples"])
        k *= 2
    basis, it, hist = result
    verdict = basis.shape[0] == alg.dim
    z0 = _as_mode(chart.sample_points(1)[0], exact)
    c = _as_mode(alg_m.structure_constants, exact)
    certified = _closed_under(basis, _pairwise_bracket(c, z0))
    closure = SubspaceBasis(basis)
    notes.append(f"samples used: {k}")
    rep = HullReport(verdict, closure, it, None if verdict else closure, "exact" if exact else "float",
                     None if exact else rtol, "constrained", ranks, certified, notes)
    if not exact and margin < NEAR_CUTOFF_FACTOR:
        rep.verdict = None
        rep.notes.append(f"rank decision within {margin:.3g}x of cutoff")
    return rep


def basis_subsets(n: int):
    """All nonempty subsets of ``range(n)`` in a fixed order."""
    from itertools import combinations

    for r in range(1, n + 1):
        yield from combinations(range(n), r)
