"""Lie algebras given by structure constants and a metric.

Conventions: ``c[k, i, j]`` is the coefficient of ``e_k`` in ``[e_i, e_j]``;
algebra vectors are contravariant coordinate arrays ``z[k]``; the metric is
only used to lower/raise indices inside :func:`arnold_form`,
:func:`energy` and :func:`momentum`.

Arrays may be float or object arrays of ``Fraction`` (exact mode). Exact
inputs give exact outputs for everything except the group-level functions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.linalg

from . import linalg
from .linalg import is_exact, to_exact, to_float

try:  # python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


class AlgebraError(ValueError):
    """Invalid algebra data or an operation the algebra cannot support."""


# ---------------------------------------------------------------------------
# groups
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MatrixGroup:
    """Faithful matrix representation ``e_i -> basis[i]``.

    Group elements are ``(d, d)`` arrays, batched along leading axes.
    """

    basis: np.ndarray
    orthogonal: bool = False
    exp_method: str = "pade"  # "rodrigues", "nilpotent" or "pade"
    blocks: tuple = ()  # for block-rodrigues: slices of algebra coords

    kind = "matrix"

    @property
    def d(self) -> int:
        return self.basis.shape[1]

    @property
    def coord_size(self) -> int:
        return self.d * self.d

    def identity(self, batch=()):
        return np.broadcast_to(np.eye(self.d), tuple(batch) + (self.d, self.d)).copy()

    def hat(self, x):
        return np.einsum("...i,ijk->...jk", np.asarray(x, dtype=float), self.basis)

    def vee(self, mats):
        flat = self.basis.reshape(self.basis.shape[0], -1)
        return np.asarray(mats).reshape(*np.shape(mats)[:-2], -1) @ np.linalg.pinv(flat)

    def exp(self, x):
        x = np.asarray(x, dtype=float)
        if self.exp_method == "rodrigues":
            if self.blocks:
                out = np.zeros(x.shape[:-1] + (self.d, self.d))
                for sl in self.blocks:
                    r = _rodrigues(x[..., sl])
                    b = sl.start
                    out[..., b : b + 3, b : b + 3] = r
                return out
            return _rodrigues(x)
        X = self.hat(x)
        if self.exp_method == "nilpotent":
            out = self.identity(X.shape[:-2])
            term = out.copy()
            for k in range(1, self.d):
                term = term @ X / k
                out = out + term
            return out
        return scipy.linalg.expm(X)

    def compose(self, a, b):
        return bmm(a, b)

    def inverse(self, a):
        if self.orthogonal:
            return np.swapaxes(a, -1, -2)
        return np.linalg.inv(a)

    def project(self, a):
        """Pull a drifting element back onto the group.

        For orthogonal groups one Newton-Schulz step towards the polar factor
        ``a (a^T a)^{-1/2}``; exact to rounding for the O(1e-15) drift of a
        single step.
        """
        if not self.orthogonal:
            return a
        ata = bmm(np.swapaxes(a, -1, -2), a)
        return bmm(a, 1.5 * np.eye(self.d) - 0.5 * ata)

    def adjoint_inverse(self, a):
        """Matrix ``A`` with ``a^{-1} E_j a = sum_i A[i, j] E_i``."""
        ainv = self.inverse(a)
        conj = np.einsum("...ab,jbc,...cd->...jad", ainv, self.basis, a)
        return np.swapaxes(self.vee(conj), -1, -2)

    def flatten(self, a):
        a = np.asarray(a)
        return a.reshape(a.shape[:-2] + (-1,))

    def orthogonality_residual(self, a) -> float:
        a = np.asarray(a)
        ata = np.swapaxes(a, -1, -2) @ a
        return float(np.max(np.abs(ata - np.eye(self.d))))


@dataclass(frozen=True, eq=False)
class TranslationGroup:
    """R^n under addition; elements are translation vectors."""

    n: int

    kind = "abelian"
    orthogonal = False

    @property
    def coord_size(self) -> int:
        return self.n

    def identity(self, batch=()):
        return np.zeros(tuple(batch) + (self.n,))

    def exp(self, x):
        return np.asarray(x, dtype=float).copy()

    def compose(self, a, b):
        return a + b

    def inverse(self, a):
        return -a

    def project(self, a):
        return a

    def adjoint_inverse(self, a):
        a = np.asarray(a)
        return np.broadcast_to(np.eye(self.n), a.shape[:-1] + (self.n, self.n))

    def flatten(self, a):
        return np.asarray(a)


def bilinear(T, x, y):
    """``out[..., k] = sum_ij T[k, i, j] x[..., i] y[..., j]`` as one matmul."""
    x = np.asarray(x)
    y = np.asarray(y)
    outer = x[..., :, None] * y[..., None, :]
    return outer.reshape(outer.shape[:-2] + (-1,)) @ T.reshape(T.shape[0], -1).T


def bmm(a, b):
    """Batched matrix product of stacks of small matrices."""
    return np.matmul(a, b)


def _rodrigues(x):
    """Batched exp of hat(x) on SO(3), Taylor-safe near zero."""
    x = np.asarray(x, dtype=float)
    th2 = np.sum(x * x, axis=-1)
    th = np.sqrt(th2)
    small = th2 < 1e-8
    safe = np.where(small, 1.0, th)
    a = np.where(small, 1.0 - th2 / 6.0 + th2 * th2 / 120.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - th2 / 24.0 + th2 * th2 / 720.0, (1.0 - np.cos(safe)) / (safe * safe))
    K = _so3_hat(x)
    eye = np.eye(3)
    return eye + a[..., None, None] * K + b[..., None, None] * bmm(K, K)


def _so3_hat(x):
    x = np.asarray(x)
    K = np.zeros(x.shape[:-1] + (3, 3), dtype=x.dtype)
    K[..., 0, 1] = -x[..., 2]
    K[..., 0, 2] = x[..., 1]
    K[..., 1, 0] = x[..., 2]
    K[..., 1, 2] = -x[..., 0]
    K[..., 2, 0] = -x[..., 1]
    K[..., 2, 1] = x[..., 0]
    return K


# ---------------------------------------------------------------------------
# algebra
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LieAlgebraSpec:
    structure_constants: np.ndarray
    metric: np.ndarray
    name: str = "custom"
    group: MatrixGroup | TranslationGroup | None = field(default=None, repr=False)

    def __post_init__(self):
        c = self.structure_constants
        g = self.metric
        if c.ndim != 3 or not (c.shape[0] == c.shape[1] == c.shape[2]):
            raise AlgebraError(f"structure constants must be (n, n, n), got {c.shape}")
        n = c.shape[0]
        if g.shape != (n, n):
            raise AlgebraError(f"metric must be ({n}, {n}), got {g.shape}")
        tol = 0 if self.exact else 1e-14
        if np.max(np.abs(to_float(c + np.swapaxes(c, 1, 2))), initial=0.0) > tol:
            raise AlgebraError("structure constants are not antisymmetric in (i, j)")
        if np.max(np.abs(to_float(g - g.T)), initial=0.0) > tol:
            raise AlgebraError("metric is not symmetric")
        if n and np.min(np.linalg.eigvalsh(to_float(g))) <= 0:
            raise AlgebraError("metric is not positive definite")

    @property
    def dim(self) -> int:
        return self.structure_constants.shape[0]

    @property
    def exact(self) -> bool:
        return is_exact(self.structure_constants)

    def as_float(self) -> "LieAlgebraSpec":
        if not self.exact:
            return self
        return LieAlgebraSpec(to_float(self.structure_constants), to_float(self.metric), self.name, self.group)

    def as_exact(self) -> "LieAlgebraSpec":
        """Exact copy; float entries are converted only if they are short rationals."""
        if self.exact:
            return self
        return LieAlgebraSpec(
            _rationalize(self.structure_constants), _rationalize(self.metric), self.name, self.group
        )

    def basis_vector(self, i: int) -> np.ndarray:
        e = linalg.exact_zeros(self.dim) if self.exact else np.zeros(self.dim)
        e[i] = Fraction(1) if self.exact else 1.0
        return e


def _rationalize(arr, max_den: int = 10**6) -> np.ndarray:
    out = np.empty(arr.shape, dtype=object)
    for idx, v in np.ndenumerate(arr):
        f = Fraction(float(v)).limit_denominator(max_den)
        if float(f) != float(v):
            raise AlgebraError(f"entry {v!r} has no short rational form; exact mode unavailable")
        out[idx] = f
    return out


def _check_dims(alg: LieAlgebraSpec, *vectors):
    for v in vectors:
        if np.shape(v)[-1] != alg.dim:
            raise AlgebraError(f"vector of length {np.shape(v)[-1]} does not live in a {alg.dim}-dim algebra")


def bracket(x, y, alg: LieAlgebraSpec):
    """``[x, y]^k = c^k_ij x^i y^j`` (batched over leading axes)."""
    _check_dims(alg, x, y)
    return bilinear(alg.structure_constants, x, y)


def jacobi_residual(alg: LieAlgebraSpec) -> float:
    c = alg.structure_constants
    # [[e_i,e_j],e_k]^m = c^l_ij c^m_lk
    t = np.einsum("lij,mlk->mijk", c, c)
    cyc = t + np.transpose(t, (0, 2, 3, 1)) + np.transpose(t, (0, 3, 1, 2))
    return float(np.max(np.abs(to_float(cyc)), initial=0.0))


def ad_matrix(x, alg: LieAlgebraSpec):
    """Matrix of ``y -> [x, y]``."""
    _check_dims(alg, x)
    return np.einsum("kij,i->kj", alg.structure_constants, np.asarray(x))


def unimodularity_check(alg: LieAlgebraSpec) -> bool:
    tr = np.einsum("kkj->j", alg.structure_constants)
    if alg.exact:
        return all(t == 0 for t in tr)
    return bool(np.all(np.abs(tr) <= 1e-12))


@dataclass(frozen=True, eq=False)
class ArnoldForm:
    """Coefficients with ``qtilde(z, x)^k = qtilde[k, i, j] z^i x^j``."""

    qtilde: np.ndarray
    qsym: np.ndarray

    @property
    def dim(self) -> int:
        return self.qsym.shape[0]

    @property
    def exact(self) -> bool:
        return is_exact(self.qsym)

    def is_zero(self) -> bool:
        return not np.any(to_float(self.qsym))

    def as_float(self) -> "ArnoldForm":
        return ArnoldForm(to_float(self.qtilde), to_float(self.qsym))

    def q(self, x, y):
        return bilinear(self.qsym, x, y)


def arnold_form(alg: LieAlgebraSpec) -> ArnoldForm:
    """Solve ``<[x,y], z>_g = <qtilde(z,x), y>_g`` for the coefficients of qtilde.

    Coefficientwise this is ``g_mj qtilde^m_ki = c^a_ij g_ak``, i.e.
    ``qtilde^m_ki = g^{mj} c^a_ij g_ak``.
    """
    g = alg.metric
    try:
        ginv = linalg.inverse(g)
    except np.linalg.LinAlgError as exc:
        raise AlgebraError("singular metric") from exc
    qt = np.einsum("mj,aij,ak->mki", ginv, alg.structure_constants, g)
    if alg.exact:
        half = Fraction(1, 2)
        qs = (qt + np.swapaxes(qt, 1, 2)) * half
    else:
        qs = 0.5 * (qt + np.swapaxes(qt, 1, 2))
    return ArnoldForm(qt, qs)


def euler_arnold_rhs(z, form: ArnoldForm):
    return form.q(z, z)


def energy(z, alg: LieAlgebraSpec):
    z = np.asarray(z)
    if alg.exact and is_exact(z):
        return np.einsum("...i,ij,...j->...", z, alg.metric, z) * Fraction(1, 2)
    return 0.5 * np.einsum("...i,ij,...j->...", to_float(z), to_float(alg.metric), to_float(z))


def lower(z, alg: LieAlgebraSpec):
    return np.einsum("ij,...j->...i", alg.metric, np.asarray(z))


def momentum(a, z, alg: LieAlgebraSpec):
    """Coordinates of ``(Ad a^{-1})^* y`` with ``y = g z``."""
    if alg.group is None:
        raise AlgebraError(f"algebra {alg.name!r} has no group representation")
    y = to_float(lower(z, alg))
    A = alg.group.adjoint_inverse(np.asarray(a, dtype=float))
    return np.einsum("...i,...ij->...j", y, A)


def group_exp(x, alg: LieAlgebraSpec):
    if alg.group is None:
        raise AlgebraError(f"algebra {alg.name!r} has no group representation")
    return alg.group.exp(to_float(x))


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


def _frac(v):
    if isinstance(v, Fraction):
        return v
    if isinstance(v, float):
        f = Fraction(v).limit_denominator(10**6)
        return f if float(f) == v else v
    return Fraction(v)


def _diag_metric(values):
    """Exact diagonal metric, or a float one if any entry has no short rational form."""
    vals = [_frac(v) for v in values]
    if all(isinstance(v, Fraction) for v in vals):
        g = linalg.exact_zeros((len(vals), len(vals)))
    else:
        g = np.zeros((len(vals), len(vals)))
        vals = [float(v) for v in vals]
    for i, v in enumerate(vals):
        g[i, i] = v
    return g


def _match(c, g):
    return c if is_exact(g) else to_float(c)


def _so3_constants():
    c = linalg.exact_zeros((3, 3, 3))
    for i, j, k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
        c[k, i, j] = Fraction(1)
        c[k, j, i] = Fraction(-1)
    return c


def _so3_basis():
    return np.stack([_so3_hat(e) for e in np.eye(3)])


def abelian(n: int) -> LieAlgebraSpec:
    if n != int(n) or n < 1:
        raise AlgebraError(f"dimension must be a positive integer, got {n}")
    n = int(n)
    return LieAlgebraSpec(linalg.exact_zeros((n, n, n)), linalg.exact_eye(n), f"abelian({n})", TranslationGroup(n))


def heisenberg3() -> LieAlgebraSpec:
    c = linalg.exact_zeros((3, 3, 3))
    c[2, 0, 1] = Fraction(1)
    c[2, 1, 0] = Fraction(-1)
    E = np.zeros((3, 3, 3))
    E[0, 0, 1] = E[1, 1, 2] = E[2, 0, 2] = 1.0
    return LieAlgebraSpec(c, linalg.exact_eye(3), "heisenberg3", MatrixGroup(E, exp_method="nilpotent"))


def so3_euclid() -> LieAlgebraSpec:
    grp = MatrixGroup(_so3_basis(), orthogonal=True, exp_method="rodrigues")
    return LieAlgebraSpec(_so3_constants(), linalg.exact_eye(3), "so3_euclid", grp)


def so3_rigid(I1=1, I2=2, I3=3) -> LieAlgebraSpec:
    g = _diag_metric([I1, I2, I3])
    grp = MatrixGroup(_so3_basis(), orthogonal=True, exp_method="rodrigues")
    return LieAlgebraSpec(_match(_so3_constants(), g), g, f"so3_rigid({I1},{I2},{I3})", grp)


def affine2() -> LieAlgebraSpec:
    c = linalg.exact_zeros((2, 2, 2))
    c[1, 0, 1] = Fraction(1)
    c[1, 1, 0] = Fraction(-1)
    E = np.zeros((2, 2, 2))
    E[0, 0, 0] = 1.0
    E[1, 0, 1] = 1.0
    return LieAlgebraSpec(c, linalg.exact_eye(2), "affine2", MatrixGroup(E))


def so3_plus_so3(inertia1=(1, 2, 3), inertia2=(1, 2, 3)) -> LieAlgebraSpec:
    """Direct sum of two rigid bodies; coordinates 0-2 and 3-5."""
    c = linalg.exact_zeros((6, 6, 6))
    s = _so3_constants()
    c[:3, :3, :3] = s
    c[3:, 3:, 3:] = s
    g = _diag_metric(list(inertia1) + list(inertia2))
    E = np.zeros((6, 6, 6))
    E[:3, :3, :3] = _so3_basis()
    E[3:, 3:, 3:] = _so3_basis()
    grp = MatrixGroup(E, orthogonal=True, exp_method="rodrigues", blocks=(slice(0, 3), slice(3, 6)))
    return LieAlgebraSpec(_match(c, g), g, "so3_plus_so3", grp)


PRESETS = {
    "abelian": abelian,
    "heisenberg3": heisenberg3,
    "so3_euclid": so3_euclid,
    "so3_rigid": so3_rigid,
    "affine2": affine2,
    "so3_plus_so3": so3_plus_so3,
}


def preset(name: str, *params) -> LieAlgebraSpec:
    """Look up a preset by name, e.g. ``preset("so3_rigid", 1, 2, 3)``.

    ``"abelian(3)"`` and ``"so3_rigid(1,2,3)"`` forms are accepted too.
    """
    name = name.strip()
    if "(" in name and name.endswith(")"):
        head, args = name[:-1].split("(", 1)
        name = head.strip()
        params = tuple(_parse_number(a) for a in args.split(",") if a.strip()) + tuple(params)
    if name not in PRESETS:
        raise AlgebraError(f"unknown preset {name!r}; known: {', '.join(sorted(PRESETS))}")
    if name == "so3_plus_so3" and len(params) == 6:
        params = (params[:3], params[3:])
    try:
        return PRESETS[name](*params)
    except TypeError as exc:
        raise AlgebraError(f"bad parameters for preset {name!r}: {params}") from exc


def _parse_number(v):
    if isinstance(v, Fraction):
        return v
    if isinstance(v, int):
        return Fraction(v)
    if isinstance(v, float):
        return v
    s = str(v).strip()
    try:
        return Fraction(s)
    except ValueError:
        raise AlgebraError(f"cannot parse number {v!r}") from None


def load_algebra(source) -> LieAlgebraSpec:
    """Read an algebra file (TOML) or a dict with the same fields.

    ``dim``; ``metric`` (row-major list, default identity); ``brackets``, a
    list of ``[i, j, k, value]`` meaning ``[e_i, e_j] += value e_k`` with
    1-based indices. Values may be ints, floats or strings like ``"1/2"``.
    Algebras with no brackets get the translation group R^n.
    """
    if isinstance(source, dict):
        data = source
        name = data.get("name", "custom")
    else:
        path = Path(source)
        try:
            data = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise AlgebraError(f"{path}: {exc}") from exc
        name = data.get("name", path.stem)
    if "dim" not in data:
        raise AlgebraError("algebra file: missing field 'dim'")
    n = int(data["dim"])
    if n < 1:
        raise AlgebraError("algebra file: 'dim' must be positive")
    values = []
    for b in data.get("brackets", []):
        if len(b) != 4:
            raise AlgebraError(f"algebra file: bracket entry {b!r} is not [i, j, k, value]")
        values.append(b[3])
    metric_vals = data.get("metric")
    all_exact = all(not isinstance(v, float) for v in values) and (
        metric_vals is None or all(not isinstance(v, float) for v in metric_vals)
    )
    conv = _parse_number if all_exact else (lambda v: float(_parse_number(v)) if isinstance(v, str) else float(v))
    zero = Fraction(0) if all_exact else 0.0
    c = np.empty((n, n, n), dtype=object) if all_exact else np.zeros((n, n, n))
    if all_exact:
        c.fill(zero)
    for i, j, k, v in data.get("brackets", []):
        i, j, k = int(i) - 1, int(j) - 1, int(k) - 1
        if not (0 <= i < n and 0 <= j < n and 0 <= k < n):
            raise AlgebraError(f"algebra file: bracket index out of range in {[i + 1, j + 1, k + 1]}")
        if i == j:
            raise AlgebraError(f"algebra file: [e_{i + 1}, e_{i + 1}] must vanish")
        v = conv(v)
        c[k, i, j] = c[k, i, j] + v
        c[k, j, i] = c[k, j, i] - v
    if metric_vals is None:
        g = linalg.exact_eye(n) if all_exact else np.eye(n)
    else:
        if len(metric_vals) != n * n:
            raise AlgebraError(f"algebra file: metric needs {n * n} entries, got {len(metric_vals)}")
        g = np.array([conv(v) for v in metric_vals], dtype=object if all_exact else float).reshape(n, n)
    group = TranslationGroup(n) if not np.any(to_float(c)) else None
    alg = LieAlgebraSpec(c, g, name, group)
    if jacobi_residual(alg) > (0 if alg.exact else 1e-10):
        raise AlgebraError(f"algebra file: Jacobi identity fails (residual {jacobi_residual(alg):.3g})")
    return alg


def exactify_vector(v, alg: LieAlgebraSpec):
    return to_exact(v) if alg.exact else to_float(v)
