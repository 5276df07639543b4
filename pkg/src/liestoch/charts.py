"""Parametrized invariant manifolds ``Z`` in the Lie algebra.

A chart (or small atlas) maps coordinates ``s`` to algebra vectors and
carries a measure density ``m(s)``. The diffusion on ``Z`` is Brownian
motion for the conformally rescaled metric ``h = kappa * g_induced`` whose
volume element is ``m(s) ds``; :meth:`ZChart.sde_terms` gives the
coefficients of that diffusion in Stratonovich form.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from .curves import CurveSpec

FD_STEP = 1e-5
TANGENCY_TOL = 1e-8


class ChartInvarianceError(RuntimeError):
    """The Euler-Arnold drift is not tangent to the chart image."""


@dataclass(frozen=True, eq=False)
class ZChart:
    param_dim: int
    maps: Sequence[Callable]  # one per atlas chart: (P, m) -> (P, n)
    density: Sequence[Callable] | None = None  # (P, m) -> (P,), None means 1
    jacobians: Sequence[Callable] | None = None  # (P, m) -> (P, n, m); finite differences if None
    period: tuple | None = None
    box: tuple = ((0.0,), (1.0,))  # sampling box (lo, hi) in chart 0
    flat: bool = False  # h is the identity in these coordinates
    switch: Callable | None = None  # (s, idx) -> (s, idx)
    name: str = "chart"
    params: dict = field(default_factory=dict)

    @property
    def n_charts(self) -> int:
        return len(self.maps)

    # -- evaluation, chart index aware ------------------------------------

    def _per_chart(self, funcs, s, idx, default=None):
        s = np.atleast_2d(np.asarray(s, dtype=float))
        if idx is None or self.n_charts == 1:
            return funcs[0](s) if funcs is not None else default(s)
        out = None
        for j in range(self.n_charts):
            mask = idx == j
            if not np.any(mask):
                continue
            val = funcs[j](s[mask]) if funcs is not None else default(s[mask])
            if out is None:
                out = np.zeros((s.shape[0],) + val.shape[1:])
            out[mask] = val
        return out

    def point(self, s, idx=None):
        return self._per_chart(self.maps, s, idx)

    def jacobian(self, s, idx=None):
        if self.jacobians is not None:
            return self._per_chart(self.jacobians, s, idx)
        s = np.atleast_2d(np.asarray(s, dtype=float))
        cols = []
        for i in range(self.param_dim):
            e = np.zeros(self.param_dim)
            e[i] = FD_STEP
            cols.append((self.point(s + e, idx) - self.point(s - e, idx)) / (2 * FD_STEP))
        return np.stack(cols, axis=-1)

    def measure(self, s, idx=None):
        s = np.atleast_2d(np.asarray(s, dtype=float))
        if self.density is None:
            return np.ones(s.shape[0])
        return self._per_chart(self.density, s, idx)

    def normalize(self, s, idx):
        if self.switch is None:
            return s, idx
        return self.switch(s, idx)

    # -- geometry -----------------------------------------------------------

    def h_metric(self, s, idx, g):
        """Rescaled metric ``h = kappa g~`` with ``sqrt(det h) = m``; shape (P, m, m)."""
        J = self.jacobian(s, idx)
        gt = _gram(J, g)
        m = self.measure(s, idx)
        det = np.linalg.det(gt)
        if np.any(det <= 0):
            raise ChartInvarianceError("chart is singular (induced metric degenerate)")
        kappa = (m * m / det) ** (1.0 / self.param_dim)
        return kappa[:, None, None] * gt

    def _sqrt_inv(self, h):
        w, v = np.linalg.eigh(h)
        return (v / np.sqrt(w)[:, None, :]) @ np.swapaxes(v, -1, -2)

    def sde_terms(self, s, idx, g):
        """Noise matrix ``B`` (``B B^T = h^{-1}``) and the Stratonovich drift
        correction ``c`` so that ``ds = (V + eps^2 c) dt + eps B o dW`` has
        generator ``V + (eps^2 / 2) Laplace_h``."""
        s = np.atleast_2d(np.asarray(s, dtype=float))
        P, m = s.shape
        if self.flat:
            return np.broadcast_to(np.eye(m), (P, m, m)), np.zeros((P, m))
        g = np.asarray(g, dtype=float)
        B = self._sqrt_inv(self.h_metric(s, idx, g))
        # Ito drift of Laplace_h / 2: (1 / 2 sqrt h) d_i (sqrt h h^ij)
        ito = np.zeros((P, m))
        strat = np.zeros((P, m))
        sqrt_h = self.measure(s, idx)
        for i in range(m):
            e = np.zeros(m)
            e[i] = FD_STEP
            hp = self.h_metric(s + e, idx, g)
            hm = self.h_metric(s - e, idx, g)
            mp = self.measure(s + e, idx)
            mm = self.measure(s - e, idx)
            d_flux = (mp[:, None] * np.linalg.inv(hp)[:, i, :] - mm[:, None] * np.linalg.inv(hm)[:, i, :]) / (2 * FD_STEP)
            ito += 0.5 * d_flux / sqrt_h[:, None]
            dB = (self._sqrt_inv(hp) - self._sqrt_inv(hm)) / (2 * FD_STEP)
            # 1/2 sum_k B_ik d_i B_jk
            strat += 0.5 * (dB @ B[:, i, :, None])[..., 0]
        return B, ito - strat

    def drift(self, s, idx, form, g):
        """Pullback of the Euler-Arnold field; raises if it is not tangent."""
        z = self.point(s, idx)
        q = form.q(z, z)
        J = self.jacobian(s, idx)
        gram = _gram(J, g)
        rhs = (np.swapaxes(J, -1, -2) @ (q @ g)[..., None])[..., 0]
        v = np.linalg.solve(gram, rhs[..., None])[..., 0]
        res = q - (J @ v[..., None])[..., 0]
        err = np.sqrt(np.sum((res @ g) * res, axis=-1))
        scale = np.maximum(1.0, np.linalg.norm(q, axis=-1))
        worst = float(np.max(err / scale))
        if worst > TANGENCY_TOL:
            raise ChartInvarianceError(
                f"{self.name}: Euler-Arnold drift leaves the chart image (relative residual {worst:.3g} > {TANGENCY_TOL})"
            )
        return v

    def tangency_residual(self, form, g, k: int = 64) -> float:
        s = self.sample_params(k)
        z = self.point(s)
        q = form.q(z, z)
        if self.param_dim == 0:
            return float(np.max(np.linalg.norm(q, axis=-1)))
        J = self.jacobian(s)
        coef = np.linalg.lstsq
        res = []
        for p in range(s.shape[0]):
            v, *_ = coef(J[p], q[p], rcond=None)
            res.append(np.linalg.norm(J[p] @ v - q[p]) / max(1.0, np.linalg.norm(q[p])))
        return float(max(res))

    # -- sampling -----------------------------------------------------------

    def sample_params(self, k: int) -> np.ndarray:
        if self.param_dim == 0:
            return np.zeros((k, 0))
        lo, hi = (np.asarray(b, dtype=float) for b in self.box)
        u = qmc.Halton(d=self.param_dim, scramble=False).random(k)
        return lo + u * (hi - lo)

    def sample_points(self, k: int) -> np.ndarray:
        return self.point(self.sample_params(k))


def _gram(J, g):
    """``J^T g J`` for a stack of Jacobians."""
    return np.swapaxes(J, -1, -2) @ (g @ J)


# ---------------------------------------------------------------------------
# built-in charts
# ---------------------------------------------------------------------------


def circle_chart(u, v, radius: float = 1.0, center=None, name: str = "circle") -> ZChart:
    """``theta -> center + radius (cos theta u + sin theta v)``, density 1."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    c = np.zeros_like(u) if center is None else np.asarray(center, dtype=float)

    def zeta(s):
        th = s[:, 0:1]
        return c + radius * (np.cos(th) * u + np.sin(th) * v)

    def jac(s):
        th = s[:, 0:1]
        return (radius * (-np.sin(th) * u + np.cos(th) * v))[:, :, None]

    return ZChart(1, (zeta,), None, (jac,), (2 * np.pi,), ((0.0,), (2 * np.pi,)), flat=True, name=name,
                  params={"kind": "circle", "u": u.tolist(), "v": v.tolist(), "radius": radius, "center": c.tolist()})


def curve_chart(curve: CurveSpec, name: str = "curve") -> ZChart:
    """Measure-parametrized periodic curve (density 1, so h = 1)."""

    def zeta(s):
        return curve(s[:, 0])

    def jac(s):
        return curve.derivative(s[:, 0])[:, :, None]

    return ZChart(1, (zeta,), None, (jac,), (curve.period,), ((0.0,), (curve.period,)), flat=True, name=name,
                  params={"kind": "curve", **curve.to_dict()})


def point_chart(z0, name: str = "point") -> ZChart:
    z0 = np.asarray(z0, dtype=float)

    def zeta(s):
        return np.broadcast_to(z0, (np.shape(s)[0], z0.shape[0])).copy()

    return ZChart(0, (zeta,), None, None, None, ((), ()), flat=True, name=name,
                  params={"kind": "point", "z0": z0.tolist()})


def _stereo(s, sign):
    r2 = np.sum(s * s, axis=-1, keepdims=True)
    return np.concatenate([2 * s, sign * (r2 - 1.0)], axis=-1) / (1.0 + r2)


def _stereo_jac(s, sign):
    r2 = np.sum(s * s, axis=-1)
    d = 1.0 + r2
    P = s.shape[0]
    J = np.zeros((P, 3, 2))
    for i in range(2):
        for j in range(2):
            J[:, i, j] = (2.0 * (i == j) * d - 4.0 * s[:, i] * s[:, j]) / (d * d)
        J[:, 2, i] = sign * 4.0 * s[:, i] / (d * d)
    return J


def sphere_orbit_chart(alg, radius: float = 1.0, name: str = "sphere_orbit") -> ZChart:
    """Coadjoint orbit ``{z : |g z| = radius}`` of a 3-dim algebra.

    Two stereographic charts (from either pole of the ``y = g z`` sphere)
    with the switch ``s -> s / |s|^2`` once ``|s| > 1``. The density is the
    round area element of the ``y`` sphere, which the Euler-Arnold flow
    preserves.
    """
    if alg.dim != 3:
        raise ValueError("sphere_orbit_chart needs a 3-dimensional algebra")
    ginv = np.linalg.inv(np.asarray(alg.metric, dtype=float))
    maps, jacs, dens = [], [], []
    for sign in (1.0, -1.0):
        maps.append(lambda s, sg=sign: radius * _stereo(s, sg) @ ginv.T)
        jacs.append(lambda s, sg=sign: radius * np.einsum("ab,pbj->paj", ginv, _stereo_jac(s, sg)))
        dens.append(lambda s: 4.0 * radius**2 / (1.0 + np.sum(s * s, axis=-1)) ** 2)

    def switch(s, idx):
        r2 = np.sum(s * s, axis=-1)
        flip = r2 > 1.0
        if np.any(flip):
            s = s.copy()
            s[flip] = s[flip] / r2[flip, None]
            idx = np.where(flip, 1 - idx, idx)
        return s, idx

    return ZChart(2, tuple(maps), tuple(dens), tuple(jacs), None, ((-1.0, -1.0), (1.0, 1.0)),
                  flat=False, switch=switch, name=name, params={"kind": "sphere_orbit", "radius": radius})


def callable_chart(zeta, param_dim: int, density=None, period=None, box=None, name: str = "user") -> ZChart:
    """Wrap a user map ``zeta: (P, m) -> (P, n)``; Jacobians by finite differences."""
    if box is None:
        box = ((0.0,) * param_dim, tuple(period) if period else (1.0,) * param_dim)
    return ZChart(param_dim, (zeta,), None if density is None else (density,), None, period, box, flat=False, name=name,
                  params={"kind": "callable"})
