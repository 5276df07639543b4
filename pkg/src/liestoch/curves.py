"""Periodic curves as finite Fourier series, with their covariance matrix."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class CurveSpec:
    """``gamma(s) = mean + sum_k cos_k cos(w k s) + sin_k sin(w k s)``, ``w = 2 pi / period``.

    ``cos`` and ``sin`` are ``(K, n)`` arrays; row ``k - 1`` holds mode ``k``.
    With ``measure_param`` the parameter is the curve's measure (density 1).
    """

    mean: np.ndarray
    cos: np.ndarray
    sin: np.ndarray
    period: float = 2 * np.pi
    measure_param: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        n = self.mean.shape[0]
        for name in ("cos", "sin"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1, n)
            object.__setattr__(self, name, arr)
        if self.cos.shape != self.sin.shape:
            raise ValueError("cos and sin coefficient arrays must have the same shape")
        if not self.period > 0:
            raise ValueError("period must be positive")

    @classmethod
    def circle(cls, radius: float = 1.0, period: float = 2 * np.pi):
        return cls(np.zeros(2), [[radius, 0.0]], [[0.0, radius]], period)

    @classmethod
    def constant(cls, value, period: float = 2 * np.pi):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        z = np.zeros((0, value.shape[0]))
        return cls(value, z, z, period)

    @property
    def n(self) -> int:
        return self.mean.shape[0]

    @property
    def n_modes(self) -> int:
        return self.cos.shape[0]

    @property
    def omega(self) -> float:
        return 2 * np.pi / self.period

    def _phase(self, s):
        k = np.arange(1, self.n_modes + 1)
        return np.multiply.outer(np.asarray(s, dtype=float), k * self.omega)

    def __call__(self, s):
        ph = self._phase(s)
        return self.mean + np.cos(ph) @ self.cos + np.sin(ph) @ self.sin

    def derivative(self, s):
        ph = self._phase(s)
        k = np.arange(1, self.n_modes + 1) * self.omega
        return (np.cos(ph) * k) @ self.sin - (np.sin(ph) * k) @ self.cos

    def shifted(self, c: float) -> "CurveSpec":
        """Reparametrize by ``s -> s + c``."""
        k = np.arange(1, self.n_modes + 1)[:, None] * self.omega
        cc, sc = np.cos(k * c), np.sin(k * c)
        return CurveSpec(self.mean, self.cos * cc + self.sin * sc, self.sin * cc - self.cos * sc, self.period)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "cos": self.cos.tolist(),
            "sin": self.sin.tolist(),
            "period": self.period,
            "measure_param": self.measure_param,
        }


def center_curve(c: CurveSpec) -> tuple[CurveSpec, np.ndarray]:
    """Remove the average of the curve over one period; return it as the drift ``z0``."""
    centered = CurveSpec(np.zeros(c.n), c.cos, c.sin, c.period, c.measure_param)
    return centered, c.mean.copy()


def sigma_matrix(c: CurveSpec, tol: float = 1e-12) -> np.ndarray:
    """``(1/l) int_0^l phi'_k phi'_l ds`` where ``phi'' = gamma``.

    The antiderivative is taken term by term (zero-mean choice, so ``phi`` is
    periodic) and the integral by Parseval, which is exact for a finite series.
    """
    scale = max(1.0, float(np.max(np.abs(np.concatenate([c.cos.ravel(), c.sin.ravel(), [0.0]])))))
    if np.max(np.abs(c.mean)) > tol * scale:
        raise ValueError("sigma_matrix needs a centered curve (zero mean); call center_curve first")
    k = np.arange(1, c.n_modes + 1)[:, None] * c.omega
    # phi' = sum (cos_k / wk) sin(wk s) - (sin_k / wk) cos(wk s)
    ps = c.cos / k
    pc = -c.sin / k
    S = 0.5 * (ps.T @ ps + pc.T @ pc)
    return 0.5 * (S + S.T)


def phi_prime(c: CurveSpec, s):
    """Periodic antiderivative of the centered curve (the ``phi'`` above)."""
    ph = c._phase(s)
    k = np.arange(1, c.n_modes + 1) * c.omega
    return np.sin(ph) @ (c.cos / k[:, None]) - np.cos(ph) @ (c.sin / k[:, None])
