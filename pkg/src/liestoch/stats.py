"""Statistical checks on simulated ensembles.

Reports are plain dicts of floats and bools so they serialize to JSON
directly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from . import lie
from .lie import LieAlgebraSpec

MIN_SAMPLES = 100
KS_THRESHOLD = 0.01
N_SE = 3.0


class InsufficientSamples(ValueError):
    pass


def burn_in_index(n_records: int, fraction: float = 0.2) -> int:
    """First record index kept after discarding ``fraction`` of a path."""
    return int(np.ceil(fraction * (n_records - 1)))


def stationary_samples(ensemble, fraction: float = 0.2, every: int | None = None):
    """Post burn-in records of ``z`` and group coordinates, flattened over paths.

    By default only the final record of each path is used, which keeps the
    samples independent.
    """
    R = ensemble.times.shape[0]
    start = burn_in_index(R, fraction)
    keep = ~ensemble.aborted
    idx = [R - 1] if every is None else list(range(start, R, every))
    z = ensemble.z[keep][:, idx].reshape(-1, ensemble.z.shape[2])
    a = ensemble.group[keep][:, idx].reshape((-1,) + tuple(ensemble.group_shape))
    return z, a


# ---------------------------------------------------------------------------
# Gibbs marginal
# ---------------------------------------------------------------------------


def gibbs_beta(nu: float, eps: float) -> float:
    return 2.0 * nu / eps**2


def gibbs_marginal_test(z, nu: float, eps: float, alg: LieAlgebraSpec, threshold: float = KS_THRESHOLD) -> dict:
    """KS comparison of ``H(z)`` against the law under density ``exp(-beta H)``.

    With ``H = z.g.z / 2`` and ``beta = 2 nu / eps^2`` the quantity
    ``2 beta H`` is chi-squared with ``dim`` degrees of freedom.
    """
    z = np.asarray(z, dtype=float)
    if z.shape[0] < MIN_SAMPLES:
        raise InsufficientSamples(f"need at least {MIN_SAMPLES} samples, got {z.shape[0]}")
    beta = gibbs_beta(nu, eps)
    H = lie.energy(z, alg.as_float())
    x = 2.0 * beta * H
    res = sps.kstest(x, sps.chi2(alg.dim).cdf)
    return {
        "test": "gibbs_marginal",
        "beta": beta,
        "n_samples": int(z.shape[0]),
        "ks_distance": float(res.statistic),
        "p_value": float(res.pvalue),
        "threshold": threshold,
        "mean_energy": float(np.mean(H)),
        "expected_mean_energy": alg.dim / (2.0 * beta),
        "passed": bool(res.statistic < threshold),
    }


# ---------------------------------------------------------------------------
# Haar uniformity on SO(3)
# ---------------------------------------------------------------------------


def haar_so3(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed rotations via QR of Gaussian matrices with the sign fix."""
    X = rng.standard_normal((n, 3, 3))
    Q, R = np.linalg.qr(X)
    d = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
    d[d == 0] = 1.0
    Q = Q * d[:, None, :]
    det = np.linalg.det(Q)
    Q[det < 0, :, 0] *= -1.0
    return Q


def haar_uniformity_test(a, n_se: float = N_SE) -> dict:
    """Entry means 0 and entry second moments 1/3, each within ``n_se`` standard errors."""
    a = np.asarray(a, dtype=float).reshape(-1, 3, 3)
    N = a.shape[0]
    if N < MIN_SAMPLES:
        raise InsufficientSamples(f"need at least {MIN_SAMPLES} samples, got {N}")
    mean = a.mean(axis=0)
    se_mean = a.std(axis=0, ddof=1) / np.sqrt(N)
    sq = a * a
    second = sq.mean(axis=0)
    se_second = sq.std(axis=0, ddof=1) / np.sqrt(N)
    z_mean = np.abs(mean) / np.where(se_mean > 0, se_mean, np.inf)
    z_second = np.abs(second - 1.0 / 3.0) / np.where(se_second > 0, se_second, np.inf)
    # a degenerate sample (zero spread) can only pass if it hits the target exactly
    z_mean = np.where(se_mean > 0, z_mean, np.where(mean == 0, 0.0, np.inf))
    z_second = np.where(se_second > 0, z_second, np.where(second == 1.0 / 3.0, 0.0, np.inf))
    return {
        "test": "haar_uniformity",
        "n_samples": int(N),
        "entry_means": mean.tolist(),
        "entry_mean_se": se_mean.tolist(),
        "entry_second_moments": second.tolist(),
        "entry_second_moment_se": se_second.tolist(),
        "max_mean_z": float(np.max(z_mean)),
        "max_second_moment_z": float(np.max(z_second)),
        "n_se": n_se,
        "passed": bool(np.all(z_mean <= n_se) and np.all(z_second <= n_se)),
    }


# ---------------------------------------------------------------------------
# effective covariance
# ---------------------------------------------------------------------------


@dataclass
class CovarianceEstimate:
    cov: np.ndarray
    stderr: np.ndarray
    mean: np.ndarray
    n_paths: int
    t: float
    flagged_small: bool

    def to_dict(self) -> dict:
        return {
            "cov": self.cov.tolist(),
            "stderr": self.stderr.tolist(),
            "mean": self.mean.tolist(),
            "n_paths": self.n_paths,
            "t": self.t,
            "flagged_small": self.flagged_small,
        }


def jackknife_cov(X, n_groups: int = 100):
    """Sample covariance of the rows of ``X`` with a grouped jackknife error."""
    X = np.asarray(X, dtype=float)
    N = X.shape[0]
    cov = np.cov(X, rowvar=False, ddof=1).reshape(X.shape[1], X.shape[1])
    G = min(n_groups, N)
    groups = np.array_split(np.arange(N), G)
    reps = []
    for g in groups:
        mask = np.ones(N, bool)
        mask[g] = False
        reps.append(np.cov(X[mask], rowvar=False, ddof=1).reshape(cov.shape))
    reps = np.asarray(reps)
    se = np.sqrt((G - 1) / G * np.sum((reps - reps.mean(axis=0)) ** 2, axis=0))
    return cov, se


def effective_covariance(ensemble, eps: float | None = None, t: float | None = None) -> CovarianceEstimate:
    """Covariance of ``(a(t) - a(0)) / sqrt(t)`` over the paths of an abelian ensemble."""
    if len(ensemble.group_shape) != 1:
        raise ValueError("effective_covariance needs an abelian-group ensemble")
    t = float(ensemble.times[-1] - ensemble.times[0]) if t is None else float(t)
    keep = ~ensemble.aborted
    X = (ensemble.group[keep, -1] - ensemble.group[keep, 0]) / np.sqrt(t)
    cov, se = jackknife_cov(X)
    return CovarianceEstimate(cov, se, X.mean(axis=0), int(X.shape[0]), t, bool(X.shape[0] < MIN_SAMPLES))


def predicted_covariance(sigma, eps: float) -> np.ndarray:
    return 4.0 / eps**2 * np.asarray(sigma, dtype=float)


def compare_covariance(est: CovarianceEstimate, predicted, rel_tol: float = 0.05, n_se: float = N_SE) -> dict:
    """Diagonal within ``rel_tol`` of the prediction, off-diagonal within ``n_se`` errors of it."""
    P = np.asarray(predicted, dtype=float)
    n = P.shape[0]
    diag_ok = []
    off_ok = []
    for i in range(n):
        for j in range(n):
            if i == j:
                ref = P[i, i]
                ok = abs(est.cov[i, i] - ref) <= rel_tol * abs(ref) if ref != 0 else abs(est.cov[i, i]) <= n_se * est.stderr[i, i]
                diag_ok.append(bool(ok))
            else:
                off_ok.append(bool(abs(est.cov[i, j] - P[i, j]) <= n_se * est.stderr[i, j]))
    rel_err = [float(abs(est.cov[i, i] - P[i, i]) / abs(P[i, i])) if P[i, i] else None for i in range(n)]
    return {
        "test": "effective_covariance",
        "estimate": est.to_dict(),
        "predicted": P.tolist(),
        "diag_relative_error": rel_err,
        "rel_tol": rel_tol,
        "n_se": n_se,
        "diag_ok": diag_ok,
        "offdiag_ok": off_ok,
        "passed": bool(all(diag_ok) and all(off_ok) and not est.flagged_small),
        "note": "checks mean and covariance of the rescaled displacement only, not the full limiting law",
    }


def componentwise_normal_ks(est_X, predicted) -> list[float]:
    """KS distances of each rescaled displacement component against N(0, predicted_kk)."""
    X = np.asarray(est_X, dtype=float)
    P = np.asarray(predicted, dtype=float)
    out = []
    for k in range(X.shape[1]):
        sd = np.sqrt(P[k, k])
        out.append(float(sps.kstest(X[:, k], sps.norm(0.0, sd).cdf).statistic) if sd > 0 else float("nan"))
    return out


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj

