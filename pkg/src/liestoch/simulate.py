"""Integrators for geodesic, Langevin and constrained dynamics on ``G x g``.

All integrators are vectorized over a block of paths. Paths draw their noise
from their own ``PCG64`` stream keyed by ``(seed, path_index)`` and blocks
have a fixed composition, so an ensemble is bit-reproducible whatever the
thread count.
"""
from __future__ import annotations

import hashlib
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import lie
from .charts import ZChart
from .lie import ArnoldForm, LieAlgebraSpec
from .linalg import to_float

BLOCK_SIZE = 4096
NOISE_BUDGET = 4_000_000  # floats of pre-drawn noise per block
BINARY_MAGIC = b"LSTR"
BINARY_VERSION = 1


# ---------------------------------------------------------------------------
# small batched helpers
# ---------------------------------------------------------------------------


def _group_step(grp, a, x):
    """``a <- a exp(x)`` followed by projection onto the group."""
    if grp.kind == "abelian":
        return a + x
    return grp.project(lie.bmm(a, grp.exp(x)))


def _bracket(c, x, y):
    return lie.bilinear(c, x, y)


def _dexpinv(c, omega, A):
    """Inverse left-trivialized dexp for ``a' = a A`` with ``a = a0 exp(omega)``."""
    oa = _bracket(c, omega, A)
    return A + 0.5 * oa + _bracket(c, omega, oa) / 12.0


def _q(qsym, z):
    return lie.bilinear(qsym, z, z)


# ---------------------------------------------------------------------------
# deterministic geodesics
# ---------------------------------------------------------------------------


def geodesic_step(a, z, dt: float, alg: LieAlgebraSpec, form: ArnoldForm, method: str = "rkmk4"):
    """One step of the geodesic flow ``a^{-1} a' = z``, ``z' = q(z, z)``.

    ``rkmk4`` is the Runge-Kutta-Munthe-Kaas scheme built on classical RK4
    (commutator-corrected); ``lie_euler`` advances ``z`` by RK4 and ``a`` by
    ``exp(dt z_mid)``.
    """
    grp = alg.group
    if grp is None:
        raise lie.AlgebraError(f"algebra {alg.name!r} has no group representation")
    c = to_float(alg.structure_constants)
    qs = to_float(form.qsym)
    z = np.asarray(z, dtype=float)
    a = np.asarray(a, dtype=float)
    f1 = _q(qs, z)
    z2 = z + 0.5 * dt * f1
    f2 = _q(qs, z2)
    z3 = z + 0.5 * dt * f2
    f3 = _q(qs, z3)
    z4 = z + dt * f3
    f4 = _q(qs, z4)
    z_new = z + dt / 6.0 * (f1 + 2 * f2 + 2 * f3 + f4)
    if method == "lie_euler":
        omega = dt * 0.5 * (z + z_new)
    elif method == "rkmk4":
        k1 = z
        k2 = _dexpinv(c, 0.5 * dt * k1, z2)
        k3 = _dexpinv(c, 0.5 * dt * k2, z3)
        k4 = _dexpinv(c, dt * k3, z4)
        omega = dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    else:
        raise ValueError(f"unknown method {method!r}")
    return _group_step(grp, a, omega), z_new


# ---------------------------------------------------------------------------
# trajectory container
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class TrajectoryEnsemble:
    kind: str
    times: np.ndarray  # (R,)
    group: np.ndarray  # (P, R, G) flattened group coordinates
    z: np.ndarray  # (P, R, n)
    s: np.ndarray | None  # (P, R, m) chart coordinates
    aborted: np.ndarray  # (P,) bool
    stream_ids: np.ndarray  # (P,) path indices used to key the RNG streams
    group_shape: tuple
    seed: int | None = None
    stride: int = 1
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.z.shape[0]

    def a(self, record: int = -1):
        return self.group[:, record].reshape((self.n_paths,) + tuple(self.group_shape))

    @staticmethod
    def concatenate(parts: list["TrajectoryEnsemble"]) -> "TrajectoryEnsemble":
        p0 = parts[0]
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts], axis=0)  # noqa: E731
        return TrajectoryEnsemble(
            p0.kind, p0.times, cat("group"), cat("z"), None if p0.s is None else cat("s"),
            cat("aborted"), cat("stream_ids"), p0.group_shape, p0.seed, p0.stride, dict(p0.meta),
        )

    # -- CSV ---------------------------------------------------------------

    def to_csv(self, path) -> None:
        P, R, G = self.group.shape
        n = self.z.shape[2]
        m = 0 if self.s is None else self.s.shape[2]
        header = ["time", "path_id"] + [f"a{i}" for i in range(G)] + [f"z{i}" for i in range(n)]
        header += [f"s{i}" for i in range(m)] + ["aborted"]
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for p in range(P):
                for r in range(R):
                    row = [repr(float(self.times[r])), str(int(self.stream_ids[p]))]
                    row += [repr(float(v)) for v in self.group[p, r]]
                    row += [repr(float(v)) for v in self.z[p, r]]
                    if m:
                        row += [repr(float(v)) for v in self.s[p, r]]
                    row.append(str(int(self.aborted[p])))
                    fh.write(",".join(row) + "\n")

    # -- binary ------------------------------------------------------------

    def to_binary(self, path) -> None:
        """Frame format, little endian.

        Header: magic ``LSTR``, u16 version, u32 n_paths, u32 n_records,
        u32 group_coords, u32 algebra_dim, u32 chart_dim, u32 stride.
        Body: float64 times[R]; int64 path ids[P]; u8 aborted[P]; then per
        path float64 group[R, G], z[R, n], s[R, m].
        """
        P, R, G = self.group.shape
        n = self.z.shape[2]
        m = 0 if self.s is None else self.s.shape[2]
        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC)
            fh.write(struct.pack("<HIIIIII", BINARY_VERSION, P, R, G, n, m, self.stride))
            fh.write(np.asarray(self.times, "<f8").tobytes())
            fh.write(np.asarray(self.stream_ids, "<i8").tobytes())
            fh.write(np.asarray(self.aborted, "u1").tobytes())
            for p in range(P):
                fh.write(np.asarray(self.group[p], "<f8").tobytes())
                fh.write(np.asarray(self.z[p], "<f8").tobytes())
                if m:
                    fh.write(np.asarray(self.s[p], "<f8").tobytes())

    @classmethod
    def from_binary(cls, path, kind: str = "unknown", group_shape=None) -> "TrajectoryEnsemble":
        buf = Path(path).read_bytes()
        if buf[:4] != BINARY_MAGIC:
            raise ValueError("not a trajectory frame file")
        version, P, R, G, n, m, stride = struct.unpack_from("<HIIIIII", buf, 4)
        if version != BINARY_VERSION:
            raise ValueError(f"unsupported frame version {version}")
        off = 4 + struct.calcsize("<HIIIIII")
        times = np.frombuffer(buf, "<f8", R, off).copy()
        off += 8 * R
        ids = np.frombuffer(buf, "<i8", P, off).copy()
        off += 8 * P
        aborted = np.frombuffer(buf, "u1", P, off).astype(bool)
        off += P
        per = R * (G + n + m)
        body = np.frombuffer(buf, "<f8", P * per, off).reshape(P, per)
        group = body[:, : R * G].reshape(P, R, G)
        z = body[:, R * G : R * (G + n)].reshape(P, R, n)
        s = body[:, R * (G + n) :].reshape(P, R, m) if m else None
        if group_shape is None:
            d = int(round(np.sqrt(G)))
            group_shape = (d, d) if d * d == G and kind != "abelian" else (G,)
        return cls(kind, times, group.copy(), z.copy(), None if s is None else s.copy(), aborted, ids,
                   tuple(group_shape), None, stride)


# ---------------------------------------------------------------------------
# recording and noise
# ---------------------------------------------------------------------------


def record_schedule(n_steps: int, n_records: int) -> tuple[np.ndarray, int]:
    """Step indices to record: every ``stride`` steps from 0, plus the last step."""
    n_records = max(2, int(n_records))
    stride = max(1, -(-n_steps // (n_records - 1)))
    steps = list(range(0, n_steps + 1, stride))
    if steps[-1] != n_steps:
        steps.append(n_steps)
    return np.asarray(steps), stride


def path_rng(seed: int, path_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(path_index),))))


class _NoiseSource:
    """Standard normals for a block of paths, drawn path by path in chunks."""

    def __init__(self, seed, path_ids, width, n_steps):
        self.gens = [path_rng(seed, i) for i in path_ids]
        self.width = width
        self.chunk = max(1, min(n_steps, NOISE_BUDGET // max(1, len(path_ids) * width)))
        self.buf = None
        self.pos = 0

    def next(self):
        if self.buf is None or self.pos == self.buf.shape[0]:
            self.buf = np.stack([g.standard_normal((self.chunk, self.width)) for g in self.gens], axis=1)
            self.pos = 0
        out = self.buf[self.pos]
        self.pos += 1
        return out


def _n_steps(dt, t_final):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not t_final > dt:
        raise ValueError("need dt < t_final")
    return int(round(t_final / dt))


def _broadcast_group(grp, a0, P):
    if a0 is None:
        return grp.identity((P,))
    a0 = np.asarray(a0, dtype=float)
    shape = (grp.n,) if grp.kind == "abelian" else (grp.d, grp.d)
    return np.broadcast_to(a0, (P,) + shape).copy()


def _group_shape(grp):
    return (grp.n,) if grp.kind == "abelian" else (grp.d, grp.d)


def _run_blocks(fn, path_ids, threads: int, block_size: int):
    blocks = [path_ids[i : i + block_size] for i in range(0, len(path_ids), block_size)]
    if threads <= 1 or len(blocks) == 1:
        parts = [fn(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(fn, blocks))
    return TrajectoryEnsemble.concatenate(parts)


# ---------------------------------------------------------------------------
# geodesic ensembles (deterministic)
# ---------------------------------------------------------------------------


def integrate_geodesic(alg, form, a0, z0, dt, t_final, n_records=1000, method="rkmk4") -> TrajectoryEnsemble:
    grp = alg.group
    if grp is None:
        raise lie.AlgebraError(f"algebra {alg.name!r} has no group representation")
    n_steps = _n_steps(dt, t_final)
    steps, stride = record_schedule(n_steps, n_records)
    a = _broadcast_group(grp, a0, 1)
    z = np.asarray(z0, dtype=float).reshape(1, -1).copy()
    G = grp.coord_size
    rec_a = np.zeros((1, len(steps), G))
    rec_z = np.zeros((1, len(steps), alg.dim))
    r = 0
    for k in range(n_steps + 1):
        if r < len(steps) and steps[r] == k:
            rec_a[:, r] = grp.flatten(a)
            rec_z[:, r] = z
            r += 1
        if k < n_steps:
            a, z = geodesic_step(a, z, dt, alg, form, method)
    return TrajectoryEnsemble("geodesic", steps * dt, rec_a, rec_z, None, np.zeros(1, bool), np.zeros(1, np.int64),
                              _group_shape(grp), None, stride, {"method": method, "dt": dt})


def conservation_drift(ens: TrajectoryEnsemble, alg) -> tuple[float, float]:
    """Largest deviation of energy and of the momentum map from their initial values."""
    H = lie.energy(ens.z[0], alg.as_float())
    a = ens.group[0].reshape((-1,) + tuple(ens.group_shape))
    M = lie.momentum(a, ens.z[0], alg.as_float())
    return float(np.max(np.abs(H - H[0]))), float(np.max(np.linalg.norm(M - M[0], axis=-1)))


def conservation_study(alg, form, z0, dts=(1e-2, 5e-3, 2.5e-3), t_final: float = 10.0, a0=None,
                       method: str = "rkmk4") -> dict:
    """Energy and momentum drift over ``t_final`` for each step size, with
    observed orders ``log2``-style from consecutive pairs."""
    dts = [float(d) for d in dts]
    e_drift, m_drift = [], []
    for dt in dts:
        ens = integrate_geodesic(alg, form, a0, z0, dt, t_final, n_records=int(round(t_final / dt)) + 1, method=method)
        e, m = conservation_drift(ens, alg)
        e_drift.append(e)
        m_drift.append(m)

    def orders(d):
        out = []
        for i in range(len(dts) - 1):
            if d[i] > 0 and d[i + 1] > 0:
                out.append(float(np.log(d[i] / d[i + 1]) / np.log(dts[i] / dts[i + 1])))
            else:
                out.append(float("inf"))
        return out

    return {
        "method": method,
        "dts": dts,
        "t_final": t_final,
        "energy_drift": e_drift,
        "momentum_drift": m_drift,
        "energy_order": orders(e_drift),
        "momentum_order": orders(m_drift),
    }


# ---------------------------------------------------------------------------
# Langevin
# ---------------------------------------------------------------------------


@dataclass
class LangevinConfig:
    nu: float
    eps: float
    sigma: np.ndarray
    dt: float
    t_final: float
    seed: int
    n_paths: int = 1
    n_records: int = 1000
    blowup: float = 1e6

    def __post_init__(self):
        self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if self.nu < 0 or self.eps < 0:
            raise ValueError("nu and eps must be nonnegative")
        if not 0 < self.dt < self.t_final:
            raise ValueError("need 0 < dt < t_final")
        if self.eps > 0 and not np.any(self.sigma):
            raise ValueError("eps > 0 needs a nonzero sigma")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigma"] = self.sigma.tolist()
        return d


def _langevin_block(cfg: LangevinConfig, alg, form, a0, z0, path_ids):
    grp = alg.group
    P = len(path_ids)
    n = alg.dim
    sigma = cfg.sigma
    if sigma.shape[0] != n:
        raise ValueError(f"sigma must have {n} rows, got {sigma.shape[0]}")
    qs = to_float(form.qsym)
    quad = np.any(qs)
    n_steps = _n_steps(cfg.dt, cfg.t_final)
    steps, stride = record_schedule(n_steps, cfg.n_records)
    a = _broadcast_group(grp, a0, P)
    z = np.broadcast_to(np.asarray(z0, dtype=float), (P, n)).copy()
    alive = np.ones(P, bool)
    noise = _NoiseSource(cfg.seed, path_ids, sigma.shape[1], n_steps) if cfg.eps > 0 else None
    amp = cfg.eps * np.sqrt(cfg.dt)
    rec_a = np.zeros((P, len(steps), grp.coord_size))
    rec_z = np.zeros((P, len(steps), n))
    r = 0
    for k in range(n_steps + 1):
        if steps[r] == k:
            rec_a[:, r] = grp.flatten(a)
            rec_z[:, r] = z
            r += 1
            if r == len(steps):
                break
        drift = -cfg.nu * z
        if quad:
            drift = drift + _q(qs, z)
        z_new = z + cfg.dt * drift
        if noise is not None:
            z_new = z_new + amp * (noise.next() @ sigma.T)
        a_new = _group_step(grp, a, cfg.dt * z)
        bad = ~np.all(np.isfinite(z_new), axis=1) | (np.max(np.abs(z_new), axis=1) > cfg.blowup)
        alive &= ~bad
        z = np.where(alive[:, None], z_new, z)
        a = np.where(alive.reshape((P,) + (1,) * (a.ndim - 1)), a_new, a)
    return TrajectoryEnsemble("langevin", steps * cfg.dt, rec_a, rec_z, None, ~alive, np.asarray(path_ids, np.int64),
                              _group_shape(grp), cfg.seed, stride, {"config": cfg.to_dict()})


def langevin_path(cfg: LangevinConfig, alg, form, a0=None, z0=None, path_index: int = 0) -> TrajectoryEnsemble:
    """Single path of ``a' = a z``, ``dz = (q(z,z) - nu z) dt + eps sigma dW``
    by Euler-Maruyama (additive noise, so Ito and Stratonovich agree)."""
    if alg.group is None:
        raise lie.AlgebraError(f"algebra {alg.name!r} has no group representation")
    z0 = np.zeros(alg.dim) if z0 is None else z0
    return _langevin_block(cfg, alg, form, a0, z0, [path_index])


# ---------------------------------------------------------------------------
# constrained diffusion on G x Z
# ---------------------------------------------------------------------------


@dataclass
class ConstrainedConfig:
    eps: float
    dt: float
    t_final: float
    seed: int
    n_paths: int = 1
    n_records: int = 1000

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if not 0 < self.dt < self.t_final:
            raise ValueError("need 0 < dt < t_final")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def _constrained_block(cfg: ConstrainedConfig, chart: ZChart, alg, form, a0, s0, path_ids):
    grp = alg.group
    P = len(path_ids)
    m = chart.param_dim
    if m == 0:
        raise ValueError("constrained paths need a chart of positive dimension")
    g = to_float(alg.metric)
    ffloat = form.as_float()
    has_drift = not ffloat.is_zero()
    flat = chart.flat
    n_steps = _n_steps(cfg.dt, cfg.t_final)
    steps, stride = record_schedule(n_steps, cfg.n_records)
    a = _broadcast_group(grp, a0, P)
    s = np.broadcast_to(np.asarray(s0, dtype=float).reshape(-1), (P, m)).copy()
    idx = np.zeros(P, dtype=np.int64)
    z = chart.point(s, idx)
    noise = _NoiseSource(cfg.seed, path_ids, m, n_steps) if cfg.eps > 0 else None
    sq = np.sqrt(cfg.dt)
    eps2 = cfg.eps**2
    rec_a = np.zeros((P, len(steps), grp.coord_size))
    rec_z = np.zeros((P, len(steps), alg.dim))
    rec_s = np.zeros((P, len(steps), m))
    r = 0

    def coeffs(x):
        f = chart.drift(x, idx, ffloat, g) if has_drift else np.zeros_like(x)
        if flat:
            return f, None
        B, corr = chart.sde_terms(x, idx, g)
        return f + eps2 * corr, B

    for k in range(n_steps + 1):
        if steps[r] == k:
            rec_a[:, r] = grp.flatten(a)
            rec_z[:, r] = z
            rec_s[:, r] = s
            r += 1
            if r == len(steps):
                break
        dW = sq * noise.next() if noise is not None else np.zeros((P, m))
        if flat and not has_drift:
            s_new = s + cfg.eps * dW
        else:
            f0, B0 = coeffs(s)
            n0 = dW if B0 is None else (B0 @ dW[..., None])[..., 0]
            s_pred = s + cfg.dt * f0 + cfg.eps * n0
            f1, B1 = coeffs(s_pred)
            n1 = dW if B1 is None else (B1 @ dW[..., None])[..., 0]
            s_new = s + 0.5 * cfg.dt * (f0 + f1) + 0.5 * cfg.eps * (n0 + n1)
        z_new = chart.point(s_new, idx)
        a = _group_step(grp, a, 0.5 * cfg.dt * (z + z_new))
        s, idx = chart.normalize(s_new, idx)
        z = z_new
    meta = {"config": cfg.to_dict(), "chart": chart.name, "chart_index": idx.tolist()}
    return TrajectoryEnsemble("constrained", steps * cfg.dt, rec_a, rec_z, rec_s, np.zeros(P, bool),
                              np.asarray(path_ids, np.int64), _group_shape(grp), cfg.seed, stride, meta)


def constrained_path(chart: ZChart, eps, dt, t_final, seed, alg, form, a0=None, s0=None,
                     path_index: int = 0, n_records: int = 1000) -> TrajectoryEnsemble:
    """Diffusion on ``G x Z``: ``s`` follows Brownian motion of the rescaled
    metric plus the pulled-back Euler-Arnold drift (Stratonovich-Heun),
    ``z = zeta(s)``, and ``a`` moves by ``a exp(dt z)`` with trapezoidal ``z``."""
    if alg.group is None:
        raise lie.AlgebraError(f"algebra {alg.name!r} has no group representation")
    cfg = ConstrainedConfig(eps, dt, t_final, seed, 1, n_records)
    s0 = np.zeros(chart.param_dim) if s0 is None else s0
    return _constrained_block(cfg, chart, alg, form, a0, s0, [path_index])


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


def ensemble_run(kind: str, alg: LieAlgebraSpec, form: ArnoldForm, cfg, *, chart: ZChart | None = None,
                 a0=None, z0=None, s0=None, threads: int = 1, block_size: int = BLOCK_SIZE) -> TrajectoryEnsemble:
    """Run ``cfg.n_paths`` independent paths of ``kind`` ("langevin" or
    "constrained"); path ``i`` uses the RNG stream keyed by ``(cfg.seed, i)``."""
    if alg.group is None:
        raise lie.AlgebraError(f"algebra {alg.name!r} has no group representation")
    ids = list(range(cfg.n_paths))
    if kind == "langevin":
        z0 = np.zeros(alg.dim) if z0 is None else z0
        fn = lambda b: _langevin_block(cfg, alg, form, a0, z0, b)  # noqa: E731
    elif kind == "constrained":
        if chart is None:
            raise ValueError("constrained ensembles need a chart")
        s0 = np.zeros(chart.param_dim) if s0 is None else s0
        fn = lambda b: _constrained_block(cfg, chart, alg, form, a0, s0, b)  # noqa: E731
    else:
        raise ValueError(f"unknown path kind {kind!r}")
    return _run_blocks(fn, ids, threads, block_size)


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


def content_hash(*items) -> str:
    """sha256 over a canonical JSON encoding (bytes are hashed as-is)."""
    h = hashlib.sha256()
    for it in items:
        if isinstance(it, bytes):
            h.update(it)
        else:
            h.update(json.dumps(it, sort_keys=True, default=_json_default).encode())
    return h.hexdigest()


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)
