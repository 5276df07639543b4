"""Config-driven runner: ``liestoch run CONFIG.toml``.

A config is a TOML file with ``version = 1``, a ``mode`` and the sections the
mode uses (see README). Every run writes ``result.json`` (deterministic for a
given config and seed) and ``manifest.json`` (resolved config, input hashes,
timestamp) into its output directory.

Exit status: 0 success or pass, 1 test failure, 2 input error, 3 inconclusive.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import math
import os
import platform
import secrets
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, charts, curves, fokker_planck as fp, hypo, lie, simulate as sm, stats
from .charts import ChartInvarianceError

try:  # python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INPUT = 2
EXIT_INCONCLUSIVE = 3

CONFIG_VERSION = 1
OUTPUT_ENV = "LIESTOCH_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"

# sections each mode accepts, and the ones it requires
MODES = {
    "check-langevin": ({"algebra", "forcing", "params"}, {"algebra", "forcing"}),
    "check-constrained": ({"algebra", "chart", "curve", "params"}, {"algebra", "chart"}),
    "simulate-langevin": ({"algebra", "forcing", "params"}, {"algebra", "params"}),
    "simulate-constrained": ({"algebra", "chart", "curve", "params"}, {"algebra", "chart", "params"}),
    "diffusivity": ({"curve", "params"}, {"curve", "params"}),
    "gibbs": ({"algebra", "forcing", "params"}, {"algebra", "params"}),
    "haar": ({"algebra", "forcing", "params"}, {"algebra", "params"}),
    "fpsolve": ({"curve", "grid", "params"}, {"curve", "grid", "params"}),
    "conserve": ({"algebra", "params"}, {"algebra", "params"}),
}
TOP_LEVEL = {"version", "mode", "seed", "output", "expect"}


class ConfigError(ValueError):
    """Malformed config or a mode/parameter mismatch."""


_REQUIRED = object()


def _field(section: dict, key: str, where: str, kind: str, default=_REQUIRED):
    path = f"{where}.{key}" if where else key
    if key not in section:
        if default is _REQUIRED:
            raise ConfigError(f"config field '{path}' is required")
        return default
    v = section[key]
    try:
        if kind in ("float", "pos", "nonneg"):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise TypeError
            v = float(v)
            if not math.isfinite(v) or (kind == "pos" and v <= 0) or (kind == "nonneg" and v < 0):
                raise ValueError
        elif kind in ("int", "posint"):
            if isinstance(v, bool) or not isinstance(v, int) or (kind == "posint" and v < 1):
                raise TypeError
        elif kind == "str":
            if not isinstance(v, str):
                raise TypeError
        elif kind == "bool":
            if not isinstance(v, bool):
                raise TypeError
        elif kind == "vec":
            if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
                raise TypeError
        elif kind == "matrix":
            if not isinstance(v, list) or not v or not all(isinstance(r, list) for r in v):
                raise TypeError
            if len({len(r) for r in v}) != 1:
                raise ValueError
            for r in v:
                if not all(isinstance(x, (int, float, str)) and not isinstance(x, bool) for x in r):
                    raise TypeError
    except (TypeError, ValueError):
        expected = {
            "float": "a number", "pos": "a positive number", "nonneg": "a nonnegative number",
            "int": "an integer", "posint": "a positive integer", "str": "a string", "bool": "true or false",
            "vec": "a list of numbers", "matrix": "a non-empty list of equal-length lists",
        }[kind]
        raise ConfigError(f"config field '{path}': expected {expected}, got {v!r}") from None
    return v


def _check_keys(section: dict, allowed: set, where: str):
    extra = sorted(set(section) - allowed)
    if extra:
        raise ConfigError(f"config section '{where}': unknown field(s) {', '.join(extra)}")


@dataclass
class RunConfig:
    mode: str
    seed: int
    seed_source: str
    sections: dict
    expect: bool | None = None
    output: str | None = None
    base_dir: Path = field(default_factory=Path.cwd)
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None, seed: int | None = None) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a table")
        version = data.get("version")
        if version is None:
            raise ConfigError("config field 'version' is required")
        if version != CONFIG_VERSION:
            raise ConfigError(f"config field 'version': unsupported version {version!r} (expected {CONFIG_VERSION})")
        mode = _field(data, "mode", "", "str")
        if mode not in MODES:
            raise ConfigError(f"config field 'mode': unknown mode {mode!r}; known: {', '.join(MODES)}")
        allowed, required = MODES[mode]
        sections = {k: v for k, v in data.items() if k not in TOP_LEVEL}
        for k, v in sections.items():
            if k not in allowed:
                raise ConfigError(f"config section '{k}' is not used by mode {mode!r}")
            if not isinstance(v, dict):
                raise ConfigError(f"config section '{k}' must be a table")
        for k in sorted(required):
            if k not in sections:
                raise ConfigError(f"mode {mode!r} needs a '{k}' section")
        source = "config"
        if seed is not None:
            source = "flag"
        elif "seed" in data:
            seed = _field(data, "seed", "", "int")
        else:
            seed, source = secrets.randbits(63), "generated"
        if seed < 0:
            raise ConfigError("config field 'seed': must be nonnegative")
        expect = _field(data, "expect", "", "bool", None)
        output = _field(data, "output", "", "str", None)
        raw = dict(data)
        raw["seed"] = int(seed)
        return cls(mode, int(seed), source, sections, expect, output, base_dir or Path.cwd(), raw)

    def section(self, name: str) -> dict:
        return self.sections.get(name, {})


def load_config(path, overrides=(), seed: int | None = None) -> tuple[RunConfig, bytes]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = tomllib.loads(blob.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: malformed config: {exc}") from None
    for item in overrides:
        _apply_override(data, item)
    return RunConfig.from_dict(data, path.resolve().parent, seed), blob


def _apply_override(data: dict, item: str):
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, value = item.split("=", 1)
    try:
        parsed = tomllib.loads(f"v = {value}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = value
    parts = key.strip().split(".")
    d = data
    for p in parts[:-1]:
        d = d.setdefault(p, {})
        if not isinstance(d, dict):
            raise ConfigError(f"--set {key}: '{p}' is not a table")
    d[parts[-1]] = parsed


# ---------------------------------------------------------------------------
# building blocks from config sections
# ---------------------------------------------------------------------------


def build_algebra(cfg: RunConfig, inputs: dict) -> lie.LieAlgebraSpec:
    sec = cfg.section("algebra")
    _check_keys(sec, {"preset", "params", "file"}, "algebra")
    if ("preset" in sec) == ("file" in sec):
        raise ConfigError("config section 'algebra': give exactly one of 'preset' or 'file'")
    if "file" in sec:
        path = cfg.base_dir / _field(sec, "file", "algebra", "str")
        try:
            inputs[str(path)] = hashlib.sha256(path.read_bytes()).hexdigest()
        except OSError as exc:
            raise ConfigError(f"config field 'algebra.file': cannot read {path}: {exc.strerror}") from None
        return lie.load_algebra(path)
    name = _field(sec, "preset", "algebra", "str")
    params = sec.get("params", [])
    if not isinstance(params, list):
        raise ConfigError("config field 'algebra.params': expected a list")
    flat = []
    for p in params:
        flat.extend(p if isinstance(p, list) else [p])
    return lie.preset(name, *[lie._parse_number(p) for p in flat])


def build_forcing(cfg: RunConfig, alg, required: bool) -> hypo.ForcingSpec:
    sec = cfg.section("forcing")
    _check_keys(sec, {"columns"}, "forcing")
    if "columns" not in sec:
        if required:
            raise ConfigError("config field 'forcing.columns' is required")
        return hypo.ForcingSpec(np.eye(alg.dim))
    cols = _field(sec, "columns", "forcing", "matrix")
    if len(cols[0]) != alg.dim:
        raise ConfigError(f"config field 'forcing.columns': vectors must have length {alg.dim}, got {len(cols[0])}")
    exact = all(not isinstance(x, float) for col in cols for x in col)
    try:
        return hypo.ForcingSpec.from_columns([[lie._parse_number(x) for x in col] for col in cols], exact=exact)
    except lie.AlgebraError as exc:
        raise ConfigError(f"config field 'forcing.columns': {exc}") from None


def build_curve(cfg: RunConfig) -> curves.CurveSpec:
    sec = cfg.section("curve")
    _check_keys(sec, {"kind", "radius", "mean", "cos", "sin", "period"}, "curve")
    kind = _field(sec, "kind", "curve", "str", "fourier")
    period = _field(sec, "period", "curve", "pos", 2 * np.pi)
    if kind == "circle":
        return curves.CurveSpec.circle(_field(sec, "radius", "curve", "pos", 1.0), period)
    if kind == "constant":
        return curves.CurveSpec.constant(_field(sec, "mean", "curve", "vec"), period)
    if kind != "fourier":
        raise ConfigError(f"config field 'curve.kind': unknown curve kind {kind!r} (circle, constant, fourier)")
    mean = _field(sec, "mean", "curve", "vec")
    cos = _field(sec, "cos", "curve", "matrix", [[0.0] * len(mean)])
    sin = _field(sec, "sin", "curve", "matrix", [[0.0] * len(mean)])
    try:
        return curves.CurveSpec(mean, cos, sin, period)
    except ValueError as exc:
        raise ConfigError(f"config section 'curve': {exc}") from None


def build_chart(cfg: RunConfig, alg) -> charts.ZChart:
    sec = cfg.section("chart")
    kind = _field(sec, "kind", "chart", "str")
    n = alg.dim
    if kind == "circle":
        _check_keys(sec, {"kind", "u", "v", "radius", "center"}, "chart")
        u = _field(sec, "u", "chart", "vec")
        v = _field(sec, "v", "chart", "vec")
        center = _field(sec, "center", "chart", "vec", [0.0] * n)
        if not len(u) == len(v) == len(center) == n:
            raise ConfigError(f"config section 'chart': u, v and center must have length {n}")
        return charts.circle_chart(u, v, _field(sec, "radius", "chart", "pos", 1.0), center)
    if kind == "curve":
        _check_keys(sec, {"kind"}, "chart")
        c = build_curve(cfg)
        if c.n != n:
            raise ConfigError(f"curve lives in R^{c.n} but the algebra has dimension {n}")
        return charts.curve_chart(c)
    if kind == "sphere_orbit":
        _check_keys(sec, {"kind", "radius"}, "chart")
        if n != 3:
            raise ConfigError("chart kind 'sphere_orbit' needs a 3-dimensional algebra")
        return charts.sphere_orbit_chart(alg, _field(sec, "radius", "chart", "pos", 1.0))
    if kind == "point":
        _check_keys(sec, {"kind", "z0"}, "chart")
        z0 = _field(sec, "z0", "chart", "vec")
        if len(z0) != n:
            raise ConfigError(f"config field 'chart.z0': expected length {n}")
        return charts.point_chart(z0)
    raise ConfigError(f"config field 'chart.kind': unknown chart kind {kind!r} (circle, curve, sphere_orbit, point)")


def _vector_param(p: dict, key: str, n: int, default):
    v = _field(p, key, "params", "vec", default)
    if v is not None and len(v) != n:
        raise ConfigError(f"config field 'params.{key}': expected length {n}, got {len(v)}")
    return v


def _need_group(alg):
    if alg.group is None:
        raise ConfigError(f"algebra {alg.name!r} has no group representation; simulation modes need one")


# ---------------------------------------------------------------------------
# modes
# ---------------------------------------------------------------------------

SIM_KEYS = {"nu", "eps", "dt", "t_final", "n_paths", "n_records", "z0", "format", "burn_in", "threshold"}


def _langevin_ensemble(cfg, alg, p, threads):
    _need_group(alg)
    forcing = build_forcing(cfg, alg, required=False)
    lc = sm.LangevinConfig(
        nu=_field(p, "nu", "params", "nonneg", 1.0),
        eps=_field(p, "eps", "params", "nonneg", 1.0),
        sigma=hypo.to_float(forcing.sigma),
        dt=_field(p, "dt", "params", "pos"),
        t_final=_field(p, "t_final", "params", "pos"),
        seed=cfg.seed,
        n_paths=_field(p, "n_paths", "params", "posint", 1),
        n_records=_field(p, "n_records", "params", "posint", 2),
    )
    z0 = _vector_param(p, "z0", alg.dim, None)
    return lc, sm.ensemble_run("langevin", alg, lie.arnold_form(alg), lc, z0=z0, threads=threads)


def _write_trajectories(ens, out: Path, fmt: str) -> dict:
    if fmt == "csv":
        path = out / "trajectories.csv"
        ens.to_csv(path)
    elif fmt == "binary":
        path = out / "trajectories.bin"
        ens.to_binary(path)
    else:
        raise ConfigError(f"config field 'params.format': expected 'csv' or 'binary', got {fmt!r}")
    return {"file": path.name, "sha256": hashlib.sha256(path.read_bytes()).hexdigest()}


def mode_check_langevin(cfg, inputs, out, threads, exact):
    _check_keys(cfg.section("params"), {"rtol"}, "params")
    alg = build_algebra(cfg, inputs)
    forcing = build_forcing(cfg, alg, required=True)
    rtol = _field(cfg.section("params"), "rtol", "params", "pos", hypo.RANK_RTOL)
    rep = hypo.check_langevin_hormander(alg, None, forcing, exact=exact, rtol=rtol)
    return _verdict_result(cfg, alg, rep)


def mode_check_constrained(cfg, inputs, out, threads, exact):
    p = cfg.section("params")
    _check_keys(p, {"n_samples", "max_samples", "rtol"}, "params")
    alg = build_algebra(cfg, inputs)
    chart = build_chart(cfg, alg)
    rep = hypo.check_constrained_hormander(
        chart, alg,
        n_samples=_field(p, "n_samples", "params", "posint", 8),
        max_samples=_field(p, "max_samples", "params", "posint", 4096),
        exact=exact,
        rtol=_field(p, "rtol", "params", "pos", hypo.RANK_RTOL),
    )
    return _verdict_result(cfg, alg, rep)


def _verdict_result(cfg, alg, rep):
    res = {"algebra": alg.name, "report": rep.to_dict()}
    if rep.verdict is None:
        return res, EXIT_INCONCLUSIVE
    if cfg.expect is not None:
        res["expected_verdict"] = cfg.expect
        res["passed"] = rep.verdict == cfg.expect
        return res, EXIT_OK if res["passed"] else EXIT_FAIL
    return res, EXIT_OK


def mode_simulate_langevin(cfg, inputs, out, threads, exact):
    p = cfg.section("params")
    _check_keys(p, SIM_KEYS - {"burn_in", "threshold"}, "params")
    alg = build_algebra(cfg, inputs)
    lc, ens = _langevin_ensemble(cfg, alg, p, threads)
    traj = _write_trajectories(ens, out, _field(p, "format", "params", "str", "binary"))
    keep = ~ens.aborted
    H = lie.energy(ens.z[keep, -1], alg.as_float())
    res = {
        "algebra": alg.name,
        "config": lc.to_dict(),
        "n_paths": ens.n_paths,
        "n_aborted": int(ens.aborted.sum()),
        "final_energy_mean": float(np.mean(H)) if H.size else None,
        "trajectories": traj,
        "passed": bool(not ens.aborted.any()),
    }
    return res, EXIT_OK if res["passed"] else EXIT_FAIL


def mode_simulate_constrained(cfg, inputs, out, threads, exact):
    p = cfg.section("params")
    _check_keys(p, {"eps", "dt", "t_final", "n_paths", "n_records", "s0", "format"}, "params")
    alg = build_algebra(cfg, inputs)
    _need_group(alg)
    chart = build_chart(cfg, alg)
    if chart.param_dim == 0:
        raise ConfigError("simulate-constrained needs a chart of positive dimension")
    cc = _constrained_config(cfg, p, 2)
    s0 = _vector_param(p, "s0", chart.param_dim, None)
    ens = sm.ensemble_run("constrained", alg, lie.arnold_form(alg), cc, chart=chart, s0=s0, threads=threads)
    traj = _write_trajectories(ens, out, _field(p, "format", "params", "str", "binary"))
    res = {"algebra": alg.name, "chart": chart.params, "config": cc.to_dict(), "n_paths": ens.n_paths,
           "trajectories": traj}
    return res, EXIT_OK


def _constrained_config(cfg, p, n_records_default):
    return sm.ConstrainedConfig(
        eps=_field(p, "eps", "params", "nonneg", 1.0),
        dt=_field(p, "dt", "params", "pos"),
        t_final=_field(p, "t_final", "params", "pos"),
        seed=cfg.seed,
        n_paths=_field(p, "n_paths", "params", "posint", 1),
        n_records=_field(p, "n_records", "params", "posint", n_records_default),
    )


def mode_diffusivity(cfg, inputs, out, threads, exact):
    p = cfg.section("params")
    _check_keys(p, {"eps", "dt", "t_final", "n_paths", "rel_tol", "n_se"}, "params")
    curve = build_curve(cfg)
    centered, drift = curves.center_curve(curve)
    alg = lie.abelian(curve.n)
    cc = _constrained_config(cfg, p, 2)
    ens = sm.ensemble_run("constrained", alg, lie.arnold_form(alg), cc, chart=charts.curve_chart(curve),
                          threads=threads)
    est = stats.effective_covariance(ens, cc.eps, cc.t_final)
    sigma = curves.sigma_matrix(centered)
    pred = stats.predicted_covariance(sigma, cc.eps) if cc.eps > 0 else np.full_like(sigma, np.nan)
    cmp = stats.compare_covariance(est, pred, _field(p, "rel_tol", "params", "pos", 0.05),
                                   _field(p, "n_se", "params", "pos", stats.N_SE))
    X = (ens.group[:, -1] - ens.group[:, 0]) / np.sqrt(cc.t_final) - drift * np.sqrt(cc.t_final)
    res = {"curve": curve.to_dict(), "sigma": sigma.tolist(), "drift": drift.tolist(), "config": cc.to_dict(),
           "comparison": cmp, "componentwise_ks": stats.componentwise_normal_ks(X, pred)}
    return res, EXIT_OK if cmp["passed"] else EXIT_FAIL


def _stationary_ensemble(cfg, inputs, threads):
    p = cfg.section("params")
    _check_keys(p, SIM_KEYS - {"format", "n_records"} | {"n_se"}, "params")
    alg = build_algebra(cfg, inputs)
    lc, ens = _langevin_ensemble(cfg, alg, p, threads)
    return alg, p, lc, ens


def mode_gibbs(cfg, inputs, out, threads, exact):
    alg, p, lc, ens = _stationary_ensemble(cfg, inputs, threads)
    ginv = np.linalg.inv(hypo.to_float(alg.metric))
    if lc.eps > 0 and not np.allclose(lc.sigma @ lc.sigma.T, ginv, atol=1e-12):
        raise ConfigError("gibbs mode needs forcing with sigma sigma^T = g^{-1} (the Gibbs target assumes it)")
    z, _ = stats.stationary_samples(ens, _field(p, "burn_in", "params", "nonneg", 0.2))
    rep = stats.gibbs_marginal_test(z, lc.nu, lc.eps, alg, _field(p, "threshold", "params", "pos", stats.KS_THRESHOLD))
    res = {"algebra": alg.name, "config": lc.to_dict(), "n_aborted": int(ens.aborted.sum()), "report": rep}
    return res, EXIT_OK if rep["passed"] else EXIT_FAIL


def mode_haar(cfg, inputs, out, threads, exact):
    alg, p, lc, ens = _stationary_ensemble(cfg, inputs, threads)
    if tuple(ens.group_shape) != (3, 3) or not getattr(alg.group, "orthogonal", False):
        raise ConfigError(f"haar mode needs an SO(3) algebra, got {alg.name!r}")
    check = hypo.check_langevin_hormander(alg, None, hypo.ForcingSpec(lc.sigma))
    _, a = stats.stationary_samples(ens, _field(p, "burn_in", "params", "nonneg", 0.2))
    rep = stats.haar_uniformity_test(a, _field(p, "n_se", "params", "pos", stats.N_SE))
    res = {"algebra": alg.name, "config": lc.to_dict(), "n_aborted": int(ens.aborted.sum()),
           "hormander_verdict": check.verdict, "report": rep}
    return res, EXIT_OK if rep["passed"] else EXIT_FAIL


def _f0_func(terms, n_a):
    """``f0 = sum amp * fn(k . (a, s))`` with ``fn`` cos or sin."""
    if not isinstance(terms, list) or not terms:
        raise ConfigError("config field 'grid.f0': expected a non-empty list of {amp, fn, k} tables")
    parsed = []
    for i, t in enumerate(terms):
        where = f"grid.f0[{i}]"
        if not isinstance(t, dict):
            raise ConfigError(f"config field '{where}': expected a table")
        _check_keys(t, {"amp", "fn", "k"}, where)
        amp = _field(t, "amp", where, "float")
        fn = _field(t, "fn", where, "str", "cos")
        if fn not in ("cos", "sin"):
            raise ConfigError(f"config field '{where}.fn': expected 'cos' or 'sin'")
        k = _field(t, "k", where, "vec", [0] * (n_a + 1))
        if len(k) != n_a + 1:
            raise ConfigError(f"config field '{where}.k': expected {n_a + 1} wavenumbers (a..., s)")
        parsed.append((amp, np.cos if fn == "cos" else np.sin, k))

    def f0(*xs):
        return sum(amp * fn(sum(ki * x for ki, x in zip(k, xs))) for amp, fn, k in parsed) + 0.0 * xs[0]

    return f0


def mode_fpsolve(cfg, inputs, out, threads, exact):
    p = cfg.section("params")
    _check_keys(p, {"eps", "t_final", "dt", "n_records", "n_snapshots", "target_ratio"}, "params")
    g = cfg.section("grid")
    _check_keys(g, {"n_a", "n_s", "f0", "refine_n_a"}, "grid")
    curve = build_curve(cfg)
    n_a = g.get("n_a")
    n_a = [n_a] if isinstance(n_a, int) else n_a
    if not isinstance(n_a, list) or not n_a or not all(isinstance(v, int) for v in n_a):
        raise ConfigError("config field 'grid.n_a': expected an integer or a list of integers")
    n_s = _field(g, "n_s", "grid", "posint")
    f0 = _f0_func(g.get("f0", [{"amp": 1.0, "fn": "cos", "k": [0] * (len(n_a) + 1)}]), len(n_a))
    eps = _field(p, "eps", "params", "nonneg", 1.0)
    t_final = _field(p, "t_final", "params", "pos")
    dt = _field(p, "dt", "params", "pos", None)
    n_snap = _field(p, "n_snapshots", "params", "int", 2)
    try:
        grid = fp.FPGrid(tuple(n_a), n_s).with_f0(f0)
        r = fp.fp_solve_torus(grid, curve, eps, t_final, dt, _field(p, "n_records", "params", "posint", 200), n_snap)
    except fp.CFLError as exc:
        raise ConfigError(f"config field 'params.dt': {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"fpsolve: {exc}") from None
    snaps = []
    for i, (f, t) in enumerate(zip(r.snapshots, r.snapshot_times)):
        name = f"density_{i:03d}.csv"
        fp.write_snapshot_csv(out / name, f, grid, t)
        snaps.append(name)
    ratio = float(r.l2[-1] / r.l2[0]) if r.l2[0] > 0 else 0.0
    monotone = bool(np.all(np.diff(r.l2) <= 1e-12 * max(1.0, r.l2[0])))
    res = {
        "grid": {"n_a": list(grid.n_a), "n_s": grid.n_s},
        "curve": curve.to_dict(),
        "dt": r.dt,
        "eps": eps,
        "l2_initial": float(r.l2[0]),
        "l2_final": float(r.l2[-1]),
        "l2_ratio": ratio,
        "monotone": monotone,
        "max_mass_step_error": r.max_mass_step_error,
        "min_density": float(r.min_f.min()),
        "decay_rate_fit": r.decay_rate(),
        "history": r.to_dict(),
        "snapshots": snaps,
    }
    if len(r.snapshots) >= 2:
        res["l2_monitor"] = fp.l2_monitor(r)
    passed = monotone and r.max_mass_step_error <= 1e-12 and res["min_density"] >= -1e-12
    target = _field(p, "target_ratio", "params", "pos", None)
    if target is not None:
        res["target_ratio"] = target
        passed = passed and ratio < target
    if "refine_n_a" in g:
        res["refinement"] = _refinement(g, n_s, curve, eps, t_final, f0)
        passed = passed and res["refinement"]["shrinking"]
    res["passed"] = bool(passed)
    return res, EXIT_OK if passed else EXIT_FAIL


def _refinement(g, n_s, curve, eps, t_final, f0):
    """Loss of the a-mode-1 amplitude under grid refinement in ``a``."""
    levels = g["refine_n_a"]
    if not isinstance(levels, list) or not all(isinstance(v, int) for v in levels):
        raise ConfigError("config field 'grid.refine_n_a': expected a list of integers")
    losses = []
    for n in levels:
        try:
            grid = fp.FPGrid((n,), n_s).with_f0(f0)
        except ValueError as exc:
            raise ConfigError(f"config field 'grid.refine_n_a': {exc}") from None
        r = fp.fp_solve_torus(grid, curve, eps, t_final, n_snapshots=1)
        a0 = fp.mode_amplitude(r.snapshots[0], grid)
        a1 = fp.mode_amplitude(r.snapshots[-1], grid)
        losses.append(float(1.0 - a1 / a0) if a0 > 0 else 0.0)
    return {"n_a": levels, "mode1_amplitude_loss": losses,
            "shrinking": bool(all(b < a for a, b in zip(losses, losses[1:])))}


def mode_conserve(cfg, inputs, out, threads, exact):
    p = cfg.section("params")
    _check_keys(p, {"z0", "dts", "t_final", "method", "min_order"}, "params")
    alg = build_algebra(cfg, inputs)
    _need_group(alg)
    z0 = _vector_param(p, "z0", alg.dim, None)
    if z0 is None:
        raise ConfigError("config field 'params.z0' is required")
    dts = _field(p, "dts", "params", "vec", [1e-2, 5e-3, 2.5e-3])
    if len(dts) < 2 or any(d <= 0 for d in dts):
        raise ConfigError("config field 'params.dts': need at least two positive step sizes")
    method = _field(p, "method", "params", "str", "rkmk4")
    if method not in ("rkmk4", "lie_euler"):
        raise ConfigError(f"config field 'params.method': unknown method {method!r} (rkmk4, lie_euler)")
    study = sm.conservation_study(alg, lie.arnold_form(alg), z0, dts, _field(p, "t_final", "params", "pos", 10.0),
                                  method=method)
    min_order = _field(p, "min_order", "params", "pos", 2.0)
    study["min_order"] = min_order
    study["passed"] = bool(min(study["energy_order"] + study["momentum_order"]) >= min_order)
    return {"algebra": alg.name, "study": study}, EXIT_OK if study["passed"] else EXIT_FAIL


HANDLERS = {
    "check-langevin": mode_check_langevin,
    "check-constrained": mode_check_constrained,
    "simulate-langevin": mode_simulate_langevin,
    "simulate-constrained": mode_simulate_constrained,
    "diffusivity": mode_diffusivity,
    "gibbs": mode_gibbs,
    "haar": mode_haar,
    "fpsolve": mode_fpsolve,
    "conserve": mode_conserve,
}


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats as strings."""
    obj = stats.to_jsonable(obj)
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def dump_json(obj, path: Path):
    path.write_text(json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n")


def resolve_output_dir(cfg: RunConfig, flag: str | None) -> Path:
    if flag:
        return Path(flag)
    if cfg.output:
        return cfg.base_dir / cfg.output
    root = Path(os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT_ROOT))
    return root / f"{cfg.mode}-{sm.content_hash(cfg.raw)[:12]}"


def run(cfg: RunConfig, out: Path, threads: int = 1, exact: bool = False, inputs: dict | None = None,
        argv=None) -> int:
    """Execute one config; write result and manifest; return the exit status."""
    inputs = {} if inputs is None else inputs
    out.mkdir(parents=True, exist_ok=True)
    status = EXIT_INPUT
    res = None
    try:
        res, status = HANDLERS[cfg.mode](cfg, inputs, out, threads, exact)
    except (ConfigError, lie.AlgebraError, ChartInvarianceError, stats.InsufficientSamples) as exc:
        print(f"liestoch: error: {exc}", file=sys.stderr)
        res = {"error": str(exc), "error_type": type(exc).__name__}
        status = EXIT_INPUT
    res = {"mode": cfg.mode, "seed": cfg.seed, "exit_status": status, **res}
    dump_json(res, out / "result.json")
    manifest = {
        "liestoch_version": __version__,
        "config": cfg.raw,
        "seed": cfg.seed,
        "seed_source": cfg.seed_source,
        "threads": threads,
        "exact": exact,
        "inputs": inputs,
        "outputs": {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(out.iterdir())
                    if p.is_file() and p.name != "manifest.json"},
        "argv": list(argv) if argv is not None else None,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "exit_status": status,
    }
    dump_json(manifest, out / "manifest.json")
    return status


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="liestoch", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a config file")
    r.add_argument("config", help="TOML run config")
    r.add_argument("--seed", type=int, default=None, help="override the config seed")
    r.add_argument("--threads", type=int, default=1, help="worker threads for ensembles (results do not depend on it)")
    r.add_argument("--exact", action="store_true", help="exact rational arithmetic for the algebraic checks")
    r.add_argument("--out", default=None, help=f"output directory (default ${OUTPUT_ENV}/<mode>-<hash>)")
    r.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. params.dt=0.005")
    sub.add_parser("presets", help="list algebra presets")
    return ap


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    if args.command == "presets":
        for name in sorted(lie.PRESETS):
            print(name)
        return EXIT_OK
    if args.threads < 1:
        print("liestoch: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        cfg, blob = load_config(args.config, args.overrides, args.seed)
    except ConfigError as exc:
        print(f"liestoch: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    inputs = {str(Path(args.config).resolve()): hashlib.sha256(blob).hexdigest()}
    out = resolve_output_dir(cfg, args.out)
    status = run(cfg, out, args.threads, args.exact, inputs, argv)
    print(f"{cfg.mode}: exit {status}, results in {out}")
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
