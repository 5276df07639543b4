import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from liestoch import fokker_planck as fp
from liestoch.curves import CurveSpec

COS = CurveSpec(np.zeros(1), [[1.0]], [[0.0]])
ONE = CurveSpec.constant([1.0])
ZERO = CurveSpec.constant([0.0])


def grid(n_a=32, n_s=32, f0=None):
    g = fp.FPGrid((n_a,), n_s)
    return g if f0 is None else g.with_f0(f0)


def test_constant_density_is_stationary():
    r = fp.fp_solve_torus(grid(), COS, 1.0, 2.0, n_snapshots=2)
    assert np.allclose(r.snapshots[-1], 1.0, atol=1e-14)
    assert np.all(r.l2 < 1e-13)
    mon = fp.l2_monitor(r)
    assert np.allclose(mon["d_dt_l2sq"], 0.0, atol=1e-12)
    assert np.allclose(mon["dissipation"], 0.0, atol=1e-12)


coeff = st.floats(-0.5, 0.5)


@settings(max_examples=20)
@given(st.lists(coeff, min_size=4, max_size=4), st.floats(0.1, 2.0), st.sampled_from([COS, ONE, ZERO]))
def test_mass_positivity_and_monotone_l2(c, eps, curve):
    f0 = lambda a, s: 1.0 + 0.9 * np.tanh(c[0] * np.cos(a) + c[1] * np.sin(s) + c[2] * np.cos(a + s) + c[3])  # noqa: E731
    g = grid(16, 16, f0)
    r = fp.fp_solve_torus(g, curve, eps, 3.0)
    assert r.max_mass_step_error < 1e-12
    assert r.min_f.min() >= -1e-12
    assert np.all(np.diff(r.l2) <= 1e-12)


def test_heat_mode_decay_rate():
    # pure s-diffusion of cos(k s): amplitude decays at (eps^2 / 2) k^2
    eps, k = 0.8, 2
    r = fp.fp_solve_torus(fp.FPGrid((4,), 128).with_f0(lambda a, s: 1 + np.cos(k * s)), ZERO, eps, 2.0,
                          n_snapshots=20)
    assert r.decay_rate() == pytest.approx(0.5 * eps**2 * k**2, rel=0.01)
    mon = fp.l2_monitor(r)
    assert mon["nonincreasing"]
    # d/dt int f^2 against -eps^2 int f_s^2 (first-order differences of snapshots)
    assert np.allclose(mon["d_dt_l2sq"], mon["dissipation"], rtol=0.1)


def test_traveling_wave_without_diffusion_in_a():
    # constant drift 1 in a: the exact solution is sin(a - t); the scheme only adds dissipation
    losses = []
    for n in (32, 64, 128):
        g = grid(n, 16, lambda a, s: 1 + 0.5 * np.sin(a))
        r = fp.fp_solve_torus(g, ONE, 1.0, 2 * np.pi, n_snapshots=1)
        f = r.snapshots[-1]
        assert np.argmax(f[:, 0]) == pytest.approx(n // 4, abs=1)
        losses.append(1 - fp.mode_amplitude(f, g) / fp.mode_amplitude(r.snapshots[0], g))
    assert losses[0] > losses[1] > losses[2] > 0


def test_cos_curve_relaxes_to_constant():
    g = grid(32, 64, lambda a, s: 1 + 0.5 * np.cos(a) + 0.4 * np.cos(s))
    r = fp.fp_solve_torus(g, COS, 1.0, 60.0, n_records=300)
    assert r.l2[-1] / r.l2[0] < 1e-6
    assert np.all(np.diff(r.l2) <= 0)


def test_decay_rate_stable_under_refinement():
    rates = []
    for n_a, n_s in [(32, 32), (64, 64)]:
        g = grid(n_a, n_s, lambda a, s: 1 + 0.5 * np.cos(a) + 0.4 * np.cos(s))
        rates.append(fp.fp_solve_torus(g, COS, 1.0, 30.0).decay_rate())
    assert rates[1] == pytest.approx(rates[0], rel=0.15)


def test_two_dimensional_torus():
    c = CurveSpec(np.zeros(2), [[1.0, 0.0]], [[0.0, 1.0]])
    g = fp.FPGrid((16, 16), 16).with_f0(lambda a1, a2, s: 1 + 0.3 * np.cos(a1) * np.cos(a2))
    r = fp.fp_solve_torus(g, c, 1.0, 5.0)
    assert r.max_mass_step_error < 1e-12
    assert np.all(np.diff(r.l2) <= 1e-14)
    assert r.l2[-1] < r.l2[0]


def test_cfl_violation():
    with pytest.raises(fp.CFLError):
        fp.fp_solve_torus(grid(), COS, 1.0, 1.0, dt=1.0)


@pytest.mark.parametrize("n_a, n_s", [(30, 32), (32, 2), ((8, 8, 8), 8)])
def test_grid_validation(n_a, n_s):
    with pytest.raises(ValueError):
        fp.FPGrid(n_a, n_s)


def test_curve_dimension_must_match():
    with pytest.raises(ValueError):
        fp.fp_solve_torus(grid(), CurveSpec.circle(), 1.0, 1.0)


def test_snapshot_csv(tmp_path):
    g = grid(8, 4, lambda a, s: 1 + 0 * a)
    p = tmp_path / "f.csv"
    fp.write_snapshot_csv(p, g.f0, g, 0.5)
    lines = p.read_text().splitlines()
    assert lines[0] == "# n_a=8 n_s=4 t=0.5"
    assert len(lines) == 9
    assert np.allclose(np.loadtxt(p, delimiter=","), 1.0)
