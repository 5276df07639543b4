from fractions import Fraction

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

from liestoch import lie, linalg

MATRIX_PRESETS = ["heisenberg3", "so3_euclid", "so3_rigid", "affine2", "so3_plus_so3"]
ALL_PRESETS = [lie.preset(n) for n in MATRIX_PRESETS] + [lie.abelian(k) for k in (1, 2, 4)]

rational = st.fractions(min_value=-4, max_value=4, max_denominator=6)
real = st.floats(-3, 3, allow_nan=False)


def vec(n, elems=real):
    return st.lists(elems, min_size=n, max_size=n).map(np.array)


@pytest.mark.parametrize("alg", ALL_PRESETS, ids=lambda a: a.name)
def test_presets_are_exact_lie_algebras(alg):
    c = alg.structure_constants
    assert alg.exact
    assert (c + np.swapaxes(c, 1, 2) == 0).all()
    assert lie.jacobi_residual(alg) == 0


@pytest.mark.parametrize("name", MATRIX_PRESETS)
def test_matrix_representation_matches_structure_constants(name):
    alg = lie.preset(name)
    E = alg.group.basis
    c = linalg.to_float(alg.structure_constants)
    for i in range(alg.dim):
        for j in range(alg.dim):
            comm = E[i] @ E[j] - E[j] @ E[i]
            assert np.allclose(comm, np.einsum("k,kab->ab", c[:, i, j], E))


@given(vec(3), vec(3))
def test_so3_bracket_is_cross_product(x, y):
    assert np.allclose(lie.bracket(x, y, lie.so3_euclid().as_float()), np.cross(x, y))


@pytest.mark.parametrize("alg", ALL_PRESETS, ids=lambda a: a.name)
def test_arnold_form_defining_identity_exact(alg):
    # <[x, y], z> = <qtilde(z, x), y> on basis vectors, in exact arithmetic
    form = lie.arnold_form(alg)
    g = alg.metric
    n = alg.dim
    for i in range(n):
        for j in range(n):
            for k in range(n):
                x, y, z = (alg.basis_vector(t) for t in (i, j, k))
                lhs = lie.bracket(x, y, alg).dot(g).dot(z)
                qt = np.einsum("mki,k,i->m", form.qtilde, z, x)
                assert lhs == qt.dot(g).dot(y)


@given(vec(3, rational))
def test_rigid_body_form_is_euler_top(z):
    alg = lie.so3_rigid(1, 2, 3)
    inertia = np.diag([1.0, 2.0, 3.0])
    zf = z.astype(float)
    q = lie.arnold_form(alg).as_float().q(zf, zf)
    assert np.allclose(q, np.linalg.solve(inertia, np.cross(inertia @ zf, zf)))


def test_bi_invariant_metric_has_zero_form():
    assert lie.arnold_form(lie.so3_euclid()).is_zero()
    assert lie.arnold_form(lie.abelian(3)).is_zero()
    assert not lie.arnold_form(lie.so3_rigid(1, 2, 3)).is_zero()


@pytest.mark.parametrize("alg", ALL_PRESETS, ids=lambda a: a.name)
@given(data=st.data())
def test_form_conserves_energy(alg, data):
    z = data.draw(vec(alg.dim))
    q = lie.arnold_form(alg).as_float().q(z, z)
    assert abs(z @ linalg.to_float(alg.metric) @ q) <= 1e-10 * max(1.0, z @ z) ** 1.5


def test_form_example_value():
    alg = lie.so3_rigid(1, 2, 3)
    z = lie.exactify_vector([0, 1, 1], alg)
    q = lie.arnold_form(alg).q(z, z)
    assert list(q) == [Fraction(-1), 0, 0]


@pytest.mark.parametrize("alg", ALL_PRESETS, ids=lambda a: a.name)
def test_unimodularity_matches_ad_traces(alg):
    traces = [float(np.trace(linalg.to_float(lie.ad_matrix(alg.basis_vector(i), alg)))) for i in range(alg.dim)]
    assert lie.unimodularity_check(alg) == all(t == 0 for t in traces)


def test_affine_is_the_only_non_unimodular_preset():
    assert not lie.unimodularity_check(lie.affine2())
    assert all(lie.unimodularity_check(lie.preset(n)) for n in MATRIX_PRESETS if n != "affine2")


@pytest.mark.parametrize("name", MATRIX_PRESETS)
@given(data=st.data())
def test_group_exp_matches_expm(name, data):
    alg = lie.preset(name)
    x = data.draw(vec(alg.dim))
    assert np.allclose(lie.group_exp(x, alg), scipy.linalg.expm(alg.group.hat(x)), atol=1e-10)


def test_rodrigues_small_angle_branch():
    x = np.array([1e-6, -2e-6, 5e-7])
    a = lie.group_exp(x, lie.so3_euclid())
    assert np.allclose(a, scipy.linalg.expm(lie.so3_euclid().group.hat(x)), atol=1e-15)


@given(vec(3), vec(3))
def test_so3_momentum_is_rotated_angular_momentum(w, z):
    alg = lie.so3_rigid(1, 2, 3)
    a = lie.group_exp(w, alg)
    g = np.diag([1.0, 2.0, 3.0])
    assert np.allclose(lie.momentum(a, z, alg), a @ (g @ z), atol=1e-10)


def test_energy_exact_and_float():
    alg = lie.so3_rigid(1, 2, 3)
    assert lie.energy(lie.exactify_vector([1, 1, 1], alg), alg) == Fraction(3)
    assert lie.energy(np.array([1.0, 1.0, 1.0]), alg) == pytest.approx(3.0)


def test_preset_string_forms():
    a = lie.preset("so3_rigid(1,2,3)")
    b = lie.preset("so3_rigid", 1, 2, 3)
    assert (a.metric == b.metric).all()
    assert lie.preset("abelian(3)").dim == 3
    with pytest.raises(lie.AlgebraError, match="unknown preset"):
        lie.preset("sl2")


def test_metric_must_be_positive_definite():
    with pytest.raises(lie.AlgebraError):
        lie.so3_rigid(1, -2, 3)


def test_load_algebra_file_matches_preset(tmp_path):
    p = tmp_path / "h.toml"
    p.write_text('dim = 3\nbrackets = [[1, 2, 3, 1]]\n')
    alg = lie.load_algebra(p)
    ref = lie.heisenberg3()
    assert alg.exact
    assert (alg.structure_constants == ref.structure_constants).all()
    assert (alg.metric == ref.metric).all()


def test_load_algebra_rational_strings():
    alg = lie.load_algebra({"dim": 2, "brackets": [[1, 2, 2, "1/2"]], "metric": [2, 0, 0, "1/3"]})
    assert alg.structure_constants[1, 0, 1] == Fraction(1, 2)
    assert alg.metric[1, 1] == Fraction(1, 3)


def test_load_abelian_file_gets_translation_group():
    assert lie.load_algebra({"dim": 2}).group.kind == "abelian"


@pytest.mark.parametrize(
    "data, msg",
    [
        ({"brackets": []}, "dim"),
        ({"dim": 3, "brackets": [[1, 2, 4, 1]]}, "out of range"),
        ({"dim": 3, "brackets": [[1, 1, 2, 1]]}, "must vanish"),
        ({"dim": 3, "brackets": [[1, 2, 3, 1], [2, 3, 1, 1], [3, 1, 1, 1]]}, "Jacobi"),
        ({"dim": 2, "metric": [1, 0, 0]}, "metric"),
    ],
)
def test_load_algebra_errors(data, msg):
    with pytest.raises(lie.AlgebraError, match=msg):
        lie.load_algebra(data)


def test_as_exact_roundtrip():
    alg = lie.so3_rigid(1, 2, 3).as_float()
    back = alg.as_exact()
    assert back.exact
    assert (back.metric == lie.so3_rigid(1, 2, 3).metric).all()


def test_as_exact_rejects_irrational():
    alg = lie.so3_rigid(1.0, np.pi, 3.0)
    with pytest.raises(lie.AlgebraError):
        alg.as_exact()


def test_orthogonal_projection_removes_drift():
    grp = lie.so3_euclid().group
    a = lie.group_exp(np.array([0.3, 0.2, -0.1]), lie.so3_euclid()) * (1 + 1e-8)
    assert grp.orthogonality_residual(grp.project(a)) < 1e-14
