import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from liestoch import charts, hypo, lie, linalg
from liestoch.hypo import ForcingSpec, SubspaceBasis

SMALL = [lie.heisenberg3(), lie.so3_euclid(), lie.so3_rigid(1, 2, 3), lie.affine2(),
         lie.abelian(1), lie.abelian(3), lie.so3_rigid(1, 1, 2)]
small_int = st.integers(-2, 2)


def forcing(cols, exact=True):
    return ForcingSpec.from_columns(linalg.to_exact(np.array(cols)) if exact else np.array(cols, float), exact=exact)


def test_rigid_body_single_axis_is_degenerate():
    rep = hypo.check_langevin_hormander(lie.so3_rigid(1, 2, 3), None, forcing([[1, 0, 0]], exact=False))
    assert rep.verdict is False
    assert rep.witness.same_space(SubspaceBasis.span(np.array([[1.0, 0, 0]])))
    assert rep.certified


def test_rigid_body_two_axis_mix_is_nondegenerate():
    rep = hypo.check_langevin_hormander(lie.so3_rigid(1, 2, 3), None, forcing([[1, 1, 0]], exact=False))
    assert rep.verdict is True
    assert rep.witness is None
    assert rep.rank_history[-1] == 3


def test_direct_sum_forced_in_one_summand():
    alg = lie.so3_plus_so3()
    rep = hypo.check_langevin_hormander(alg, None, forcing([[1, 1, 0, 0, 0, 0]]), exact=True)
    assert rep.verdict is False
    first = SubspaceBasis.span(linalg.to_exact(np.eye(6)[:3].astype(int)))
    assert rep.witness.same_space(first)


def test_exact_mode_reports_rational_basis():
    rep = hypo.check_langevin_hormander(lie.so3_rigid(1, 2, 3), None, forcing([[1, 0, 0]]), exact=True)
    d = rep.to_dict()
    assert d["mode"] == "exact"
    assert d["witness"] == [["1", "0", "0"]]
    assert d["tolerance"] is None


def test_bi_invariant_metric_closure_is_forcing_range():
    # q vanishes, so the closure never grows past the forcing span
    rep = hypo.check_langevin_hormander(lie.so3_euclid(), None, forcing([[1, 0, 0], [0, 1, 0]]))
    assert rep.verdict is False
    assert rep.closure_basis.rank == 2


@given(st.sampled_from(SMALL), st.data())
def test_langevin_verdict_matches_bruteforce_oracle(alg, data):
    k = data.draw(st.integers(1, 2))
    cols = data.draw(st.lists(st.lists(small_int, min_size=alg.dim, max_size=alg.dim).filter(any),
                              min_size=k, max_size=k))
    expected = oracles.langevin_closure_rank(alg, cols) == alg.dim
    flt = hypo.check_langevin_hormander(alg, None, forcing(cols, exact=False))
    ext = hypo.check_langevin_hormander(alg, None, forcing(cols), exact=True)
    assert ext.verdict == expected
    assert flt.verdict == expected
    assert flt.closure_basis.rank == ext.closure_basis.rank


def test_near_cutoff_is_recomputed_exactly():
    alg = lie.so3_euclid()
    # singular value 7e-6 against a cutoff of 1.4e-5: too close to trust floats
    f = ForcingSpec.from_columns(np.array([[1e5, 0, 0], [1e5, 1e-5, 0]]))
    rep = hypo.check_langevin_hormander(alg, None, f)
    assert rep.mode == "exact"
    assert any("cutoff" in n for n in rep.notes)
    assert rep.closure_basis.rank == 2


def test_near_cutoff_without_rational_form_is_inconclusive():
    alg = lie.so3_euclid()
    f = ForcingSpec.from_columns(np.array([[1.0, 0, 0], [1.0, np.pi * 1e-11, 0]]))
    rep = hypo.check_langevin_hormander(alg, None, f)
    assert rep.verdict is None and rep.inconclusive


def test_p_hull_circle_in_so3_is_everything():
    th = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    pts = np.stack([np.cos(th), np.sin(th), 0 * th], axis=1)
    assert hypo.p_hull(pts, lie.so3_euclid()).rank == 3


def test_p_hull_singleton_is_zero():
    assert hypo.p_hull(np.array([[0.3, 0.1, 2.0]]), lie.so3_euclid()).rank == 0


def test_p_hull_planar_circle_in_abelian():
    th = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    pts = np.stack([np.cos(th), np.sin(th), 0 * th], axis=1)
    hull = hypo.p_hull(pts, lie.abelian(3))
    assert hull.rank == 2
    assert hull.same_space(SubspaceBasis.span(np.eye(3)[:2]))


@given(st.sampled_from(SMALL), st.data())
def test_p_hull_matches_bruteforce_oracle(alg, data):
    pts = data.draw(st.lists(st.lists(small_int, min_size=alg.dim, max_size=alg.dim), min_size=1, max_size=4))
    exact = hypo.p_hull(linalg.to_exact(np.array(pts)), alg, exact=True)
    flt = hypo.p_hull(np.array(pts, float), alg.as_float(), exact=False)
    ref = oracles.p_hull_rank(alg, pts)
    assert exact.rank == ref
    assert flt.rank == ref


def test_constrained_check_on_circle_chart():
    ch = charts.circle_chart([1, 0, 0], [0, 1, 0])
    rep = hypo.check_constrained_hormander(ch, lie.so3_euclid())
    assert rep.verdict is True
    assert rep.kind == "constrained"


def test_constrained_check_planar_circle_abelian_gives_witness():
    ch = charts.circle_chart([1, 0, 0], [0, 1, 0])
    rep = hypo.check_constrained_hormander(ch, lie.abelian(3))
    assert rep.verdict is False
    assert rep.witness.rank == 2
    assert rep.rank_history[-3:] == [2, 2, 2]


def test_constrained_check_point_chart():
    rep = hypo.check_constrained_hormander(charts.point_chart([0, 0, 1.0]), lie.so3_euclid())
    assert rep.verdict is False
    assert rep.closure_basis.rank == 0


def test_constrained_check_sample_cap_is_inconclusive():
    ch = charts.circle_chart([1, 0, 0], [0, 1, 0])
    rep = hypo.check_constrained_hormander(ch, lie.abelian(3), n_samples=1, max_samples=2)
    assert rep.verdict is None


def test_sphere_orbit_hull_is_full():
    alg = lie.so3_rigid(1, 2, 3)
    rep = hypo.check_constrained_hormander(charts.sphere_orbit_chart(alg), alg)
    assert rep.verdict is True


def test_q_closure_is_closed():
    alg = lie.so3_rigid(1, 2, 3)
    form = lie.arnold_form(alg)
    V = hypo.q_invariant_closure(SubspaceBasis.span(linalg.to_exact(np.array([[1, 1, 0]]))), form)
    assert V.rank == 3


def test_lie_generated_subalgebra_heisenberg():
    alg = lie.heisenberg3()
    S = SubspaceBasis.span(linalg.to_exact(np.array([[1, 0, 0], [0, 1, 0]])))
    assert hypo.lie_generated_subalgebra(S, alg).rank == 3


def test_forcing_rejects_zero_column():
    with pytest.raises(ValueError):
        ForcingSpec(np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_report_json_roundtrip():
    import json

    rep = hypo.check_langevin_hormander(lie.so3_rigid(1, 2, 3), None, forcing([[1, 0, 0]], exact=False))
    d = json.loads(rep.to_json())
    assert d["verdict"] is False
    assert d["witness"] == [[1.0, 0.0, 0.0]]


def test_basis_subsets_counts():
    assert len(list(hypo.basis_subsets(4))) == 15
