import json
from pathlib import Path

import pytest

from liestoch import cli

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run(args):
    return cli.main([str(a) for a in args])


def result(out):
    return json.loads((Path(out) / "result.json").read_text())


RIGID_E1 = """
version = 1
mode = "check-langevin"
seed = 3
[algebra]
preset = "so3_rigid"
params = [1, 2, 3]
[forcing]
columns = [[1, 0, 0]]
"""

SIM = """
version = 1
mode = "simulate-langevin"
seed = 99
[algebra]
preset = "so3_rigid"
params = [1, 2, 3]
[params]
dt = 0.01
t_final = 0.5
n_paths = 9
n_records = 6
format = "{fmt}"
"""


def test_check_langevin_degenerate_exit_zero(tmp_path):
    out = tmp_path / "o"
    assert run(["run", write(tmp_path, RIGID_E1), "--out", out]) == cli.EXIT_OK
    r = result(out)
    assert r["report"]["verdict"] is False
    assert r["report"]["witness"] == [[1.0, 0.0, 0.0]]


def test_expect_mismatch_is_test_failure(tmp_path):
    out = tmp_path / "o"
    assert run(["run", write(tmp_path, "expect = true\n" + RIGID_E1), "--out", out]) == cli.EXIT_FAIL
    assert result(out)["passed"] is False


def test_exact_flag(tmp_path):
    out = tmp_path / "o"
    assert run(["run", write(tmp_path, RIGID_E1), "--out", out, "--exact"]) == cli.EXIT_OK
    assert result(out)["report"]["witness"] == [["1", "0", "0"]]


def test_inconclusive_exit_code(tmp_path):
    text = RIGID_E1.replace("[[1, 0, 0]]", "[[1.0, 0, 0], [1.0, 3.14159265358979e-11, 0]]").replace(
        "so3_rigid", "so3_euclid").replace("params = [1, 2, 3]", "")
    assert run(["run", write(tmp_path, text), "--out", tmp_path / "o"]) == cli.EXIT_INCONCLUSIVE


def test_algebra_file_is_hashed_in_manifest(tmp_path):
    (tmp_path / "h.toml").write_text("dim = 3\nbrackets = [[1, 2, 3, 1]]\n")
    text = RIGID_E1.replace('preset = "so3_rigid"\nparams = [1, 2, 3]', 'file = "h.toml"')
    out = tmp_path / "o"
    assert run(["run", write(tmp_path, text), "--out", out]) == cli.EXIT_OK
    man = json.loads((out / "manifest.json").read_text())
    assert any(k.endswith("h.toml") for k in man["inputs"])
    assert len(man["inputs"]) == 2


@pytest.mark.parametrize("fmt", ["csv", "binary"])
def test_byte_identical_reruns_across_threads(tmp_path, fmt):
    cfg = write(tmp_path, SIM.format(fmt=fmt))
    outs = []
    for threads in (1, 3):
        out = tmp_path / f"t{threads}"
        assert run(["run", cfg, "--out", out, "--threads", threads]) == cli.EXIT_OK
        outs.append(out)
    for name in ("result.json", "trajectories.csv" if fmt == "csv" else "trajectories.bin"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    m0 = json.loads((outs[0] / "manifest.json").read_text())
    assert m0["outputs"]["result.json"] == json.loads((outs[1] / "manifest.json").read_text())["outputs"]["result.json"]


def test_seed_flag_overrides_and_changes_results(tmp_path):
    cfg = write(tmp_path, SIM.format(fmt="binary"))
    run(["run", cfg, "--out", tmp_path / "a"])
    run(["run", cfg, "--out", tmp_path / "b", "--seed", 100])
    assert (tmp_path / "a/trajectories.bin").read_bytes() != (tmp_path / "b/trajectories.bin").read_bytes()
    man = json.loads((tmp_path / "b/manifest.json").read_text())
    assert man["seed"] == 100 and man["seed_source"] == "flag"


def test_missing_seed_is_generated_and_recorded(tmp_path):
    out = tmp_path / "o"
    run(["run", write(tmp_path, RIGID_E1.replace("seed = 3\n", "")), "--out", out])
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed_source"] == "generated"
    assert isinstance(man["seed"], int)
    assert man["config"]["seed"] == man["seed"]


def test_set_override(tmp_path):
    out = tmp_path / "o"
    cfg = write(tmp_path, RIGID_E1)
    assert run(["run", cfg, "--out", out, "--set", "forcing.columns=[[1, 1, 0]]"]) == cli.EXIT_OK
    assert result(out)["report"]["verdict"] is True


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "root"))
    assert run(["run", write(tmp_path, RIGID_E1)]) == cli.EXIT_OK
    made = list((tmp_path / "root").iterdir())
    assert len(made) == 1 and made[0].name.startswith("check-langevin-")


@pytest.mark.parametrize(
    "text, needle",
    [
        ('version = 1\nmode = "gibbs"\n[params\n', "line 3"),
        ('mode = "gibbs"\n', "'version' is required"),
        ('version = 2\nmode = "gibbs"\n', "unsupported version"),
        ('version = 1\nmode = "dance"\n', "unknown mode"),
        ('version = 1\nmode = "gibbs"\n[params]\ndt = 0.1\nt_final = 1.0\n', "needs a 'algebra' section"),
        (RIGID_E1 + '[curve]\nkind = "circle"\n', "not used by mode"),
        (RIGID_E1.replace("so3_rigid", "sl2"), "unknown preset"),
        (RIGID_E1.replace("[[1, 0, 0]]", "[[1, 0]]"), "length 3"),
        (SIM.format(fmt="binary").replace("dt = 0.01", 'dt = "fast"'), "'params.dt'"),
        (SIM.format(fmt="binary").replace("dt = 0.01", "dt = 0.01\nbogus = 1"), "unknown field(s) bogus"),
        (SIM.format(fmt="parquet"), "'params.format'"),
    ],
)
def test_input_errors_exit_two_with_diagnostic(tmp_path, capsys, text, needle):
    status = run(["run", write(tmp_path, text), "--out", tmp_path / "o"])
    assert status == cli.EXIT_INPUT
    assert needle in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert run(["run", tmp_path / "nope.toml"]) == cli.EXIT_INPUT
    assert "cannot read config" in capsys.readouterr().err


def test_bad_arguments():
    assert run(["run"]) == cli.EXIT_INPUT
    assert run(["frobnicate"]) == cli.EXIT_INPUT


def test_presets_listing(capsys):
    assert run(["presets"]) == cli.EXIT_OK
    assert "so3_rigid" in capsys.readouterr().out


def test_gibbs_requires_fluctuation_dissipation(tmp_path, capsys):
    text = """
version = 1
mode = "gibbs"
seed = 1
[algebra]
preset = "so3_rigid"
params = [1, 2, 3]
[params]
dt = 0.01
t_final = 0.1
n_paths = 200
"""
    assert run(["run", write(tmp_path, text), "--out", tmp_path / "o"]) == cli.EXIT_INPUT
    assert "g^{-1}" in capsys.readouterr().err


def test_error_run_still_writes_manifest(tmp_path):
    out = tmp_path / "o"
    run(["run", write(tmp_path, RIGID_E1.replace("so3_rigid", "sl2")), "--out", out])
    assert result(out)["error_type"] == "AlgebraError"
    assert (out / "manifest.json").exists()


def test_diffusivity_circle_near_two(tmp_path):
    out = tmp_path / "o"
    status = run(["run", CONFIGS / "diffusivity_circle_eps1.toml", "--out", out,
                  "--set", "params.n_paths=4000", "--set", "params.t_final=100.0"])
    r = result(out)
    assert status == cli.EXIT_OK, r["comparison"]
    assert r["sigma"] == [[0.5, 0.0], [0.0, 0.5]]
    assert r["comparison"]["predicted"] == [[2.0, 0.0], [0.0, 2.0]]


@pytest.mark.parametrize("name", ["check_langevin_rigid_e1", "check_langevin_rigid_e1e2",
                                  "check_constrained_circle_so3", "check_langevin_heisenberg_file",
                                  "conserve_rigid", "fpsolve_cos", "fpsolve_ce1"])
def test_shipped_configs_pass(tmp_path, name):
    assert run(["run", CONFIGS / f"{name}.toml", "--out", tmp_path / "o"]) == cli.EXIT_OK


def test_fpsolve_writes_snapshots(tmp_path):
    out = tmp_path / "o"
    run(["run", CONFIGS / "fpsolve_cos.toml", "--out", out])
    r = result(out)
    assert r["snapshots"] and (out / r["snapshots"][0]).read_text().startswith("# n_a=32 n_s=64 t=0.0")
    assert r["l2_ratio"] < 1e-6 and r["monotone"]


def test_fpsolve_cfl_violation_is_input_error(tmp_path, capsys):
    status = run(["run", CONFIGS / "fpsolve_cos.toml", "--out", tmp_path / "o", "--set", "params.dt=1.0"])
    assert status == cli.EXIT_INPUT
    assert "stability bound" in capsys.readouterr().err
