import json
import shutil
import subprocess

import pytest

from opt_manifold import config
from opt_manifold.cli import EXIT_CONFIG, EXIT_OK, main
from opt_manifold.experiments import verify_manifest

FAST_FIG1 = ["--set", "fig1.n_real=200", "--set", "fig1.n_steps=10", "--set", "fig1.n_dump=2"]


def _run(tmp_path, *args, name="out"):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def test_fig1_writes_outputs_and_manifest(tmp_path, capsys):
    code, out = _run(tmp_path, "fig1-density", "--seed", "3", *FAST_FIG1)
    assert code == EXIT_OK
    man = json.loads((out / "manifest.json").read_text())
    assert man["experiment"] == "fig1-density" and man["seed"] == 3
    assert set(man["outputs"]) >= {"rwmh_endpoints.csv", "langevin_endpoints.csv"}
    assert verify_manifest(out / "manifest.json") == []
    assert "rwmh" in capsys.readouterr().out


def test_same_seed_is_byte_identical(tmp_path):
    _, a = _run(tmp_path, "fig1-density", *FAST_FIG1, name="a")
    _, b = _run(tmp_path, "fig1-density", *FAST_FIG1, name="b")
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
    assert (a / "rwmh_endpoints.csv").read_bytes() == (b / "rwmh_endpoints.csv").read_bytes()
    _, c = _run(tmp_path, "fig1-density", *FAST_FIG1, "--seed", "9", name="c")
    assert (a / "rwmh_endpoints.csv").read_bytes() != (c / "rwmh_endpoints.csv").read_bytes()


def test_tampered_output_detected(tmp_path):
    _, out = _run(tmp_path, "fig1-density", *FAST_FIG1)
    with open(out / "rwmh_endpoints.csv", "a") as fh:
        fh.write("0\n")
    assert verify_manifest(out / "manifest.json") == ["rwmh_endpoints.csv"]


def test_manifest_reruns(tmp_path):
    _, a = _run(tmp_path, "fig1-density", *FAST_FIG1, "--seed", "4", name="a")
    code, b = _run(tmp_path, "fig1-density", "--config", str(a / "manifest.json"), name="b")
    assert code == EXIT_OK
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()


@pytest.mark.parametrize("args, key", [
    (["--set", "sampler.T=-1"], "sampler.T"),
    (["--set", "sampler.dt=abc"], "sampler.dt"),
    (["--set", "fig1.bogus=1"], "fig1.bogus"),
    (["--set", "sampler.dt=nan"], "sampler.dt"),
])
def test_config_errors_exit_2_naming_key(tmp_path, capsys, args, key):
    code, out = _run(tmp_path, "fig1-density", *args)
    assert code == EXIT_CONFIG
    assert key in capsys.readouterr().err
    assert not (out / "manifest.json").exists()


def test_ini_file_layering(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[run]\nseed = 5\n[sampler]\nT = 0.25\n[fig1]\nn_real = 50\n")
    cfg = config.parse_config("fig1-density", ini, ["sampler.T=0.3"], {"seed": 6})
    assert cfg["sampler.T"] == 0.3 and cfg["seed"] == 6 and cfg["fig1.n_real"] == 50
    bad = tmp_path / "bad.ini"
    bad.write_text("[sampler]\nT = hot\n")
    with pytest.raises(config.ConfigError, match="sampler.T"):
        config.parse_config("fig1-density", bad)


def test_auto_and_word_values():
    cfg = config.resolve("chaos-additive", overrides={"chaos.smoothing": "gcv",
                                                      "chaos.Dt_burst": "auto"})
    assert cfg["chaos.smoothing"] == "gcv" and cfg["chaos.Dt_burst"] == "auto"
    cfg = config.resolve("chaos-additive", overrides={"chaos.smoothing": "0.5"})
    assert cfg["chaos.smoothing"] == 0.5
    with pytest.raises(config.ConfigError, match="chaos.y_start"):
        config.resolve("chaos-additive", overrides={"chaos.y_start": "random"})


def test_alias_flags_rejected_outside_chaos(tmp_path):
    code, _ = _run(tmp_path, "fig1-density", "--mode", "additive")
    assert code == EXIT_CONFIG


def test_env_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("OPT_MANIFOLD_OUT", str(tmp_path / "env"))
    assert main(["fig1-density", *FAST_FIG1]) == EXIT_OK
    assert (tmp_path / "env" / "fig1-density" / "manifest.json").exists()


def test_console_script_exit_codes(tmp_path):
    exe = shutil.which("opt-manifold")
    if exe is None:
        pytest.skip("console script not installed")
    r = subprocess.run([exe, "fig1-density", "--set", "sampler.T=-1", "--out", str(tmp_path / "x")],
                       capture_output=True, text=True)
    assert r.returncode == 2 and "sampler.T" in r.stderr
    r = subprocess.run([exe, "swissroll", "--threads", "1", "--set", "swissroll.m=300",
                        "--out", str(tmp_path / "s")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert json.loads((tmp_path / "s" / "manifest.json").read_text())["threads_hint"] == 1


@pytest.mark.parametrize("exc, code", [("NumericalError", 3), ("DegeneracyError", 4),
                                       ("ContractError", 2)])
def test_failure_exit_codes(tmp_path, monkeypatch, capsys, exc, code):
    from opt_manifold import errors, experiments

    def boom(*a, **k):
        raise getattr(errors, exc)("planted failure")

    monkeypatch.setattr(experiments, "run_experiment", boom)
    assert main(["fig1-density", "--out", str(tmp_path / "o")]) == code
    assert "planted failure" in capsys.readouterr().err


def test_outputs_stay_inside_directory(tmp_path):
    from opt_manifold.experiments import Outputs
    out = Outputs(tmp_path / "o")
    for bad in ("../escape.csv", "/tmp/abs.csv"):
        with pytest.raises(config.ConfigError, match="escapes"):
            out.csv(bad, ["a"], [(1,)])
    assert not (tmp_path / "escape.csv").exists()
