import json
import subprocess
import sys

import numpy as np
import pytest

from circuitvi.cli import ENV_OUTPUT, main
from circuitvi.io import read_json, read_table
from conftest import SINGLE_LOOP


@pytest.fixture
def netlist(tmp_path):
    path = tmp_path / "loop.net"
    path.write_text(SINGLE_LOOP)
    ic = tmp_path / "ic.json"
    ic.write_text(json.dumps({"coordinates": "mesh", "q": [1.0], "v": [0.0]}))
    return path, ic


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_no_arguments_is_usage_error(capsys):
    code, _, err = run([], capsys)
    assert code == 2 and "subcommand is required" in err


def test_presets_listing(capsys):
    code, out, _ = run(["presets"], capsys)
    assert code == 0
    for name in ("rlc-square", "lc-oscillator", "lc-transmission-line", "lc-noisy", "lc-multiscale"):
        assert name in out


def test_topology_report(capsys):
    code, out, _ = run(["topology", "--preset", "lc-oscillator", "--h", "0.1"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["K2"] == [[1, 0], [0, 1], [1, -1], [1, 0]]
    assert rep["verdicts"]["vi_backward_euler"] == "ok"


def test_simulate_writes_trajectory_and_manifest(tmp_path, netlist, capsys):
    net, ic = netlist
    out = tmp_path / "out"
    code, stdout, _ = run(["simulate", "--netlist", net, "--ic", ic, "--scheme", "vi_midpoint", "--h", 0.1,
                           "--T", 1.0, "--outdir", out], capsys)
    assert code == 0 and "vi_midpoint" in stdout
    header, data = read_table(out / "trajectory_vi_midpoint.csv")
    assert header == ["t", "q1", "q2", "v1", "v2", "p1", "p2"]
    assert data.shape == (11, 7)
    manifest = read_json(out / "manifest.json")
    assert manifest["config"]["h"] == 0.1
    assert set(manifest["outputs"]) == {"trajectory_vi_midpoint.csv", "diagnostics_vi_midpoint.json"}
    diag = read_json(out / "diagnostics_vi_midpoint.json")
    assert diag["energy"]["max_deviation"] < 1e-14


def test_missing_number_without_preset(netlist, tmp_path, capsys):
    net, _ = netlist
    code, _, err = run(["simulate", "--netlist", net, "--scheme", "vi_midpoint", "--T", 1.0,
                        "--outdir", tmp_path], capsys)
    assert code == 2 and "--h is required" in err


def test_env_var_sets_output(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(ENV_OUTPUT, str(tmp_path / "env"))
    code, _, _ = run(["simulate", "--preset", "lc-oscillator", "--T", 1.0], capsys)
    assert code == 0
    assert (tmp_path / "env" / "trajectory_vi_midpoint.csv").exists()


def test_compare(tmp_path, capsys):
    code, out, _ = run(["compare", "--preset", "rlc-square", "--T", 5.0, "--schemes", "vi_midpoint,rk4",
                        "--outdir", tmp_path], capsys)
    assert code == 0
    summary = read_json(tmp_path / "summary.json")
    assert set(summary) == {"vi_midpoint", "rk4"}


def test_spectrum(tmp_path, capsys):
    code, out, _ = run(["spectrum", "--preset", "rlc-square", "--outdir", tmp_path], capsys)
    assert code == 0
    peaks = read_json(tmp_path / "peaks_v1_vi_midpoint.json")
    omegas = sorted(p["omega"] for p in peaks["peaks"])
    assert omegas[0] == pytest.approx(1.0, abs=0.04)
    header, data = read_table(tmp_path / "spectrum_v1_vi_midpoint.csv")
    assert header == ["omega", "mag_w1", "mag_w2", "mag_w3"]


def test_ensemble(tmp_path, capsys):
    code, out, _ = run(["ensemble", "--preset", "lc-noisy", "--M", 300, "--T", 3.0, "--outdir", tmp_path], capsys)
    assert code == 0
    comp = read_json(tmp_path / "ensemble_comparison.json")
    assert comp["M"] == 300 and set(comp["max_relative_variance_deviation"]) == {"p1", "p2"}
    h1, a = read_table(tmp_path / "ensemble_stats.csv")
    h2, b = read_table(tmp_path / "analytic_moments.csv")
    assert h1 == h2 and a.shape == b.shape


def test_ensemble_sigma_file(tmp_path, capsys):
    sig = tmp_path / "sigma.txt"
    sig.write_text("\n".join(" ".join("0.01" if i == j else "0" for j in range(4)) for i in range(4)))
    code, _, _ = run(["ensemble", "--preset", "lc-noisy", "--M", 10, "--T", 1.0, "--sigma", sig,
                      "--outdir", tmp_path / "o"], capsys)
    assert code == 0


def test_flavor(tmp_path, capsys):
    code, out, _ = run(["flavor", "--preset", "lc-multiscale", "--T", 1.0, "--outdir", tmp_path], capsys)
    assert code == 0
    summary = read_json(tmp_path / "flavor_summary.json")
    assert "mq2" in summary["slow_mesh_relative_l2_error"]
    _, data = read_table(tmp_path / "flavor.csv")
    assert data.shape[0] == 11


def test_flavor_bad_tau_is_config_error(tmp_path, capsys):
    code, _, err = run(["flavor", "--preset", "lc-multiscale", "--T", 1.0, "--tau", 0.5,
                        "--outdir", tmp_path], capsys)
    assert code == 2 and "tau" in err


@pytest.mark.parametrize("text, code", [
    ("node a\nground g\nbranch a x L=1\n", 3),
    ("ground g\nnode a\nbranch a g L=1\n", 3),
])
def test_parse_errors(tmp_path, capsys, text, code):
    path = tmp_path / "bad.net"
    path.write_text(text)
    rc, _, err = run(["simulate", "--netlist", path, "--scheme", "vi_midpoint", "--h", 0.1, "--T", 1.0,
                      "--outdir", tmp_path], capsys)
    assert rc == code and "error" in err


def test_gate_error_exit_code(tmp_path, capsys):
    path = tmp_path / "deg.net"
    path.write_text("ground g\nnode a\nbranch a g C=1\nbranch g a C=2 R=1\n")
    rc, _, err = run(["--json-errors", "simulate", "--netlist", path, "--scheme", "vi_backward_euler",
                      "--h", 0.1, "--T", 1.0, "--outdir", tmp_path], capsys)
    assert rc == 4
    payload = json.loads(err.strip().splitlines()[-1])
    assert payload["error"] == "GateError" and payload["exit_code"] == 4


def test_divergence_exit_code(tmp_path, capsys):
    rc, _, _ = run(["simulate", "--preset", "lc-oscillator", "--scheme", "vi_forward_euler", "--h", 3.0,
                    "--T", 3000.0, "--outdir", tmp_path], capsys)
    assert rc == 5


def test_unknown_preset_and_scheme(tmp_path, capsys):
    assert run(["simulate", "--preset", "nope", "--outdir", tmp_path], capsys)[0] == 2
    assert run(["simulate", "--preset", "lc-oscillator", "--scheme", "leapfrog", "--outdir", tmp_path], capsys)[0] == 2
    assert run(["simulate", "--bogus"], capsys)[0] == 2


def test_missing_file(tmp_path, capsys):
    rc, _, err = run(["simulate", "--netlist", tmp_path / "absent.net", "--h", 0.1, "--T", 1.0,
                      "--scheme", "vi_midpoint"], capsys)
    assert rc == 3 and "cannot read" in err


def test_rerun_is_bit_identical(tmp_path, capsys):
    first = tmp_path / "a"
    assert run(["compare", "--preset", "lc-transmission-line", "--T", 5.0, "--outdir", first], capsys)[0] == 0
    second = tmp_path / "b"
    assert run(["rerun", first / "manifest.json", "--outdir", second], capsys)[0] == 0
    names = read_json(first / "manifest.json")["outputs"]
    for name in names:
        if name.endswith(".csv"):
            assert (first / name).read_bytes() == (second / name).read_bytes()
    assert read_json(first / "manifest.json")["config"] == read_json(second / "manifest.json")["config"]


def test_rerun_rejects_foreign_json(tmp_path, capsys):
    bad = tmp_path / "m.json"
    bad.write_text('{"hello": 1}')
    assert run(["rerun", bad], capsys)[0] == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "circuitvi", "presets"], capture_output=True, text=True)
    assert res.returncode == 0 and "lc-noisy" in res.stdout
