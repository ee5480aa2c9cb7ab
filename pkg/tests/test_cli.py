import json

import pytest

from findim.cli import main
from findim.config import load_config
from findim.system import example_family

# small resolutions keep each verify run to a few seconds
QUICK = ["--modes", "16", "--dt", "2e-3", "--tend", "4", "--grid", "256", "--N", "1000"]

HEAT = """
[system]
name = "heat"
m = 1
D = [[1.0]]
f = [["0"]]
g = ["0"]
alpha = 0.8

[solver]
n_modes = 16
dt = 2e-3
t_end = 2.0
transient = 1.0
"""

BLOWUP = """
[system]
name = "blowup"
m = 1
D = [[1.0]]
f = [["0"]]
g = ["40*u1 + u1^3"]
alpha = 0.8

[solver]
n_modes = 16
dt = 1e-3
t_end = 4.0
transient = 1.0
"""


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _example(tmp_path, kind):
    assert main(["example", "--kind", kind, "--out", str(tmp_path)]) == 0
    return str(tmp_path / f"{kind}.toml")


def _verify(tmp_path, spec, tag, extra=()):
    out = tmp_path / tag
    assert main(["verify", "--spec", spec, "--out", str(out), *QUICK, *extra]) == 0
    return json.loads((out / "report.json").read_text()), out


# -- spectrum -----------------------------------------------------------------------


def test_spectrum_scalar_slope(tmp_path, capsys):
    assert main(["spectrum", "--d", "1", "--N", "1000", "--alpha", "0.8",
                 "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["sparsity"]["slope"] == pytest.approx(-0.1, abs=0.01)
    assert (tmp_path / "spectrum.csv").read_text().startswith("n,lambda,j,nu\n")
    assert (tmp_path / "gaps.csv").read_text().startswith("k,n_k,a_k,xi_k,ratio\n")
    assert "PASS" in capsys.readouterr().out


def test_spectrum_two_components(tmp_path):
    assert main(["spectrum", "--d", "1,4", "--N", "10000", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["sparsity"]["verdict"] == "PASS"
    assert len((tmp_path / "gaps.csv").read_text().splitlines()) > 1


@pytest.mark.parametrize("argv", [
    ["spectrum", "--d", "1", "--alpha", "0.5"],
    ["spectrum", "--d", "1,-2"],
    ["spectrum", "--d", "a,b"],
    ["spectrum"],
    ["verify"],
])
def test_config_errors_exit_2(tmp_path, argv, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == 2
    assert capsys.readouterr().err


def test_spectrum_empty_selection_exit_3(tmp_path):
    assert main(["spectrum", "--d", "1", "--N", "100", "--eps", "1000",
                 "--out", str(tmp_path)]) == 3


def test_spectrum_from_spec(tmp_path):
    spec = _example(tmp_path, "commuting_family")
    assert main(["spectrum", "--spec", spec, "--N", "500", "--out", str(tmp_path / "s")]) == 0


# -- example ----------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["scalar_diffusion", "commuting_family", "violating_family",
                                  "block_family"])
def test_example_round_trip(tmp_path, kind):
    cfg = load_config(_example(tmp_path, kind))
    assert cfg.spec.digest == example_family(kind).digest


def test_example_stdout_all(capsys):
    assert main(["example", "--kind", "all"]) == 0
    out = capsys.readouterr().out
    assert out.count("[system]") == 4


# -- simulate ------------------------------------------------------------------------------


def test_simulate_heat_decay(tmp_path, capsys):
    spec = _write(tmp_path, "heat.toml", HEAT)
    assert main(["simulate", "--spec", spec, "--out", str(tmp_path / "o"), "--ntraj", "2"]) == 0
    assert "decay to zero" in capsys.readouterr().out
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["files"] == ["trajectory_00.csv", "trajectory_01.csv"]
    for s in manifest["summary"]:
        assert s["final_alpha_norm"] < 1e-6 * max(s["initial_alpha_norm"], 1.0)


def test_simulate_absorbing_ball(tmp_path, capsys):
    spec = _example(tmp_path, "scalar_diffusion")
    assert main(["simulate", "--spec", spec, "--out", str(tmp_path / "o"), "--ntraj", "2",
                 "--modes", "16", "--dt", "2e-3", "--tend", "4"]) == 0
    assert "absorbing ball" in capsys.readouterr().out
    header = (tmp_path / "o" / "trajectory_00.csv").read_text().splitlines()[0]
    assert header.startswith("t,")


def test_simulate_blowup_exit_4(tmp_path, capsys):
    spec = _write(tmp_path, "b.toml", BLOWUP)
    assert main(["simulate", "--spec", spec, "--out", str(tmp_path / "o"), "--ntraj", "2"]) == 4
    assert "blew up at t=" in capsys.readouterr().err


def test_corrupt_spec_reports_position(tmp_path, capsys):
    spec = _write(tmp_path, "bad.toml", HEAT.replace('g = ["0"]', 'g = ["u1 +* 2"]'))
    assert main(["simulate", "--spec", spec, "--out", str(tmp_path / "o")]) == 2
    assert "offset 4" in capsys.readouterr().err


def test_non_ascii_spec_rejected(tmp_path):
    spec = _write(tmp_path, "bad.toml", HEAT.replace('name = "heat"', 'name = "héat"'))
    assert main(["simulate", "--spec", spec, "--out", str(tmp_path / "o")]) == 2


def test_boundary_incompatible_spec_rejected(tmp_path, capsys):
    spec = _write(tmp_path, "bad.toml", HEAT.replace('g = ["0"]', 'g = ["1 + u1"]'))
    assert main(["simulate", "--spec", spec, "--out", str(tmp_path / "o")]) == 2
    assert "boundary" in capsys.readouterr().err


# -- verify ----------------------------------------------------------------------------------


def _entries(report):
    return {e["name"]: e for e in report["entries"]}


def test_verify_scalar_diffusion(tmp_path, capsys):
    report, out = _verify(tmp_path, _example(tmp_path, "scalar_diffusion"), "v")
    assert report["overall"]["supported"] is True
    e = _entries(report)
    assert e["consistency"]["metric"]["max_commutator"] == 0.0
    for name in report["overall"]["required"]:
        assert e[name]["status"] == "PASS"
    for entry in report["entries"]:
        assert "tolerance" in entry and "samples" in entry
    assert "SUPPORTED" in (out / "report.txt").read_text()
    assert "SUPPORTED" in capsys.readouterr().out


def test_verify_violating_family(tmp_path):
    report, _ = _verify(tmp_path, _example(tmp_path, "violating_family"), "v")
    assert report["overall"]["supported"] is False
    e = _entries(report)["consistency"]
    assert e["status"] == "FAIL"
    assert set(e["witness"]) >= {"x", "pair", "tau", "commutator"}
    assert e["witness"]["commutator"] >= 0.5


def test_verify_assumed_never_blocks(tmp_path):
    report, _ = _verify(tmp_path, _example(tmp_path, "scalar_diffusion"), "v")
    assumed = [e for e in report["entries"] if e["status"] == "ASSUMED"]
    assert assumed and report["overall"]["supported"]


def test_verify_deterministic(tmp_path):
    spec = _example(tmp_path, "commuting_family")
    _, a = _verify(tmp_path, spec, "a", ["--seed", "3"])
    _, b = _verify(tmp_path, spec, "b", ["--seed", "3"])
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
