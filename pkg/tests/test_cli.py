import csv

import numpy as np
import pytest

import depcag as dp
from depcag.cli import main
from depcag.solvers import DepcagSystem


def run(tmp_path, config_text, command, *extra):
    cfg = tmp_path / "run.toml"
    cfg.write_text(config_text)
    out = tmp_path / "out"
    return main([command, "--config", str(cfg), "--out", str(out), *extra]), out


BASE = """
[system]
dimension = 2
A = [[-1.0, 0.0], [0.0, 1.0]]
B = [[0.0, 0.1], [0.05, 0.0]]
g = "sin_vector"

[mesh]
family = "uniform"
nu_plus = 0.5
nu_minus = 0.5
n_intervals = 10

[task]
tau = 0.0
xi = [1.0, 0.5]
t_end = 5.0
"""


def test_simulate_writes_csv(tmp_path, capsys):
    code, out = run(tmp_path, BASE, "simulate")
    assert code == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0].split(",") == ["t", "x_1", "x_2", "flag"]
    assert "residual=" in capsys.readouterr().out


def test_simulate_oracle_agrees_with_vop(tmp_path):
    code_v, out_v = run(tmp_path, BASE, "simulate")
    cfg2 = BASE + "\n[solver]\nmethod = \"oracle\"\n"
    cfg_path = tmp_path / "o.toml"
    cfg_path.write_text(cfg2)
    out_o = tmp_path / "out_o"
    code_o = main(["simulate", "--config", str(cfg_path), "--out", str(out_o)])
    assert code_v == code_o == 0

    def knots_rows(path):
        with open(path) as fh:
            return {row["t"]: (float(row["x_1"]), float(row["x_2"]))
                    for row in csv.DictReader(fh) if row["flag"] == "knot"}

    a = knots_rows(out_v / "trajectory.csv")
    b = knots_rows(out_o / "trajectory.csv")
    shared = set(a) & set(b)
    assert len(shared) >= 5
    for t in shared:
        assert np.allclose(a[t], b[t], atol=1e-7)


def test_simulate_unforced_equals_propagation(tmp_path):
    cfg = BASE.replace('g = "sin_vector"\n', "")
    code, out = run(tmp_path, cfg, "simulate")
    assert code == 0
    system = DepcagSystem(dp.constant(np.diag([-1.0, 1.0])),
                          dp.constant([[0.0, 0.1], [0.05, 0.0]]),
                          dp.Mesh.uniform(0.5, 0.5, 0.0, 10))
    cauchy = system.cauchy()
    with open(out / "trajectory.csv") as fh:
        for row in csv.DictReader(fh):
            t = float(row["t"])
            ref = cauchy.propagate(0.0, [1.0, 0.5], t)
            assert np.allclose([float(row["x_1"]), float(row["x_2"])], ref,
                               atol=1e-8)


def test_unknown_key_rejected(tmp_path, capsys):
    code, _ = run(tmp_path, BASE + "\n[solver]\nbogus = 1\n", "simulate")
    assert code == 2
    assert "error[config]" in capsys.readouterr().err


def test_invalid_mesh_names_offending_index(tmp_path, capsys):
    cfg = """
[system]
dimension = 1
A = [[-1.0]]
B = [[0.0]]

[mesh]
family = "explicit"
knots = [0.0, 2.0, 1.0, 3.0]
anchors = [0.5, 2.5, 2.0]
"""
    code, _ = run(tmp_path, cfg, "simulate")
    assert code == 2
    assert "index 1" in capsys.readouterr().err


def test_certify_selected_bundle_passes(tmp_path, capsys):
    cfg = """
[system]
dimension = 1
A = [[1.0]]
B = [[-2.0]]
f = {preset = "tanh", amplitude = 0.001}

[mesh]
family = "cooke_wiener"
i_min = 0
i_max = 12

[task]
a = 1.0
b = -2.0
certificates = ["discrete_stability", "perturbed_decay", "scalar_example"]
"""
    code, _ = run(tmp_path, cfg, "certify")
    assert code == 0
    text = capsys.readouterr().out
    assert "verdict: pass" in text
    assert "sigma0" in text


def test_certify_failing_certificate_exits_3(tmp_path):
    cfg = BASE.replace("[[0.0, 0.1], [0.05, 0.0]]",
                       "[[0.0, 3.0], [3.0, 0.0]]")
    code, _ = run(tmp_path, cfg, "certify")
    assert code == 3


def test_dichotomy_hyperbolic_passes(tmp_path, capsys):
    code, out = run(tmp_path, BASE, "dichotomy")
    assert code == 0
    text = capsys.readouterr().out
    assert "sigma=" in text
    lines = (out / "zp_samples.csv").read_text().splitlines()
    assert lines[0] == "t,s,norm"
    assert len(lines) == 1 + 41 * 41


def test_dichotomy_time_varying_needs_explicit_p(tmp_path, capsys):
    cfg = """
[system]
dimension = 2
A = "diag_sin"
B = [[0.0, 0.0], [0.0, 0.0]]

[mesh]
family = "greatest_integer"
i_max = 10
"""
    code, _ = run(tmp_path, cfg, "dichotomy")
    assert code == 2
    assert "supply an explicit P" in capsys.readouterr().err


def test_equivalence_zero_amplitude_gap_is_zero(tmp_path, capsys):
    cfg = BASE + """
[solver]
max_iter = 5

[system.f]
preset = "tanh"
amplitude = 0.0
"""
    code, out = run(tmp_path, cfg, "equivalence")
    assert code == 0
    with open(out / "equivalence.csv") as fh:
        gaps = [float(row["gap"]) for row in csv.DictReader(fh)]
    assert max(gaps) < 1e-10


def test_equivalence_no_contraction_exits_3(tmp_path, capsys):
    cfg = BASE + """
[system.f]
preset = "tanh"
amplitude = 5.0
"""
    code, _ = run(tmp_path, cfg, "equivalence")
    assert code == 3
    assert "beta" in capsys.readouterr().out


def test_sweep_grid(tmp_path, capsys):
    cfg = """
[task]
grid_n = 11
nu_plus = 1.0
nu_minus = 1.0
"""
    code, out = run(tmp_path, cfg, "sweep")
    assert code == 0
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 121
    statuses = {row["status"] for row in rows}
    assert statuses == {"ok", "out_of_domain"}
    for row in rows:
        if row["status"] == "ok" and row["inequality"] == "true":
            assert float(row["abs_lambda1"]) < 1.0


def test_reproducible_csv(tmp_path):
    code1, out1 = run(tmp_path, BASE, "simulate")
    cfg2 = tmp_path / "again.toml"
    cfg2.write_text(BASE)
    out2 = tmp_path / "out2"
    code2 = main(["simulate", "--config", str(cfg2), "--out", str(out2)])
    assert code1 == code2 == 0
    assert (out1 / "trajectory.csv").read_bytes() == \
        (out2 / "trajectory.csv").read_bytes()
