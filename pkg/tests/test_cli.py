import csv
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

import momentpi
from momentpi.cli import main

CONFIGS = Path(momentpi.__file__).parent / "configs"

PLANT = """\
model.kind = plant
plant.k_r = 0.3
plant.gamma_r = 0.03
plant.k_p = 0.06
plant.gamma_p = 0.0066
"""


def write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def report(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        if ": " in line:
            k, v = line.split(": ", 1)
            out[k] = v
    return out


def run(tmp_path, *argv, sub="out"):
    out = tmp_path / sub
    code = main([*argv, "--out", str(out)])
    return code, out


def test_simulate_mean_steps(tmp_path, capsys):
    code, out = run(tmp_path, "simulate", "--config", str(CONFIGS / "mean_steps.cfg"))
    assert code == 0
    rep = report(out / "summary.txt")
    assert float(rep["max_steady_state_rel_error"]) < 1e-6
    assert float(rep["min_input"]) >= 0
    with open(out / "trajectory.csv") as fh:
        header = next(csv.reader(fh))
    assert header[:3] == ["t", "x1", "x2"]


def test_simulate_disturbance_config(tmp_path):
    code, out = run(tmp_path, "simulate", "--config", str(CONFIGS / "mean_disturbance.cfg"))
    assert code == 0
    text = (out / "summary.txt").read_text()
    # three stretches: clean, rejected disturbance, disturbance above the bound
    assert text.count("plateau") >= 3


def test_simulate_mean_var_ramps(tmp_path):
    code, out = run(tmp_path, "simulate", "--config", str(CONFIGS / "mean_var_ramps.cfg"))
    assert code == 0
    assert float(report(out / "summary.txt")["max_steady_state_rel_error"]) < 1e-6


def test_stability_mean_var_ramps(tmp_path):
    code, out = run(tmp_path, "stability", "--config", str(CONFIGS / "mean_var_ramps.cfg"))
    assert code == 0
    rep = report(out / "stability.txt")
    assert rep["stable"] == "true" and rep["equilibrium"] == "unique"
    assert float(rep["determinant_rel_error"]) < 1e-8
    assert (out / "stability.csv").exists()


def test_stability_global_example(tmp_path):
    cfg = write(tmp_path, PLANT + "controller.kind = mean\ncontroller.k1 = 0.2\ncontroller.k2 = 0.0007\n"
                                  "reference.mu = 10\n")
    code, out = run(tmp_path, "stability", "--config", cfg)
    assert code == 0
    rep = report(out / "stability.txt")
    assert rep["global_nominal"] == "true" and rep["local_nominal"] == "true"
    assert rep["popov"] == "true" and float(rep["popov_q"]) >= 0
    assert float(rep["disturbance_bound"]) == pytest.approx(0.033)


def test_stability_k2_zero(tmp_path):
    cfg = write(tmp_path, PLANT + "controller.kind = mean\ncontroller.k1 = 0.2\ncontroller.k2 = 0\n"
                                  "reference.mu = 10\n")
    code, out = run(tmp_path, "stability", "--config", cfg)
    assert code == 0
    rep = report(out / "stability.txt")
    assert rep["reason"] == "k2>0 required"
    assert rep["local_nominal"] == rep["global_nominal"] == "false"


def test_stability_non_unique_equilibrium(tmp_path):
    gains = "".join(f"controller.k{i} = {v}\n" for i, v in
                    enumerate([0.01, 0.001, 0, 0.002, 0, 0.001, 0, 0.002], start=1))
    cfg = write(tmp_path, PLANT + "controller.kind = mean_var\n" + gains
                + "reference.mu = 10\nreference.var = 20\n")
    code, out = run(tmp_path, "stability", "--config", cfg)
    assert code == 0
    rep = report(out / "stability.txt")
    assert rep["equilibrium"].startswith("not unique")
    assert "not representative" in rep["notes"]
    assert rep["stable"] == "false"


def test_inadmissible_setpoint_exit_2(tmp_path, capsys):
    gains = "".join(f"controller.k{i} = 0\n" for i in range(1, 9))
    cfg = write(tmp_path, PLANT + "controller.kind = mean_var\n" + gains
                + "reference.mu = 10\nreference.var = 200\n")
    code, _ = run(tmp_path, "simulate", "--config", cfg)
    assert code == 2
    err = capsys.readouterr().err
    assert "exp.cfg:16:" in err and "(10, 100.909)" in err


def test_config_errors_cite_line(tmp_path, capsys):
    cfg = write(tmp_path, PLANT + "controller.kind = mean\ncontroller.k1 = abc\n")
    assert main(["simulate", "--config", cfg]) == 2
    assert "exp.cfg:7:" in capsys.readouterr().err
    cfg = write(tmp_path, PLANT + "plant.color = red\n", "b.cfg")
    assert main(["simulate", "--config", cfg]) == 2
    assert "b.cfg:6:" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "none.cfg")]) == 2


def test_empty_schedule_is_constant(tmp_path):
    cfg = write(tmp_path, PLANT + "controller.kind = mean\ncontroller.k1 = 0.2\ncontroller.k2 = 0.0007\n"
                                  "reference.mu = 10\nreference.mu.schedule =\nsim.t_end = 6000\n")
    code, out = run(tmp_path, "simulate", "--config", cfg)
    assert code == 0
    assert float(report(out / "summary.txt")["max_steady_state_rel_error"]) < 1e-6


SMALL_SSA = PLANT + "controller.kind = mean\ncontroller.k1 = 0.01\ncontroller.k2 = 0.0007\nreference.mu = 90\n"


def test_validate_ssa_too_few_trajectories(tmp_path):
    cfg = write(tmp_path, SMALL_SSA + "ssa.n_traj = 2\nssa.t_end = 100\nssa.n_grid = 4\n")
    code, out = run(tmp_path, "validate-ssa", "--config", cfg)
    assert code == 0
    rep = report(out / "validate_ssa.txt")
    assert rep["verdict"] == "INCONCLUSIVE"


def test_validate_ssa_reproducible_and_seed_override(tmp_path):
    cfg = write(tmp_path, SMALL_SSA + "ssa.n_traj = 300\nssa.seed = 5\nssa.t_end = 500\nssa.n_grid = 5\n")
    run(tmp_path, "validate-ssa", "--config", cfg, sub="a")
    run(tmp_path, "validate-ssa", "--config", cfg, sub="b")
    run(tmp_path, "validate-ssa", "--config", cfg, "--seed", "6", sub="c")
    a = (tmp_path / "a" / "validate_ssa.txt").read_bytes()
    b = (tmp_path / "b" / "validate_ssa.txt").read_bytes()
    c = (tmp_path / "c" / "validate_ssa.txt").read_bytes()
    assert a.replace(b"/a/", b"/b/") == b or a == b
    assert a != c and b"seed: 6" in c
    assert (tmp_path / "a" / "ssa_validation.csv").read_bytes() == (tmp_path / "b" / "ssa_validation.csv").read_bytes()


def test_validate_ssa_closed_loop_demo(tmp_path):
    cfg = write(tmp_path, SMALL_SSA.replace("reference.mu = 90", "reference.mu = 10")
                + "ssa.n_traj = 200\nssa.t_end = 400\nssa.n_grid = 4\nssa.sync_interval = 20\n")
    code, out = run(tmp_path, "validate-ssa", "--config", cfg)
    assert code == 0
    assert (out / "ssa_closed_loop.csv").exists()
    assert "closed_loop_final_mean" in (out / "validate_ssa.txt").read_text()


def test_validate_ssa_rejects_normalized(tmp_path):
    shutil.copy(CONFIGS / "mean_steps.cfg", tmp_path / "n.cfg")
    code, _ = run(tmp_path, "validate-ssa", "--config", str(tmp_path / "n.cfg"))
    assert code == 2


def test_negative_seed(tmp_path):
    cfg = write(tmp_path, SMALL_SSA)
    assert main(["validate-ssa", "--config", cfg, "--seed", "-1", "--out", str(tmp_path)]) == 2


def test_console_entry_point(tmp_path):
    exe = shutil.which("momentpi")
    cmd = [exe] if exe else [sys.executable, "-m", "momentpi.cli"]
    res = subprocess.run(cmd + ["stability", "--config", str(CONFIGS / "mean_steps.cfg"),
                                "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "local_nominal: true" in res.stdout
