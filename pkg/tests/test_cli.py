import math
import subprocess
import sys
from pathlib import Path

import pytest

from powergle import cli

HERE = Path(__file__).parent
GOLDEN = HERE / "golden"
CONFIGS = HERE.parent / "configs"


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_validate_diffusive(capsys):
    code, out, _ = run(capsys, "validate", "--alpha", "2", "--beta", "2", "--s", "0.75")
    assert code == 0 and out.splitlines()[0] == "regime: D"


def test_validate_golden(capsys):
    code, out, _ = run(capsys, "validate", "--config", str(CONFIGS / "small_mass.toml"))
    assert code == 0 and out == (GOLDEN / "validate_small_mass.txt").read_text()


def test_validate_invalid_exits_2(capsys):
    code, _, err = run(capsys, "validate", "--alpha", "0.5", "--beta", "1", "--s", "0.75")
    assert code == 2 and "β>1/α violated" in err
    code, _, err = run(capsys, "validate", "--config", str(CONFIGS / "subdiffusive_invalid.toml"))
    assert code == 2 and "β>1/α violated" in err


def test_kernel_golden(capsys):
    code, out, _ = run(capsys, "kernel", "--alpha", "2", "--beta", "2", "--n-modes", "1",
                       "--t-grid", "0,1,2")
    assert code == 0 and out == (GOLDEN / "kernel_single_mode.csv").read_text()


def test_kernel_power_law_column(capsys):
    code, out, _ = run(capsys, "kernel", "--alpha", "0.5", "--beta", "4", "--n-modes", "1000")
    rows = [line.split(",") for line in out.splitlines()]
    assert code == 0 and rows[0] == ["t", "K", "t_alpha_K"]
    target = math.sqrt(math.pi) / 4
    assert all(abs(float(r[2]) / target - 1) < 0.01 for r in rows[1:])


def test_kernel_needs_parameters(capsys):
    code, _, err = run(capsys, "kernel", "--alpha", "2")
    assert code == 2 and "--beta" in err


@pytest.mark.parametrize("name,cmd", [("small_mass_trivial", "small-mass"),
                                      ("simulate_tiny", "simulate")])
def test_experiment_golden(capsys, tmp_path, name, cmd):
    code, out, _ = run(capsys, cmd, "--config", str(GOLDEN / f"{name}.toml"), "--out", str(tmp_path))
    assert code == 0
    written = tmp_path / f"{cmd}.csv"
    assert out.strip() == str(written)
    assert written.read_text() == (GOLDEN / f"{name}.csv").read_text()
    assert (tmp_path / f"{cmd}.meta.json").exists()


def test_seed_flag_overrides_config(capsys, tmp_path):
    run(capsys, "simulate", "--config", str(GOLDEN / "simulate_tiny.toml"), "--out", str(tmp_path),
        "--seed", "8")
    assert (tmp_path / "simulate.csv").read_text() != (GOLDEN / "simulate_tiny.csv").read_text()


def test_threads_do_not_change_output(capsys, tmp_path):
    for t in ("1", "3"):
        run(capsys, "simulate", "--config", str(GOLDEN / "simulate_tiny.toml"),
            "--out", str(tmp_path / t), "--threads", t)
    assert (tmp_path / "1" / "simulate.csv").read_bytes() == (tmp_path / "3" / "simulate.csv").read_bytes()


def test_usage_errors_exit_64(capsys):
    for argv in (["kernel", "--bogus"], [], ["nonsense"], ["simulate"]):
        with pytest.raises(SystemExit) as info:
            cli.main(argv)
        assert info.value.code == 64
    assert "usage" in capsys.readouterr().err


def test_missing_config_exits_2(capsys, tmp_path):
    code, _, err = run(capsys, "small-mass", "--config", str(tmp_path / "none.toml"))
    assert code == 2 and "not found" in err


def test_blow_up_exits_3(capsys, tmp_path):
    cfg = tmp_path / "boom.toml"
    cfg.write_text('experiment = "simulate"\npotential = "gaussian_growth"\nx0 = 5.0\n'
                   'n_trajectories = 3\nT = 1.0\n')
    code, _, err = run(capsys, "simulate", "--config", str(cfg), "--out", str(tmp_path))
    assert code == 3 and "blew up" in err


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "powergle.cli", "validate", "--alpha", "3",
                           "--beta", "2", "--s", "0.75"], capture_output=True, text=True)
    assert proc.returncode == 0 and "assumption4: holds" in proc.stdout
