import copy
import subprocess
import sys

import pytest
import yaml

from pascal_sim.cli import build_parser, main

CFG = {
    "scenario": {
        "drones": [
            {"doa_deg": 20, "range_m": 80, "doppler_hz": 2000, "snr_db": 9, "velocity_mps": 3.4},
            {"doa_deg": 40, "range_m": 80, "doppler_hz": 4000, "snr_db": 9, "velocity_mps": 8.4},
        ],
        "array": {"antennas": 4, "wavelength_m": 1.6e-3},
        "frame": {"frames": 2, "subframes": 2, "symbols": 10},
    },
    "taylor": {"order": 2},
    "sweep": {"axis": "snr_db", "values": [6, 12]},
    "trials": 8,
    "seed": 5,
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "exp.yaml"
    p.write_text(yaml.safe_dump(CFG))
    return p


def test_parser_lists_subcommands():
    text = build_parser().format_help()
    for name in ("simulate", "sweep", "trajectory", "crlb", "ser-analytic", "validate"):
        assert name in text


def test_simulate_stdout(cfg_path, capsys):
    assert main(["simulate", "--config", str(cfg_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("axis,value,drone (index)")
    assert len(lines) == 3


def test_sweep_file_and_seed_override(cfg_path, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["sweep", "--config", str(cfg_path), "--out", str(a), "--seed", "5"]) == 0
    assert main(["sweep", "--config", str(cfg_path), "--out", str(b), "--threads", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.csv"
    main(["sweep", "--config", str(cfg_path), "--out", str(c), "--seed", "6"])
    assert c.read_bytes() != a.read_bytes()


def test_include_timing(cfg_path, capsys):
    main(["simulate", "--config", str(cfg_path), "--include-timing"])
    assert capsys.readouterr().out.splitlines()[0].endswith("wall_time_s (s)")


def test_trajectory(cfg_path, capsys):
    assert main(["trajectory", "--config", str(cfg_path), "--frames", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("frame (index)") and len(lines) == 1 + 2 * 2


def test_crlb(cfg_path, capsys):
    assert main(["crlb", "--config", str(cfg_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "pilots,drone,crlb_theta_deg,crlb_range_m,crlb_doppler_hz"
    assert len(lines) == 1 + 2 * 2


def test_ser_analytic_prints_terms(cfg_path, capsys):
    assert main(["ser-analytic", "--config", str(cfg_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].endswith("taylor_order,terms")
    # 8^2 combos x sum_q1 (q1 + 1) * terms(q1), terms(0) = 1, terms(q1) = K N (2 K N)^(q1 - 1), K N = 8, R = 2
    assert lines[1].split(",")[-1] == str(64 * (1 * 1 + 2 * 8 + 3 * 8 * 16))


@pytest.mark.parametrize("argv", [
    ["simulate", "--config", "nope.yaml"],
    ["simulate", "--config", "{cfg}", "--out", "/nonexistent/dir/x.csv"],
])
def test_errors_exit_2(cfg_path, argv, capsys):
    argv = [a.format(cfg=cfg_path) for a in argv]
    assert main(argv) == 2
    assert "error:" in capsys.readouterr().err


def test_bad_config_value(tmp_path, capsys):
    raw = copy.deepcopy(CFG)
    raw["trials"] = 0
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump(raw))
    assert main(["simulate", "--config", str(p)]) == 2


@pytest.mark.parametrize("argv", [["simulate", "--config", "x", "--threads", "0"],
                                  ["simulate", "--config", "x", "--seed", str(2 ** 64)]])
def test_flag_validation(argv):
    with pytest.raises(SystemExit):
        main(argv)


def test_validate_quick():
    out = subprocess.run([sys.executable, "-m", "pascal_sim.cli", "validate", "--quick"],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stdout + out.stderr
    assert out.stdout.count("PASS") == 4
    assert "kernel backend:" in out.stdout
