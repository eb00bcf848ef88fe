import os

import numpy as np
import pytest

from cavmd.cli import main

TINY_RUN = """
ensemble.N = 2
cavity[0].omega_mh = 6.27
cavity[0].lambda = 0.01
run.n_steps = 40
run.polarization_diagnostics = true
seed = 303
"""

# two molecules, coupling strong enough that a short window resolves the
# polariton doublet; the bare cavity is tuned above the vibration so the
# ensemble-polarizability redshift lands the dressed mode on resonance
SPECTRUM_RUN = """
ensemble.N = 2
cavity[0].omega_mh = 7.1933
cavity[0].lambda = 0.1
run.n_steps = 4000
seed = 42
"""


def write_cfg(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def strip_timestamp(text):
    return "\n".join(
        line for line in text.splitlines() if not line.startswith("# created:")
    )


def test_run_writes_deterministic_trajectory(tmp_path, capsys):
    cfg = write_cfg(tmp_path, TINY_RUN)
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    assert main(["run", "--config", cfg, "--out", str(out1)]) == 0
    assert main(["run", "--config", cfg, "--out", str(out2)]) == 0
    t1 = (out1 / "trajectory.csv").read_text()
    t2 = (out2 / "trajectory.csv").read_text()
    assert strip_timestamp(t1) == strip_timestamp(t2)
    assert "time_au" in t1
    # headers carry unit suffixes
    header = [l for l in t1.splitlines() if not l.startswith("#")][0]
    assert "dip_total_au" in header
    assert "dr_mol0_bohr" in header
    assert "e_total_hartree" in header


def test_run_seed_override_changes_output(tmp_path):
    cfg = write_cfg(tmp_path, TINY_RUN)
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    assert main(["run", "--config", cfg, "--out", str(out1)]) == 0
    assert main(
        ["run", "--config", cfg, "--out", str(out2), "--seed", "999"]
    ) == 0
    t1 = strip_timestamp((out1 / "trajectory.csv").read_text())
    t2 = strip_timestamp((out2 / "trajectory.csv").read_text())
    assert t1 != t2


def test_run_invalid_config_exits_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "cavity[0].lambda = -1\n")
    code = main(["run", "--config", cfg])
    captured = capsys.readouterr()
    assert code == 2
    assert "ERROR code=config-error step=-" in captured.err


def test_run_aborted_trajectory_flushes_partial(tmp_path, capsys):
    cfg = write_cfg(
        tmp_path,
        "ensemble.N = 1\nthermo.kT = 0.3\nrun.n_steps = 2000\nseed = 6\n",
    )
    out = tmp_path / "out"
    code = main(["run", "--config", cfg, "--out", str(out)])
    captured = capsys.readouterr()
    assert code == 3
    assert "ERROR code=geometry-error step=" in captured.err
    content = (out / "trajectory.csv").read_text()
    assert "# error: code=GeometryError" in content


def test_spectrum_and_peaks(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SPECTRUM_RUN)
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    code = main([
        "spectrum",
        "--traj", str(out / "trajectory.csv"),
        "--omega-cavity", "6.27",
        "--window", "1024",
        "--min-prominence", "0.02",
    ])
    assert code == 0
    spectrum = (out / "spectrum.csv").read_text()
    assert "omega_mH,intensity_global,intensity_local" in spectrum
    peaks = (out / "peaks.csv").read_text()
    assert "omega_LP_mH,omega_UP_mH,rabi_mH,midpoint_mH" in peaks
    row = [l for l in peaks.splitlines() if not l.startswith("#")][1]
    lp, up, rabi, mid, dark = (float(x) for x in row.split(","))
    assert lp < 6.27 < up
    assert rabi == pytest.approx(up - lp, rel=1e-12)


def test_spectrum_uncoupled_run_fails_peaks_but_writes_spectrum(tmp_path, capsys):
    cfg = write_cfg(
        tmp_path,
        "ensemble.N = 1\ncavity[0].lambda = 0\nrun.n_steps = 1500\nseed = 7\n",
    )
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    code = main([
        "spectrum",
        "--traj", str(out / "trajectory.csv"),
        "--omega-cavity", "6.27",
        "--window", "512",
    ])
    captured = capsys.readouterr()
    assert code == 3
    assert "ERROR code=peaks-not-found" in captured.err
    assert (out / "spectrum.csv").exists()


def test_spectrum_missing_file_exits_4(tmp_path, capsys):
    code = main([
        "spectrum", "--traj", str(tmp_path / "nope.csv"),
        "--omega-cavity", "6.27",
    ])
    captured = capsys.readouterr()
    assert code == 4
    assert "ERROR code=io-error" in captured.err


def test_polarization_command(tmp_path):
    cfg = write_cfg(tmp_path, TINY_RUN)
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    code = main([
        "polarization", "--traj", str(out / "trajectory.csv"),
        "--out", str(out),
    ])
    assert code == 0
    content = (out / "polarization.csv").read_text()
    header = [l for l in content.splitlines() if not l.startswith("#")][0]
    assert header == "N,mean_dr_bohr,mean_abs_dr_bohr,std_abs_dr_bohr,n_samples"
    row = [l for l in content.splitlines() if not l.startswith("#")][1]
    assert int(row.split(",")[0]) == 2


def test_polarization_without_diagnostics_exits_2(tmp_path, capsys):
    cfg = write_cfg(
        tmp_path, "ensemble.N = 1\nrun.n_steps = 20\nseed = 1\n"
    )
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    code = main(["polarization", "--traj", str(out / "trajectory.csv")])
    captured = capsys.readouterr()
    assert code == 2
    assert "ERROR code=missing-observable" in captured.err


def test_oracle_command(tmp_path):
    cfg = write_cfg(
        tmp_path, "cavity[0].omega_mh = 6.27\ncavity[0].lambda = 0.01\n"
    )
    out = tmp_path / "out"
    code = main([
        "oracle", "--config", cfg, "--n-list", "1,4,16", "--out", str(out),
    ])
    assert code == 0
    lines = [
        l for l in (out / "oracle.csv").read_text().splitlines()
        if not l.startswith("#")
    ]
    assert lines[0] == "N,lambda_au,omega_LP_mH,omega_UP_mH,rabi_mH,midpoint_mH"
    rows = [line.split(",") for line in lines[1:]]
    assert [int(r[0]) for r in rows] == [1, 4, 16]
    rabis = [float(r[4]) for r in rows]
    assert rabis[1] == pytest.approx(2.0 * rabis[0], rel=0.02)
    assert all(float(r[2]) < float(r[3]) for r in rows)


def test_check_forces_command(tmp_path, capsys):
    cfg = write_cfg(
        tmp_path,
        "ensemble.N = 2\nensemble.orientation = random\n"
        "cavity[0].lambda = 0.0085\nseed = 55\n",
    )
    code = main(["check-forces", "--config", cfg, "--n-samples", "2"])
    captured = capsys.readouterr()
    assert code == 0
    assert "max relative force error" in captured.out


def test_scaling_sweep(tmp_path):
    # rescaled coupling keeps N*lambda^2 constant, so one detuning
    # compensation works for every ensemble size in the sweep
    cfg = write_cfg(
        tmp_path,
        "ensemble.N = 1\ncavity[0].omega_mh = 7.1933\ncavity[0].lambda = 0.2\n"
        "run.n_steps = 4000\nseed = 21\n",
    )
    out = tmp_path / "out"
    code = main([
        "scaling-sweep", "--config", cfg, "--n-list", "2,4",
        "--fixed-rabi", "true", "--window", "1024",
        "--min-prominence", "0.02", "--omega-cavity", "6.27",
        "--out", str(out),
    ])
    assert code == 0
    lines = [
        l for l in (out / "scaling.csv").read_text().splitlines()
        if not l.startswith("#")
    ]
    assert lines[0] == "N,lambda_au,omega_LP_mH,omega_UP_mH,rabi_mH,midpoint_mH"
    assert len(lines) == 3
    assert (out / "trajectory_N2.csv").exists()
    assert (out / "trajectory_N4.csv").exists()
    lam2 = float(lines[1].split(",")[1])
    lam4 = float(lines[2].split(",")[1])
    assert lam2 == pytest.approx(0.1)
    assert lam4 == pytest.approx(0.2 / np.sqrt(8.0))
    rabi2 = float(lines[1].split(",")[4])
    rabi4 = float(lines[2].split(",")[4])
    assert rabi4 == pytest.approx(rabi2, rel=0.25)


def test_version_flag():
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
