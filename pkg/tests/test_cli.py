import json
import subprocess
import sys

import numpy as np
import pytest

from qptori.cli import main
from qptori.io import load_solution, read_csv


@pytest.fixture(scope="module")
def solved_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("henon_run")
    code = main(
        [
            "solve",
            "--model",
            "henon",
            "--amplitudes",
            "1,0",
            "--schedule",
            "4,8,16,32",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    return out


class TestSolve:
    def test_outputs_exist(self, solved_dir):
        for name in ("solution.json", "convergence.csv", "conditions.csv"):
            assert (solved_dir / name).exists()

    def test_solution_round_trip(self, solved_dir):
        sol = load_solution(solved_dir / "solution.json")
        assert sol["model"].name == "henon"
        assert sol["info"]["converged"] is True
        assert sol["zhat"].get(0, (1,)) == 1.0  # pinned amplitude survives
        assert sol["meta"]["library"] == "qptori"

    def test_convergence_table_monotone_after_first(self, solved_dir):
        meta, cols, rows = read_csv(solved_dir / "convergence.csv")
        norm_f = [float(r[cols.index("norm_F")]) for r in rows]
        assert all(b < a for a, b in zip(norm_f, norm_f[1:]))
        assert meta["b_variant"] == "chain_rule"

    def test_headers_carry_resolved_config(self, solved_dir):
        meta, _, _ = read_csv(solved_dir / "conditions.csv")
        assert meta["schedule"] == "[4, 8, 16, 32]"
        assert meta["epsilon"] == "0.5"

    def test_deterministic_bytes(self, solved_dir, tmp_path):
        out2 = tmp_path / "again"
        assert main(
            [
                "solve",
                "--model",
                "henon",
                "--amplitudes",
                "1,0",
                "--schedule",
                "4,8,16,32",
                "--out",
                str(out2),
            ]
        ) == 0
        for name in ("solution.json", "convergence.csv", "conditions.csv"):
            assert (solved_dir / name).read_bytes() == (out2 / name).read_bytes()

    def test_plot_renders_files(self, tmp_path):
        out = tmp_path / "plots"
        code = main(
            [
                "solve",
                "--model",
                "henon",
                "--amplitudes",
                "1,0",
                "--schedule",
                "4,8",
                "--rmax",
                "6",
                "--tol",
                "1e-3",
                "--no-conditions",
                "--plot",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        assert (out / "trajectory.png").stat().st_size > 0
        assert (out / "convergence.png").stat().st_size > 0

    def test_bad_amplitudes_exit_3(self, tmp_path, capsys):
        code = main(
            ["solve", "--model", "fpu", "--n", "3", "--amplitudes", "1,1", "--out", str(tmp_path)]
        )
        assert code == 3

    def test_zero_excitation_exit_3(self, tmp_path):
        code = main(
            ["solve", "--model", "henon", "--amplitudes", "0,0", "--out", str(tmp_path)]
        )
        assert code == 3

    def test_nonconvergence_exit_2(self, tmp_path):
        code = main(
            [
                "solve",
                "--model",
                "henon",
                "--amplitudes",
                "1,0",
                "--schedule",
                "4",
                "--rmax",
                "2",
                "--tol",
                "1e-13",
                "--no-conditions",
                "--out",
                str(tmp_path),
            ]
        )
        assert code == 2


class TestTrajectory:
    def test_csv_grid_and_columns(self, solved_dir, tmp_path):
        out = tmp_path / "traj.csv"
        assert main(["trajectory", "--solution", str(solved_dir / "solution.json"), "--out", str(out)]) == 0
        meta, cols, rows = read_csv(out)
        assert cols == ["t", "x0", "y0", "x1", "y1", "residual"]
        assert len(rows) == 2001
        assert float(rows[0][0]) == 0.0 and float(rows[-1][0]) == 20.0
        assert max(float(r[-1]) for r in rows) < 1e-8

    def test_custom_grid(self, solved_dir, tmp_path):
        out = tmp_path / "short.csv"
        assert (
            main(
                [
                    "trajectory",
                    "--solution",
                    str(solved_dir / "solution.json"),
                    "--t-end",
                    "5",
                    "--points",
                    "11",
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        _, _, rows = read_csv(out)
        assert len(rows) == 11
        assert float(rows[-1][0]) == 5.0

    def test_starts_on_y_axis(self, solved_dir, tmp_path):
        out = tmp_path / "t.csv"
        main(["trajectory", "--solution", str(solved_dir / "solution.json"), "--out", str(out)])
        _, cols, rows = read_csv(out)
        assert abs(float(rows[0][cols.index("x0")])) < 1e-15
        assert abs(float(rows[0][cols.index("x1")])) < 1e-15


class TestResonance:
    def test_grid_scan(self, tmp_path):
        out = tmp_path / "grid.csv"
        code = main(
            [
                "resonance",
                "--omega-n",
                f"{np.sqrt(2)}",
                "--grid",
                "0.5:1.5:21",
                "--gamma",
                "0.05",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        _, cols, rows = read_csv(out)
        assert cols == ["omega_T1", "admissible", "worst_set", "worst_margin"]
        assert len(rows) == 21
        flags = {r[1] for r in rows}
        assert flags <= {"true", "false"}

    def test_monte_carlo_records_fraction(self, tmp_path):
        out = tmp_path / "mc.csv"
        code = main(
            [
                "resonance",
                "--omega-n",
                f"{np.sqrt(2)}",
                "--samples",
                "2000",
                "--domain",
                "0.5,1.5",
                "--gamma",
                "0.01",
                "--seed",
                "5",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        meta, _, rows = read_csv(out)
        assert len(rows) == 2000
        assert 0.0 <= float(meta["fraction"]) < 0.1

    def test_needs_mode(self, tmp_path):
        assert main(["resonance", "--omega-n", "1.0", "--out", str(tmp_path / "x.csv")]) == 3


class TestGlueCheckVerify:
    def test_glue_check_json(self, solved_dir, tmp_path, capsys):
        out = tmp_path / "glue.json"
        code = main(
            [
                "glue-check",
                "--model-state",
                str(solved_dir / "solution.json"),
                "--N",
                "40",
                "--K",
                "4",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["max_rel_error_vs_dense"] < 1e-8
        assert payload["glue_seconds"] > 0 and payload["dense_seconds"] > 0

    def test_verify_prints_residual(self, solved_dir, capsys):
        code = main(["verify", "--solution", str(solved_dir / "solution.json")])
        assert code == 0
        out = capsys.readouterr().out
        assert "max Hamilton-equation residual" in out
        value = float(out.split(":")[-1])
        assert value < 1e-8


def test_models_listing(capsys):
    assert main(["models"]) == 0
    out = capsys.readouterr().out
    assert "henon" in out and "fpu" in out


def test_console_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "qptori.cli", "models"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "henon" in proc.stdout


def test_fpu_single_excitation_run(tmp_path):
    out = tmp_path / "fpu"
    code = main(
        [
            "solve",
            "--model",
            "fpu",
            "--n",
            "3",
            "--epsilon",
            "1.0",
            "--amplitudes",
            "0,1,0",
            "--tol",
            "1e-10",
            "--no-conditions",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    sol = load_solution(out / "solution.json")
    assert sol["model"].name == "fpu"
    assert sol["info"]["final_norm_F"] < 1e-10


def test_custom_model_file_round_trip(tmp_path):
    from qptori.hamiltonian import fpu_beta, save_model

    path = tmp_path / "custom.json"
    save_model(fpu_beta(2, 0.3), path)
    out = tmp_path / "run"
    code = main(
        [
            "solve",
            "--model-file",
            str(path),
            "--schedule",
            "4,8,16",
            "--no-conditions",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    sol = load_solution(out / "solution.json")
    assert sol["model"].n == 2
