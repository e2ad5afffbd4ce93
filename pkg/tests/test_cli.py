import json
from pathlib import Path

import pytest

from levyperron.cli import EXIT_FAILED, EXIT_INPUT, EXIT_OK, build_parser, main

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture(scope="module")
def constant_start(tmp_path_factory) -> Path:
    """The model run with the constant 0/10 start instead of the certified envelopes."""
    text = (CONFIG_DIR / "model_1d.toml").read_text(encoding="utf-8")
    path = tmp_path_factory.mktemp("configs") / "model_constant.toml"
    path.write_text(text.replace('start = "barrier"', 'start = "constant"'), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def solved_run(constant_start, tmp_path_factory) -> tuple[Path, int]:
    out = tmp_path_factory.mktemp("model_run")
    return out, main(["solve", "--config", str(constant_start), "--out", str(out)])


class TestParser:
    def test_subcommands_share_the_flags(self):
        args = build_parser().parse_args(
            ["all", "--config", "run.toml", "--out", "o", "--force", "--mode", "jacobi", "--threads", "2"]
        )
        assert args.command == "all"
        assert args.force
        assert args.mode == "jacobi"
        assert args.threads == 2

    def test_unknown_mode_is_a_usage_error(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["solve", "--config", "run.toml", "--mode", "sor"])


class TestSolveAndDiagnose:
    def test_solve_writes_its_artifacts(self, solved_run):
        out, code = solved_run
        assert code == EXIT_OK
        for name in ("solution.csv", "config_echo.json", "reports/solve.json", "reports/solution_checks.json"):
            assert (out / name).is_file()
        report = json.loads((out / "reports" / "solve.json").read_text(encoding="utf-8"))
        assert report["converged"]
        assert "runtime_seconds" not in report
        checks = json.loads((out / "reports" / "solution_checks.json").read_text(encoding="utf-8"))
        assert checks["linear_reference_max_difference"] < 1e-6
        field = (out / "tables" / "operator_field.csv").read_text(encoding="utf-8").splitlines()
        assert field[0] == "x1,value,tail_halfwidth"
        solution = (out / "solution.csv").read_text(encoding="utf-8").splitlines()
        assert len(field) == len(solution)
        assert (out / "tables" / "initial_pair.csv").read_text(encoding="utf-8").startswith("x1,sub,super\n")

    def test_diagnose_reads_the_solution(self, solved_run, constant_start):
        out, _ = solved_run
        assert main(["diagnose", "--config", str(constant_start), "--out", str(out)]) == EXIT_OK
        holder = json.loads((out / "reports" / "holder_0.json").read_text(encoding="utf-8"))
        assert holder["alpha_hat"] > 0.0
        harnack = json.loads((out / "reports" / "harnack_0.json").read_text(encoding="utf-8"))
        assert harnack["epsilon3"] > 0.0
        assert not harnack["fallback"]
        assert harnack["passed"]
        # the center at 0.95 is inside the margin and skipped
        assert not (out / "reports" / "holder_2.json").exists()

    def test_runs_are_byte_identical(self, constant_start, tmp_path):
        tables = []
        for name in ("first", "second"):
            out = tmp_path / name
            argv = ["solve", "--config", str(constant_start), "--out", str(out), "--mode", "jacobi", "--threads", "2"]
            assert main(argv) == EXIT_OK
            tables.append((out / "solution.csv").read_bytes())
        assert tables[0] == tables[1]


class TestExitCodes:
    def test_failed_certification(self, tmp_path, capsys):
        code = main(["certify", "--config", str(CONFIG_DIR / "one_sided_1d.toml"), "--out", str(tmp_path)])
        assert code == EXIT_FAILED
        assert "fails H3" in capsys.readouterr().err
        assert (tmp_path / "reports" / "annulus_one_sided.json").is_file()

    def test_missing_config(self, tmp_path):
        assert main(["solve", "--config", str(tmp_path / "absent.toml"), "--out", str(tmp_path)]) == EXIT_INPUT

    def test_invalid_config(self, tmp_path, capsys):
        text = (CONFIG_DIR / "model_1d.toml").read_text(encoding="utf-8").replace('kernel = "frac"', 'kernel = "nope"')
        path = tmp_path / "bad.toml"
        path.write_text(text, encoding="utf-8")
        assert main(["certify", "--config", str(path), "--out", str(tmp_path / "out")]) == EXIT_INPUT
        assert "undeclared kernel" in capsys.readouterr().err

    def test_nonpositive_threads(self, constant_start, tmp_path):
        argv = ["solve", "--config", str(constant_start), "--out", str(tmp_path), "--threads", "0"]
        assert main(argv) == EXIT_INPUT
