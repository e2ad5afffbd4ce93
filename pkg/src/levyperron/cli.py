"""Command-line front-end: ``levyperron certify|solve|diagnose|all --config run.toml``.

Exit status is 0 when every requested stage passes, 1 when a certification
fails or the iteration does not converge, and 2 for unreadable or
inconsistent input.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import structlog

from levyperron.config import get_settings
from levyperron.logger import setup_logging
from levyperron.schemas.run_config import RunConfig, load_run_config
from levyperron.services import io
from levyperron.services.pipeline import StageResult, run_certify, run_diagnose, run_solve

logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INPUT = 2


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, required=True, help="TOML run configuration.")
    common.add_argument("--out", type=Path, default=None, help="Output directory (overrides the config and settings).")
    common.add_argument("--force", action="store_true", help="Solve even when the initial pair is not certified.")
    common.add_argument(
        "--mode", choices=["jacobi", "gauss-seidel"], default=None, help="Sweep mode (default: from the config)."
    )
    common.add_argument("--threads", type=int, default=None, help="Worker count (default: LEVYPERRON_THREADS).")
    common.add_argument(
        "--solution", type=Path, default=None, help="Solution CSV for diagnose (default: <out>/solution.csv)."
    )

    parser = argparse.ArgumentParser(
        prog="levyperron",
        description="Certify, solve and diagnose Dirichlet problems for nonlocal Bellman-Isaacs operators.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("certify", parents=[common], help="Kernel class, boundary cone, axiom and barrier checks.")
    commands.add_parser("solve", parents=[common], help="Monotone Perron iteration from the certified envelopes.")
    commands.add_parser("diagnose", parents=[common], help="Hoelder and weak Harnack diagnostics of a solution.")
    commands.add_parser("all", parents=[common], help="certify, solve and diagnose in sequence.")
    return parser


def _output_dir(args: argparse.Namespace, config: RunConfig) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path(config.output_dir or get_settings().output_dir)


def run(args: argparse.Namespace) -> int:
    settings = get_settings()
    threads = args.threads if args.threads is not None else settings.threads
    if threads < 1:
        msg = f"--threads must be at least 1, got {threads}"
        raise ValueError(msg)
    config = load_run_config(args.config)
    out = _output_dir(args, config)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "config_echo.json", config)

    results = _stages(args, config, out, threads)
    for result in results:
        for failure in result.failures:
            print(f"{result.name}: {failure}", file=sys.stderr)
    passed = all(r.passed for r in results)
    logger.info("run_finished", command=args.command, passed=passed, out=str(out))
    return EXIT_OK if passed else EXIT_FAILED


def _stages(args: argparse.Namespace, config: RunConfig, out: Path, threads: int) -> list[StageResult]:
    results: list[StageResult] = []
    family = None
    chained = args.command == "all"
    if args.command in ("certify", "all"):
        certified, family = run_certify(config, out, threads=threads)
        results.append(certified)
        if chained and not certified.passed and not args.force:
            logger.error("stages_skipped_after_failed_certification")
            return results
    if args.command in ("solve", "all"):
        solved = run_solve(config, out, mode=args.mode, threads=threads, force=args.force, family=family)
        results.append(solved)
        if chained and out / "solution.csv" not in solved.artifacts:
            return results
    if args.command in ("diagnose", "all"):
        results.append(run_diagnose(config, out, solution=args.solution))
    return results


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings()
    setup_logging(settings.log_level, json=settings.log_json)
    try:
        return run(args)
    except (ValueError, FileNotFoundError) as exc:
        logger.error("invalid_input", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
