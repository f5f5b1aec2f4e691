"""
Command-line interface

    pi-engine verify --suite conv --seed 7
    pi-engine equivariance --jobs 4
    pi-engine order attention
    pi-engine train-toy rankR-copy --out report.json

Exit codes: 0 when everything passes, 1 on a failed case or run, 2 on a
usage or configuration error. Reports are JSON, written to stdout or --out.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from lightrag.utils import logger

from .builders import (
    build_attention,
    build_conv2d,
    build_gating,
    build_harmonic,
    build_se3_attention,
    build_tfn,
    build_tpa,
)
from .config import RunConfig, get_engine_config, load_run_config
from .dynamics import build_mamba, build_ssm
from .errors import ConfigError, DivergenceError, EngineError
from .suites import SCHEMA_VERSION, SUITES, quadratic_expr, run_suite
from .toys import TOY_TASKS, run_toy_task

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

ORDER_BUILDERS = (
    "conv",
    "gating",
    "quad",
    "attention",
    "tpa",
    "ssm",
    "mamba",
    "harmonic",
    "tfn",
    "se3",
)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Run configuration file (INI-style key = value)")
    parser.add_argument("--seed", type=int, help="Base seed (falls back to PI_ENGINE_SEED)")
    parser.add_argument("--jobs", type=int, help="Number of cases run concurrently")
    parser.add_argument("--tol-scale", type=float, help="Multiplier applied to every tolerance")
    parser.add_argument("--out", help="Write the JSON report to this path instead of stdout")
    parser.add_argument("--no-progress", action="store_true", help="Disable progress bars")
    parser.add_argument("--log-level", help="Logging level (default: PI_ENGINE_LOG_LEVEL)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pi-engine", description="Product-interaction engine verification")
    commands = parser.add_subparsers(dest="command", required=True)

    verify = commands.add_parser("verify", help="Run oracle-equivalence suites")
    verify.add_argument("--suite", help=f"'all' or one of: {', '.join(SUITES)}")
    _add_common(verify)

    equivariance = commands.add_parser("equivariance", help="Run the symmetry checks and negative controls")
    _add_common(equivariance)

    order = commands.add_parser("order", help="Print the self-interaction order and manifest of a builder")
    order.add_argument("builder", choices=ORDER_BUILDERS)
    _add_common(order)

    train = commands.add_parser("train-toy", help="Run a toy design-principle experiment")
    train.add_argument("task", choices=TOY_TASKS)
    train.add_argument("--steps", type=int, help="Optimizer steps per model")
    train.add_argument("--lr", type=float, help="Learning rate")
    train.add_argument("--momentum", type=float, help="Momentum")
    train.add_argument("--seeds", type=int, help="Number of seeds voting on the trend")
    _add_common(train)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """File values first, then flags on top"""
    cfg = load_run_config(args.config)
    cfg.set("run", "seed", args.seed)
    cfg.set("run", "jobs", args.jobs)
    cfg.set("run", "tol_scale", args.tol_scale)
    cfg.set("run", "out", args.out)
    if args.no_progress:
        cfg.set("run", "show_progress", False)
    if getattr(args, "suite", None):
        cfg.set("run", "suite", args.suite)
    for key in ("steps", "lr", "momentum", "seeds"):
        cfg.set("train", key, getattr(args, key, None))
    return cfg


def write_report(report: Dict[str, Any], out: Optional[str]) -> None:
    text = json.dumps(report, indent=2)
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8")
        logger.info(f"Report written to {path}")
    else:
        print(text)


# Commands
# ---


def cmd_verify(cfg: RunConfig) -> int:
    report = run_suite(cfg.get("run", "suite"), cfg)
    write_report(report.to_dict(), cfg.get("run", "out"))
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_equivariance(cfg: RunConfig) -> int:
    report = run_suite("equivariance", cfg)
    write_report(report.to_dict(), cfg.get("run", "out"))
    return EXIT_OK if report.passed else EXIT_FAILED


def order_target(name: str, cfg: RunConfig):
    """Builder instance sized by the run configuration"""
    rng = np.random.default_rng(cfg.seed)
    if name == "conv":
        return build_conv2d(*(cfg.get("conv", k) for k in ("height", "width", "kernel_height", "kernel_width")), rng=rng)
    if name == "gating":
        return build_gating(cfg.get("attention", "d"), rng=rng)
    if name == "quad":
        return quadratic_expr()
    if name == "attention":
        heads = cfg.get("attention", "heads")
        return build_attention(cfg.get("attention", "n"), cfg.get("attention", "d"), heads=heads[-1], rng=rng)
    if name == "tpa":
        heads, head_dim = cfg.get("tpa", "heads"), cfg.get("tpa", "head_dim")
        return build_tpa(cfg.get("tpa", "n"), heads * head_dim, heads, head_dim, ranks=cfg.get("tpa", "rank"), rng=rng)
    if name == "ssm":
        return build_ssm(cfg.get("ssm", "d"), cfg.get("ssm", "hidden"), dt=cfg.get("ssm", "dt"), rng=rng)
    if name == "mamba":
        return build_mamba(cfg.get("mamba", "d"), cfg.get("mamba", "hidden"), dt=cfg.get("mamba", "dt"), rng=rng)
    if name == "harmonic":
        return build_harmonic(cfg.get("harmonic", "points"), cfg.get("harmonic", "n_max"), rng=rng)
    if name == "tfn":
        return build_tfn(cfg.get("tfn", "points"), cfg.get("tfn", "l_max"), n_basis=cfg.get("tfn", "radial_basis"), rng=rng)
    n = cfg.get("se3", "points")
    return build_se3_attention(n, cfg.get("se3", "l_max"), positions=rng.normal(size=(n, 3)), radius=cfg.get("se3", "radius"), rng=rng)


def cmd_order(name: str, cfg: RunConfig) -> int:
    target = order_target(name, cfg)
    order = target.order("X")
    logger.info(f"{name}: self-interaction order {order} in X")
    write_report(
        {"schema_version": SCHEMA_VERSION, "builder": name, "order": order, "manifest": target.manifest()},
        cfg.get("run", "out"),
    )
    return EXIT_OK


def cmd_train_toy(task: str, cfg: RunConfig) -> int:
    seeds = [cfg.seed + i for i in range(cfg.get("train", "seeds"))]
    try:
        report = run_toy_task(
            task,
            seeds,
            steps=cfg.get("train", "steps"),
            lr=cfg.get("train", "lr"),
            momentum=cfg.get("train", "momentum"),
            show_progress=cfg.show_progress,
        )
    except DivergenceError as e:
        logger.error(f"Toy task {task} diverged: {e}")
        write_report(
            {"schema_version": SCHEMA_VERSION, "suite": f"train-toy/{task}", "error": str(e), "step": e.step, "passed": False},
            cfg.get("run", "out"),
        )
        return EXIT_FAILED
    write_report({"schema_version": SCHEMA_VERSION, "suite": f"train-toy/{task}", **report.to_dict()}, cfg.get("run", "out"))
    return EXIT_OK if report.passed else EXIT_FAILED


def main(argv: Optional[List[str]] = None) -> int:
    """Command-line entry point"""
    args = build_parser().parse_args(argv)

    # Configure logging
    level = (args.log_level or get_engine_config().log_level).upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )

    try:
        cfg = resolve_config(args)
        if args.command == "verify":
            return cmd_verify(cfg)
        if args.command == "equivariance":
            return cmd_equivariance(cfg)
        if args.command == "order":
            return cmd_order(args.builder, cfg)
        return cmd_train_toy(args.task, cfg)
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except EngineError as e:
        logger.error(f"Run failed: {e}")
        return EXIT_FAILED


if __name__ == "__main__":
    exit(main())
