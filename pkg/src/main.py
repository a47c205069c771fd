#!/usr/bin/env python3
"""
Sound-field reconstruction experiments with Deep Prior networks and LoRA adaptation.

Usage:
    python -m src.main pretrain --spec scenes/single_room.yaml

Or using poetry:
    poetry run sfr sweep-rank --spec scenes/single_room.yaml --out runs/ranks
"""

import argparse
import logging
import sys
from pathlib import Path

# Add project root to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from pydantic import ValidationError

from src.core.errors import SfrError
from src.experiments.commands import (
    cmd_adapt,
    cmd_cross_room,
    cmd_pretrain,
    cmd_sweep_mics,
    cmd_sweep_rank,
)
from src.experiments.report import cmd_report
from src.experiments.runner import apply_runtime
from src.experiments.spec import ExperimentSpec, load_spec
from src.utils.config import Config, load_config, set_config


def setup_logging(log_file: Path | None = None, level: str = "INFO") -> None:
    """Configure logging for the application."""
    handlers: list[logging.Handler] = [logging.StreamHandler()]

    if log_file:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        handlers.append(file_handler)

    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s | %(levelname)-8s | %(name)s | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        handlers=handlers,
        force=True,
    )

    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    logging.getLogger("PIL").setLevel(logging.WARNING)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sfr", description="Deep Prior sound-field reconstruction experiments"
    )
    parser.add_argument("--config", type=Path, help="Path to config.yaml")
    parser.add_argument("--log-file", type=Path, help="Path to log file")
    parser.add_argument("--workers", type=int, help="Worker processes for sweeps")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_spec(name: str, help_text: str) -> argparse.ArgumentParser:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--spec", type=Path, required=True, help="Scene/experiment YAML")
        cmd.add_argument("--seed", type=int, help="Override network, noise and training seeds")
        cmd.add_argument("--out", type=Path, help="Output directory")
        return cmd

    with_spec("pretrain", "Fit a scratch network on the pretraining observations")

    adapt = with_spec("adapt", "Adapt a pretrained network (ft, lora) or retrain (scratch)")
    adapt.add_argument("--checkpoint", type=Path, help="Pretrained checkpoint")
    adapt.add_argument("--mode", choices=["ft", "lora", "scratch"], required=True)
    adapt.add_argument("--rank", type=int, help="Adapter rank for lora")

    ranks = with_spec("sweep-rank", "LoRA adaptation for several ranks")
    ranks.add_argument("--checkpoint", type=Path, help="Pretrained checkpoint")
    ranks.add_argument("--ranks", type=int, nargs="+", help="Ranks to sweep")

    mics = with_spec("sweep-mics", "All modes for several numbers of observed microphones")
    mics.add_argument("--checkpoint", type=Path, help="Pretrained checkpoint")
    mics.add_argument("--counts", type=int, nargs="+", help="Numbers of observed microphones")

    cross = with_spec("cross-room", "Pretrain in each room, adapt to the others")
    cross.add_argument("--counts", type=int, nargs="+", help="Numbers of observed microphones")

    report = sub.add_parser("report", help="Summarize a run directory")
    report.add_argument("run_dir", type=Path, help="Directory with run outputs")
    return parser


def _spec_from_args(args: argparse.Namespace, config: Config) -> ExperimentSpec:
    spec = load_spec(args.spec)
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    if args.out is not None:
        spec = spec.with_output_dir(args.out)
    elif not spec.output_dir.is_absolute():
        spec = spec.with_output_dir(config.paths.output_dir / spec.output_dir)
    return spec


def run_command(args: argparse.Namespace, config: Config) -> None:
    """Dispatch a parsed command line."""
    logger = logging.getLogger(__name__)

    if args.command == "report":
        print(cmd_report(args.run_dir, config), end="")
        return

    spec = _spec_from_args(args, config)
    logger.info(f"Running {args.command} for {spec.name}, outputs in {spec.output_dir}")
    if args.command == "pretrain":
        cmd_pretrain(spec, config)
    elif args.command == "adapt":
        cmd_adapt(spec, args.checkpoint, args.mode, args.rank, config)
    elif args.command == "sweep-rank":
        cmd_sweep_rank(spec, args.ranks, args.checkpoint, config)
    elif args.command == "sweep-mics":
        cmd_sweep_mics(spec, args.counts, args.checkpoint, config)
    elif args.command == "cross-room":
        cmd_cross_room(spec, args.counts, config)


def main(argv: list[str] | None = None) -> int:
    """Main entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logger = logging.getLogger(__name__)

    try:
        config = load_config(args.config)
    except (ValidationError, OSError, ValueError) as e:
        setup_logging(args.log_file)
        logger.error(f"Failed to load configuration: {e}")
        logger.info("You can copy config.example.yaml to config.yaml")
        return 1
    if args.workers is not None:
        config.runtime.workers = max(1, args.workers)
    set_config(config)

    setup_logging(args.log_file, config.log_level)
    apply_runtime(config.runtime)

    try:
        run_command(args, config)
    except (SfrError, ValidationError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return 130
    except Exception as e:
        logger.exception(f"{args.command} crashed: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
