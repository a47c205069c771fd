"""Aggregation of finished runs into a text summary and plots."""

import logging
from pathlib import Path

import pandas as pd
from pydantic import ValidationError

from src.core.errors import ReportError
from src.core.trainer import TRAJECTORY_COLUMNS
from src.experiments.commands import (
    CROSS_ROOM_COLUMNS,
    MIC_SWEEP_COLUMNS,
    RANK_SWEEP_COLUMNS,
    SUMMARY_FILE,
    TRAJECTORY_FILE,
    RunSummary,
)
from src.experiments.plots import (
    plot_cross_room,
    plot_mic_sweep,
    plot_rank_sweep,
    plot_trajectories,
)
from src.utils.config import Config, get_config
from src.utils.files import atomic_write_text

logger = logging.getLogger(__name__)

REPORT_DIR = "report"
SWEEP_TABLES = {
    "rank_sweep.csv": RANK_SWEEP_COLUMNS,
    "mic_sweep.csv": MIC_SWEEP_COLUMNS,
    "cross_room.csv": CROSS_ROOM_COLUMNS,
}


def _read_table(path: Path, columns: list[str], bad: list[str]) -> pd.DataFrame | None:
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError, OSError):
        bad.append(str(path))
        return None
    if list(frame.columns) != columns:
        bad.append(str(path))
        return None
    return frame


def _format_db(value: float | None) -> str:
    return "n/a" if value is None or pd.isna(value) else f"{value:.4f} dB"


def _run_lines(name: str, frame: pd.DataFrame, summary: RunSummary | None) -> list[str]:
    if summary is not None:
        return [
            f"{name}: {summary.command} {summary.mode.value} on {summary.room}/{summary.source}, "
            f"M~={summary.M_tilde}, {summary.iterations} iterations",
            f"  final loss {summary.final_loss:.6g}, "
            f"NMSE full {_format_db(summary.full_nmse_db)}, "
            f"observed {_format_db(summary.observed_nmse_db)}, "
            f"unobserved {_format_db(summary.unobserved_nmse_db)}",
            f"  trainable {summary.trainable_params} of {summary.base_params} "
            f"({summary.trainable_fraction:.1%})",
        ]
    last = frame.iloc[-1]
    return [
        f"{name}: {len(frame)} iterations",
        f"  final loss {last['l1_loss']:.6g}, NMSE full {_format_db(last['full_nmse_db'])}, "
        f"observed {_format_db(last['observed_nmse_db'])}",
    ]


def cmd_report(run_dir: Path, config: Config | None = None) -> str:
    """
    Summarize every run below ``run_dir``.

    Writes ``report/summary.txt`` and plots under ``run_dir``. Running it twice on
    the same inputs produces identical files.

    Raises:
        ReportError: No run outputs found, or unreadable CSV/summary files
    """
    config = config or get_config()
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ReportError(f"Run directory not found: {run_dir}")

    report_dir = run_dir / REPORT_DIR
    trajectories = sorted(
        p for p in run_dir.rglob(TRAJECTORY_FILE) if report_dir not in p.parents
    )
    tables = {
        name: sorted(p for p in run_dir.rglob(name) if report_dir not in p.parents)
        for name in SWEEP_TABLES
    }
    if not trajectories and not any(tables.values()):
        raise ReportError(f"No run outputs under {run_dir}")

    bad: list[str] = []
    lines = [f"Report for {run_dir.name}", ""]
    frames: dict[str, pd.DataFrame] = {}
    for path in trajectories:
        frame = _read_table(path, TRAJECTORY_COLUMNS, bad)
        if frame is None:
            continue
        if frame.empty:
            bad.append(str(path))
            continue
        name = path.parent.relative_to(run_dir).as_posix() or "."
        summary = None
        summary_path = path.parent / SUMMARY_FILE
        if summary_path.exists():
            try:
                summary = RunSummary.model_validate_json(summary_path.read_text(encoding="utf-8"))
            except ValidationError:
                bad.append(str(summary_path))
                continue
        frames[name] = frame
        lines.extend(_run_lines(name, frame, summary))
    lines.append("")

    sweep_plots = {
        "rank_sweep.csv": plot_rank_sweep,
        "mic_sweep.csv": plot_mic_sweep,
        "cross_room.csv": plot_cross_room,
    }
    for table_name, paths in tables.items():
        for path in paths:
            frame = _read_table(path, SWEEP_TABLES[table_name], bad)
            if frame is None:
                continue
            rel = path.relative_to(run_dir).as_posix()
            lines.append(f"{rel}: {len(frame)} rows")
            stem = rel.removesuffix(".csv").replace("/", "__")
            sweep_plots[table_name](frame, report_dir / stem, config.plots)

    if bad:
        raise ReportError("Unreadable run outputs", sorted(set(bad)))

    if frames:
        plot_trajectories(frames, report_dir / "trajectories", config.plots)
    text = "\n".join(lines).rstrip() + "\n"
    atomic_write_text(report_dir / "summary.txt", text)
    logger.info(f"Report written to {report_dir}")
    return text
