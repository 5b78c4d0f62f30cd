import logging
from pathlib import Path
from typing import Optional
import typer
from rich.table import Table

from commands.common import console, reported_errors, resolve_output
from config import load_run_config
from services.errors import ConfigError
from services.offsets import build_report, parse_annotations
from utils.reports import write_report

logger = logging.getLogger("offsets_cmd")

def offsets(
    input_path: Path = typer.Argument(..., help="Line-delimited JSON annotations"),
    config: Optional[Path] = typer.Option(None, "--config", help="JSON run configuration"),
    out: Optional[Path] = typer.Option(None, "--out", help="Report path"),
    gate: Optional[float] = typer.Option(None, "--gate", help="Maximum centre distance for a match (px)"),
):
    """Match cross-modal annotations and report offset statistics and retention."""
    with reported_errors("offsets"):
        cfg = load_run_config(config)
        offset_cfg = cfg.offsets if gate is None else cfg.offsets.model_copy(update={"gate": gate})
        if offset_cfg.gate <= 0:
            raise ConfigError("gate must be positive", "offsets.gate")
        try:
            with open(input_path, encoding="utf-8") as handle:
                annotations = parse_annotations(handle)
        except OSError as e:
            raise ConfigError(f"cannot read {input_path}: {e.strerror}", "input") from e
        report = build_report(annotations, offset_cfg, source=str(input_path))
        path = write_report(report, resolve_output(out, cfg, "offsets.json"))

    hist = report.histogram
    table = Table(title=f"offsets ({report.matched} matched, {report.images} images)")
    table.add_column("magnitude (px)")
    table.add_column("objects", justify="right")
    edges = hist.bin_edges
    for k, count in enumerate(hist.counts):
        upper = f"{edges[k + 1]:g}" if k + 1 < len(edges) else "inf"
        table.add_row(f"[{edges[k]:g}, {upper})", str(count))
    console.print(table)
    console.print(f"misaligned {hist.misaligned_fraction:.4f}; within 1-5 px {hist.within_1_to_5_fraction:.4f}")
    for row in report.retention:
        console.print(f"block {row.level}: mean retention {row.mean_retention:.4f}")
    for warning in report.warnings:
        console.print(f"[yellow]warning:[/yellow] {warning}")
    console.print(f"report written to {path}")
