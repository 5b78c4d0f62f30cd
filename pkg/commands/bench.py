import logging
from pathlib import Path
from typing import Optional
import typer
from rich.table import Table

from commands.common import console, reported_errors, resolve_output
from config import load_run_config
from models import BenchReport, Variant
from services.flops import ablation_table, flop_estimate, flop_sweep
from utils.reports import write_report

logger = logging.getLogger("bench")

def bench(
    config: Optional[Path] = typer.Option(None, "--config", help="JSON run configuration"),
    out: Optional[Path] = typer.Option(None, "--out", help="Report path"),
    tokens: Optional[int] = typer.Option(None, "--tokens", help="Token length L (default: from the token grid)"),
    sweep: bool = typer.Option(False, "--sweep", help="Add rows for the grid/window and stack-depth study"),
    variant: Optional[Variant] = typer.Option(None, "--variant", help="Count one ablation variant"),
    ablation: bool = typer.Option(False, "--ablation", help="Add one row per ablation variant"),
):
    """Count multiply-adds of the mamba interaction against a cross-attention replacement."""
    with reported_errors("bench"):
        cfg = load_run_config(config)
        if variant is not None:
            cfg = cfg.with_variant(variant)
        report = BenchReport(
            estimate=flop_estimate(cfg, tokens),
            sweep=flop_sweep(cfg) if sweep else [],
            ablation=ablation_table(cfg) if ablation else [],
        )
        path = write_report(report, resolve_output(out, cfg, "bench.json"))

    est = report.estimate
    table = Table(title=f"interaction MACs at L={est.token_length}, C={est.channels}, N={est.state_dim}")
    table.add_column("component")
    table.add_column("MACs", justify="right")
    for name, value in est.mamba.items():
        table.add_row(f"mamba.{name}", f"{value:,}")
    for name, value in est.attention.items():
        table.add_row(f"attention.{name}", f"{value:,}")
    table.add_row("mamba total", f"{est.mamba_total:,}")
    table.add_row("attention total", f"{est.attention_total:,}")
    table.add_row("neck (shared)", f"{est.neck_macs:,}")
    console.print(table)

    if report.sweep:
        rows = Table(title="sweep")
        for column in ("grid", "window", "n_single", "mamba", "attention", "ratio"):
            rows.add_column(column, justify="right")
        for r in report.sweep:
            rows.add_row(f"{r.target_grid[0]}x{r.target_grid[1]}", f"{r.local_window[0]}x{r.local_window[1]}",
                         str(r.n_single), f"{r.mamba_total:,}", f"{r.attention_total:,}", f"{r.ratio:.3f}")
        console.print(rows)
    if report.ablation:
        rows = Table(title="ablation")
        for column in ("variant", "MIB", "directions", "fusion", "interaction", "neck", "total"):
            rows.add_column(column, justify="right")
        for r in report.ablation:
            rows.add_row(r.variant.value, "yes" if r.use_interaction else "no", str(r.direction_count),
                         r.fusion_unit.value, f"{r.interaction_macs:,}", f"{r.neck_macs:,}", f"{r.total_macs:,}")
        console.print(rows)
    console.print(f"ratio {est.ratio:.4f}; report written to {path}")
