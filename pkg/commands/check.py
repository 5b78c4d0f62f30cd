import logging
from pathlib import Path
from typing import Optional
import typer
from rich.table import Table

from commands.common import EXIT_SUITE_FAILURE, console, reported_errors, resolve_output
from config import load_run_config
from services.suites import run_suites, select_suites
from utils.reports import write_report

logger = logging.getLogger("check")

def check(
    config: Optional[Path] = typer.Option(None, "--config", help="JSON run configuration"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Override the configuration seed"),
    out: Optional[Path] = typer.Option(None, "--out", help="Report path"),
    name_filter: Optional[str] = typer.Option(None, "--filter", help="Run suites whose name starts with this"),
    jobs: int = typer.Option(1, "--jobs", min=1, help="Worker threads"),
    list_only: bool = typer.Option(False, "--list", help="Print suite names and exit"),
):
    """Run the invariant suites; exit status 1 when any of them fails."""
    with reported_errors("check"):
        if list_only:
            for entry in select_suites(name_filter):
                console.print(entry.key)
            return
        cfg = load_run_config(config, {"seed": seed})
        report = run_suites(cfg, name_filter, jobs)
        path = write_report(report, resolve_output(out, cfg, "check.json"))

    table = Table(title="check")
    table.add_column("suite")
    table.add_column("result")
    table.add_column("seconds", justify="right")
    table.add_column("detail")
    for r in report.results:
        table.add_row(f"{r.module}.{r.name}", "[green]pass[/green]" if r.passed else "[red]FAIL[/red]",
                      f"{r.seconds:.3f}", r.detail)
    console.print(table)
    console.print(f"{report.total - report.failed}/{report.total} suites passed; report written to {path}")
    if not report.passed:
        logger.warning(f"{report.failed} suite(s) failed")
        raise typer.Exit(code=EXIT_SUITE_FAILURE)
