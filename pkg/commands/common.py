import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Optional
import typer
from rich.console import Console
from rich.markup import escape

from config import get_settings
from models import RunConfig
from services.errors import ComoError

console = Console()
logger = logging.getLogger("commands")

EXIT_SUITE_FAILURE = 1
EXIT_ERROR = 2

def resolve_output(out: Optional[Path], cfg: Optional[RunConfig], default_name: str) -> Path:
    """--out wins, then the config file's `output`, then COMO_OUTPUT_DIR/<default_name>."""
    if out is not None:
        return out
    if cfg is not None and cfg.output is not None:
        return cfg.output
    return get_settings().OUTPUT_DIR / default_name

@contextmanager
def reported_errors(command: str):
    """Turn library errors into a printed message and exit status 2."""
    try:
        yield
    except ComoError as e:
        logger.error(f"{command} failed: {e}")
        console.print(f"[bold red]Error:[/bold red] {escape(str(e))}")
        raise typer.Exit(code=EXIT_ERROR)
