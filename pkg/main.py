import logging
import typer

# Configure logging for the harness commands
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.StreamHandler()
    ]
)

# Set log levels for specific loggers
logging.getLogger("suites").setLevel(logging.INFO)
logging.getLogger("offsets").setLevel(logging.INFO)
logging.getLogger("tensors").setLevel(logging.WARNING)  # per-call shape logs are noisy
logging.getLogger("ssm").setLevel(logging.WARNING)
logging.getLogger("scanpaths").setLevel(logging.WARNING)

app = typer.Typer(
    name="como",
    help="Cross-modal mamba interaction and offset-guided fusion harness",
    no_args_is_help=True,
    add_completion=False,
)

@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Log at DEBUG level")):
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)
        for name in ("tensors", "ssm", "scanpaths"):
            logging.getLogger(name).setLevel(logging.DEBUG)

from commands import bench, check, demo, offsets
app.command("demo")(demo.demo)
app.command("check")(check.check)
app.command("bench")(bench.bench)
app.command("offsets")(offsets.offsets)

if __name__ == "__main__":
    app()
