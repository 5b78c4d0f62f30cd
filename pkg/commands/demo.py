import logging
from pathlib import Path
from typing import Optional
import numpy as np
import typer
from rich.table import Table

from commands.common import console, reported_errors, resolve_output
from config import load_run_config
from models import DemoReport, Variant
from services.fusion import (
    PipelineParams, init_pipeline, interact_pyramid, neck_pipeline, run_pipeline, summarize, validate_pyramid,
)
from services.synthetic import synthetic_images
from utils.reports import determinism_hash, write_report
from utils.rng import SeededRng
from utils.serialization import load_pyramid, load_tensors, save_tensors

logger = logging.getLogger("demo")

def demo(
    config: Optional[Path] = typer.Option(None, "--config", help="JSON run configuration"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Override the configuration seed"),
    out: Optional[Path] = typer.Option(None, "--out", help="Report path"),
    pyramid: Optional[Path] = typer.Option(None, "--pyramid", help="Replay S3/S4/S5 maps from a tensor file"),
    params_file: Optional[Path] = typer.Option(None, "--params", help="Load pipeline parameters from a tensor file"),
    save_params: Optional[Path] = typer.Option(None, "--save-params", help="Write the parameter bundle"),
    variant: Optional[Variant] = typer.Option(None, "--variant", help="Run one ablation variant of the configuration"),
):
    """Run backbone stubs, the interaction block and the fusion neck end to end."""
    with reported_errors("demo"):
        cfg = load_run_config(config, {"seed": seed})
        if variant is not None:
            cfg = cfg.with_variant(variant)
        rng = SeededRng(seed=cfg.seed)
        if params_file is not None:
            params = PipelineParams.from_tensors(load_tensors(params_file), cfg)
        else:
            params = init_pipeline(cfg, rng.child(0))
        if save_params is not None:
            save_tensors(save_params, params.to_tensors())

        if pyramid is not None:
            pyr = load_pyramid(pyramid)
            validate_pyramid(pyr, cfg.channels, require_interacted=False)
            pyr = interact_pyramid(pyr, params, cfg)
            result = neck_pipeline(pyr, params.neck, cfg.fusion)
        else:
            rgb, ir = synthetic_images(cfg, rng.child(1))
            pyr, result = run_pipeline(rgb, ir, params, cfg)

        outputs = [summarize(name, getattr(result, name)) for name in ("p3", "p4", "p5")]
        interaction = [summarize("f5_rgb", pyr.f5_rgb), summarize("f5_ir", pyr.f5_ir)]
        report = DemoReport(
            seed=cfg.seed,
            image_size=cfg.image_size,
            token_grid=cfg.block.target_grid,
            n_single=cfg.block.n_single,
            direction_count=cfg.block.direction_count,
            fusion_unit=cfg.fusion.unit,
            use_interaction=cfg.fusion.use_interaction,
            outputs=outputs,
            interaction=interaction,
            determinism_hash=determinism_hash([result.p3, result.p4, result.p5, pyr.f5_rgb, pyr.f5_ir]),
        )
        path = write_report(report, resolve_output(out, cfg, "demo.json"))

    table = Table(title=f"demo (seed {cfg.seed})")
    table.add_column("map")
    table.add_column("shape")
    table.add_column("norm", justify="right")
    table.add_column("finite")
    for row in interaction + outputs:
        table.add_row(row.name, "x".join(str(d) for d in row.shape), f"{row.norm:.6g}", str(row.finite))
    console.print(table)
    console.print(f"hash {report.determinism_hash}")
    console.print(f"report written to {path}")
    if not all(np.isfinite(r.norm) and r.finite for r in outputs):
        raise typer.Exit(code=1)
