"""
Analytic multiply-add counts for the interaction stage and for a
cross-attention replacement of it at matched dimensions.

Counts follow the operand shapes of the implemented operations; nothing is
timed. Every mamba term is linear in the token count L; the attention model
has an L^2·C part (scores and weighted sums) and an L·C^2 part (projections
and MLP).
"""

import logging
from typing import Dict, List, Optional, Tuple

from models import VARIANTS, AblationRow, BlockConfig, FlopReport, RunConfig, SweepRow
from services.errors import ParameterError
from services.fusion import neck_macs
from services.ssm import scan_macs

logger = logging.getLogger("flops")

SWEEP_GRIDS: List[Tuple[Tuple[int, int], Tuple[int, int]]] = [
    ((6, 6), (2, 2)),
    ((8, 8), (2, 2)),
    ((9, 9), (3, 3)),
    ((10, 10), (2, 2)),
    ((20, 20), (4, 4)),
]
SWEEP_STACK_DEPTHS = (0, 1, 2, 3, 4)

def interaction_token_length(cfg: RunConfig) -> int:
    """Tokens per scan: the pooled grid, or the raw S5 map when no single block pools it."""
    if cfg.block.n_single == 0:
        return (cfg.image_size[0] // 32) * (cfg.image_size[1] // 32)
    return cfg.token_count

def mamba_breakdown(length: int, block: BlockConfig) -> Dict[str, int]:
    c, n, h = block.channels, block.state_dim, block.hidden_dim
    per_scan = scan_macs(length, c, n, block.scan_mode)
    stacks = 2 * block.n_single
    return {
        "single_mlp": stacks * 2 * length * c * h,
        "single_scan": stacks * 4 * per_scan,
        "cross_scan": 2 * block.direction_count * per_scan,
    }

def attention_breakdown(length: int, block: BlockConfig) -> Dict[str, int]:
    """
    n self-attention blocks per modality (Q/K/V/output projections, scores,
    weighted sum, MLP) followed by one cross-attention block run in both
    directions.
    """
    c, h = block.channels, block.hidden_dim
    stacks = 2 * block.n_single
    return {
        "single_projection": stacks * 4 * length * c * c,
        "single_attention": stacks * 2 * length * length * c,
        "single_mlp": stacks * 2 * length * c * h,
        "cross_projection": 2 * 4 * length * c * c,
        "cross_attention": 2 * 2 * length * length * c,
    }

QUADRATIC_TERMS = ("single_attention", "cross_attention")

def flop_estimate(cfg: RunConfig, token_length: Optional[int] = None, include_neck: bool = True) -> FlopReport:
    length = interaction_token_length(cfg) if token_length is None else token_length
    if length < 1:
        raise ParameterError(f"token length must be at least 1, got {length}")
    block = cfg.block
    mamba = mamba_breakdown(length, block)
    attention = attention_breakdown(length, block)
    if not cfg.fusion.use_interaction:
        mamba = {k: 0 for k in mamba}
        attention = {k: 0 for k in attention}
    quadratic = sum(attention[k] for k in QUADRATIC_TERMS)
    mamba_total = sum(mamba.values())
    attention_total = sum(attention.values())
    logger.debug(f"L={length}: mamba {mamba_total} MACs, attention {attention_total} MACs")
    return FlopReport(
        token_length=length,
        channels=block.channels,
        state_dim=block.state_dim,
        hidden=block.hidden_dim,
        n_single=block.n_single,
        direction_count=block.direction_count,
        mamba=mamba,
        attention=attention,
        mamba_total=mamba_total,
        attention_total=attention_total,
        attention_quadratic=quadratic,
        attention_linear=attention_total - quadratic,
        ratio=mamba_total / attention_total if attention_total else 0.0,
        neck_macs=sum(neck_macs(cfg).values()) if include_neck else 0,
        use_interaction=cfg.fusion.use_interaction,
    )

def _sweep_row(cfg: RunConfig) -> SweepRow:
    report = flop_estimate(cfg, include_neck=False)
    return SweepRow(
        target_grid=cfg.block.target_grid,
        local_window=cfg.block.local_window,
        n_single=cfg.block.n_single,
        mamba_total=report.mamba_total,
        attention_total=report.attention_total,
        ratio=report.ratio,
    )

def flop_sweep(cfg: RunConfig) -> List[SweepRow]:
    """Rows for the grid/window study and for stack depths 0..4 at the configured grid."""
    rows = []
    for grid, window in SWEEP_GRIDS:
        block = cfg.block.model_copy(update={"target_grid": grid, "local_window": window})
        rows.append(_sweep_row(cfg.model_copy(update={"block": block})))
    for depth in SWEEP_STACK_DEPTHS:
        block = cfg.block.model_copy(update={"n_single": depth})
        rows.append(_sweep_row(cfg.model_copy(update={"block": block})))
    return rows

def ablation_table(cfg: RunConfig) -> List[AblationRow]:
    """Interaction and neck multiply-adds for every ablation variant of the configuration."""
    rows = []
    for variant in VARIANTS:
        variant_cfg = cfg.with_variant(variant)
        report = flop_estimate(variant_cfg)
        rows.append(AblationRow(
            variant=variant,
            use_interaction=variant_cfg.fusion.use_interaction,
            direction_count=variant_cfg.block.direction_count,
            fusion_unit=variant_cfg.fusion.unit,
            interaction_macs=report.mamba_total,
            neck_macs=report.neck_macs,
            total_macs=report.mamba_total + report.neck_macs,
        ))
    return rows
