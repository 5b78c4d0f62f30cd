"""
Mamba interaction stage: single blocks (pool, MLP, four-direction S6, shortcut),
the six-direction cross block and their stack (MIB).
"""

import logging
from typing import Dict, List, Optional, Tuple
import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from models import BlockConfig, PoolMode
from services.errors import DimensionError
from services.scanpaths import apply_scan, cross_plans, global_plans, merge_directions, reverse_scan
from services.ssm import SSMGradients, SSMParams, cs6_scan, init_ssm_params, s6_backward, s6_scan
from services.tensors import (
    adaptive_pool, as_feature_map, dropout, flatten_grid, linear, silu, silu_grad, unflatten_tokens,
)
from utils.rng import SeededRng

logger = logging.getLogger("blocks")

def _readonly(v) -> np.ndarray:
    arr = np.array(v, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr

class SingleBlockParams(BaseModel):
    """MLP weights (C->h, h->C), positional embedding (L, C) and four S6 parameter sets."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    w1: np.ndarray
    w2: np.ndarray
    pos_embed: np.ndarray
    directions: List[SSMParams]

    @field_validator("w1", "w2", "pos_embed", mode="before")
    def as_matrix(cls, v, info):
        arr = _readonly(v)
        if arr.ndim != 2:
            raise ValueError(f"{info.field_name} must be a matrix, got shape {arr.shape}")
        return arr

    @model_validator(mode="after")
    def shapes_agree(self):
        c, h = self.w1.shape
        if self.w2.shape != (h, c):
            raise ValueError(f"w2 has shape {self.w2.shape}, expected {(h, c)}")
        if self.pos_embed.shape[1] != c:
            raise ValueError(f"positional embedding has {self.pos_embed.shape[1]} channels, expected {c}")
        if len(self.directions) != 4:
            raise ValueError(f"a single block scans 4 directions, got {len(self.directions)} parameter sets")
        if any(p.channels != c for p in self.directions):
            raise ValueError("direction parameters do not match the block width")
        return self

    @property
    def channels(self) -> int:
        return self.w1.shape[0]

    def to_tensors(self, prefix: str) -> Dict[str, np.ndarray]:
        out = {f"{prefix}.w1": self.w1, f"{prefix}.w2": self.w2, f"{prefix}.pos_embed": self.pos_embed}
        for i, p in enumerate(self.directions):
            out.update(p.to_tensors(f"{prefix}.directions.{i}"))
        return out

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray], prefix: str) -> "SingleBlockParams":
        return cls(
            w1=tensors[f"{prefix}.w1"],
            w2=tensors[f"{prefix}.w2"],
            pos_embed=tensors[f"{prefix}.pos_embed"],
            directions=[SSMParams.from_tensors(tensors, f"{prefix}.directions.{i}") for i in range(4)],
        )

class CrossBlockParams(BaseModel):
    """
    `first` produces Y1 (modality 2 drives the state, modality 1 the skip);
    `second` produces Y2 with the roles swapped. One entry per direction.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    first: List[SSMParams]
    second: List[SSMParams]

    @model_validator(mode="after")
    def per_direction(self):
        if len(self.first) != len(self.second) or len(self.first) not in (4, 6):
            raise ValueError("cross block needs 4 or 6 parameter sets for each output")
        return self

    @property
    def direction_count(self) -> int:
        return len(self.first)

    def to_tensors(self, prefix: str) -> Dict[str, np.ndarray]:
        out = {}
        for side in ("first", "second"):
            for i, p in enumerate(getattr(self, side)):
                out.update(p.to_tensors(f"{prefix}.{side}.{i}"))
        return out

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray], prefix: str, direction_count: int) -> "CrossBlockParams":
        return cls(**{
            side: [SSMParams.from_tensors(tensors, f"{prefix}.{side}.{i}") for i in range(direction_count)]
            for side in ("first", "second")
        })

class MIBParams(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    single_rgb: List[SingleBlockParams]
    single_ir: List[SingleBlockParams]
    cross: CrossBlockParams

    @model_validator(mode="after")
    def stacks_match(self):
        if len(self.single_rgb) != len(self.single_ir):
            raise ValueError("both modalities need the same number of single blocks")
        return self

    def to_tensors(self, prefix: str = "mib") -> Dict[str, np.ndarray]:
        out = {}
        for name in ("single_rgb", "single_ir"):
            for k, blk in enumerate(getattr(self, name)):
                out.update(blk.to_tensors(f"{prefix}.{name}.{k}"))
        out.update(self.cross.to_tensors(f"{prefix}.cross"))
        return out

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray], cfg: BlockConfig, prefix: str = "mib") -> "MIBParams":
        return cls(
            single_rgb=[SingleBlockParams.from_tensors(tensors, f"{prefix}.single_rgb.{k}") for k in range(cfg.n_single)],
            single_ir=[SingleBlockParams.from_tensors(tensors, f"{prefix}.single_ir.{k}") for k in range(cfg.n_single)],
            cross=CrossBlockParams.from_tensors(tensors, f"{prefix}.cross", cfg.direction_count),
        )

class SingleBlockGradients(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    w1: np.ndarray
    w2: np.ndarray
    pos_embed: np.ndarray
    directions: List[SSMGradients]

# Initialisation

def init_directions(count: int, cfg: BlockConfig, rng: SeededRng) -> List[SSMParams]:
    if cfg.share_directions:
        shared = init_ssm_params(cfg.channels, cfg.state_dim, rng.child(0), cfg.dt_min, cfg.dt_max)
        return [shared] * count
    return [
        init_ssm_params(cfg.channels, cfg.state_dim, rng.child(i), cfg.dt_min, cfg.dt_max)
        for i in range(count)
    ]

def init_single_block(cfg: BlockConfig, rng: SeededRng, token_count: Optional[int] = None) -> SingleBlockParams:
    c, h = cfg.channels, cfg.hidden_dim
    length = token_count if token_count is not None else cfg.target_grid[0] * cfg.target_grid[1]
    return SingleBlockParams(
        w1=rng.child(0).uniform(-1.0 / np.sqrt(c), 1.0 / np.sqrt(c), (c, h)),
        w2=rng.child(1).uniform(-1.0 / np.sqrt(h), 1.0 / np.sqrt(h), (h, c)),
        pos_embed=rng.child(2).uniform(-0.02, 0.02, (length, c)),
        directions=init_directions(4, cfg, rng.child(3)),
    )

def init_cross_block(cfg: BlockConfig, rng: SeededRng) -> CrossBlockParams:
    return CrossBlockParams(
        first=init_directions(cfg.direction_count, cfg, rng.child(0)),
        second=init_directions(cfg.direction_count, cfg, rng.child(1)),
    )

def init_mib(cfg: BlockConfig, rng: SeededRng) -> MIBParams:
    rgb = [init_single_block(cfg, rng.child(0).child(k)) for k in range(cfg.n_single)]
    ir = [init_single_block(cfg, rng.child(1).child(k)) for k in range(cfg.n_single)]
    if cfg.share_pos_embed:
        ir = [blk.model_copy(update={"pos_embed": src.pos_embed}) for blk, src in zip(ir, rgb)]
    logger.debug(f"Initialised MIB with {cfg.n_single} single blocks per modality, "
                 f"{cfg.direction_count} cross directions, N={cfg.state_dim}")
    return MIBParams(single_rgb=rgb, single_ir=ir, cross=init_cross_block(cfg, rng.child(2)))

# Forward

def pool_embed(s_in: np.ndarray, cfg: BlockConfig) -> np.ndarray:
    """F_in = avg_pool(S_in) + max_pool(S_in) onto the target token grid."""
    th, tw = cfg.target_grid
    return adaptive_pool(s_in, th, tw, PoolMode.AVG) + adaptive_pool(s_in, th, tw, PoolMode.MAX)

def mlp_drop(f_in: np.ndarray, params: SingleBlockParams, cfg: BlockConfig,
             rng: Optional[SeededRng] = None, training: bool = False) -> np.ndarray:
    f_in = as_feature_map(f_in, "F_in")
    if f_in.shape[2] != params.channels:
        raise DimensionError(f"MLP expects {params.channels} channels, got {f_in.shape[2]}")
    hidden = silu(linear(f_in, params.w1))
    return dropout(linear(hidden, params.w2), cfg.dropout, rng or SeededRng(), training)

def _block_tokens(s_in: np.ndarray, params: SingleBlockParams, cfg: BlockConfig,
                  rng: Optional[SeededRng], training: bool) -> Tuple[np.ndarray, np.ndarray]:
    f_in = pool_embed(s_in, cfg)
    f_m = mlp_drop(f_in, params, cfg, rng, training)
    tokens = flatten_grid(f_m)
    if params.pos_embed.shape != tokens.shape:
        raise DimensionError(f"positional embedding {params.pos_embed.shape} does not match tokens {tokens.shape}")
    return f_in, unflatten_tokens(tokens + params.pos_embed, f_in.shape[0], f_in.shape[1])

def single_mamba_block(s_in: np.ndarray, params: SingleBlockParams, cfg: BlockConfig,
                       rng: Optional[SeededRng] = None, training: bool = False) -> np.ndarray:
    """
    Four-direction S6 over the pooled tokens, merged by summation, plus the
    pooled F_in as shortcut. Output is on the target grid.
    """
    f_in, grid = _block_tokens(s_in, params, cfg, rng, training)
    outputs = []
    for plan, ssm in zip(global_plans(grid.shape[0], grid.shape[1]), params.directions):
        y = s6_scan(apply_scan(grid, plan), ssm, cfg.scan_mode, cfg.discretization)
        outputs.append(reverse_scan(y, plan))
    return merge_directions(outputs) + f_in

def single_mamba_block_backward(s_in: np.ndarray, params: SingleBlockParams, cfg: BlockConfig,
                                grad_out: np.ndarray) -> SingleBlockGradients:
    """Gradients of sum(grad_out * block(s_in)) in evaluation mode."""
    f_in, grid = _block_tokens(s_in, params, cfg, None, False)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != f_in.shape:
        raise DimensionError(f"upstream gradient {grad_out.shape} does not match block output {f_in.shape}")

    g_grid = np.zeros_like(grid)
    direction_grads = []
    for plan, ssm in zip(global_plans(grid.shape[0], grid.shape[1]), params.directions):
        g = s6_backward(apply_scan(grid, plan), ssm, apply_scan(grad_out, plan),
                        cfg.scan_mode, cfg.discretization)
        direction_grads.append(g)
        g_grid = g_grid + reverse_scan(g.x, plan)

    g_tokens = flatten_grid(g_grid)
    x = flatten_grid(f_in)
    z = x @ params.w1
    g_hidden = g_tokens @ params.w2.T
    g_z = g_hidden * silu_grad(z)
    return SingleBlockGradients(
        w1=x.T @ g_z,
        w2=silu(z).T @ g_tokens,
        pos_embed=g_tokens,
        directions=direction_grads,
    )

def cross_mamba_block(f1: np.ndarray, f2: np.ndarray, params: CrossBlockParams,
                      cfg: BlockConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Y1 sums the reverse-scanned CS6 runs where F2 drives the state and F1 the
    skip; Y2 is the converse. No shortcut.
    """
    f1 = as_feature_map(f1, "F1")
    f2 = as_feature_map(f2, "F2")
    if f1.shape != f2.shape:
        raise DimensionError(f"cross block inputs differ in shape: {f1.shape} vs {f2.shape}")
    plans = cross_plans(f1.shape[0], f1.shape[1], cfg.local_window, params.direction_count)
    y1, y2 = [], []
    for plan, p1, p2 in zip(plans, params.first, params.second):
        x1 = apply_scan(f1, plan)
        x2 = apply_scan(f2, plan)
        y1.append(reverse_scan(cs6_scan(x2, x1, p1, cfg.scan_mode, cfg.discretization), plan))
        y2.append(reverse_scan(cs6_scan(x1, x2, p2, cfg.scan_mode, cfg.discretization), plan))
    return merge_directions(y1), merge_directions(y2)

def mamba_interaction(f5_rgb: np.ndarray, f5_ir: np.ndarray, params: MIBParams, cfg: BlockConfig,
                      rng: Optional[SeededRng] = None,
                      training: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """n_single single blocks per modality, then one cross block."""
    f5_rgb = as_feature_map(f5_rgb, "F5_rgb")
    f5_ir = as_feature_map(f5_ir, "F5_ir")
    if f5_rgb.shape != f5_ir.shape:
        raise DimensionError(f"modality inputs differ in shape: {f5_rgb.shape} vs {f5_ir.shape}")
    rng = rng or SeededRng()
    rgb, ir = f5_rgb, f5_ir
    for k, blk in enumerate(params.single_rgb):
        rgb = single_mamba_block(rgb, blk, cfg, rng.child(0).child(k), training)
    for k, blk in enumerate(params.single_ir):
        ir = single_mamba_block(ir, blk, cfg, rng.child(1).child(k), training)
    logger.debug(f"Single stacks done ({len(params.single_rgb)} blocks), cross block on {rgb.shape}")
    return cross_mamba_block(rgb, ir, params.cross, cfg)
