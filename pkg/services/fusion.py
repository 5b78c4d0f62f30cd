"""
Offset-guided fusion neck and the backbone stubs that feed it.

All convolutions are bias-free and kernels use the (kh, kw, c_in, c_out)
layout of services.tensors.conv2d.
"""

import logging
from typing import Dict, List, Optional, Tuple
import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from models import ChannelPlan, FusionConfig, FusionUnit, MapSummary, PoolMode, RunConfig
from services.blocks import MIBParams, init_mib, mamba_interaction
from services.errors import ConfigError, DimensionError, GeometryError
from services.tensors import (
    adaptive_pool, as_feature_map, concat_channels, conv2d, silu, upsample_nearest,
)
from utils.rng import SeededRng

logger = logging.getLogger("fusion")

def _kernel(v, name: str) -> np.ndarray:
    arr = np.array(v, dtype=np.float64, copy=True)
    if arr.ndim != 4:
        raise ValueError(f"{name} must have shape (kh, kw, c_in, c_out), got {arr.shape}")
    arr.setflags(write=False)
    return arr

class OGFWeights(BaseModel):
    """One 3x3 ConvBlock kernel per branch plus the shared 1x1 RepBlock."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    branches: List[np.ndarray]
    rep: np.ndarray

    @field_validator("branches", mode="before")
    def branch_kernels(cls, v):
        return [_kernel(k, "branch kernel") for k in v]

    @field_validator("rep", mode="before")
    def rep_kernel(cls, v):
        return _kernel(v, "rep kernel")

    @model_validator(mode="after")
    def widths_agree(self):
        if not self.branches:
            raise ValueError("at least one branch is required")
        c_out = self.branches[0].shape[3]
        if any(k.shape != self.branches[0].shape for k in self.branches):
            raise ValueError("all branch kernels must share one shape")
        if self.rep.shape != (1, 1, c_out, c_out):
            raise ValueError(f"rep kernel must be (1, 1, {c_out}, {c_out}), got {self.rep.shape}")
        return self

class NeckWeights(BaseModel):
    """Neck kernels; each of scales 4 and 3 carries either an OGF unit or a 1x1 concat kernel."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    top5: np.ndarray
    ogf4: Optional[OGFWeights] = None
    ogf3: Optional[OGFWeights] = None
    fuse4: Optional[np.ndarray] = None
    fuse3: Optional[np.ndarray] = None
    down3: np.ndarray
    merge4: np.ndarray
    down4: np.ndarray
    merge5: np.ndarray

    @field_validator("top5", "down3", "merge4", "down4", "merge5", mode="before")
    def kernels(cls, v, info):
        return _kernel(v, info.field_name)

    @field_validator("fuse4", "fuse3", mode="before")
    def concat_kernels(cls, v, info):
        if v is None:
            return None
        arr = _kernel(v, info.field_name)
        if arr.shape[:2] != (1, 1):
            raise ValueError(f"{info.field_name} must be a 1x1 kernel, got {arr.shape}")
        return arr

    @model_validator(mode="after")
    def one_unit_per_scale(self):
        for level in (4, 3):
            has_ogf = getattr(self, f"ogf{level}") is not None
            has_concat = getattr(self, f"fuse{level}") is not None
            if has_ogf == has_concat:
                raise ValueError(f"scale {level} needs exactly one of ogf{level} and fuse{level}")
        if (self.ogf4 is None) != (self.ogf3 is None):
            raise ValueError("scales 4 and 3 must use the same fusion unit")
        return self

    @property
    def unit(self) -> FusionUnit:
        return FusionUnit.OGF if self.ogf4 is not None else FusionUnit.CONCAT

class BackboneWeights(BaseModel):
    """Stem (stride 1 after the /8 pooling) and two stride-2 stages."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    stem: np.ndarray
    stage4: np.ndarray
    stage5: np.ndarray

    @field_validator("stem", "stage4", "stage5", mode="before")
    def kernels(cls, v, info):
        return _kernel(v, info.field_name)

class PipelineParams(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    backbone_rgb: BackboneWeights
    backbone_ir: BackboneWeights
    mib: MIBParams
    neck: NeckWeights

    def to_tensors(self) -> Dict[str, np.ndarray]:
        out = {}
        for name in ("backbone_rgb", "backbone_ir"):
            weights = getattr(self, name)
            for field in BackboneWeights.model_fields:
                out[f"{name}.{field}"] = getattr(weights, field)
        out.update(self.mib.to_tensors("mib"))
        for field in ("top5", "down3", "merge4", "down4", "merge5"):
            out[f"neck.{field}"] = getattr(self.neck, field)
        for level in (4, 3):
            ogf = getattr(self.neck, f"ogf{level}")
            if ogf is None:
                out[f"neck.fuse{level}"] = getattr(self.neck, f"fuse{level}")
                continue
            for i, k in enumerate(ogf.branches):
                out[f"neck.ogf{level}.branches.{i}"] = k
            out[f"neck.ogf{level}.rep"] = ogf.rep
        return out

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray], cfg: RunConfig) -> "PipelineParams":
        try:
            return cls.assemble(tensors, cfg)
        except KeyError as e:
            raise ConfigError(f"parameter file lacks tensor {e.args[0]}", "tensors") from e
        except ValidationError as e:
            raise ConfigError(e.errors()[0]["msg"], "tensors") from e

    @classmethod
    def assemble(cls, tensors: Dict[str, np.ndarray], cfg: RunConfig) -> "PipelineParams":
        def backbone(name):
            return BackboneWeights(**{f: tensors[f"{name}.{f}"] for f in BackboneWeights.model_fields})

        def ogf(unit):
            return OGFWeights(
                branches=[tensors[f"neck.{unit}.branches.{i}"] for i in range(cfg.fusion.branch_count)],
                rep=tensors[f"neck.{unit}.rep"],
            )

        if cfg.fusion.unit == FusionUnit.OGF:
            units = {"ogf4": ogf("ogf4"), "ogf3": ogf("ogf3")}
        else:
            units = {"fuse4": tensors["neck.fuse4"], "fuse3": tensors["neck.fuse3"]}
        neck = NeckWeights(
            **units,
            **{f: tensors[f"neck.{f}"] for f in ("top5", "down3", "merge4", "down4", "merge5")},
        )
        return cls(
            backbone_rgb=backbone("backbone_rgb"),
            backbone_ir=backbone("backbone_ir"),
            mib=MIBParams.from_tensors(tensors, cfg.block, "mib"),
            neck=neck,
        )

class PyramidSet(BaseModel):
    """S3/S4/S5 per modality (H/8, H/16, H/32) plus the interacted scale-5 pair."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    s3_rgb: np.ndarray
    s4_rgb: np.ndarray
    s5_rgb: np.ndarray
    s3_ir: np.ndarray
    s4_ir: np.ndarray
    s5_ir: np.ndarray
    f5_rgb: Optional[np.ndarray] = None
    f5_ir: Optional[np.ndarray] = None

    def maps(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.model_fields if getattr(self, name) is not None}

class NeckOutput(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    p3: np.ndarray
    p4: np.ndarray
    p5: np.ndarray
    p4_top: np.ndarray
    top5: np.ndarray

def validate_pyramid(pyr: PyramidSet, channels: Optional[ChannelPlan] = None,
                     require_interacted: bool = True) -> None:
    """Raise GeometryError unless each level halves the previous and modalities agree."""
    for level in ("s3", "s4", "s5"):
        a = as_feature_map(getattr(pyr, f"{level}_rgb"), f"{level}_rgb")
        b = as_feature_map(getattr(pyr, f"{level}_ir"), f"{level}_ir")
        if a.shape[:2] != b.shape[:2]:
            raise GeometryError(f"{level} modalities differ in size: {a.shape[:2]} vs {b.shape[:2]}")
        if channels is not None:
            expected = getattr(channels, f"c{level[1]}")
            if a.shape[2] != expected or b.shape[2] != expected:
                raise GeometryError(f"{level} maps must have {expected} channels")
    for fine, coarse in (("s3", "s4"), ("s4", "s5")):
        hf, wf = getattr(pyr, f"{fine}_rgb").shape[:2]
        hc, wc = getattr(pyr, f"{coarse}_rgb").shape[:2]
        if (hf, wf) != (2 * hc, 2 * wc):
            raise GeometryError(f"{coarse} ({hc}x{wc}) is not half of {fine} ({hf}x{wf})")
    if require_interacted and (pyr.f5_rgb is None or pyr.f5_ir is None):
        raise GeometryError("pyramid lacks the interacted scale-5 pair")

# Sub-blocks

def conv_block(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """3x3 conv (padding 1) + SiLU."""
    return silu(conv2d(x, kernel, stride=1, padding=kernel.shape[0] // 2))

def rep_block(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """1x1 channel reconstruction."""
    return conv2d(x, kernel)

def downsample(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Stride-2 3x3 conv + SiLU."""
    return silu(conv2d(x, kernel, stride=2, padding=kernel.shape[0] // 2))

def align_high(f_high: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Nearest realignment of a guidance map onto the spatial grid of `target`."""
    target = as_feature_map(target, "target")
    return upsample_nearest(f_high, target.shape[0], target.shape[1])

def ogf_unit(f_high: np.ndarray, s_low_rgb: np.ndarray, s_low_ir: np.ndarray,
             weights: OGFWeights, cfg: Optional[FusionConfig] = None) -> np.ndarray:
    """
    Sum over branches of ConvBlock_i(x) + RepBlock(ConvBlock_i(x)), with
    x = concat(F_high, S_rgb, S_ir). F_high must already be aligned.
    """
    if cfg is not None and len(weights.branches) != cfg.branch_count:
        raise DimensionError(f"fusion expects {cfg.branch_count} branches, weights provide {len(weights.branches)}")
    x = concat_channels([f_high, s_low_rgb, s_low_ir])
    if weights.branches[0].shape[2] != x.shape[2]:
        raise DimensionError(f"branch kernels expect {weights.branches[0].shape[2]} channels, "
                             f"concatenation has {x.shape[2]}")
    out = None
    for kernel in weights.branches:
        cb = conv_block(x, kernel)
        term = cb + rep_block(cb, weights.rep)
        out = term if out is None else out + term
    return out

def concat_fusion(f_high: np.ndarray, s_low_rgb: np.ndarray, s_low_ir: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Plain fusion: 1x1 ConvBlock over concat(F_high, S_rgb, S_ir)."""
    x = concat_channels([f_high, s_low_rgb, s_low_ir])
    if kernel.shape[2] != x.shape[2]:
        raise DimensionError(f"fusion kernel expects {kernel.shape[2]} channels, concatenation has {x.shape[2]}")
    return conv_block(x, kernel)

def fuse_level(f_high: np.ndarray, s_low_rgb: np.ndarray, s_low_ir: np.ndarray, weights: NeckWeights,
               level: int, cfg: Optional[FusionConfig] = None) -> np.ndarray:
    """Fuse one scale with whichever unit the neck weights carry."""
    if cfg is not None and cfg.unit != weights.unit:
        raise ConfigError(f"neck weights hold {weights.unit.value} units, configuration asks for {cfg.unit.value}",
                          "fusion.unit")
    ogf = getattr(weights, f"ogf{level}")
    if ogf is not None:
        return ogf_unit(f_high, s_low_rgb, s_low_ir, ogf, cfg)
    return concat_fusion(f_high, s_low_rgb, s_low_ir, getattr(weights, f"fuse{level}"))

def neck_pipeline(pyr: PyramidSet, weights: NeckWeights, cfg: Optional[FusionConfig] = None) -> NeckOutput:
    """Top-down fusion at scales 5 -> 4 -> 3, then bottom-up aggregation back to scale 5."""
    validate_pyramid(pyr)
    s4_hw = pyr.s4_rgb.shape[:2]
    s3_hw = pyr.s3_rgb.shape[:2]

    top5 = conv_block(concat_channels([align_high(pyr.f5_rgb, pyr.s5_rgb),
                                       align_high(pyr.f5_ir, pyr.s5_ir)]), weights.top5)
    p4_top = fuse_level(upsample_nearest(top5, *s4_hw), pyr.s4_rgb, pyr.s4_ir, weights, 4, cfg)
    p3 = fuse_level(upsample_nearest(p4_top, *s3_hw), pyr.s3_rgb, pyr.s3_ir, weights, 3, cfg)
    p4 = conv_block(concat_channels([downsample(p3, weights.down3), p4_top]), weights.merge4)
    p5 = conv_block(concat_channels([downsample(p4, weights.down4), top5]), weights.merge5)
    logger.debug(f"Neck outputs P3 {p3.shape}, P4 {p4.shape}, P5 {p5.shape}")
    return NeckOutput(p3=p3, p4=p4, p5=p5, p4_top=p4_top, top5=top5)

def backbone_stub(image: np.ndarray, weights: BackboneWeights) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Average-pool by 8, then conv stages to S3 (/8), S4 (/16), S5 (/32)."""
    image = as_feature_map(image, "image")
    h, w = image.shape[:2]
    if h % 32 or w % 32:
        raise GeometryError(f"image size {h}x{w} is not divisible by 32")
    s3 = conv_block(adaptive_pool(image, h // 8, w // 8, PoolMode.AVG), weights.stem)
    s4 = downsample(s3, weights.stage4)
    s5 = downsample(s4, weights.stage5)
    return s3, s4, s5

# Initialisation and end-to-end run

def _he(rng: SeededRng, shape: Tuple[int, ...]) -> np.ndarray:
    fan_in = shape[0] * shape[1] * shape[2]
    bound = np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, shape)

def init_backbone(in_channels: int, channels: ChannelPlan, rng: SeededRng) -> BackboneWeights:
    return BackboneWeights(
        stem=_he(rng.child(0), (3, 3, in_channels, channels.c3)),
        stage4=_he(rng.child(1), (3, 3, channels.c3, channels.c4)),
        stage5=_he(rng.child(2), (3, 3, channels.c4, channels.c5)),
    )

def init_ogf(c_in: int, c_out: int, cfg: FusionConfig, rng: SeededRng) -> OGFWeights:
    return OGFWeights(
        branches=[_he(rng.child(i), (3, 3, c_in, c_out)) for i in range(cfg.branch_count)],
        rep=_he(rng.child(cfg.branch_count), (1, 1, c_out, c_out)),
    )

def init_neck(channels: ChannelPlan, cfg: FusionConfig, rng: SeededRng) -> NeckWeights:
    c3, c4, c5 = channels.c3, channels.c4, channels.c5
    if cfg.unit == FusionUnit.OGF:
        units = {"ogf4": init_ogf(c5 + 2 * c4, c4, cfg, rng.child(1)),
                 "ogf3": init_ogf(c4 + 2 * c3, c3, cfg, rng.child(2))}
    else:
        units = {"fuse4": _he(rng.child(1), (1, 1, c5 + 2 * c4, c4)),
                 "fuse3": _he(rng.child(2), (1, 1, c4 + 2 * c3, c3))}
    return NeckWeights(
        top5=_he(rng.child(0), (3, 3, 2 * c5, c5)),
        **units,
        down3=_he(rng.child(3), (3, 3, c3, c3)),
        merge4=_he(rng.child(4), (3, 3, c3 + c4, c4)),
        down4=_he(rng.child(5), (3, 3, c4, c4)),
        merge5=_he(rng.child(6), (3, 3, c4 + c5, c5)),
    )

def init_pipeline(cfg: RunConfig, rng: SeededRng, rgb_channels: int = 3, ir_channels: int = 1) -> PipelineParams:
    return PipelineParams(
        backbone_rgb=init_backbone(rgb_channels, cfg.channels, rng.child(0)),
        backbone_ir=init_backbone(ir_channels, cfg.channels, rng.child(1)),
        mib=init_mib(cfg.block, rng.child(2)),
        neck=init_neck(cfg.channels, cfg.fusion, rng.child(3)),
    )

def interact_pyramid(pyr: PyramidSet, params: PipelineParams, cfg: RunConfig,
                     rng: Optional[SeededRng] = None, training: bool = False) -> PyramidSet:
    """Fill in the interacted scale-5 pair by running the MIB on S5 (or copying S5 when the stage is off)."""
    if not cfg.fusion.use_interaction:
        logger.debug("Interaction stage disabled, S5 goes to the neck unchanged")
        return pyr.model_copy(update={"f5_rgb": pyr.s5_rgb.copy(), "f5_ir": pyr.s5_ir.copy()})
    f5_rgb, f5_ir = mamba_interaction(pyr.s5_rgb, pyr.s5_ir, params.mib, cfg.block, rng, training)
    return pyr.model_copy(update={"f5_rgb": f5_rgb, "f5_ir": f5_ir})

def run_pipeline(rgb: np.ndarray, ir: np.ndarray, params: PipelineParams, cfg: RunConfig,
                 rng: Optional[SeededRng] = None, training: bool = False) -> Tuple[PyramidSet, NeckOutput]:
    """Backbone stubs, then the interaction stage, then the fusion neck."""
    s3_rgb, s4_rgb, s5_rgb = backbone_stub(rgb, params.backbone_rgb)
    s3_ir, s4_ir, s5_ir = backbone_stub(ir, params.backbone_ir)
    pyr = PyramidSet(s3_rgb=s3_rgb, s4_rgb=s4_rgb, s5_rgb=s5_rgb, s3_ir=s3_ir, s4_ir=s4_ir, s5_ir=s5_ir)
    pyr = interact_pyramid(pyr, params, cfg, rng, training)
    return pyr, neck_pipeline(pyr, params.neck, cfg.fusion)

def summarize(name: str, x: np.ndarray) -> MapSummary:
    return MapSummary(
        name=name,
        shape=tuple(int(d) for d in x.shape),
        norm=float(np.linalg.norm(x)),
        finite=bool(np.all(np.isfinite(x))),
    )

def _conv_macs(out_h: int, out_w: int, kernel: Tuple[int, int, int, int]) -> int:
    kh, kw, c_in, c_out = kernel
    return out_h * out_w * kh * kw * c_in * c_out

def _fusion_macs(out_h: int, out_w: int, c_in: int, c_out: int, cfg: FusionConfig) -> int:
    if cfg.unit == FusionUnit.CONCAT:
        return _conv_macs(out_h, out_w, (1, 1, c_in, c_out))
    n = cfg.branch_count
    return n * (_conv_macs(out_h, out_w, (3, 3, c_in, c_out)) + _conv_macs(out_h, out_w, (1, 1, c_out, c_out)))

def neck_macs(cfg: RunConfig) -> Dict[str, int]:
    """Multiply-adds of the fusion neck at the configured image size."""
    h, w = cfg.image_size
    c3, c4, c5 = cfg.channels.c3, cfg.channels.c4, cfg.channels.c5
    h3, w3, h4, w4, h5, w5 = h // 8, w // 8, h // 16, w // 16, h // 32, w // 32
    return {
        "top5": _conv_macs(h5, w5, (3, 3, 2 * c5, c5)),
        "fuse4": _fusion_macs(h4, w4, c5 + 2 * c4, c4, cfg.fusion),
        "fuse3": _fusion_macs(h3, w3, c4 + 2 * c3, c3, cfg.fusion),
        "down3": _conv_macs(h4, w4, (3, 3, c3, c3)),
        "merge4": _conv_macs(h4, w4, (3, 3, c3 + c4, c4)),
        "down4": _conv_macs(h5, w5, (3, 3, c4, c4)),
        "merge5": _conv_macs(h5, w5, (3, 3, c4 + c5, c5)),
    }
