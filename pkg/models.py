import math
from enum import Enum
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

class PoolMode(str, Enum):
    AVG = "avg"
    MAX = "max"

class ScanMode(str, Enum):
    SELECTIVE = "selective"
    TIME_INVARIANT = "time_invariant"

class Discretization(str, Enum):
    APPROX = "approx"  # B̄ = Δ·B
    EXACT = "exact"    # B̄ = (exp(ΔA) - 1) / A · B

class ScanDirection(str, Enum):
    ROW_FWD = "row_fwd"
    ROW_BWD = "row_bwd"
    COL_FWD = "col_fwd"
    COL_BWD = "col_bwd"
    LOCAL_FWD = "local_fwd"
    LOCAL_BWD = "local_bwd"

    @property
    def is_local(self) -> bool:
        return self in (ScanDirection.LOCAL_FWD, ScanDirection.LOCAL_BWD)

class FusionUnit(str, Enum):
    OGF = "ogf"
    CONCAT = "concat"  # channel concatenation + 1x1 ConvBlock

class Variant(str, Enum):
    """Module combinations of the ablation study."""
    BASELINE = "baseline"
    MIB = "mib"
    OGF = "ogf"
    MIB_LS = "mib_ls"
    MIB_OGF = "mib_ogf"
    FULL = "full"

class RetentionMode(str, Enum):
    LITERAL = "literal"
    CLAMPED = "clamped"

class MagnitudeNorm(str, Enum):
    CHEBYSHEV = "chebyshev"
    EUCLIDEAN = "euclidean"

def check_local_window(grid: Tuple[int, int], window: Tuple[int, int]) -> Optional[str]:
    """Return a description of the violated window constraint, or None."""
    for axis, size, win in (("height", grid[0], window[0]), ("width", grid[1], window[1])):
        if win < 1:
            return f"window {axis} must be positive"
        if size % win != 0:
            return f"window {axis} {win} does not divide grid {axis} {size}"
        if win > math.ceil(size / 3):
            return f"window {axis} {win} exceeds one third of grid {axis} {size} (max {math.ceil(size / 3)})"
    return None

# Run configuration

class ChannelPlan(BaseModel):
    """Channels of the S3/S4/S5 pyramid levels."""
    c3: int = Field(default=32, gt=0)
    c4: int = Field(default=64, gt=0)
    c5: int = Field(default=128, gt=0)

class BlockConfig(BaseModel):
    """
    Mamba interaction block settings. Defaults are the best configuration of
    the patch/window study (8x8 token grid, 2x2 local windows) and three
    stacked single blocks.
    """
    target_grid: Tuple[int, int] = (8, 8)
    channels: int = Field(default=128, gt=0)
    hidden: Optional[int] = Field(default=None, gt=0)
    state_dim: int = Field(default=16, gt=0)
    dropout: float = Field(default=0.1, ge=0.0, lt=1.0)
    n_single: int = Field(default=3, ge=0)
    local_window: Tuple[int, int] = (2, 2)
    direction_count: Literal[4, 6] = 6
    scan_mode: ScanMode = ScanMode.SELECTIVE
    discretization: Discretization = Discretization.APPROX
    share_directions: bool = False
    share_pos_embed: bool = False
    dt_min: float = Field(default=0.01, gt=0.0)
    dt_max: float = Field(default=0.1, gt=0.0)

    @property
    def hidden_dim(self) -> int:
        return self.hidden if self.hidden is not None else 2 * self.channels

    @field_validator("target_grid")
    def grid_must_be_positive(cls, v):
        if min(v) < 1:
            raise ValueError("target grid dimensions must be positive")
        return v

    @model_validator(mode="after")
    def window_fits_grid(self):
        problem = check_local_window(self.target_grid, self.local_window)
        if problem:
            raise ValueError(problem)
        if self.dt_min > self.dt_max:
            raise ValueError("dt_min must not exceed dt_max")
        return self

class FusionConfig(BaseModel):
    branch_count: int = Field(default=2, ge=1)
    unit: FusionUnit = FusionUnit.OGF
    # false hands S5 to the neck without the mamba interaction stage
    use_interaction: bool = True
    upsample: Literal["nearest"] = "nearest"
    downsample_stride: Literal[2] = 2

class OffsetConfig(BaseModel):
    gate: float = Field(default=20.0, gt=0.0)
    retention_mode: RetentionMode = RetentionMode.CLAMPED
    norm: MagnitudeNorm = MagnitudeNorm.CHEBYSHEV
    levels: List[int] = Field(default_factory=lambda: [8, 16, 32])
    # lower edges; the last bin is unbounded above
    bin_edges: List[float] = Field(default_factory=lambda: [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 10.0])
    reference_modality: str = "ir"
    moving_modality: str = "rgb"

    @field_validator("levels")
    def levels_positive(cls, v):
        if not v or min(v) <= 0:
            raise ValueError("block sizes must be positive")
        return v

    @field_validator("bin_edges")
    def edges_partition(cls, v):
        if not v or v[0] != 0.0 or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("bin edges must start at 0 and increase strictly")
        return v

class RunConfig(BaseModel):
    image_size: Tuple[int, int] = (640, 640)
    channels: ChannelPlan = Field(default_factory=ChannelPlan)
    block: BlockConfig = Field(default_factory=BlockConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    offsets: OffsetConfig = Field(default_factory=OffsetConfig)
    seed: int = Field(default=0, ge=0)
    output: Optional[Path] = None

    @field_validator("image_size")
    def divisible_by_32(cls, v):
        if min(v) < 32 or v[0] % 32 or v[1] % 32:
            raise ValueError("image size must be a positive multiple of 32")
        return v

    @model_validator(mode="after")
    def sub_configs_agree(self):
        if self.block.channels != self.channels.c5:
            raise ValueError(f"block.channels ({self.block.channels}) must equal channels.c5 ({self.channels.c5})")
        s5 = (self.image_size[0] // 32, self.image_size[1] // 32)
        if s5[0] < self.block.target_grid[0] or s5[1] < self.block.target_grid[1]:
            raise ValueError(f"S5 map {s5} is smaller than the token grid {self.block.target_grid}")
        if self.block.n_single == 0:
            problem = check_local_window(s5, self.block.local_window)
            if problem and self.block.direction_count == 6:
                raise ValueError(f"with n_single = 0 the cross block scans S5 directly: {problem}")
        return self

    @property
    def token_count(self) -> int:
        return self.block.target_grid[0] * self.block.target_grid[1]

    def with_variant(self, variant: "Variant") -> "RunConfig":
        """Copy with the interaction stage, local scans and fusion unit set for one ablation variant."""
        use_interaction, direction_count, unit = VARIANTS[Variant(variant)]
        return self.model_copy(update={
            "block": self.block.model_copy(update={"direction_count": direction_count}),
            "fusion": self.fusion.model_copy(update={"unit": unit, "use_interaction": use_interaction}),
        })

# (use_interaction, cross block directions, fusion unit); without the MIB the direction count is unused
VARIANTS: Dict[Variant, Tuple[bool, int, FusionUnit]] = {
    Variant.BASELINE: (False, 4, FusionUnit.CONCAT),
    Variant.MIB: (True, 4, FusionUnit.CONCAT),
    Variant.OGF: (False, 4, FusionUnit.OGF),
    Variant.MIB_LS: (True, 6, FusionUnit.CONCAT),
    Variant.MIB_OGF: (True, 4, FusionUnit.OGF),
    Variant.FULL: (True, 6, FusionUnit.OGF),
}

# Offsets

class Box(BaseModel):
    """Axis-aligned box; (x, y) is the top-left corner in pixels."""
    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    w: float
    h: float

    @field_validator("w", "h")
    def size_positive(cls, v):
        if not v > 0:
            raise ValueError("box width and height must be positive")
        return v

    @property
    def center(self) -> Tuple[float, float]:
        return self.x + self.w / 2.0, self.y + self.h / 2.0

class Annotation(BaseModel):
    """One line of the annotation file."""
    model_config = ConfigDict(populate_by_name=True)

    image_id: str
    modality: str
    object_id: Optional[str] = None
    x: float
    y: float
    w: float
    h: float
    class_name: str = Field(default="object", alias="class")

    @field_validator("image_id", "object_id", mode="before")
    def ids_as_text(cls, v):
        return None if v is None else str(v)

    @field_validator("w", "h")
    def size_positive(cls, v):
        if not v > 0:
            raise ValueError("box width and height must be positive")
        return v

    @property
    def box(self) -> Box:
        return Box(x=self.x, y=self.y, w=self.w, h=self.h)

class OffsetRecord(BaseModel):
    object_id: str
    image_id: str = ""
    box_a: Box
    box_b: Box
    dx: float
    dy: float

    @field_validator("dx", "dy")
    def finite(cls, v):
        if not math.isfinite(v):
            raise ValueError("offset components must be finite")
        return v

class MatchResult(BaseModel):
    records: List[OffsetRecord] = Field(default_factory=list)
    unmatched_a: List[int] = Field(default_factory=list)
    unmatched_b: List[int] = Field(default_factory=list)

class OffsetHistogram(BaseModel):
    bin_edges: List[float]
    counts: List[int]
    total: int
    misaligned: int
    misaligned_fraction: float
    within_1_to_5_fraction: float
    norm: MagnitudeNorm = MagnitudeNorm.CHEBYSHEV

class RetentionRow(BaseModel):
    level: int
    mean_retention: float

class OffsetReport(BaseModel):
    source: str
    images: int
    matched: int
    unmatched_reference: int
    unmatched_moving: int
    gate: float
    histogram: OffsetHistogram
    retention_mode: RetentionMode
    retention: List[RetentionRow]
    warnings: List[str] = Field(default_factory=list)

# Harness reports

class MapSummary(BaseModel):
    name: str
    shape: Tuple[int, int, int]
    norm: float
    finite: bool

class DemoReport(BaseModel):
    seed: int
    image_size: Tuple[int, int]
    token_grid: Tuple[int, int]
    n_single: int
    direction_count: int = 6
    fusion_unit: FusionUnit = FusionUnit.OGF
    use_interaction: bool = True
    outputs: List[MapSummary]
    interaction: List[MapSummary]
    determinism_hash: str

class SuiteResult(BaseModel):
    module: str
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0

class CheckReport(BaseModel):
    filter: Optional[str] = None
    passed: bool
    total: int
    failed: int
    results: List[SuiteResult]

class FlopReport(BaseModel):
    """Multiply-add counts of the interaction stage (no timers involved)."""
    token_length: int
    channels: int
    state_dim: int
    hidden: int
    n_single: int
    direction_count: int
    mamba: Dict[str, int]
    attention: Dict[str, int]
    mamba_total: int
    attention_total: int
    attention_quadratic: int
    attention_linear: int
    ratio: float
    neck_macs: int = 0
    use_interaction: bool = True

    @model_validator(mode="after")
    def totals_are_sums(self):
        if any(v < 0 for v in list(self.mamba.values()) + list(self.attention.values())):
            raise ValueError("counts must be non-negative")
        if self.mamba_total != sum(self.mamba.values()):
            raise ValueError("mamba_total must equal the sum of its components")
        if self.attention_total != sum(self.attention.values()):
            raise ValueError("attention_total must equal the sum of its components")
        if self.attention_quadratic + self.attention_linear != self.attention_total:
            raise ValueError("attention split must add up to the total")
        return self

class SweepRow(BaseModel):
    target_grid: Tuple[int, int]
    local_window: Tuple[int, int]
    n_single: int
    mamba_total: int
    attention_total: int
    ratio: float

class AblationRow(BaseModel):
    variant: Variant
    use_interaction: bool
    direction_count: int
    fusion_unit: FusionUnit
    interaction_macs: int
    neck_macs: int
    total_macs: int

class BenchReport(BaseModel):
    estimate: FlopReport
    sweep: List[SweepRow] = Field(default_factory=list)
    ablation: List[AblationRow] = Field(default_factory=list)
