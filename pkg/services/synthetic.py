"""
Seeded synthetic inputs: image pairs, random pyramids and constructed
annotation sets with a chosen distribution of offset magnitudes.
"""

from typing import List, Optional, Sequence, Tuple
import numpy as np

from models import Annotation, RunConfig
from services.fusion import PyramidSet
from utils.rng import SeededRng

def synthetic_images(cfg: RunConfig, rng: SeededRng, rgb_channels: int = 3,
                     ir_channels: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    h, w = cfg.image_size
    return (rng.child(0).uniform(0.0, 1.0, (h, w, rgb_channels)),
            rng.child(1).uniform(0.0, 1.0, (h, w, ir_channels)))

def synthetic_pyramid(cfg: RunConfig, rng: SeededRng) -> PyramidSet:
    """Random S3/S4/S5 maps per modality with the configured channel plan."""
    h, w = cfg.image_size
    maps = {}
    for m, modality in enumerate(("rgb", "ir")):
        for level, stride, channels in ((3, 8, cfg.channels.c3), (4, 16, cfg.channels.c4), (5, 32, cfg.channels.c5)):
            maps[f"s{level}_{modality}"] = rng.child(m).child(level).normal((h // stride, w // stride, channels))
    return PyramidSet(**maps)

# Annotation fixtures

METHODOLOGY_MAGNITUDES: List[int] = [1] * 63 + [2] * 63 + [3] * 63 + [4] * 63 + [5] * 63 + [7] * 35

def _shift(k: int, m: int) -> Tuple[int, int]:
    """Integer displacement with Chebyshev magnitude exactly m."""
    if m == 0:
        return 0, 0
    dx = m if k % 2 == 0 else -m
    dy = (k % (2 * m + 1)) - m
    return dx, dy

def offset_fixture(magnitudes: Sequence[int], total: int = 1000, images: int = 10,
                   spacing: int = 60, box: Tuple[int, int] = (24, 24), origin: int = 40,
                   reference: str = "ir", moving: str = "rgb") -> List[Annotation]:
    """
    `total` objects laid out on a square grid per image, spacing well above the
    20 px default gate. The first len(magnitudes) objects get the listed
    Chebyshev offsets; the rest are aligned.
    """
    if len(magnitudes) > total:
        raise ValueError("more magnitudes than objects")
    per_image = -(-total // images)
    side = int(np.ceil(np.sqrt(per_image)))
    shifts = list(magnitudes) + [0] * (total - len(magnitudes))
    out = []
    for k, m in enumerate(shifts):
        image, slot = divmod(k, per_image)
        row, col = divmod(slot, side)
        x, y = origin + col * spacing, origin + row * spacing
        dx, dy = _shift(k, m)
        object_id = f"obj{k:05d}"
        out.append(Annotation(image_id=f"img{image:03d}", modality=reference, object_id=object_id,
                              x=x, y=y, w=box[0], h=box[1]))
        out.append(Annotation(image_id=f"img{image:03d}", modality=moving, object_id=object_id,
                              x=x + dx, y=y + dy, w=box[0], h=box[1]))
    return out

def methodology_fixture() -> List[Annotation]:
    """1000 objects, 35 % misaligned, 90 % of those within 1..5 px."""
    return offset_fixture(METHODOLOGY_MAGNITUDES, total=1000)

def aligned_fixture(total: int = 100, images: int = 1) -> List[Annotation]:
    return offset_fixture([], total=total, images=images)

def to_jsonl(annotations: Sequence[Annotation], malformed_line: Optional[int] = None) -> str:
    """Serialise to line-delimited JSON; optionally corrupt one 1-based line."""
    lines = [a.model_dump_json(by_alias=True, exclude_none=True) for a in annotations]
    if malformed_line is not None:
        lines[malformed_line - 1] = lines[malformed_line - 1][:-2]
    return "\n".join(lines) + "\n"
