"""
Cross-modal misalignment model and annotation audit.

Offsets are measured between box centres of the same object in two modalities
(Δ = moving − reference). Retention is the overlap left between a feature block
and its displaced counterpart, relative to the block area.
"""

import bisect
import logging
import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from pydantic import ValidationError

from models import (
    Annotation, Box, MagnitudeNorm, MatchResult, OffsetConfig, OffsetHistogram,
    OffsetRecord, OffsetReport, RetentionMode, RetentionRow,
)
from services.errors import AnnotationParseError, AnnotationValidationError, ParameterError

logger = logging.getLogger("offsets")

def intersection_area(w_blk: float, h_blk: float, dx: float, dy: float,
                      mode: RetentionMode = RetentionMode.CLAMPED) -> float:
    """
    Overlap of a w_blk x h_blk block with its copy displaced by (dx, dy).

    Literal mode evaluates |w - dx| * |h - dy| as written, which grows again
    once the offset exceeds the block; clamped mode is the true overlap.
    """
    if not (w_blk > 0 and h_blk > 0):
        raise ParameterError(f"block dimensions must be positive, got {w_blk}x{h_blk}")
    if RetentionMode(mode) == RetentionMode.LITERAL:
        return abs(w_blk - dx) * abs(h_blk - dy)
    return max(w_blk - abs(dx), 0.0) * max(h_blk - abs(dy), 0.0)

def retention_by_level(dx: float, dy: float, levels: Sequence[int],
                       mode: RetentionMode = RetentionMode.CLAMPED) -> List[float]:
    return [intersection_area(b, b, dx, dy, mode) / float(b * b) for b in levels]

def _as_box(box: Union[Box, dict], index: int) -> Box:
    if isinstance(box, Box):
        return box
    try:
        return Box.model_validate(box)
    except ValidationError as e:
        raise AnnotationValidationError(e.errors()[0]["msg"], index) from e

def match_annotations(boxes_a: Sequence[Union[Box, dict]], boxes_b: Sequence[Union[Box, dict]],
                      gate: float = 20.0, ids: Optional[Sequence[str]] = None,
                      image_id: str = "") -> MatchResult:
    """
    Greedy one-to-one matching on centre distance.

    Candidate pairs within `gate` are taken in order of (distance, i, j); each
    box is used at most once. Indices in the result refer to the input lists.
    """
    a = [_as_box(b, i) for i, b in enumerate(boxes_a)]
    b = [_as_box(x, j) for j, x in enumerate(boxes_b)]
    candidates = []
    for i, box_a in enumerate(a):
        ax, ay = box_a.center
        for j, box_b in enumerate(b):
            bx, by = box_b.center
            dist = math.hypot(bx - ax, by - ay)
            if dist <= gate:
                candidates.append((dist, i, j))
    candidates.sort()

    used_a, used_b = set(), set()
    records = []
    for _, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        (ax, ay), (bx, by) = a[i].center, b[j].center
        records.append(OffsetRecord(
            object_id=ids[i] if ids is not None else str(i),
            image_id=image_id,
            box_a=a[i], box_b=b[j],
            dx=bx - ax, dy=by - ay,
        ))
    records.sort(key=lambda r: r.object_id if ids is not None else int(r.object_id))
    return MatchResult(
        records=records,
        unmatched_a=[i for i in range(len(a)) if i not in used_a],
        unmatched_b=[j for j in range(len(b)) if j not in used_b],
    )

def magnitude(record: OffsetRecord, norm: MagnitudeNorm = MagnitudeNorm.CHEBYSHEV) -> float:
    if MagnitudeNorm(norm) == MagnitudeNorm.EUCLIDEAN:
        return math.hypot(record.dx, record.dy)
    return max(abs(record.dx), abs(record.dy))

def offset_stats(records: Iterable[OffsetRecord], bin_edges: Optional[Sequence[float]] = None,
                 norm: MagnitudeNorm = MagnitudeNorm.CHEBYSHEV) -> OffsetHistogram:
    """
    Histogram of offset magnitudes. Bins are [edge_k, edge_k+1) with the last
    bin unbounded; an object is misaligned when its magnitude is at least 1 px.
    """
    edges = list(bin_edges) if bin_edges is not None else OffsetConfig().bin_edges
    counts = [0] * len(edges)
    total = misaligned = within = 0
    for record in records:
        m = magnitude(record, norm)
        counts[bisect.bisect_right(edges, m) - 1] += 1
        total += 1
        if m >= 1.0:
            misaligned += 1
            if m <= 5.0:
                within += 1
    return OffsetHistogram(
        bin_edges=edges,
        counts=counts,
        total=total,
        misaligned=misaligned,
        misaligned_fraction=misaligned / total if total else 0.0,
        within_1_to_5_fraction=within / misaligned if misaligned else 0.0,
        norm=norm,
    )

def parse_annotations(lines: Iterable[str]) -> List[Annotation]:
    """Read line-delimited JSON annotations; blank lines are skipped."""
    annotations = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            annotations.append(Annotation.model_validate_json(line))
        except ValidationError as e:
            error = e.errors()[0]
            where = ".".join(str(p) for p in error["loc"])
            message = f"{where}: {error['msg']}" if where else error["msg"]
            logger.error(f"Failed to parse annotation line {number}: {message}")
            raise AnnotationParseError(message, number) from e
    return annotations

def match_by_image(annotations: Sequence[Annotation], reference: str = "ir", moving: str = "rgb",
                   gate: float = 20.0) -> Tuple[MatchResult, int]:
    """
    Match reference and moving boxes image by image. Unmatched indices refer to
    positions in `annotations`. Returns the merged result and the image count.
    """
    groups: Dict[str, Dict[str, List[int]]] = {}
    for k, ann in enumerate(annotations):
        if ann.modality not in (reference, moving):
            continue
        groups.setdefault(ann.image_id, {reference: [], moving: []})[ann.modality].append(k)

    merged = MatchResult()
    for image_id, members in groups.items():
        ref_idx, mov_idx = members[reference], members[moving]
        ids = [annotations[k].object_id or f"{image_id}/{n}" for n, k in enumerate(ref_idx)]
        result = match_annotations(
            [annotations[k].box for k in ref_idx],
            [annotations[k].box for k in mov_idx],
            gate=gate, ids=ids, image_id=image_id,
        )
        merged.records.extend(result.records)
        merged.unmatched_a.extend(ref_idx[i] for i in result.unmatched_a)
        merged.unmatched_b.extend(mov_idx[j] for j in result.unmatched_b)
    return merged, len(groups)

def mean_retention(records: Sequence[OffsetRecord], levels: Sequence[int],
                   mode: RetentionMode = RetentionMode.CLAMPED) -> List[RetentionRow]:
    rows = []
    for level in levels:
        values = [retention_by_level(r.dx, r.dy, [level], mode)[0] for r in records]
        rows.append(RetentionRow(level=level, mean_retention=sum(values) / len(values) if values else 0.0))
    return rows

def build_report(annotations: Sequence[Annotation], cfg: OffsetConfig, source: str = "") -> OffsetReport:
    warnings = []
    if not annotations:
        warnings.append("input contains no annotations; the report is empty")
    skipped = sum(1 for a in annotations if a.modality not in (cfg.reference_modality, cfg.moving_modality))
    if skipped:
        warnings.append(f"{skipped} annotations with other modalities were ignored")
    if RetentionMode(cfg.retention_mode) == RetentionMode.LITERAL:
        warnings.append("literal retention mode: areas grow again once an offset exceeds the block size")

    result, images = match_by_image(annotations, cfg.reference_modality, cfg.moving_modality, cfg.gate)
    if annotations and not result.records:
        warnings.append("no objects matched within the gate")
    histogram = offset_stats(result.records, cfg.bin_edges, cfg.norm)
    logger.info(f"Matched {len(result.records)} objects over {images} images; "
                f"misaligned fraction {histogram.misaligned_fraction:.4f}")
    return OffsetReport(
        source=source,
        images=images,
        matched=len(result.records),
        unmatched_reference=len(result.unmatched_a),
        unmatched_moving=len(result.unmatched_b),
        gate=cfg.gate,
        histogram=histogram,
        retention_mode=cfg.retention_mode,
        retention=mean_retention(result.records, cfg.levels, cfg.retention_mode),
        warnings=warnings,
    )
