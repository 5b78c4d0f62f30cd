"""
2D <-> 1D token serialization.

A ScanPlan stores `order` (sequence position -> row-major grid index) and its
inverse. Global directions walk rows or columns over the whole grid; local
directions visit windows row-major and tokens row-major inside each window.
Every *_bwd direction is the full reversal of its *_fwd partner.
"""

import logging
from typing import List, Optional, Sequence, Tuple
import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from models import ScanDirection, check_local_window
from services.errors import DimensionError, GeometryError
from services.tensors import as_feature_map, as_tokens

logger = logging.getLogger("scanpaths")

GLOBAL_DIRECTIONS = (
    ScanDirection.ROW_FWD, ScanDirection.ROW_BWD,
    ScanDirection.COL_FWD, ScanDirection.COL_BWD,
)
LOCAL_DIRECTIONS = (ScanDirection.LOCAL_FWD, ScanDirection.LOCAL_BWD)

class ScanPlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    grid_h: int
    grid_w: int
    direction: ScanDirection
    window_h: Optional[int] = None
    window_w: Optional[int] = None
    order: Tuple[int, ...]
    inverse: Tuple[int, ...]

    @property
    def length(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def window(self) -> Optional[Tuple[int, int]]:
        if self.window_h is None or self.window_w is None:
            return None
        return self.window_h, self.window_w

def build_scan_plan(grid_h: int, grid_w: int, direction: ScanDirection,
                    window: Optional[Tuple[int, int]] = None) -> ScanPlan:
    direction = ScanDirection(direction)
    if grid_h < 1 or grid_w < 1:
        raise GeometryError(f"grid must be at least 1x1, got {grid_h}x{grid_w}")

    index = np.arange(grid_h * grid_w).reshape(grid_h, grid_w)
    if direction.is_local:
        if window is None:
            raise GeometryError(f"{direction.value} requires a window")
        problem = check_local_window((grid_h, grid_w), window)
        if problem:
            logger.error(f"Rejected local window {window} on {grid_h}x{grid_w} grid: {problem}")
            raise GeometryError(problem)
        wh, ww = window
        order = index.reshape(grid_h // wh, wh, grid_w // ww, ww).transpose(0, 2, 1, 3).ravel()
    elif direction in (ScanDirection.ROW_FWD, ScanDirection.ROW_BWD):
        order = index.ravel()
    else:
        order = index.T.ravel()

    if direction in (ScanDirection.ROW_BWD, ScanDirection.COL_BWD, ScanDirection.LOCAL_BWD):
        order = order[::-1]

    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    wh, ww = window if direction.is_local else (None, None)
    return ScanPlan(
        grid_h=grid_h, grid_w=grid_w, direction=direction,
        window_h=wh, window_w=ww,
        order=tuple(int(i) for i in order),
        inverse=tuple(int(i) for i in inverse),
    )

def verify_plan(plan: ScanPlan) -> List[str]:
    """Return every violated plan invariant (empty when the plan is sound)."""
    problems = []
    n = plan.length
    if len(plan.order) != n or len(plan.inverse) != n:
        problems.append(f"order/inverse length differs from grid size {n}")
        return problems
    if sorted(plan.order) != list(range(n)):
        problems.append("order is not a permutation of the grid indices")
    bad = [i for i in range(n) if not 0 <= plan.order[i] < n or plan.inverse[plan.order[i]] != i]
    if bad:
        problems.append(f"inverse[order[i]] != i at {len(bad)} positions (first {bad[0]})")
    if plan.direction.is_local:
        if plan.window is None:
            problems.append("local plan without a window")
        else:
            problem = check_local_window((plan.grid_h, plan.grid_w), plan.window)
            if problem:
                problems.append(problem)
    return problems

def swap_order_entries(plan: ScanPlan, i: int, j: int) -> ScanPlan:
    """Copy of `plan` with order[i] and order[j] exchanged and the inverse left stale."""
    order = list(plan.order)
    order[i], order[j] = order[j], order[i]
    return plan.model_copy(update={"order": tuple(order)})

def _check_grid(grid: np.ndarray, plan: ScanPlan) -> np.ndarray:
    grid = as_feature_map(grid, "grid")
    if grid.shape[:2] != (plan.grid_h, plan.grid_w):
        raise GeometryError(
            f"plan is for a {plan.grid_h}x{plan.grid_w} grid, got {grid.shape[0]}x{grid.shape[1]}"
        )
    return grid

def apply_scan(grid: np.ndarray, plan: ScanPlan) -> np.ndarray:
    """sequence[t] = grid token at row-major index plan.order[t]."""
    grid = _check_grid(grid, plan)
    flat = grid.reshape(plan.length, grid.shape[2])
    return flat[np.asarray(plan.order)]

def reverse_scan(seq: np.ndarray, plan: ScanPlan) -> np.ndarray:
    seq = as_tokens(seq, "sequence")
    if seq.shape[0] != plan.length:
        raise GeometryError(f"sequence of length {seq.shape[0]} does not fit a {plan.grid_h}x{plan.grid_w} plan")
    flat = seq[np.asarray(plan.inverse)]
    return flat.reshape(plan.grid_h, plan.grid_w, seq.shape[1])

def merge_directions(grids: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise sum accumulated in list order."""
    if len(grids) not in (4, 6):
        raise DimensionError(f"expected 4 or 6 direction outputs, got {len(grids)}")
    grids = [np.asarray(g, dtype=np.float64) for g in grids]
    shapes = {g.shape for g in grids}
    if len(shapes) != 1:
        raise DimensionError(f"direction outputs differ in shape: {sorted(shapes)}")
    acc = grids[0].copy()
    for g in grids[1:]:
        acc = acc + g
    return acc

def global_plans(grid_h: int, grid_w: int) -> List[ScanPlan]:
    """The four whole-grid directions used by the single block."""
    return [build_scan_plan(grid_h, grid_w, d) for d in GLOBAL_DIRECTIONS]

def cross_plans(grid_h: int, grid_w: int, window: Tuple[int, int], direction_count: int = 6) -> List[ScanPlan]:
    """Global plans, followed by the local forward/backward pair when direction_count is 6."""
    if direction_count not in (4, 6):
        raise DimensionError(f"direction_count must be 4 or 6, got {direction_count}")
    plans = global_plans(grid_h, grid_w)
    if direction_count == 6:
        plans += [build_scan_plan(grid_h, grid_w, d, window) for d in LOCAL_DIRECTIONS]
    return plans

def plan_to_json(plan: ScanPlan) -> str:
    return plan.model_dump_json()

def plan_from_json(text: str) -> ScanPlan:
    try:
        plan = ScanPlan.model_validate_json(text)
    except ValidationError as e:
        raise GeometryError(f"invalid scan plan document: {e.errors()[0]['msg']}") from e
    problems = verify_plan(plan)
    if problems:
        raise GeometryError("; ".join(problems))
    return plan

def step_distances(plan: ScanPlan) -> List[Tuple[int, bool]]:
    """
    Chebyshev grid distance between consecutive sequence positions, paired with
    whether both positions fall inside the same local window.
    """
    out = []
    window = plan.window
    for a, b in zip(plan.order, plan.order[1:]):
        ra, ca = divmod(a, plan.grid_w)
        rb, cb = divmod(b, plan.grid_w)
        same = window is not None and (ra // window[0], ca // window[1]) == (rb // window[0], cb // window[1])
        out.append((max(abs(ra - rb), abs(ca - cb)), same))
    return out

def max_step_distance(plan: ScanPlan, within_window: bool = False) -> int:
    distances = [d for d, same in step_distances(plan) if same or not within_window]
    return max(distances, default=0)
