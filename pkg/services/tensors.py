"""
Dense float64 tensor substrate.

FeatureMap values are numpy arrays of shape (height, width, channels) and
TokenSequence values are arrays of shape (length, channels), both float64 and
row-major. Every reduction here accumulates in a fixed, documented order
(ascending inner index, row-major window order) so that the naive loop
oracles in the test suite reproduce results bit for bit.
"""

import logging
from typing import List, Sequence
import numpy as np

from models import PoolMode
from services.errors import DimensionError, GeometryError, ParameterError
from utils.rng import SeededRng

logger = logging.getLogger("tensors")

def as_feature_map(x, name: str = "input") -> np.ndarray:
    """Coerce to a float64 (H, W, C) array or raise DimensionError."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise DimensionError(f"{name} must be a non-empty (H, W, C) feature map, got shape {arr.shape}")
    return arr

def as_tokens(x, name: str = "tokens") -> np.ndarray:
    """Coerce to a float64 (L, C) array or raise DimensionError."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or min(arr.shape) < 1:
        raise DimensionError(f"{name} must be a non-empty (L, C) token sequence, got shape {arr.shape}")
    return arr

def flatten_grid(grid: np.ndarray) -> np.ndarray:
    grid = as_feature_map(grid, "grid")
    h, w, c = grid.shape
    return grid.reshape(h * w, c).copy()

def unflatten_tokens(seq: np.ndarray, height: int, width: int) -> np.ndarray:
    seq = as_tokens(seq)
    if seq.shape[0] != height * width:
        raise GeometryError(f"cannot reshape {seq.shape[0]} tokens into a {height}x{width} grid")
    return seq.reshape(height, width, seq.shape[1]).copy()

def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Matrix product (M, K) @ (K, P) accumulated over k in ascending order.

    Equivalent to the textbook triple loop `acc = 0; for k: acc += a[m, k] * b[k, p]`
    element for element, which BLAS-backed products do not guarantee.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for k in range(a.shape[1]):
        out += a[:, k, None] * b[None, k, :]
    return out

def linear(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Bias-free linear map on the trailing (channel) axis; weight is (c_in, c_out)."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"linear weight {weight.shape} does not accept {x.shape[-1]} input channels"
        )
    flat = x.reshape(-1, x.shape[-1])
    return matmul(flat, weight).reshape(x.shape[:-1] + (weight.shape[1],))

def conv2d(x: np.ndarray, kernel: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """
    2D cross-correlation (no kernel flip) with zero padding.

    kernel has shape (kh, kw, c_in, c_out) with odd kh, kw. Each output cell
    accumulates taps in (ki, kj, ci) row-major order starting from 0.0.
    """
    x = as_feature_map(x)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 4:
        raise DimensionError(f"kernel must have shape (kh, kw, c_in, c_out), got {kernel.shape}")
    kh, kw, c_in, c_out = kernel.shape
    if c_in != x.shape[2]:
        raise DimensionError(f"kernel expects {c_in} input channels, input has {x.shape[2]}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise GeometryError(f"kernel spatial size must be odd, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise GeometryError(f"invalid stride {stride} / padding {padding}")

    h, w = x.shape[0], x.shape[1]
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (w + 2 * padding - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise GeometryError(
            f"conv output size {out_h}x{out_w} is not positive for input {h}x{w}, kernel {kh}x{kw}"
        )

    padded = np.pad(x, ((padding, padding), (padding, padding), (0, 0))) if padding else x
    out = np.zeros((out_h, out_w, c_out), dtype=np.float64)
    row_span = stride * (out_h - 1) + 1
    col_span = stride * (out_w - 1) + 1
    for ki in range(kh):
        for kj in range(kw):
            window = padded[ki:ki + row_span:stride, kj:kj + col_span:stride, :]
            for ci in range(c_in):
                out += window[:, :, ci, None] * kernel[ki, kj, ci][None, None, :]
    return out

def _pool_bounds(size: int, target: int) -> List[tuple]:
    return [((i * size) // target, ((i + 1) * size) // target) for i in range(target)]

def adaptive_pool(x: np.ndarray, target_h: int, target_w: int, mode: PoolMode = PoolMode.AVG) -> np.ndarray:
    """
    Adaptive average/max pooling with floor window partition.

    Output cell (i, j) covers rows [floor(i*H/th), floor((i+1)*H/th)) and the
    analogous columns; windows are disjoint and cover the input. Averages are
    the row-major ordered window sum divided by the window area.
    """
    x = as_feature_map(x)
    mode = PoolMode(mode)
    h, w, c = x.shape
    if target_h < 1 or target_w < 1 or target_h > h or target_w > w:
        raise GeometryError(f"cannot pool a {h}x{w} map to {target_h}x{target_w}")

    if h % target_h == 0 and w % target_w == 0:
        # uniform windows: accumulate strided slices, same order as the per-cell loop
        wh, ww = h // target_h, w // target_w
        acc = None
        for dr in range(wh):
            for dc in range(ww):
                part = x[dr::wh, dc::ww, :]
                if acc is None:
                    acc = part.copy() if mode == PoolMode.MAX else 0.0 + part
                elif mode == PoolMode.MAX:
                    acc = np.maximum(acc, part)
                else:
                    acc = acc + part
        return acc if mode == PoolMode.MAX else acc / float(wh * ww)

    out = np.empty((target_h, target_w, c), dtype=np.float64)
    for i, (r0, r1) in enumerate(_pool_bounds(h, target_h)):
        for j, (c0, c1) in enumerate(_pool_bounds(w, target_w)):
            acc = None
            for r in range(r0, r1):
                for col in range(c0, c1):
                    cell = x[r, col]
                    if acc is None:
                        acc = cell.copy() if mode == PoolMode.MAX else 0.0 + cell
                    elif mode == PoolMode.MAX:
                        acc = np.maximum(acc, cell)
                    else:
                        acc = acc + cell
            out[i, j] = acc if mode == PoolMode.MAX else acc / float((r1 - r0) * (c1 - c0))
    return out

def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

def softplus(x) -> np.ndarray:
    return np.logaddexp(0.0, np.asarray(x, dtype=np.float64))

def silu(x) -> np.ndarray:
    """x * sigmoid(x), elementwise."""
    x = np.asarray(x, dtype=np.float64)
    return x * sigmoid(x)

def silu_grad(x) -> np.ndarray:
    s = sigmoid(x)
    return s * (1.0 + np.asarray(x, dtype=np.float64) * (1.0 - s))

def dropout(x: np.ndarray, p: float, rng: SeededRng, training: bool) -> np.ndarray:
    """
    Inverted dropout: in training mode each entry is zeroed with probability p
    and survivors are divided by (1 - p); evaluation mode is the identity.
    """
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must lie in [0, 1), got {p}")
    x = np.asarray(x, dtype=np.float64)
    if not training or p == 0.0:
        return x.copy()
    keep = rng.generator().random(x.shape) >= p
    return np.where(keep, x / (1.0 - p), 0.0)

def concat_channels(maps: Sequence[np.ndarray]) -> np.ndarray:
    maps = [as_feature_map(m, f"map[{i}]") for i, m in enumerate(maps)]
    shapes = {m.shape[:2] for m in maps}
    if len(shapes) != 1:
        raise GeometryError(f"cannot concatenate maps with spatial sizes {sorted(shapes)}")
    return np.concatenate(maps, axis=2)

def upsample_nearest(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resize with source index floor(i * H / out_h)."""
    x = as_feature_map(x)
    if out_h < 1 or out_w < 1:
        raise GeometryError(f"invalid resize target {out_h}x{out_w}")
    rows = (np.arange(out_h) * x.shape[0]) // out_h
    cols = (np.arange(out_w) * x.shape[1]) // out_w
    return x[rows][:, cols].copy()
