"""
Literal loop reference implementations. Slow by construction; the check
suites and tests compare the vectorised operations against them.
"""

import math
from typing import List
import numpy as np

from services.ssm import DiscreteSSMParams

def loop_conv2d(x: np.ndarray, kernel: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    h, w, c_in = x.shape
    kh, kw, _, c_out = kernel.shape
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((out_h, out_w, c_out))
    for i in range(out_h):
        for j in range(out_w):
            for co in range(c_out):
                acc = 0.0
                for ki in range(kh):
                    for kj in range(kw):
                        for ci in range(c_in):
                            r = i * stride + ki - padding
                            c = j * stride + kj - padding
                            v = x[r, c, ci] if 0 <= r < h and 0 <= c < w else 0.0
                            acc += v * kernel[ki, kj, ci, co]
                out[i, j, co] = acc
    return out

def loop_window_sums(x: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    h, w, c = x.shape
    out = np.zeros((target_h, target_w, c))
    for i in range(target_h):
        for j in range(target_w):
            for ch in range(c):
                acc = 0.0
                for r in range((i * h) // target_h, ((i + 1) * h) // target_h):
                    for col in range((j * w) // target_w, ((j + 1) * w) // target_w):
                        acc += x[r, col, ch]
                out[i, j, ch] = acc
    return out

def loop_window_max(x: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    h, w, c = x.shape
    out = np.zeros((target_h, target_w, c))
    for i in range(target_h):
        for j in range(target_w):
            for ch in range(c):
                best = -math.inf
                for r in range((i * h) // target_h, ((i + 1) * h) // target_h):
                    for col in range((j * w) // target_w, ((j + 1) * w) // target_w):
                        best = max(best, x[r, col, ch])
                out[i, j, ch] = best
    return out

def loop_matvec(matrix: np.ndarray, vector: np.ndarray) -> List[float]:
    out = []
    for row in matrix:
        acc = 0.0
        for a, b in zip(row, vector):
            acc += a * b
        out.append(acc)
    return out

def loop_recurrence(x_state: np.ndarray, x_skip: np.ndarray, disc: DiscreteSSMParams) -> np.ndarray:
    """Step-by-step h_t[c, n] = Ā[t, n] h[c, n] + B̄[t, n] x[t, c]; y = Σ_n C[t, n] h[c, n] + D[c] x_skip[t, c]."""
    length, channels = x_state.shape
    n_state = disc.A_bar.shape[1]
    h = [[0.0] * n_state for _ in range(channels)]
    y = np.zeros((length, channels))
    for t in range(length):
        for c in range(channels):
            for n in range(n_state):
                h[c][n] = disc.A_bar[t, n] * h[c][n] + disc.B_bar[t, n] * x_state[t, c]
            acc = 0.0
            for n in range(n_state):
                acc = acc + disc.C[t, n] * h[c][n]
            y[t, c] = acc + disc.D[c] * x_skip[t, c]
    return y

def taylor_exp(z: np.ndarray, terms: int = 20) -> np.ndarray:
    """Truncated exponential series, elementwise (the matrix exponential of a diagonal)."""
    z = np.asarray(z, dtype=np.float64)
    total = np.zeros_like(z)
    term = np.ones_like(z)
    for k in range(terms):
        total = total + term
        term = term * z / (k + 1)
    return total
