"""
Central finite differences for verifying hand-written adjoints.
"""

from typing import Callable
import numpy as np
from pydantic import BaseModel

class GradCheckResult(BaseModel):
    max_rel_error: float
    worst_index: int
    passed: bool

def central_difference(fun: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """
    Numerical gradient of a scalar function:
    (f(x + h e_i) - f(x - h e_i)) / 2h for every entry i of x.
    """
    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    for i in range(x.size):
        original = x.flat[i]
        x.flat[i] = original + step
        f_plus = fun(x.copy())
        x.flat[i] = original - step
        f_minus = fun(x.copy())
        x.flat[i] = original
        grad.flat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad

def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - n| / max(1, |a|, |n|) elementwise."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / scale

def check_gradient(fun: Callable[[np.ndarray], float], x: np.ndarray, analytic: np.ndarray,
                   step: float = 1e-6, tolerance: float = 1e-5) -> GradCheckResult:
    numeric = central_difference(fun, x, step)
    errors = relative_error(analytic, numeric).reshape(-1)
    if errors.size == 0:
        return GradCheckResult(max_rel_error=0.0, worst_index=-1, passed=True)
    worst = int(np.argmax(errors))
    return GradCheckResult(max_rel_error=float(errors[worst]), worst_index=worst,
                           passed=bool(errors[worst] <= tolerance))
