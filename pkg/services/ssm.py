"""
State-space core: parameters, zero-order-hold discretization, the selective
S6 recurrence, the cross-modal CS6 recurrence and their reverse-mode adjoints.

Shapes (L tokens, C channels, N state size):
    A, B_fixed, C_fixed      (N,)
    B_proj, C_proj           (N, C)    token -> per-step B_t / C_t
    dt_proj                  (C,)      token -> scalar Δ_t (through softplus)
    D                        (C,)
Hidden state per scan is (C, N), initialised to zeros. A is diagonal, so
Ā_t = exp(Δ_t A) is exact elementwise.
"""

import logging
from typing import Dict, Optional, Tuple
import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from models import Discretization, ScanMode
from services.errors import DimensionError, ParameterError
from services.tensors import as_tokens, linear, sigmoid, softplus
from utils.rng import SeededRng

logger = logging.getLogger("ssm")

def _frozen_array(v, ndim: int, name: str) -> np.ndarray:
    arr = np.array(v, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr

class SSMParams(BaseModel):
    """Continuous parameters of one scan direction."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    A: np.ndarray
    B_proj: np.ndarray
    C_proj: np.ndarray
    dt_proj: np.ndarray
    dt_bias: float
    D: np.ndarray
    B_fixed: np.ndarray
    C_fixed: np.ndarray

    @field_validator("A", "dt_proj", "D", "B_fixed", "C_fixed", mode="before")
    def vector(cls, v, info):
        return _frozen_array(v, 1, info.field_name)

    @field_validator("B_proj", "C_proj", mode="before")
    def matrix(cls, v, info):
        return _frozen_array(v, 2, info.field_name)

    @model_validator(mode="after")
    def consistent(self):
        n, c = self.state_dim, self.channels
        expected = {
            "B_proj": (n, c), "C_proj": (n, c), "dt_proj": (c,),
            "B_fixed": (n,), "C_fixed": (n,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if not np.all(self.A < 0):
            raise ValueError("A entries must be strictly negative")
        return self

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def channels(self) -> int:
        return self.D.shape[0]

    def to_tensors(self, prefix: str) -> Dict[str, np.ndarray]:
        out = {f"{prefix}.{name}": np.asarray(getattr(self, name)) for name in self.model_fields}
        out[f"{prefix}.dt_bias"] = np.array([self.dt_bias])
        return out

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray], prefix: str) -> "SSMParams":
        values = {name: tensors[f"{prefix}.{name}"] for name in cls.model_fields}
        values["dt_bias"] = float(np.asarray(values["dt_bias"]).reshape(-1)[0])
        return cls(**values)

class DiscreteSSMParams(BaseModel):
    """Per-token discrete parameters: Ā_t, B̄_t, C_t are (L, N); D is (C,)."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    A_bar: np.ndarray
    B_bar: np.ndarray
    C: np.ndarray
    D: np.ndarray

    @field_validator("A_bar", "B_bar", "C", mode="before")
    def per_token(cls, v, info):
        return _frozen_array(v, 2, info.field_name)

    @field_validator("D", mode="before")
    def skip(cls, v):
        return _frozen_array(v, 1, "D")

    @model_validator(mode="after")
    def same_length(self):
        if not (self.A_bar.shape == self.B_bar.shape == self.C.shape):
            raise ValueError("A_bar, B_bar and C must share the (L, N) shape")
        return self

    @property
    def length(self) -> int:
        return self.A_bar.shape[0]

class DiscreteGradients(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    x_state: np.ndarray
    x_skip: np.ndarray
    A_bar: np.ndarray
    B_bar: np.ndarray
    C: np.ndarray
    D: np.ndarray

class SSMGradients(BaseModel):
    """Adjoints of a scan w.r.t. both inputs and every SSMParams field."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    x_state: np.ndarray
    x_skip: np.ndarray
    A: np.ndarray
    B_proj: np.ndarray
    C_proj: np.ndarray
    dt_proj: np.ndarray
    dt_bias: float
    D: np.ndarray
    B_fixed: np.ndarray
    C_fixed: np.ndarray

    @property
    def x(self) -> np.ndarray:
        """Gradient w.r.t. the single input of an S6 scan (state and skip are the same tensor)."""
        return self.x_state + self.x_skip

def init_ssm_params(channels: int, state_dim: int, rng: SeededRng,
                    dt_min: float = 0.01, dt_max: float = 0.1) -> SSMParams:
    """
    A = -(1..N); projections uniform in ±1/sqrt(C); Δ bias is the inverse
    softplus of a log-uniform draw in [dt_min, dt_max]; D = 1.
    """
    bound = 1.0 / np.sqrt(channels)
    dt = float(np.exp(rng.child(3).uniform(np.log(dt_min), np.log(dt_max), ())))
    return SSMParams(
        A=-np.arange(1, state_dim + 1, dtype=np.float64),
        B_proj=rng.child(0).uniform(-bound, bound, (state_dim, channels)),
        C_proj=rng.child(1).uniform(-bound, bound, (state_dim, channels)),
        dt_proj=rng.child(2).uniform(-bound, bound, (channels,)),
        dt_bias=dt + np.log(-np.expm1(-dt)),
        D=np.ones(channels),
        B_fixed=rng.child(4).uniform(-1.0, 1.0, (state_dim,)),
        C_fixed=rng.child(5).uniform(-1.0, 1.0, (state_dim,)),
    )

def selective_project(tokens: np.ndarray, params: SSMParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Δ_t = softplus(dt_proj·x_t + dt_bias), B_t = B_proj x_t, C_t = C_proj x_t."""
    x = as_tokens(tokens)
    if x.shape[1] != params.channels:
        raise DimensionError(f"tokens have {x.shape[1]} channels, parameters expect {params.channels}")
    u = linear(x, params.dt_proj[:, None])[:, 0] + params.dt_bias
    b = linear(x, params.B_proj.T)
    c = linear(x, params.C_proj.T)
    return softplus(u), b, c

def _project(x: np.ndarray, params: SSMParams, mode: ScanMode) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if ScanMode(mode) == ScanMode.SELECTIVE:
        return selective_project(x, params)
    if x.shape[1] != params.channels:
        raise DimensionError(f"tokens have {x.shape[1]} channels, parameters expect {params.channels}")
    length = x.shape[0]
    dt = np.full(length, float(softplus(params.dt_bias)))
    return dt, np.tile(params.B_fixed, (length, 1)), np.tile(params.C_fixed, (length, 1))

def zoh_discretize(params: SSMParams, dt: np.ndarray, b: Optional[np.ndarray] = None,
                   c: Optional[np.ndarray] = None,
                   variant: Discretization = Discretization.APPROX) -> DiscreteSSMParams:
    """
    Zero-order hold: Ā = exp(Δ A); B̄ = Δ B (approx, the default) or
    (exp(Δ A) - 1) / A · B (exact diagonal ZOH). Without b / c the fixed
    time-invariant vectors are used for every step.
    """
    dt = np.atleast_1d(np.asarray(dt, dtype=np.float64))
    if dt.ndim != 1 or not np.all(dt > 0):
        raise ParameterError("every Δ_t must be strictly positive")
    length = dt.shape[0]
    b = np.tile(params.B_fixed, (length, 1)) if b is None else np.asarray(b, dtype=np.float64)
    c = np.tile(params.C_fixed, (length, 1)) if c is None else np.asarray(c, dtype=np.float64)
    if b.shape != (length, params.state_dim) or c.shape != (length, params.state_dim):
        raise DimensionError(f"B_t/C_t must have shape {(length, params.state_dim)}")

    dt_a = dt[:, None] * params.A[None, :]
    a_bar = np.exp(dt_a)
    if Discretization(variant) == Discretization.EXACT:
        b_bar = discretize_exact_factor(params.A, dt) * b
    else:
        b_bar = dt[:, None] * b
    return DiscreteSSMParams(A_bar=a_bar, B_bar=b_bar, C=c, D=params.D)

def discretize_exact_factor(a: np.ndarray, dt: np.ndarray) -> np.ndarray:
    """(exp(Δ A) - 1) / A per step and state, with the Δ limit where A == 0."""
    dt_a = dt[:, None] * a[None, :]
    safe = np.where(a == 0, 1.0, a)
    return np.where(a[None, :] == 0, dt[:, None], np.expm1(dt_a) / safe[None, :])

def run_recurrence(x_state: np.ndarray, x_skip: np.ndarray, disc: DiscreteSSMParams,
                   keep_states: bool = False):
    """
    h_t = Ā_t ⊙ h_{t-1} + B̄_t x_state_t,  y_t = C_t · h_t + D ⊙ x_skip_t,  h_0 = 0.

    The readout accumulates over the state index in ascending order. Returns y
    (L, C), plus the state history (L, C, N) when keep_states is set.
    """
    x_state = as_tokens(x_state, "x_state")
    x_skip = as_tokens(x_skip, "x_skip")
    if x_state.shape != x_skip.shape:
        raise DimensionError(f"state input {x_state.shape} and skip input {x_skip.shape} differ")
    length, channels = x_state.shape
    if disc.length != length or disc.D.shape[0] != channels:
        raise DimensionError(f"discrete parameters do not match a {length}x{channels} sequence")

    n_state = disc.A_bar.shape[1]
    h = np.zeros((channels, n_state))
    y = np.empty((length, channels))
    states = np.empty((length, channels, n_state)) if keep_states else None
    for t in range(length):
        h = disc.A_bar[t][None, :] * h + disc.B_bar[t][None, :] * x_state[t][:, None]
        readout = np.zeros(channels)
        for n in range(n_state):
            readout = readout + disc.C[t, n] * h[:, n]
        y[t] = readout + disc.D * x_skip[t]
        if keep_states:
            states[t] = h
    return (y, states) if keep_states else y

def s6_scan(x: np.ndarray, params: SSMParams, mode: ScanMode = ScanMode.SELECTIVE,
            variant: Discretization = Discretization.APPROX) -> np.ndarray:
    """Selective (or time-invariant) scan of a single sequence."""
    return cs6_scan(x, x, params, mode=mode, variant=variant)

def cs6_scan(x1: np.ndarray, x2: np.ndarray, params: SSMParams,
             mode: ScanMode = ScanMode.SELECTIVE,
             variant: Discretization = Discretization.APPROX) -> np.ndarray:
    """
    Cross-modal scan: x1 drives the hidden state and the selective projections,
    x2 drives the skip term.
    """
    x1 = as_tokens(x1, "x1")
    x2 = as_tokens(x2, "x2")
    if x1.shape != x2.shape:
        raise DimensionError(f"cross scan inputs differ in shape: {x1.shape} vs {x2.shape}")
    dt, b, c = _project(x1, params, mode)
    disc = zoh_discretize(params, dt, b, c, variant)
    return run_recurrence(x1, x2, disc)

def recurrence_backward(x_state: np.ndarray, x_skip: np.ndarray, disc: DiscreteSSMParams,
                        grad_y: np.ndarray, states: Optional[np.ndarray] = None) -> DiscreteGradients:
    """Reverse-mode adjoints of run_recurrence."""
    x_state = as_tokens(x_state, "x_state")
    x_skip = as_tokens(x_skip, "x_skip")
    grad_y = np.asarray(grad_y, dtype=np.float64)
    if grad_y.shape != x_state.shape:
        raise DimensionError(f"upstream gradient {grad_y.shape} does not match outputs {x_state.shape}")
    if states is None:
        _, states = run_recurrence(x_state, x_skip, disc, keep_states=True)

    length, channels = x_state.shape
    n_state = disc.A_bar.shape[1]
    g_state = np.zeros_like(x_state)
    g_a_bar = np.zeros((length, n_state))
    g_b_bar = np.zeros((length, n_state))
    g_c = np.zeros((length, n_state))
    g_h = np.zeros((channels, n_state))
    for t in range(length - 1, -1, -1):
        gy = grad_y[t]
        g_c[t] = gy @ states[t]
        g_h = g_h + gy[:, None] * disc.C[t][None, :]
        h_prev = states[t - 1] if t > 0 else np.zeros((channels, n_state))
        g_a_bar[t] = np.sum(g_h * h_prev, axis=0)
        g_b_bar[t] = np.sum(g_h * x_state[t][:, None], axis=0)
        g_state[t] = np.sum(g_h * disc.B_bar[t][None, :], axis=1)
        g_h = g_h * disc.A_bar[t][None, :]

    return DiscreteGradients(
        x_state=g_state,
        x_skip=grad_y * disc.D[None, :],
        A_bar=g_a_bar,
        B_bar=g_b_bar,
        C=g_c,
        D=np.sum(grad_y * x_skip, axis=0),
    )

def cs6_backward(x1: np.ndarray, x2: np.ndarray, params: SSMParams, grad_y: np.ndarray,
                 mode: ScanMode = ScanMode.SELECTIVE,
                 variant: Discretization = Discretization.APPROX) -> SSMGradients:
    """Adjoints of cs6_scan w.r.t. both inputs and all continuous parameters."""
    x1 = as_tokens(x1, "x1")
    x2 = as_tokens(x2, "x2")
    if x1.shape != x2.shape:
        raise DimensionError(f"cross scan inputs differ in shape: {x1.shape} vs {x2.shape}")
    mode = ScanMode(mode)
    dt, b, c = _project(x1, params, mode)
    disc = zoh_discretize(params, dt, b, c, variant)
    _, states = run_recurrence(x1, x2, disc, keep_states=True)
    g = recurrence_backward(x1, x2, disc, grad_y, states)

    a = params.A
    a_bar = disc.A_bar
    g_dt = np.sum(g.A_bar * a_bar * a[None, :], axis=1)
    g_a = np.sum(g.A_bar * a_bar * dt[:, None], axis=0)
    if Discretization(variant) == Discretization.EXACT:
        phi = discretize_exact_factor(a, dt)
        safe = np.where(a == 0, 1.0, a)
        dphi_da = np.where(a[None, :] == 0, 0.5 * dt[:, None] ** 2,
                           (dt[:, None] * a_bar * a[None, :] - np.expm1(dt[:, None] * a[None, :])) / safe[None, :] ** 2)
        g_dt = g_dt + np.sum(g.B_bar * b * a_bar, axis=1)
        g_a = g_a + np.sum(g.B_bar * b * dphi_da, axis=0)
        g_b = g.B_bar * phi
    else:
        g_dt = g_dt + np.sum(g.B_bar * b, axis=1)
        g_b = g.B_bar * dt[:, None]
    g_c = g.C

    g_x1 = g.x_state.copy()
    zeros_proj = np.zeros_like(params.B_proj)
    if mode == ScanMode.SELECTIVE:
        u = x1 @ params.dt_proj + params.dt_bias
        g_u = g_dt * sigmoid(u)
        g_x1 += g_u[:, None] * params.dt_proj[None, :] + g_b @ params.B_proj + g_c @ params.C_proj
        return SSMGradients(
            x_state=g_x1, x_skip=g.x_skip, A=g_a,
            B_proj=g_b.T @ x1, C_proj=g_c.T @ x1,
            dt_proj=g_u @ x1, dt_bias=float(np.sum(g_u)), D=g.D,
            B_fixed=np.zeros(params.state_dim), C_fixed=np.zeros(params.state_dim),
        )
    return SSMGradients(
        x_state=g_x1, x_skip=g.x_skip, A=g_a,
        B_proj=zeros_proj, C_proj=zeros_proj.copy(),
        dt_proj=np.zeros(params.channels),
        dt_bias=float(np.sum(g_dt) * sigmoid(params.dt_bias)),
        D=g.D, B_fixed=np.sum(g_b, axis=0), C_fixed=np.sum(g_c, axis=0),
    )

def s6_backward(x: np.ndarray, params: SSMParams, grad_y: np.ndarray,
                mode: ScanMode = ScanMode.SELECTIVE,
                variant: Discretization = Discretization.APPROX) -> SSMGradients:
    """Adjoints of s6_scan; the input gradient is `result.x`."""
    return cs6_backward(x, x, params, grad_y, mode=mode, variant=variant)

def scan_mac_breakdown(length: int, channels: int, state_dim: int,
                       mode: ScanMode = ScanMode.SELECTIVE) -> Dict[str, int]:
    """Multiply-adds of one scan direction, by stage."""
    lcn = length * channels * state_dim
    selective = ScanMode(mode) == ScanMode.SELECTIVE
    return {
        "projection": (2 * lcn + length * channels) if selective else 0,
        "discretization": 2 * length * state_dim,
        "state_update": 2 * lcn,
        "readout": lcn,
        "skip": length * channels,
    }

def scan_macs(length: int, channels: int, state_dim: int,
              mode: ScanMode = ScanMode.SELECTIVE) -> int:
    """L·(5NC + 2C + 2N) in selective mode: linear in L by construction."""
    return sum(scan_mac_breakdown(length, channels, state_dim, mode).values())
