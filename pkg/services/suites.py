"""
Invariant suites run by `check`.

Each suite is a function of the run configuration that raises SuiteFailure
(or any ComoError) when its property does not hold. Suites register
themselves under "<module>.<name>" in definition order.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional
import numpy as np
from pydantic import BaseModel, ConfigDict

from models import (
    BlockConfig, Box, ChannelPlan, CheckReport, Discretization, MagnitudeNorm, OffsetRecord, PoolMode,
    RetentionMode, RunConfig, ScanDirection, ScanMode, SuiteResult, Variant,
)
from services import offsets, oracles
from services.blocks import (
    CrossBlockParams, cross_mamba_block, init_cross_block, init_single_block,
    single_mamba_block, single_mamba_block_backward,
)
from services.errors import ComoError, ConfigError, GeometryError
from services.flops import ablation_table, flop_estimate
from services.fusion import init_pipeline, neck_pipeline, run_pipeline
from services.scanpaths import (
    apply_scan, build_scan_plan, cross_plans, global_plans, max_step_distance, reverse_scan, verify_plan,
)
from services.ssm import (
    DiscreteSSMParams, SSMParams, cs6_scan, run_recurrence, s6_backward, s6_scan, selective_project,
    zoh_discretize,
)
from services.synthetic import METHODOLOGY_MAGNITUDES, methodology_fixture, synthetic_images
from services.tensors import adaptive_pool, conv2d, dropout
from utils.gradcheck import central_difference, relative_error
from utils.rng import SeededRng

logger = logging.getLogger("suites")

class SuiteFailure(AssertionError):
    """Exception raised when a suite's property is violated."""
    pass

class Suite(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    module: str
    name: str
    fn: Callable[[RunConfig], None]

    @property
    def key(self) -> str:
        return f"{self.module}.{self.name}"

SUITES: Dict[str, Suite] = {}

def suite(module: str):
    def register(fn: Callable[[RunConfig], None]):
        entry = Suite(module=module, name=fn.__name__, fn=fn)
        SUITES[entry.key] = entry
        return fn
    return register

def require(condition: bool, message: str) -> None:
    if not condition:
        raise SuiteFailure(message)

def random_ssm(rng: SeededRng, channels: int, state_dim: int) -> SSMParams:
    g = rng.generator()
    return SSMParams(
        A=-g.uniform(0.2, 2.0, state_dim),
        B_proj=g.normal(0.0, 0.5, (state_dim, channels)),
        C_proj=g.normal(0.0, 0.5, (state_dim, channels)),
        dt_proj=g.normal(0.0, 0.5, channels),
        dt_bias=float(g.uniform(-1.0, 0.5)),
        D=g.normal(0.0, 1.0, channels),
        B_fixed=g.normal(0.0, 1.0, state_dim),
        C_fixed=g.normal(0.0, 1.0, state_dim),
    )

def small_block_config(**overrides) -> BlockConfig:
    values = dict(target_grid=(4, 4), channels=4, state_dim=2, local_window=(2, 2), n_single=1, dropout=0.0)
    values.update(overrides)
    return BlockConfig(**values)

def small_run_config(seed: int = 0) -> RunConfig:
    return RunConfig(
        image_size=(64, 64),
        channels=ChannelPlan(c3=4, c4=6, c5=8),
        block=BlockConfig(target_grid=(2, 2), channels=8, state_dim=2, local_window=(1, 1), n_single=1),
        seed=seed,
    )

def _valid_window(size: int, g: np.random.Generator) -> int:
    options = [d for d in range(1, math.ceil(size / 3) + 1) if size % d == 0]
    return int(g.choice(options))

# tensors

@suite("tensors")
def conv_matches_loop_oracle(cfg: RunConfig) -> None:
    g = SeededRng(seed=cfg.seed, path=(1, 0)).generator()
    for k, (stride, padding, ksize) in enumerate([(1, 1, 3), (2, 1, 3), (1, 0, 1), (1, 0, 3)]):
        x = g.normal(size=(7 + k, 8, 3))
        kernel = g.normal(size=(ksize, ksize, 3, 4))
        require(np.array_equal(conv2d(x, kernel, stride, padding), oracles.loop_conv2d(x, kernel, stride, padding)),
                f"conv2d differs from the loop oracle (stride {stride}, padding {padding}, {ksize}x{ksize})")

@suite("tensors")
def pool_window_sums(cfg: RunConfig) -> None:
    g = SeededRng(seed=cfg.seed, path=(1, 1)).generator()
    x = g.normal(size=(16, 16, 2))
    for target in (8, 4, 2):
        area = (16 // target) ** 2
        avg = adaptive_pool(x, target, target, PoolMode.AVG)
        require(np.array_equal(avg * area, oracles.loop_window_sums(x, target, target)),
                f"average pool times area is not the window sum at target {target}")
        require(np.array_equal(adaptive_pool(x, target, target, PoolMode.MAX),
                               oracles.loop_window_max(x, target, target)),
                f"max pool differs from the window maximum at target {target}")

@suite("tensors")
def seeded_repeatability(cfg: RunConfig) -> None:
    rng = SeededRng(seed=cfg.seed, path=(1, 2))
    x = rng.child(0).normal((6, 6, 3))
    first = dropout(x, 0.3, rng.child(1), training=True)
    second = dropout(x, 0.3, rng.child(1), training=True)
    require(np.array_equal(first, second), "dropout with one seed is not repeatable")
    require(np.array_equal(rng.child(5).uniform(0, 1, 10), rng.child(5).uniform(0, 1, 10)),
            "uniform stream is not repeatable")

# ssm

@suite("ssm")
def zoh_matches_taylor(cfg: RunConfig) -> None:
    rng = SeededRng(seed=cfg.seed, path=(2, 0))
    for i in range(100):
        g = rng.child(i).generator()
        params = random_ssm(rng.child(i).child(0), channels=2, state_dim=4)
        dt = g.uniform(0.01, 0.5, 5)
        b = g.normal(size=(5, 4))
        disc = zoh_discretize(params, dt, b, b)
        oracle = oracles.taylor_exp(dt[:, None] * params.A[None, :])
        require(np.max(np.abs(disc.A_bar - oracle)) < 1e-12, f"instance {i}: exp(ΔA) off the series oracle")
        require(np.array_equal(disc.B_bar, dt[:, None] * b), f"instance {i}: B̄ is not Δ·B")
    half = SSMParams.model_construct(A=np.array([-1.0]), D=np.zeros(1), B_fixed=np.ones(1), C_fixed=np.ones(1))
    require(abs(zoh_discretize(half, np.array([math.log(2.0)])).A_bar[0, 0] - 0.5) <= 1e-15,
            "A=-1, Δ=ln 2 must give Ā=0.5")

@suite("ssm")
def discretization_stability(cfg: RunConfig) -> None:
    rng = SeededRng(seed=cfg.seed, path=(2, 1))
    for i in range(20):
        params = random_ssm(rng.child(i), channels=3, state_dim=4)
        x = rng.child(i).child(0).normal((12, 3), scale=3.0)
        dt, b, c = selective_project(x, params)
        a_bar = zoh_discretize(params, dt, b, c).A_bar
        require(bool(np.all((a_bar > 0) & (a_bar < 1))), f"instance {i}: Ā outside (0, 1)")

@suite("ssm")
def cumsum_collapse(cfg: RunConfig) -> None:
    g = SeededRng(seed=cfg.seed, path=(2, 2)).generator()
    for length in range(1, 257):
        x = g.normal(size=(length, 1))
        ones = np.ones((length, 1))
        disc = DiscreteSSMParams(A_bar=ones, B_bar=ones, C=ones, D=np.zeros(1))
        y = run_recurrence(x, x, disc)
        acc, expected = 0.0, []
        for v in x[:, 0]:
            acc += v
            expected.append(acc)
        require(np.array_equal(y[:, 0], np.array(expected)), f"L={length}: output is not the prefix sum")

@suite("ssm")
def recurrence_matches_loop_oracle(cfg: RunConfig) -> None:
    rng = SeededRng(seed=cfg.seed, path=(2, 3))
    params = random_ssm(rng.child(0), channels=2, state_dim=4)
    x = rng.child(1).normal((8, 2))
    dt, b, c = selective_project(x, params)
    require(np.array_equal(s6_scan(x, params), oracles.loop_recurrence(x, x, zoh_discretize(params, dt, b, c))),
            "s6_scan differs from the step-by-step oracle")
    x1, x2 = rng.child(2).normal((16, 2)), rng.child(3).normal((16, 2))
    dt, b, c = selective_project(x1, params)
    require(np.array_equal(cs6_scan(x1, x2, params), oracles.loop_recurrence(x1, x2, zoh_discretize(params, dt, b, c))),
            "cs6_scan differs from the step-by-step oracle")

@suite("ssm")
def cs6_degeneracies(cfg: RunConfig) -> None:
    rng = SeededRng(seed=cfg.seed, path=(2, 4))
    params = random_ssm(rng.child(0), channels=3, state_dim=4)
    x = rng.child(1).normal((10, 3))
    y = cs6_scan(np.zeros_like(x), x, params)
    require(np.array_equal(y, params.D[None, :] * x), "zero state input must leave only D ⊙ x2")
    no_skip = params.model_copy(update={"D": np.zeros(3)})
    require(np.array_equal(cs6_scan(x, np.zeros_like(x), no_skip), s6_scan(x, no_skip)),
            "zero skip input must equal the S6 readout with D = 0")
    require(np.array_equal(cs6_scan(x, x, params), s6_scan(x, params)), "cs6(x, x) must equal s6(x)")

@suite("ssm")
def time_invariant_linearity(cfg: RunConfig) -> None:
    rng = SeededRng(seed=cfg.seed, path=(2, 5))
    for i in range(50):
        g = rng.child(i).generator()
        params = random_ssm(rng.child(i).child(0), channels=3, state_dim=4)
        x, z = g.normal(size=(16, 3)), g.normal(size=(16, 3))
        alpha, beta = g.normal(), g.normal()
        lhs = s6_scan(alpha * x + beta * z, params, ScanMode.TIME_INVARIANT)
        rhs = alpha * s6_scan(x, params, ScanMode.TIME_INVARIANT) + beta * s6_scan(z, params, ScanMode.TIME_INVARIANT)
        scale = max(1.0, float(np.max(np.abs(lhs))))
        require(float(np.max(np.abs(lhs - rhs))) <= 1e-12 * scale, f"instance {i}: superposition violated")

@suite("ssm")
def gradient_matches_finite_differences(cfg: RunConfig) -> None:
    rng = SeededRng(seed=cfg.seed, path=(2, 6))
    fields = ("A", "B_proj", "C_proj", "dt_proj", "D", "B_fixed", "C_fixed")
    for i in range(20):
        g = rng.child(i).generator()
        length, n_state, channels = int(g.integers(3, 65)), int(g.integers(1, 9)), int(g.integers(1, 5))
        mode = ScanMode.SELECTIVE if i % 2 == 0 else ScanMode.TIME_INVARIANT
        variant = Discretization.EXACT if i % 4 == 3 else Discretization.APPROX
        params = random_ssm(rng.child(i).child(0), channels, n_state)
        x = g.normal(size=(length, channels))
        upstream = g.normal(size=(length, channels))
        grads = s6_backward(x, params, upstream, mode, variant)

        def loss(p: SSMParams, xs: np.ndarray) -> float:
            return float(np.sum(upstream * s6_scan(xs, p, mode, variant)))

        worst = float(np.max(relative_error(grads.x, central_difference(lambda v: loss(params, v), x))))
        for name in fields:
            numeric = central_difference(lambda v: loss(params.model_copy(update={name: v}), x), getattr(params, name))
            worst = max(worst, float(np.max(relative_error(getattr(grads, name), numeric))))
        numeric_bias = central_difference(
            lambda v: loss(params.model_copy(update={"dt_bias": float(v[0])}), x), np.array([params.dt_bias]))
        worst = max(worst, float(relative_error(grads.dt_bias, numeric_bias[0])))
        require(worst <= 1e-5, f"instance {i} ({mode.value}, {variant.value}): relative error {worst:.2e}")

def non_decaying_scan(grid: np.ndarray, plan, b: np.ndarray, c: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Scan a grid along one plan with Ā = 1 and token-independent B̄, C."""
    seq = apply_scan(grid, plan)
    length = seq.shape[0]
    disc = DiscreteSSMParams(A_bar=np.ones((length, b.size)), B_bar=np.tile(b, (length, 1)),
                             C=np.tile(c, (length, 1)), D=d)
    return reverse_scan(run_recurrence(seq, seq, disc), plan)

@suite("ssm")
def constant_grid_direction_pairs(cfg: RunConfig) -> None:
    # y_t = (C·B̄) t x + D x, so each forward/backward pair sums to (C·B̄)(L + 1) x + 2 D x
    rng = SeededRng(seed=cfg.seed, path=(2, 7))
    for i, ((h, w), window) in enumerate((((4, 4), (2, 2)), ((6, 6), (2, 2)), ((9, 9), (3, 3)),
                                          (cfg.block.target_grid, cfg.block.local_window))):
        g = rng.child(i).generator()
        channels, n_state = 3, 4
        b, c, d = g.normal(size=n_state), g.normal(size=n_state), g.normal(size=channels)
        value = g.normal(size=channels)
        grid = np.broadcast_to(value, (h, w, channels)).copy()
        plans = cross_plans(h, w, window, 6)
        weight = float(np.dot(c, b))
        expected = weight * (h * w + 1) * value + 2.0 * d * value
        merged = np.zeros((h, w, channels))
        for fwd, bwd in zip(plans[0::2], plans[1::2]):
            pair = non_decaying_scan(grid, fwd, b, c, d) + non_decaying_scan(grid, bwd, b, c, d)
            spread = float(np.max(np.abs(pair - expected[None, None, :])))
            scale = max(1.0, float(np.max(np.abs(expected))))
            require(spread <= 1e-12 * h * w * scale,
                    f"{h}x{w}, {fwd.direction.value}/{bwd.direction.value}: pair output not constant ({spread:.2e})")
            merged = merged + pair
        drift = float(np.max(np.abs(merged - 3.0 * expected[None, None, :])))
        require(drift <= 1e-11 * h * w * max(1.0, float(np.max(np.abs(expected)))),
                f"{h}x{w}: merged six-direction output is not spatially constant")

@suite("ssm")
def state_stays_bounded(cfg: RunConfig) -> None:
    rng = SeededRng(seed=cfg.seed, path=(2, 8))
    for i in range(50):
        g = rng.child(i).generator()
        length, n_state, channels = int(g.integers(1, 65)), int(g.integers(1, 9)), int(g.integers(1, 5))
        params = random_ssm(rng.child(i).child(0), channels, n_state)
        x = g.normal(0.0, 3.0, (length, channels))
        dt = g.uniform(1e-3, 2.0, length)
        b = g.normal(size=(length, n_state))
        disc = zoh_discretize(params, dt, b, b)
        _, states = run_recurrence(x, x, disc, keep_states=True)
        drive = float(np.max(np.abs(disc.B_bar[:, None, :] * x[:, :, None])))
        bound = drive / (1.0 - float(np.max(disc.A_bar)))
        peak = float(np.max(np.abs(states)))
        require(peak <= bound * (1.0 + 1e-12), f"instance {i}: |h| reached {peak:.4g} above {bound:.4g}")

# scanpaths

@suite("scanpaths")
def plan_bijection(cfg: RunConfig) -> None:
    for (h, w), window in (((4, 4), (2, 2)), ((8, 8), (2, 2)), ((9, 9), (3, 3)), ((6, 10), (2, 2)),
                           (cfg.block.target_grid, cfg.block.local_window)):
        for direction in ScanDirection:
            plan = build_scan_plan(h, w, direction, window)
            problems = verify_plan(plan)
            require(not problems, f"{direction.value} on {h}x{w}: {'; '.join(problems)}")

@suite("scanpaths")
def round_trip(cfg: RunConfig) -> None:
    rng = SeededRng(seed=cfg.seed, path=(3, 0))
    for i in range(200):
        g = rng.child(i).generator()
        h, w, c = int(g.integers(1, 33)), int(g.integers(1, 33)), int(g.integers(1, 9))
        window = (_valid_window(h, g), _valid_window(w, g))
        x = g.normal(size=(h, w, c))
        for direction in ScanDirection:
            plan = build_scan_plan(h, w, direction, window)
            require(np.array_equal(reverse_scan(apply_scan(x, plan), plan), x),
                    f"grid {h}x{w}x{c}, {direction.value}: reverse_scan(apply_scan(X)) != X")

@suite("scanpaths")
def local_window_constraint(cfg: RunConfig) -> None:
    for grid, window in (((8, 8), (4, 4)), ((8, 8), (3, 3)), ((9, 9), (2, 2)), ((6, 6), (3, 3))):
        try:
            build_scan_plan(grid[0], grid[1], ScanDirection.LOCAL_FWD, window)
        except GeometryError:
            continue
        raise SuiteFailure(f"window {window} on grid {grid} was accepted")
    plan = build_scan_plan(8, 8, ScanDirection.LOCAL_FWD, (2, 2))
    require(not verify_plan(plan), "accepted local plan is not a bijection")

@suite("scanpaths")
def local_scan_locality(cfg: RunConfig) -> None:
    for size, win in ((8, 2), (9, 3), (12, 4)):
        plan = build_scan_plan(size, size, ScanDirection.LOCAL_FWD, (win, win))
        require(max_step_distance(plan, within_window=True) <= win - 1,
                f"{size}x{size} with {win}x{win} windows: in-window step exceeds {win - 1}")
        require(max_step_distance(build_scan_plan(size, size, ScanDirection.ROW_FWD)) == size - 1,
                "row-major scan should jump across the full row width")

@suite("scanpaths")
def direction_counts(cfg: RunConfig) -> None:
    h, w = cfg.block.target_grid
    require(len(global_plans(h, w)) == 4, "single block must use 4 plans")
    require(len(cross_plans(h, w, cfg.block.local_window, 6)) == 6, "cross block must use 6 plans")

# blocks

@suite("blocks")
def shape_preservation(cfg: RunConfig) -> None:
    block = small_block_config()
    rng = SeededRng(seed=cfg.seed, path=(4, 0))
    params = init_single_block(block, rng.child(0))
    out = single_mamba_block(rng.child(1).normal((8, 8, 4)), params, block)
    require(out.shape == (4, 4, 4), f"single block output shape {out.shape}")
    again = single_mamba_block(out, params, block)
    require(again.shape == out.shape, "single block does not preserve the token grid")
    y1, y2 = cross_mamba_block(out, again, init_cross_block(block, rng.child(2)), block)
    require(y1.shape == y2.shape == out.shape, "cross block does not preserve the token grid")

@suite("blocks")
def cross_role_symmetry(cfg: RunConfig) -> None:
    block = small_block_config()
    rng = SeededRng(seed=cfg.seed, path=(4, 1))
    shared = init_cross_block(block, rng.child(0)).first
    params = CrossBlockParams(first=shared, second=shared)
    f = rng.child(1).normal((4, 4, 4))
    y1, y2 = cross_mamba_block(f, f, params, block)
    require(np.array_equal(y1, y2), "equal inputs with shared parameters must give Y1 == Y2")
    y1, y2 = cross_mamba_block(f, rng.child(2).normal((4, 4, 4)), params, block)
    require(float(np.max(np.abs(y1 - y2))) > 1e-9, "distinct inputs should break the role symmetry")

@suite("blocks")
def eval_determinism(cfg: RunConfig) -> None:
    block = small_block_config(dropout=0.1)
    rng = SeededRng(seed=cfg.seed, path=(4, 2))
    params = init_single_block(block, rng.child(0))
    x = rng.child(1).normal((8, 8, 4))
    require(np.array_equal(single_mamba_block(x, params, block, rng.child(2)),
                           single_mamba_block(x, params, block, rng.child(3))),
            "evaluation mode must not depend on the dropout stream")
    require(np.array_equal(single_mamba_block(x, params, block, rng.child(2), training=True),
                           single_mamba_block(x, params, block, rng.child(2), training=True)),
            "training mode must be repeatable for one seed")

@suite("blocks")
def single_block_gradient(cfg: RunConfig) -> None:
    block = small_block_config(channels=2, state_dim=2)
    rng = SeededRng(seed=cfg.seed, path=(4, 3))
    params = init_single_block(block, rng.child(0))
    x = rng.child(1).normal((8, 8, 2))
    upstream = rng.child(2).normal((4, 4, 2))
    grads = single_mamba_block_backward(x, params, block, upstream)
    for name in ("w1", "w2", "pos_embed"):
        numeric = central_difference(
            lambda v: float(np.sum(upstream * single_mamba_block(x, params.model_copy(update={name: v}), block))),
            getattr(params, name))
        worst = float(np.max(relative_error(getattr(grads, name), numeric)))
        require(worst <= 1e-4, f"{name}: relative error {worst:.2e}")

# fusion

@suite("fusion")
def scale_arithmetic(cfg: RunConfig) -> None:
    small = small_run_config(cfg.seed)
    rng = SeededRng(seed=cfg.seed, path=(5, 0))
    rgb, ir = synthetic_images(small, rng.child(0))
    _, out = run_pipeline(rgb, ir, init_pipeline(small, rng.child(1)), small)
    shapes = [p.shape[:2] for p in (out.p3, out.p4, out.p5)]
    require(shapes == [(8, 8), (4, 4), (2, 2)], f"neck output sizes {shapes}")
    require(all(bool(np.all(np.isfinite(p))) for p in (out.p3, out.p4, out.p5)), "non-finite neck output")

@suite("fusion")
def guidance_and_modalities_reach_p3(cfg: RunConfig) -> None:
    small = small_run_config(cfg.seed)
    rng = SeededRng(seed=cfg.seed, path=(5, 1))
    rgb, ir = synthetic_images(small, rng.child(0))
    params = init_pipeline(small, rng.child(1))
    pyr, out = run_pipeline(rgb, ir, params, small)
    nudged = pyr.model_copy(update={"f5_rgb": pyr.f5_rgb + 1e-3})
    require(float(np.linalg.norm(neck_pipeline(nudged, params.neck).p3 - out.p3)) > 0,
            "perturbing F5 does not reach P3")
    no_ir = pyr.model_copy(update={"s3_ir": np.zeros_like(pyr.s3_ir)})
    require(float(np.linalg.norm(neck_pipeline(no_ir, params.neck).p3 - out.p3)) > 0,
            "zeroing S3_ir does not change P3")

@suite("fusion")
def ablation_variants_run(cfg: RunConfig) -> None:
    small = small_run_config(cfg.seed)
    rng = SeededRng(seed=cfg.seed, path=(5, 2))
    rgb, ir = synthetic_images(small, rng.child(0))
    for variant in Variant:
        variant_cfg = small.with_variant(variant)
        pyr, out = run_pipeline(rgb, ir, init_pipeline(variant_cfg, rng.child(1)), variant_cfg)
        shapes = [p.shape for p in (out.p3, out.p4, out.p5)]
        require(shapes == [(8, 8, 4), (4, 4, 6), (2, 2, 8)], f"{variant.value}: neck output shapes {shapes}")
        require(all(bool(np.all(np.isfinite(p))) for p in (out.p3, out.p4, out.p5)),
                f"{variant.value}: non-finite neck output")
        bypassed = np.array_equal(pyr.f5_rgb, pyr.s5_rgb) and np.array_equal(pyr.f5_ir, pyr.s5_ir)
        require(bypassed != variant_cfg.fusion.use_interaction,
                f"{variant.value}: F5 must equal S5 exactly when the interaction stage is off")

# offsets

@suite("offsets")
def hand_arithmetic(cfg: RunConfig) -> None:
    require(offsets.intersection_area(20, 20, 3, 4) == 272, "20x20 block shifted by (3, 4) must keep 272 px²")
    require(offsets.intersection_area(20, 20, 3, 4, RetentionMode.LITERAL) == 272, "literal mode must agree here")
    require(offsets.retention_by_level(4, 4, [8, 16, 32]) == [0.25, 0.5625, 0.765625],
            "retention for a (4, 4) offset at blocks 8/16/32")

@suite("offsets")
def retention_monotone(cfg: RunConfig) -> None:
    levels = cfg.offsets.levels
    for d in range(0, 2 * max(levels) + 1):
        fractions = offsets.retention_by_level(d, d / 2, sorted(levels))
        require(all(a <= b for a, b in zip(fractions, fractions[1:])), f"offset {d}: not monotone in block size")
    areas = [offsets.intersection_area(8, 8, d, 0) for d in range(0, 17)]
    require(all(a >= b for a, b in zip(areas, areas[1:])), "clamped area must not grow with the offset")

@suite("offsets")
def methodology_fixture_recovered(cfg: RunConfig) -> None:
    report = offsets.build_report(methodology_fixture(), cfg.offsets.model_copy(update={"gate": 20.0}))
    hist = report.histogram
    require(report.matched == 1000, f"expected 1000 matches, got {report.matched}")
    require(hist.misaligned == len(METHODOLOGY_MAGNITUDES), f"misaligned count {hist.misaligned}")
    require(hist.misaligned_fraction == 0.35, f"misaligned fraction {hist.misaligned_fraction}")
    require(hist.within_1_to_5_fraction == 0.9, f"1..5 px fraction {hist.within_1_to_5_fraction}")

@suite("offsets")
def matching_symmetry(cfg: RunConfig) -> None:
    g = SeededRng(seed=cfg.seed, path=(6, 0)).generator()
    boxes_a = [{"x": 50.0 * k, "y": 30.0, "w": 10.0, "h": 12.0} for k in range(8)]
    boxes_b = [{"x": b["x"] + g.uniform(-4, 4), "y": b["y"] + g.uniform(-4, 4), "w": 10.0, "h": 12.0}
               for b in boxes_a]
    forward = offsets.match_annotations(boxes_a, boxes_b, gate=10.0)
    backward = offsets.match_annotations(boxes_b, boxes_a, gate=10.0)
    pairs = {(r.box_a, r.box_b): (r.dx, r.dy) for r in forward.records}
    for r in backward.records:
        dx, dy = pairs[(r.box_b, r.box_a)]
        require(r.dx == -dx and r.dy == -dy, "swapping the lists must negate every offset")

@suite("offsets")
def histogram_partition(cfg: RunConfig) -> None:
    rng = SeededRng(seed=cfg.seed, path=(6, 1))
    box = Box(x=0.0, y=0.0, w=10.0, h=10.0)
    for i in range(50):
        g = rng.child(i).generator()
        count = int(g.integers(0, 200))
        spread = float(g.choice([0.5, 3.0, 20.0]))
        records = [OffsetRecord(object_id=str(k), box_a=box, box_b=box,
                                dx=float(g.normal(0.0, spread)), dy=float(g.normal(0.0, spread)))
                   for k in range(count)]
        for norm in MagnitudeNorm:
            hist = offsets.offset_stats(records, cfg.offsets.bin_edges, norm)
            require(hist.total == count, f"instance {i}: total {hist.total} != {count} records")
            require(sum(hist.counts) == hist.total,
                    f"instance {i} ({norm.value}): bin counts sum to {sum(hist.counts)}, total {hist.total}")
            if hist.bin_edges[1:2] == [1.0]:
                require(hist.counts[0] + hist.misaligned == hist.total,
                        f"instance {i} ({norm.value}): first bin and misaligned objects do not partition the set")

# flops

@suite("flops")
def linear_scaling(cfg: RunConfig) -> None:
    base = flop_estimate(cfg, 64, include_neck=False)
    doubled = flop_estimate(cfg, 128, include_neck=False)
    require(doubled.mamba_total == 2 * base.mamba_total, "mamba count must double with L")
    require(doubled.attention_quadratic == 4 * base.attention_quadratic, "attention L² term must quadruple")

@suite("flops")
def closed_form_count(cfg: RunConfig) -> None:
    small = RunConfig(block=BlockConfig(channels=32, state_dim=4, n_single=3, direction_count=6),
                      channels=ChannelPlan(c5=32))
    report = flop_estimate(small, 64, include_neck=False)
    length, c, n = 64, 32, 4
    per_scan = length * (5 * n * c + 2 * c + 2 * n)
    expected = 6 * 2 * length * c * (2 * c) + 6 * 4 * per_scan + 12 * per_scan
    require(report.mamba_total == expected, f"{report.mamba_total} != closed form {expected}")

@suite("flops")
def mamba_below_attention(cfg: RunConfig) -> None:
    report = flop_estimate(cfg.model_copy(update={"fusion": cfg.fusion.model_copy(update={"use_interaction": True})}))
    require(report.mamba_total < report.attention_total,
            f"mamba interaction ({report.mamba_total}) is not cheaper than attention ({report.attention_total})")

@suite("flops")
def ablation_counts(cfg: RunConfig) -> None:
    rows = {row.variant: row for row in ablation_table(cfg)}
    require(set(rows) == set(Variant), "every ablation variant needs a row")
    for variant in (Variant.BASELINE, Variant.OGF):
        require(rows[variant].interaction_macs == 0, f"{variant.value} has no interaction stage but counts MACs")
    require(rows[Variant.MIB].interaction_macs < rows[Variant.MIB_LS].interaction_macs,
            "local scans must add to the interaction count")
    require(rows[Variant.MIB].neck_macs == rows[Variant.BASELINE].neck_macs,
            "the interaction stage must not change the neck count")
    require(rows[Variant.BASELINE].neck_macs < rows[Variant.OGF].neck_macs,
            "concatenation fusion must be cheaper than the guided units")
    require(rows[Variant.FULL].total_macs == max(r.total_macs for r in rows.values()),
            "the full model must be the most expensive variant")

# runner

def select_suites(name_filter: Optional[str] = None) -> List[Suite]:
    selected = [s for s in SUITES.values() if not name_filter or s.key.startswith(name_filter)]
    if name_filter and not selected:
        raise ConfigError(f"no suite matches '{name_filter}'", "filter")
    return selected

def run_suite(entry: Suite, cfg: RunConfig) -> SuiteResult:
    start = time.perf_counter()
    try:
        entry.fn(cfg)
        passed, detail = True, ""
    except (SuiteFailure, ComoError) as e:
        passed, detail = False, f"{type(e).__name__}: {e}"
        logger.warning(f"Suite {entry.key} failed: {detail}")
    return SuiteResult(module=entry.module, name=entry.name, passed=passed, detail=detail,
                       seconds=round(time.perf_counter() - start, 4))

def run_suites(cfg: RunConfig, name_filter: Optional[str] = None, jobs: int = 1) -> CheckReport:
    selected = select_suites(name_filter)
    logger.info(f"Running {len(selected)} suites with {jobs} worker(s)")
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda s: run_suite(s, cfg), selected))
    else:
        results = [run_suite(s, cfg) for s in selected]
    failed = sum(1 for r in results if not r.passed)
    return CheckReport(filter=name_filter, passed=failed == 0, total=len(results), failed=failed, results=results)
