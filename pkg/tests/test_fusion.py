import pytest
import numpy as np

from models import FusionUnit, Variant
from services import oracles
from services.errors import ConfigError, DimensionError, GeometryError
from services.fusion import (
    NeckWeights, OGFWeights, PipelineParams, align_high, concat_fusion, conv_block, init_neck, init_ogf,
    init_pipeline, interact_pyramid, neck_macs, neck_pipeline, ogf_unit, run_pipeline, validate_pyramid,
)
from services.synthetic import synthetic_images, synthetic_pyramid
from services.tensors import silu, upsample_nearest
from utils.rng import SeededRng

@pytest.fixture
def pipeline(small_run):
    """Parameters and an end-to-end run of the small configuration."""
    rng = SeededRng(seed=small_run.seed)
    params = init_pipeline(small_run, rng.child(0))
    rgb, ir = synthetic_images(small_run, rng.child(1))
    pyr, out = run_pipeline(rgb, ir, params, small_run)
    return params, pyr, out

@pytest.mark.unit
class TestOGFUnit:
    """Offset-guided fusion unit."""

    def test_output_shape(self, small_run, rng):
        """Output has the low level's size and c_out channels."""
        weights = init_ogf(8 + 2 * 6, 6, small_run.fusion, rng)
        out = ogf_unit(np.ones((4, 4, 8)), np.ones((4, 4, 6)), np.ones((4, 4, 6)), weights)
        assert out.shape == (4, 4, 6)

    def test_branches_add(self, small_run, rng):
        """Two identical branches give twice the single-branch output."""
        one = init_ogf(3, 2, small_run.fusion.model_copy(update={"branch_count": 1}), rng)
        two = OGFWeights(branches=[one.branches[0], one.branches[0]], rep=one.rep)
        x = rng.child(1).normal((5, 5, 1))
        single = ogf_unit(x, x, x, one)
        assert np.array_equal(ogf_unit(x, x, x, two), single + single)

    def test_unaligned_guidance_rejected(self, small_run, rng):
        """F_high must be realigned before concatenation."""
        weights = init_ogf(8 + 2 * 6, 6, small_run.fusion, rng)
        with pytest.raises(GeometryError):
            ogf_unit(np.ones((2, 2, 8)), np.ones((4, 4, 6)), np.ones((4, 4, 6)), weights)

    def test_branch_count_checked(self, small_run, rng):
        """Weights must provide the configured number of branches."""
        weights = init_ogf(3, 2, small_run.fusion.model_copy(update={"branch_count": 1}), rng)
        with pytest.raises(DimensionError):
            ogf_unit(np.ones((2, 2, 1)), np.ones((2, 2, 1)), np.ones((2, 2, 1)), weights, small_run.fusion)

    def test_align_high_upsamples(self):
        """Guidance is resized to the target grid."""
        assert align_high(np.ones((2, 2, 3)), np.zeros((8, 8, 1))).shape == (8, 8, 3)

    def test_matches_loop_convolutions(self, small_run, rng):
        """Each branch is silu(conv3x3) plus its 1x1 reconstruction, summed over branches."""
        weights = init_ogf(2 + 3 + 3, 4, small_run.fusion, rng.child(0))
        f_high = rng.child(1).normal((5, 5, 2))
        s_rgb, s_ir = rng.child(2).normal((5, 5, 3)), rng.child(3).normal((5, 5, 3))
        x = np.concatenate([f_high, s_rgb, s_ir], axis=2)
        expected = None
        for kernel in weights.branches:
            cb = silu(oracles.loop_conv2d(x, kernel, 1, 1))
            term = cb + oracles.loop_conv2d(cb, weights.rep, 1, 0)
            expected = term if expected is None else expected + term
        assert np.array_equal(ogf_unit(f_high, s_rgb, s_ir, weights, small_run.fusion), expected)

    def test_zero_weights(self, small_run, rng):
        """Zero kernels give zero output; a zero 1x1 kernel leaves the summed ConvBlocks."""
        weights = init_ogf(3, 2, small_run.fusion, rng.child(0))
        x = rng.child(1).normal((4, 4, 1))
        silent = OGFWeights(branches=[np.zeros_like(k) for k in weights.branches], rep=np.zeros_like(weights.rep))
        assert not np.any(ogf_unit(x, x, x, silent))
        no_rep = weights.model_copy(update={"rep": np.zeros_like(weights.rep)})
        xs = np.concatenate([x, x, x], axis=2)
        cb = [conv_block(xs, k) for k in weights.branches]
        assert np.array_equal(ogf_unit(x, x, x, no_rep), cb[0] + cb[1])

@pytest.mark.integration
class TestNeckPipeline:
    """Backbone stubs, MIB and neck end to end."""

    def test_scale_arithmetic(self, pipeline):
        """P3/P4/P5 sit at H/8, H/16, H/32."""
        _, pyr, out = pipeline
        assert out.p3.shape == (8, 8, 4)
        assert out.p4.shape == (4, 4, 6)
        assert out.p5.shape == (2, 2, 8)
        assert pyr.f5_rgb.shape == (2, 2, 8)

    def test_outputs_finite(self, pipeline):
        """No NaN or infinity anywhere in the outputs."""
        _, _, out = pipeline
        assert all(np.all(np.isfinite(p)) for p in (out.p3, out.p4, out.p5))

    def test_guidance_reaches_p3(self, pipeline):
        """Perturbing the interacted S5 features changes P3."""
        params, pyr, out = pipeline
        nudged = pyr.model_copy(update={"f5_ir": pyr.f5_ir + 1e-3})
        assert np.linalg.norm(neck_pipeline(nudged, params.neck).p3 - out.p3) > 0

    @pytest.mark.parametrize("field", ["s3_rgb", "s3_ir", "s4_ir"])
    def test_both_modalities_reach_p3(self, pipeline, field):
        """Zeroing a low-level map of either modality changes P3."""
        params, pyr, out = pipeline
        zeroed = pyr.model_copy(update={field: np.zeros_like(getattr(pyr, field))})
        assert np.linalg.norm(neck_pipeline(zeroed, params.neck).p3 - out.p3) > 0

    def test_replayed_pyramid(self, small_run):
        """A synthetic pyramid goes through interaction and the neck."""
        rng = SeededRng(seed=3)
        params = init_pipeline(small_run, rng.child(0))
        pyr = interact_pyramid(synthetic_pyramid(small_run, rng.child(1)), params, small_run)
        out = neck_pipeline(pyr, params.neck, small_run.fusion)
        assert out.p3.shape == (8, 8, 4)

    def test_matches_straight_line_oracle(self, pipeline):
        """The neck equals its dataflow written out with loop convolutions."""
        params, pyr, out = pipeline
        w = params.neck

        def block(x, k, stride=1):
            return silu(oracles.loop_conv2d(x, k, stride, k.shape[0] // 2))

        def ogf(f_high, s_rgb, s_ir, weights):
            x = np.concatenate([f_high, s_rgb, s_ir], axis=2)
            total = None
            for kernel in weights.branches:
                cb = block(x, kernel)
                term = cb + oracles.loop_conv2d(cb, weights.rep)
                total = term if total is None else total + term
            return total

        top5 = block(np.concatenate([pyr.f5_rgb, pyr.f5_ir], axis=2), w.top5)
        p4_top = ogf(upsample_nearest(top5, 4, 4), pyr.s4_rgb, pyr.s4_ir, w.ogf4)
        p3 = ogf(upsample_nearest(p4_top, 8, 8), pyr.s3_rgb, pyr.s3_ir, w.ogf3)
        p4 = block(np.concatenate([block(p3, w.down3, 2), p4_top], axis=2), w.merge4)
        p5 = block(np.concatenate([block(p4, w.down4, 2), top5], axis=2), w.merge5)
        for got, expected in ((out.top5, top5), (out.p4_top, p4_top), (out.p3, p3), (out.p4, p4), (out.p5, p5)):
            assert np.array_equal(got, expected)

@pytest.mark.unit
class TestPyramidValidation:
    """Geometry checks on S3/S4/S5."""

    def test_accepts_synthetic_pyramid(self, small_run):
        """Synthetic pyramids follow the channel plan."""
        pyr = synthetic_pyramid(small_run, SeededRng())
        validate_pyramid(pyr, small_run.channels, require_interacted=False)

    def test_requires_interacted_pair(self, small_run):
        """The neck needs F5 for both modalities."""
        with pytest.raises(GeometryError):
            validate_pyramid(synthetic_pyramid(small_run, SeededRng()))

    def test_level_sizes_must_halve(self, small_run):
        """S4 must be half of S3."""
        pyr = synthetic_pyramid(small_run, SeededRng())
        broken = pyr.model_copy(update={"s4_rgb": np.zeros((3, 3, 6)), "s4_ir": np.zeros((3, 3, 6))})
        with pytest.raises(GeometryError):
            validate_pyramid(broken, require_interacted=False)

    def test_channel_plan_checked(self, small_run):
        """Channels must match the plan."""
        pyr = synthetic_pyramid(small_run, SeededRng())
        broken = pyr.model_copy(update={"s3_ir": np.zeros((8, 8, 5))})
        with pytest.raises(GeometryError):
            validate_pyramid(broken, small_run.channels, require_interacted=False)

@pytest.mark.unit
class TestPipelineParams:
    """Parameter bundles."""

    def test_tensor_round_trip(self, small_run, pipeline):
        """Flattened parameters rebuild an equal pipeline."""
        params, _, _ = pipeline
        restored = PipelineParams.from_tensors(params.to_tensors(), small_run)
        assert np.array_equal(restored.neck.ogf3.rep, params.neck.ogf3.rep)
        assert np.array_equal(restored.backbone_ir.stem, params.backbone_ir.stem)

    def test_missing_tensor(self, small_run, pipeline):
        """An incomplete bundle is a configuration error naming the tensor."""
        params, _, _ = pipeline
        tensors = params.to_tensors()
        del tensors["neck.merge5"]
        with pytest.raises(ConfigError, match="neck.merge5"):
            PipelineParams.from_tensors(tensors, small_run)

    def test_neck_macs_positive(self, small_run):
        """Every neck stage has a positive multiply-add count."""
        macs = neck_macs(small_run)
        assert set(macs) == {"top5", "fuse4", "fuse3", "down3", "merge4", "down4", "merge5"}
        assert all(v > 0 for v in macs.values())

@pytest.mark.integration
class TestAblationVariants:
    """Interaction bypass and concatenation fusion."""

    def test_concat_neck_weights(self, small_run, rng):
        """The concat unit carries one 1x1 kernel per scale and no guided units."""
        neck = init_neck(small_run.channels, small_run.fusion.model_copy(update={"unit": FusionUnit.CONCAT}), rng)
        assert neck.unit == FusionUnit.CONCAT
        assert neck.ogf4 is None and neck.ogf3 is None
        assert neck.fuse4.shape == (1, 1, 8 + 2 * 6, 6)
        assert neck.fuse3.shape == (1, 1, 6 + 2 * 4, 4)

    def test_concat_fusion_is_pointwise_conv_block(self, rng):
        """silu of a 1x1 convolution over the concatenation."""
        kernel = rng.child(0).normal((1, 1, 5, 3))
        f_high = rng.child(1).normal((4, 4, 1))
        s_rgb, s_ir = rng.child(2).normal((4, 4, 2)), rng.child(3).normal((4, 4, 2))
        expected = silu(oracles.loop_conv2d(np.concatenate([f_high, s_rgb, s_ir], axis=2), kernel))
        assert np.array_equal(concat_fusion(f_high, s_rgb, s_ir, kernel), expected)

    def test_neck_needs_one_unit_per_scale(self, small_run, rng):
        """Guided and concat weights cannot be mixed or both missing."""
        neck = init_neck(small_run.channels, small_run.fusion, rng)
        with pytest.raises(ValueError):
            NeckWeights.model_validate({**dict(neck), "fuse4": np.zeros((1, 1, 20, 6))})
        with pytest.raises(ValueError):
            NeckWeights.model_validate({**dict(neck), "ogf3": None})

    def test_unit_mismatch_is_config_error(self, small_run, pipeline):
        """Guided weights with a concat configuration are rejected."""
        params, pyr, _ = pipeline
        with pytest.raises(ConfigError):
            neck_pipeline(pyr, params.neck, small_run.fusion.model_copy(update={"unit": FusionUnit.CONCAT}))

    @pytest.mark.parametrize("variant", list(Variant))
    def test_every_variant_runs(self, small_run, variant):
        """All module combinations produce finite maps at the three scales."""
        cfg = small_run.with_variant(variant)
        rng = SeededRng(seed=cfg.seed)
        rgb, ir = synthetic_images(cfg, rng.child(1))
        pyr, out = run_pipeline(rgb, ir, init_pipeline(cfg, rng.child(0)), cfg)
        assert [p.shape for p in (out.p3, out.p4, out.p5)] == [(8, 8, 4), (4, 4, 6), (2, 2, 8)]
        assert all(np.all(np.isfinite(p)) for p in (out.p3, out.p4, out.p5))
        assert np.array_equal(pyr.f5_rgb, pyr.s5_rgb) == (not cfg.fusion.use_interaction)

    def test_bypass_leaves_backbone_features(self, small_run):
        """Without the interaction stage the neck sees S5 itself."""
        cfg = small_run.with_variant(Variant.OGF)
        rng = SeededRng(seed=cfg.seed)
        params = init_pipeline(cfg, rng.child(0))
        pyr = interact_pyramid(synthetic_pyramid(cfg, rng.child(1)), params, cfg)
        assert np.array_equal(pyr.f5_ir, pyr.s5_ir)
        assert pyr.f5_ir is not pyr.s5_ir

    def test_concat_parameters_round_trip(self, small_run):
        """A concat bundle saves fuse kernels and reloads into the same neck."""
        cfg = small_run.with_variant(Variant.BASELINE)
        params = init_pipeline(cfg, SeededRng(seed=5))
        tensors = params.to_tensors()
        assert "neck.fuse4" in tensors and not any(k.startswith("neck.ogf") for k in tensors)
        restored = PipelineParams.from_tensors(tensors, cfg)
        assert np.array_equal(restored.neck.fuse3, params.neck.fuse3)

    def test_concat_neck_is_cheaper(self, small_run):
        """One pointwise kernel costs less than the guided branches."""
        guided = neck_macs(small_run)
        plain = neck_macs(small_run.with_variant(Variant.BASELINE))
        assert plain["fuse4"] < guided["fuse4"] and plain["fuse3"] < guided["fuse3"]
        assert plain["top5"] == guided["top5"]
