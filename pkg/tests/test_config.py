import json
import pytest
from pathlib import Path

from config import Settings, get_settings, load_run_config
from models import VARIANTS, BlockConfig, Discretization, FusionUnit, RunConfig, Variant
from services.errors import ConfigError

@pytest.mark.unit
class TestRunConfig:
    """Validation of the run configuration models."""

    def test_defaults(self):
        """Defaults describe the 640x640 / 8x8 / 2x2 setting."""
        cfg = RunConfig()
        assert cfg.image_size == (640, 640)
        assert cfg.block.target_grid == (8, 8)
        assert cfg.block.local_window == (2, 2)
        assert cfg.block.hidden_dim == 256
        assert cfg.block.discretization == Discretization.APPROX
        assert cfg.offsets.reference_modality == "ir"
        assert cfg.token_count == 64

    def test_image_must_divide_by_32(self):
        """S5 is H/32."""
        with pytest.raises(ValueError):
            RunConfig(image_size=(100, 640))

    def test_window_bound(self):
        """A 4x4 window on an 8x8 grid exceeds a third of the grid."""
        with pytest.raises(ValueError):
            BlockConfig(local_window=(4, 4))

    def test_channels_must_agree(self):
        """The block width is the S5 channel count."""
        with pytest.raises(ValueError):
            RunConfig(block=BlockConfig(channels=64))

    def test_grid_must_fit_s5(self):
        """The token grid cannot be larger than S5."""
        with pytest.raises(ValueError):
            RunConfig(image_size=(128, 128))

    def test_shipped_default_file_matches_models(self):
        """configs/default.json holds exactly the model defaults."""
        path = Path(__file__).resolve().parent.parent / "configs" / "default.json"
        assert load_run_config(path) == RunConfig()

    def test_variants_set_stage_scans_and_unit(self):
        """Each variant copies the configuration with its own three switches."""
        cfg = RunConfig()
        for variant, (use_interaction, direction_count, unit) in VARIANTS.items():
            copy = cfg.with_variant(variant)
            assert copy.fusion.use_interaction is use_interaction
            assert copy.block.direction_count == direction_count
            assert copy.fusion.unit == unit
            assert copy.channels == cfg.channels and copy.seed == cfg.seed
        assert cfg.with_variant(Variant.FULL) == cfg
        assert cfg.with_variant("baseline").fusion.unit == FusionUnit.CONCAT

@pytest.mark.unit
class TestLoadRunConfig:
    """JSON config files and overrides."""

    def test_no_file_gives_defaults(self):
        """Missing --config means defaults."""
        assert load_run_config() == RunConfig()

    def test_seed_override(self, small_config_file):
        """Command-line values win over the file; None means not given."""
        assert load_run_config(small_config_file).seed == 7
        assert load_run_config(small_config_file, {"seed": 42}).seed == 42
        assert load_run_config(small_config_file, {"seed": None}).seed == 7

    def test_field_path_in_error(self, tmp_path):
        """Validation errors name the dotted field."""
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"block": {"state_dim": 0}}), encoding="utf-8")
        with pytest.raises(ConfigError) as excinfo:
            load_run_config(path)
        assert excinfo.value.field == "block.state_dim"

    def test_invalid_json(self, tmp_path):
        """Malformed JSON is a configuration error."""
        path = tmp_path / "bad.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_run_config(path)

    def test_missing_file(self, tmp_path):
        """Unreadable files are configuration errors."""
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "nope.json")

@pytest.mark.unit
class TestSettings:
    """Environment settings."""

    def test_output_dir_from_environment(self, output_dir):
        """COMO_OUTPUT_DIR overrides the report directory and is created."""
        settings = get_settings()
        assert settings.OUTPUT_DIR == output_dir
        assert output_dir.is_dir()

    def test_default_output_dir(self, monkeypatch, tmp_path):
        """Without the variable reports go to ./reports."""
        monkeypatch.delenv("COMO_OUTPUT_DIR", raising=False)
        monkeypatch.chdir(tmp_path)
        assert Settings().OUTPUT_DIR == Path("./reports")
