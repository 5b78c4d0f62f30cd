import pytest
import numpy as np

import run_tests
from models import CheckReport
from services.errors import ConfigError
from services.synthetic import synthetic_pyramid
from utils.gradcheck import central_difference, check_gradient, relative_error
from utils.reports import determinism_hash, write_report
from utils.rng import SeededRng
from utils.serialization import load_pyramid, load_tensors, save_pyramid, save_tensors

@pytest.mark.unit
class TestGradCheck:
    """Finite-difference helpers."""

    def test_central_difference_of_quadratic(self):
        """d/dx sum(x²) = 2x."""
        x = np.array([1.0, -2.0, 0.5])
        assert np.allclose(central_difference(lambda v: float(np.sum(v ** 2)), x), 2 * x, atol=1e-8)

    def test_relative_error_floor(self):
        """Small values are compared absolutely."""
        assert relative_error(np.array([1e-9]), np.array([0.0]))[0] == 1e-9
        assert relative_error(np.array([200.0]), np.array([100.0]))[0] == 0.5

    def test_check_gradient_flags_wrong_adjoint(self):
        """A wrong analytic gradient fails the check."""
        x = np.array([1.0, 2.0])
        result = check_gradient(lambda v: float(np.sum(v ** 3)), x, np.array([3.0, 11.0]))
        assert not result.passed
        assert result.worst_index == 1

@pytest.mark.unit
class TestTensorFiles:
    """Flat tensor layout on disk."""

    def test_save_and_load(self, tmp_path):
        """Shapes and values survive a file round trip."""
        path = save_tensors(tmp_path / "t.json", {"a": np.arange(6.0).reshape(2, 3), "b": np.array([0.1])})
        loaded = load_tensors(path)
        assert loaded["a"].shape == (2, 3)
        assert np.array_equal(loaded["b"], np.array([0.1]))

    def test_value_count_must_fill_shape(self, tmp_path):
        """A record with too few values is rejected."""
        path = tmp_path / "bad.json"
        path.write_text('{"format": "como-tensors", "version": 1,'
                        ' "tensors": [{"name": "a", "shape": [2, 2], "values": [1, 2, 3]}]}', encoding="utf-8")
        with pytest.raises(ConfigError):
            load_tensors(path)

    def test_missing_file(self, tmp_path):
        """An unreadable file is a configuration error."""
        with pytest.raises(ConfigError):
            load_tensors(tmp_path / "missing.json")

    def test_pyramid_file(self, tmp_path, small_run):
        """Pyramids are stored under their level names."""
        pyr = synthetic_pyramid(small_run, SeededRng(seed=4))
        loaded = load_pyramid(save_pyramid(tmp_path / "pyr.json", pyr))
        assert np.array_equal(loaded.s4_ir, pyr.s4_ir)
        assert loaded.f5_rgb is None

    def test_incomplete_pyramid(self, tmp_path):
        """All six level maps are required."""
        path = save_tensors(tmp_path / "pyr.json", {"s3_rgb": np.zeros((2, 2, 1))})
        with pytest.raises(ConfigError, match="s4_rgb"):
            load_pyramid(path)

@pytest.mark.unit
class TestReports:
    """Report hashing and writing."""

    def test_hash_is_stable_and_shape_sensitive(self):
        """Same arrays, same hash; a reshape changes it."""
        x = np.arange(6.0)
        assert determinism_hash([x]) == determinism_hash([x.copy()])
        assert determinism_hash([x]) != determinism_hash([x.reshape(2, 3)])

    def test_write_report_creates_directories(self, tmp_path):
        """Parent directories are created on demand."""
        report = CheckReport(passed=True, total=0, failed=0, results=[])
        path = write_report(report, tmp_path / "nested" / "check.json")
        assert CheckReport.model_validate_json(path.read_text(encoding="utf-8")) == report

    def test_write_report_without_path(self):
        """No path, no file."""
        assert write_report(CheckReport(passed=True, total=0, failed=0, results=[]), None) is None

@pytest.mark.unit
class TestRunner:
    """Command lines built by run_tests.py."""

    def _args(self, **overrides):
        values = dict(file=None, function=None, type="all", keyword=None, verbose=False, coverage=False, failed=False)
        values.update(overrides)
        return type("Args", (), values)

    def test_marker_selection(self):
        """fast deselects slow tests; all adds no marker."""
        assert run_tests.pytest_command(self._args(type="fast"))[-2:] == ["-m", "not slow"]
        assert "-m" not in run_tests.pytest_command(self._args())

    def test_file_and_function(self):
        """Bare module names are looked up under tests/."""
        cmd = run_tests.pytest_command(self._args(file="test_ssm.py", function="TestRecurrence::test_two_step_decay"))
        assert "tests/test_ssm.py::TestRecurrence::test_two_step_decay" in cmd

    def test_coverage_uses_project_config(self):
        """Coverage reads coverage.ini."""
        cmd = run_tests.pytest_command(self._args(coverage=True))
        assert "--cov-config=coverage.ini" in cmd and "--cov" in cmd

    def test_check_runs_after_green_pytest(self, mocker):
        """--check runs the property suites with the filter and seed."""
        run = mocker.patch("run_tests.subprocess.run", return_value=mocker.Mock(returncode=0))
        mocker.patch("sys.argv", ["run_tests.py", "--type", "fast", "--check", "ssm", "--seed", "3"])
        assert run_tests.main() == 0
        assert run.call_args_list[-1].args[0][1:] == ["main.py", "check", "--filter", "ssm", "--seed", "3"]

    def test_failed_pytest_skips_check(self, mocker):
        """Suites are not run when pytest fails."""
        run = mocker.patch("run_tests.subprocess.run", return_value=mocker.Mock(returncode=1))
        mocker.patch("sys.argv", ["run_tests.py", "--check"])
        assert run_tests.main() == 1
        assert run.call_count == 1
