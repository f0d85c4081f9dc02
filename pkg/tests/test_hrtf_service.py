import numpy as np
import pytest

from app.core.exceptions import (
    ContainerParseError,
    InsufficientDirectionsError,
    UnsupportedSampleRateError,
    ValidationException,
)
from app.models.domain import HRTFSet, coefficient_count
from app.services import hrtf_service, sh_core


def toy_set(sample_rate=48000.0, weights=None):
    return HRTFSet(
        elevation=np.array([0.5, 2.0]),
        azimuth=np.array([0.0, -1.0]),
        left=np.array([[1.0, 0.5, 0.25], [0.0, -1.0, 0.125]]),
        right=np.array([[0.5, 0.0, 0.0], [1.0, 0.75, -0.5]]),
        sample_rate=sample_rate,
        weights=weights,
    )


class TestContainer:
    def test_two_direction_round_trip(self, tmp_path):
        hrtf = toy_set()
        path = hrtf_service.save_hrtf_set(hrtf, tmp_path / "toy.hrtf")
        loaded = hrtf_service.load_hrtf_set(path)
        assert len(loaded) == 2
        assert loaded.ir_length == 3
        assert loaded.sample_rate == 48000.0
        assert loaded.weights is None
        np.testing.assert_array_equal(loaded.left, hrtf.left)
        np.testing.assert_array_equal(loaded.right, hrtf.right)
        np.testing.assert_array_equal(loaded.elevation, hrtf.elevation)
        np.testing.assert_array_equal(loaded.azimuth, hrtf.azimuth)

    def test_synthetic_round_trip_keeps_weights(self, tmp_path, synthetic_order_3):
        hrtf, _ = synthetic_order_3
        loaded = hrtf_service.load_hrtf_set(hrtf_service.save_hrtf_set(hrtf, tmp_path / "synthetic.hrtf"))
        np.testing.assert_allclose(loaded.weights, hrtf.weights, rtol=1e-15)
        np.testing.assert_allclose(loaded.left, hrtf.left.astype(np.float32), rtol=0, atol=0)

    def test_unsupported_sample_rate(self, tmp_path):
        path = hrtf_service.save_hrtf_set(toy_set(sample_rate=22050.0), tmp_path / "low.hrtf")
        with pytest.raises(UnsupportedSampleRateError):
            hrtf_service.load_hrtf_set(path)

    def test_mismatched_ir_count(self, tmp_path):
        path = hrtf_service.save_hrtf_set(toy_set(), tmp_path / "toy.hrtf")
        raw = path.read_bytes()
        path.write_bytes(raw.replace(b"directions 2", b"directions 3", 1))
        with pytest.raises(ContainerParseError) as excinfo:
            hrtf_service.load_hrtf_set(path)
        assert excinfo.value.offset >= 0

    def test_truncated_payload(self, tmp_path):
        path = hrtf_service.save_hrtf_set(toy_set(), tmp_path / "toy.hrtf")
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ContainerParseError):
            hrtf_service.load_hrtf_set(path)


class TestFit:
    def test_recovers_order_4_coefficients_from_fibonacci_directions(self):
        elevation, azimuth = sh_core.fibonacci_directions(200)
        rng = np.random.default_rng(5)
        count = coefficient_count(4)
        truth = rng.standard_normal((count, 16)) + 1j * rng.standard_normal((count, 16))
        basis = sh_core.sh_matrix(4, elevation, azimuth)
        hrtf = HRTFSet(elevation, azimuth, (basis @ truth).real, (basis @ truth).imag, 48000.0)
        # complex truth is not a real field; fit real and imaginary parts as separate ears
        fitted = hrtf_service.encode_hrtf_sh(hrtf, 4, regularization=0.0)
        np.testing.assert_allclose(
            fitted.left.data + 1j * fitted.right.data, truth, atol=1e-8
        )

    @pytest.mark.parametrize("order", [1, 3, 10])
    def test_recovers_synthetic_truth(self, order):
        grid = sh_core.make_grid(order)
        hrtf, truth = hrtf_service.synthetic_hrtf(order, grid, seed=order, ir_length=24)
        fitted = hrtf_service.encode_hrtf_sh(hrtf, order, regularization=0.0)
        np.testing.assert_allclose(fitted.left.data, truth.left.data, atol=1e-9)
        np.testing.assert_allclose(fitted.right.data, truth.right.data, atol=1e-9)
        assert np.max(fitted.residual_left) < 1e-8

    def test_default_regularization_is_negligible_on_exact_grid(self, synthetic_order_3):
        hrtf, truth = synthetic_order_3
        fitted = hrtf_service.encode_hrtf_sh(hrtf, 3)
        np.testing.assert_allclose(fitted.left.data, truth.left.data, atol=1e-5)

    def test_higher_order_content_leaves_residual(self):
        grid = sh_core.make_grid(5)
        hrtf, _ = hrtf_service.synthetic_hrtf(5, grid, seed=2, ir_length=16)
        fitted = hrtf_service.encode_hrtf_sh(hrtf, 4, regularization=0.0)
        assert np.max(fitted.residual_left) > 1e-6

    def test_constant_set_has_only_zeroth_order(self):
        elevation, azimuth = sh_core.fibonacci_directions(64)
        ir = np.array([1.0, -0.5, 0.25, 0.0])
        hrtf = HRTFSet(elevation, azimuth, np.tile(ir, (64, 1)), np.tile(2 * ir, (64, 1)), 48000.0)
        fitted = hrtf_service.encode_hrtf_sh(hrtf, 3, regularization=0.0)
        assert np.max(np.abs(fitted.left.data[1:])) < 1e-10
        np.testing.assert_allclose(fitted.left.data[0].real, ir * np.sqrt(4 * np.pi), atol=1e-10)

    def test_linearity(self):
        grid = sh_core.make_grid(4)
        a, _ = hrtf_service.synthetic_hrtf(4, grid, seed=1, ir_length=8)
        b, _ = hrtf_service.synthetic_hrtf(4, grid, seed=2, ir_length=8)
        summed = HRTFSet(a.elevation, a.azimuth, a.left + b.left, a.right + b.right, a.sample_rate, a.weights)
        fit_a = hrtf_service.encode_hrtf_sh(a, 3)
        fit_b = hrtf_service.encode_hrtf_sh(b, 3)
        fit_sum = hrtf_service.encode_hrtf_sh(summed, 3)
        np.testing.assert_allclose(fit_sum.left.data, fit_a.left.data + fit_b.left.data, atol=1e-10)

    def test_underdetermined_fit(self):
        elevation, azimuth = sh_core.fibonacci_directions(900)
        hrtf = HRTFSet(elevation, azimuth, np.zeros((900, 2)), np.zeros((900, 2)), 48000.0)
        with pytest.raises(InsufficientDirectionsError):
            hrtf_service.encode_hrtf_sh(hrtf, 30)

    def test_order_above_maximum(self, synthetic_order_3):
        hrtf, _ = synthetic_order_3
        with pytest.raises(ValidationException):
            hrtf_service.encode_hrtf_sh(hrtf, 31)


class TestSynthetic:
    def test_order_zero_is_direction_independent(self):
        hrtf, _ = hrtf_service.synthetic_hrtf(0, sh_core.make_grid(2), seed=3, ir_length=8)
        np.testing.assert_allclose(hrtf.left, np.tile(hrtf.left[0], (len(hrtf), 1)), atol=1e-12)

    def test_deterministic_per_seed(self):
        grid = sh_core.make_grid(3)
        first, _ = hrtf_service.synthetic_hrtf(3, grid, seed=11, ir_length=8)
        second, _ = hrtf_service.synthetic_hrtf(3, grid, seed=11, ir_length=8)
        other, _ = hrtf_service.synthetic_hrtf(3, grid, seed=12, ir_length=8)
        np.testing.assert_array_equal(first.left, second.left)
        assert not np.array_equal(first.left, other.left)

    def test_mirror_reflects_about_median_plane(self):
        grid = sh_core.make_grid(4)
        _, truth = hrtf_service.synthetic_hrtf(4, grid, seed=4, ir_length=8, mirror=True)
        elevation = np.array([0.3, 1.2, 2.5])
        azimuth = np.array([0.4, -1.1, 2.9])
        left_mirrored = sh_core.isft(truth.left, (elevation, -azimuth))
        right = sh_core.isft(truth.right, (elevation, azimuth))
        np.testing.assert_allclose(right, left_mirrored, atol=1e-12)

    def test_mirror_survives_encoding(self):
        grid = sh_core.make_grid(4)
        hrtf, _ = hrtf_service.synthetic_hrtf(4, grid, seed=8, ir_length=8, mirror=True)
        fitted = hrtf_service.encode_hrtf_sh(hrtf, 4, regularization=0.0)
        np.testing.assert_allclose(fitted.right.data, fitted.left.data.conj(), atol=1e-9)

    def test_grid_too_coarse(self):
        with pytest.raises(ValidationException):
            hrtf_service.synthetic_hrtf(5, sh_core.make_grid(3), seed=0)
