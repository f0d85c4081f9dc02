import itertools
import math

import numpy as np
import pytest
from scipy.spatial import cKDTree

from app.core.exceptions import (
    ContainerParseError,
    InsufficientLengthError,
    InvalidGeometryError,
    RIRTruncationError,
    UndefinedDRRError,
    ValidationException,
)
from app.models.domain import (
    Geometry,
    ImageSource,
    ImageSourceSet,
    Direction,
    SHCoefficients,
    SplitSHImpulseResponse,
    coefficient_count,
)
from app.services import room_acoustics, sh_core

SPEED = 343.0
FS = 48000.0


def listener_frame_points(delays, elevation, azimuth):
    d = np.asarray(delays) * SPEED
    return np.column_stack([
        d * np.sin(elevation) * np.cos(azimuth),
        d * np.sin(elevation) * np.sin(azimuth),
        d * np.cos(elevation),
    ])


def brute_force_images(room, geometry, max_time):
    """Every (p, r) lattice image within max_time, without any pruning: (points, counts, gains)."""
    dims = np.asarray(room.dimensions)
    source = np.asarray(geometry.source_position)
    listener = np.asarray(geometry.listener_position)
    max_distance = SPEED * max_time
    reach = [int(math.ceil(max_distance / (2 * L))) + 2 for L in dims]
    delays, counts, gains, elevation, azimuth = [], [], [], [], []
    for p in itertools.product((0, 1), repeat=3):
        for r in itertools.product(*(range(-k, k + 1) for k in reach)):
            p_arr, r_arr = np.array(p), np.array(r)
            v = (1 - 2 * p_arr) * (source + 2 * r_arr * dims) - listener
            d = float(np.linalg.norm(v))
            if d > max_distance:
                continue
            count = int(np.sum(np.abs(r_arr + p_arr) + np.abs(r_arr)))
            delays.append(d / SPEED)
            counts.append(count)
            gains.append(room.reflection_coefficient ** count / (4 * math.pi * d))
            elevation.append(math.acos(max(-1.0, min(1.0, v[2] / d))))
            azimuth.append(math.atan2(v[1], v[0]) - geometry.listener_facing)
    return listener_frame_points(delays, np.array(elevation), np.array(azimuth)), np.array(counts), np.array(gains)


@pytest.fixture(scope="module")
def listening_environments():
    """Order-0 SH RIRs of both listening environments at full length."""
    results = {}
    for env in (1, 2):
        room, geometry = room_acoustics.build_environment(env)
        rir = room_acoustics.simulate_environment(room, geometry, order=0, sample_rate=FS)
        results[env] = (room, geometry, rir)
    return results


class TestEnvironments:
    @pytest.mark.parametrize("env,distance", [(1, 3.315), (2, 6.63)])
    def test_source_distance(self, env, distance):
        room, geometry = room_acoustics.build_environment(env)
        assert geometry.source_distance == pytest.approx(distance, abs=1e-9)
        assert room.dimensions == (15.5, 9.8, 7.5)
        assert geometry.listener_position == (9.0, 7.0, 1.7)

    def test_source_is_thirty_degrees_left_of_facing(self):
        room, geometry = room_acoustics.build_environment(1)
        images = room_acoustics.enumerate_images(room, geometry, 0.012)
        direct = images[0]
        assert direct.reflection_count == 0
        assert direct.direction.azimuth == pytest.approx(math.radians(30.0), abs=1e-12)
        assert direct.direction.elevation == pytest.approx(math.pi / 2, abs=1e-12)

    def test_unknown_environment(self):
        with pytest.raises(ValidationException):
            room_acoustics.build_environment(3)

    def test_facing_plus_x_puts_far_source_outside(self):
        with pytest.raises(InvalidGeometryError):
            room_acoustics.build_environment(2, listener_facing=0.0)

    def test_source_outside_room(self, small_room):
        geometry = Geometry((1.0, 1.0, 1.0), 0.0, (6.0, 1.0, 1.0))
        with pytest.raises(InvalidGeometryError):
            room_acoustics.enumerate_images(small_room, geometry, 0.05)

    def test_coincident_positions(self, small_room):
        geometry = Geometry((1.0, 1.0, 1.0), 0.0, (1.0, 1.0, 1.0))
        with pytest.raises(InvalidGeometryError):
            room_acoustics.enumerate_images(small_room, geometry, 0.05)


class TestImageEnumeration:
    def test_matches_lattice_oracle_in_listening_room(self):
        room, geometry = room_acoustics.build_environment(1)
        images = room_acoustics.enumerate_images(room, geometry, 0.08, speed_of_sound=SPEED)
        points, counts, gains = brute_force_images(room, geometry, 0.08)
        assert len(images) == len(points)

        found = listener_frame_points(images.delays, images.elevation, images.azimuth)
        distance, match = cKDTree(points).query(found)
        assert np.max(distance) < 1e-9
        assert len(set(match.tolist())) == len(match)
        np.testing.assert_array_equal(images.reflection_counts, counts[match])
        np.testing.assert_allclose(images.gains, gains[match], rtol=1e-12)

    def test_sorted_by_delay_with_direct_first(self, small_room, small_geometry):
        images = room_acoustics.enumerate_images(small_room, small_geometry, 0.1)
        assert np.all(np.diff(images.delays) >= 0)
        assert images.reflection_counts[0] == 0
        assert int(np.sum(images.reflection_counts == 0)) == 1
        d = small_geometry.source_distance
        assert images.delays[0] == pytest.approx(d / SPEED, rel=1e-12)
        assert images.gains[0] == pytest.approx(1.0 / (4 * math.pi * d), rel=1e-12)

    def test_first_order_reflection_count(self, small_room, small_geometry):
        images = room_acoustics.enumerate_images(small_room, small_geometry, 0.1)
        # six walls, six first-order images
        assert int(np.sum(images.reflection_counts == 1)) == 6

    def test_anechoic_room_keeps_direct_path_only(self, free_field_room):
        geometry = Geometry((10.0, 10.0, 10.0), 0.0, (12.0, 10.0, 10.0))
        images = room_acoustics.enumerate_images(free_field_room, geometry, 0.2)
        assert len(images) == 1
        assert images.reflection_counts[0] == 0

    def test_max_time_before_direct_sound(self, small_room, small_geometry):
        with pytest.raises(ValidationException):
            room_acoustics.enumerate_images(small_room, small_geometry, 1e-4)


class TestFractionalDelay:
    def test_integer_delay_is_unit_impulse(self):
        starts, pulses = room_acoustics.fractional_delay_pulses(np.array([100.0]), 64)
        impulse = np.zeros(64)
        impulse[100 - starts[0]] = 1.0
        np.testing.assert_allclose(pulses[0], impulse, atol=1e-15)

    def test_unit_energy_and_centred_peak(self):
        delays = np.array([50.25, 77.5, 300.9])
        starts, pulses = room_acoustics.fractional_delay_pulses(delays, 64)
        np.testing.assert_allclose(np.sum(pulses ** 2, axis=1), 1.0, rtol=1e-12)
        peaks = starts + np.argmax(pulses, axis=1)
        assert np.all(np.abs(peaks - delays) <= 0.5 + 1e-12)


class TestEncoding:
    def test_single_direct_image_encodes_conjugate_basis(self):
        direction = Direction(1.0, 0.4)
        # 2^-7 s is exactly 375 samples at 48 kHz
        images = [ImageSource(delay=0.0078125, gain=0.5, direction=direction, reflection_count=0)]
        rir = room_acoustics.encode_sh_rir(images, order=3, sample_rate=FS, length=0.01)
        expected = 0.5 * sh_core.encode_plane_wave(1.0, direction, 3).data
        np.testing.assert_allclose(rir.direct.data[:, 375], expected, atol=1e-14)
        assert rir.direct.data.shape == (coefficient_count(3), 480)
        column_energy = np.sum(np.abs(rir.direct.data[:, 375]) ** 2)
        assert column_energy == pytest.approx(np.sum(np.abs(rir.direct.data) ** 2), rel=1e-12)
        assert not np.any(rir.reverberant.data)

    @pytest.mark.parametrize("order", [1, 4, 10])
    def test_energy_of_separated_images(self, rng, order):
        count = 8
        # pulses 200 samples apart never overlap, so no cross terms
        delays = (100.0 + 200.0 * np.arange(count) + rng.uniform(0.0, 1.0, count)) / FS
        gains = rng.uniform(0.1, 1.0, count)
        images = ImageSourceSet(
            delays,
            gains,
            np.arccos(rng.uniform(-1.0, 1.0, count)),
            rng.uniform(-math.pi, math.pi, count),
            np.arange(count),
        )
        rir = room_acoustics.encode_sh_rir(images, order=order, sample_rate=FS, length=0.04)
        energy = np.sum(np.abs(rir.direct.data) ** 2) + np.sum(np.abs(rir.reverberant.data) ** 2)
        # sum over m of |Y_n^m|^2 is (2n+1)/(4 pi)
        expected = np.sum(gains ** 2) * coefficient_count(order) / (4.0 * math.pi)
        assert energy == pytest.approx(expected, rel=1e-6)

    def test_encoded_field_is_real(self, small_room, small_geometry):
        rir = room_acoustics.simulate_environment(small_room, small_geometry, order=4, sample_rate=FS, length=0.05)
        for component in (rir.direct, rir.reverberant):
            synthesized = sh_core.isft(component, sh_core.make_grid(6))
            assert np.max(np.abs(synthesized.imag)) < 1e-12

    def test_split_is_exact_partition(self, small_room, small_geometry):
        images = room_acoustics.enumerate_images(small_room, small_geometry, 0.04)
        rir = room_acoustics.encode_sh_rir(images, order=2, sample_rate=FS, length=0.05)
        direct_only = ImageSourceSet(
            images.delays[:1], images.gains[:1], images.elevation[:1], images.azimuth[:1], images.reflection_counts[:1]
        )
        rir_direct = room_acoustics.encode_sh_rir(direct_only, order=2, sample_rate=FS, length=0.05)
        np.testing.assert_array_equal(rir.direct.data, rir_direct.direct.data)

    def test_chunking_does_not_change_result(self, monkeypatch, small_room, small_geometry):
        from app.core.config import reset_settings
        images = room_acoustics.enumerate_images(small_room, small_geometry, 0.04)
        reference = room_acoustics.encode_sh_rir(images, order=2, sample_rate=FS, length=0.05)
        monkeypatch.setenv("BINAURAL_IMAGE_CHUNK_SIZE", "7")
        reset_settings()
        chunked = room_acoustics.encode_sh_rir(images, order=2, sample_rate=FS, length=0.05)
        np.testing.assert_allclose(chunked.reverberant.data, reference.reverberant.data, atol=1e-15)

    def test_late_image_does_not_fit(self):
        images = [ImageSource(delay=0.0099, gain=1.0, direction=Direction(0.5, 0.5), reflection_count=0)]
        with pytest.raises(RIRTruncationError):
            room_acoustics.encode_sh_rir(images, order=1, sample_rate=FS, length=0.01)

    def test_requires_one_direct_path(self):
        images = [ImageSource(delay=0.001, gain=1.0, direction=Direction(0.5, 0.5), reflection_count=1)]
        with pytest.raises(ValidationException):
            room_acoustics.encode_sh_rir(images, order=1, sample_rate=FS, length=0.01)


class TestDRR:
    def test_drr_of_constructed_response(self):
        direct = np.zeros((1, 10), dtype=complex)
        reverberant = np.zeros((1, 10), dtype=complex)
        direct[0, 2] = 1.0
        reverberant[0, 5] = 0.5
        rir = SplitSHImpulseResponse(SHCoefficients(0, direct), SHCoefficients(0, reverberant), FS)
        assert room_acoustics.analyze_drr(rir) == pytest.approx(10 * math.log10(4.0), abs=1e-12)

    def test_anechoic_drr_is_undefined(self, free_field_room):
        geometry = Geometry((10.0, 10.0, 10.0), 0.0, (12.0, 10.0, 10.0))
        rir = room_acoustics.simulate_environment(free_field_room, geometry, order=0, sample_rate=FS, length=0.05)
        with pytest.raises(UndefinedDRRError):
            room_acoustics.analyze_drr(rir)

    def test_diffuse_field_drr_matches_listening_environments(self):
        room, _ = room_acoustics.build_environment(1)
        env1 = room_acoustics.diffuse_field_drr(room, 0.75, 1.5 * 2.21)
        env2 = room_acoustics.diffuse_field_drr(room, 0.75, 3.0 * 2.21)
        assert env1 == pytest.approx(-3.52, abs=1.0)
        assert env2 == pytest.approx(-9.52, abs=1.0)
        assert env1 - env2 == pytest.approx(20 * math.log10(2.0), abs=1e-12)

    def test_direct_energy_drops_six_db(self, listening_environments):
        energies = [
            float(np.sum(np.abs(listening_environments[env][2].direct.data[0]) ** 2)) for env in (1, 2)
        ]
        assert 10 * math.log10(energies[0] / energies[1]) == pytest.approx(6.02, abs=0.3)

    def test_simulated_drr_of_listening_environments(self, listening_environments):
        drr1 = room_acoustics.analyze_drr(listening_environments[1][2])
        drr2 = room_acoustics.analyze_drr(listening_environments[2][2])
        # image-method values; early reflections keep both above the diffuse-field figures
        assert drr1 == pytest.approx(-2.50, abs=0.1)
        assert drr2 == pytest.approx(-7.75, abs=0.1)
        assert drr1 - drr2 == pytest.approx(5.25, abs=0.2)

    def test_reported_diffuse_drr_of_listening_environments(self, listening_environments):
        values = {}
        for env in (1, 2):
            room, geometry, _ = listening_environments[env]
            values[env] = room_acoustics.diffuse_field_drr(room, room.target_t60, geometry.source_distance)
        assert values[1] == pytest.approx(-3.48, abs=0.02)
        assert values[2] == pytest.approx(-9.50, abs=0.02)
        assert values[1] == pytest.approx(-3.52, abs=1.0)
        assert values[2] == pytest.approx(-9.52, abs=1.0)
        assert values[1] - values[2] == pytest.approx(6.0, abs=0.3)

    def test_drr_decreases_with_distance(self, small_room):
        drrs = []
        for x in (3.5, 3.0, 2.0, 1.0):
            geometry = Geometry((4.0, 2.0, 1.5), math.pi, (x, 2.0, 1.5))
            rir = room_acoustics.simulate_environment(small_room, geometry, order=0, sample_rate=FS, length=0.3)
            drrs.append(room_acoustics.analyze_drr(rir))
        assert all(a > b for a, b in zip(drrs, drrs[1:]))


class TestReverberation:
    def test_measured_t60_of_listening_room(self, listening_environments):
        _, _, rir = listening_environments[1]
        omni = np.real(rir.direct.data[0] + rir.reverberant.data[0])
        t60 = room_acoustics.analyze_t60(omni, FS)
        assert t60 == pytest.approx(0.75, rel=0.15)

    def test_statistical_estimates(self):
        room, _ = room_acoustics.build_environment(1)
        assert room_acoustics.critical_distance(room, 0.75) == pytest.approx(2.21, abs=0.02)
        assert room_acoustics.sabine_t60(room) == pytest.approx(0.745, abs=0.005)
        assert room_acoustics.sabine_t60(room) == pytest.approx(0.75, rel=0.15)
        assert room_acoustics.eyring_t60(room) < room_acoustics.sabine_t60(room)
        assert room_acoustics.absorption_coefficient(room) == pytest.approx(0.36)

    def test_exponential_decay(self, rng):
        t60 = 0.5
        t = np.arange(int(0.8 * FS)) / FS
        ir = rng.standard_normal(t.size) * 10.0 ** (-3.0 * t / t60)
        assert room_acoustics.analyze_t60(ir, FS) == pytest.approx(t60, rel=0.05)

    def test_decay_curve_is_monotone(self, rng):
        ir = rng.standard_normal(1000) * np.exp(-np.arange(1000) / 200.0)
        curve = room_acoustics.energy_decay_curve(ir)
        assert curve[0] == pytest.approx(0.0)
        assert np.all(np.diff(curve) <= 1e-12)

    def test_short_response_is_rejected(self):
        ir = np.exp(-np.arange(100) / 1000.0)
        with pytest.raises(InsufficientLengthError):
            room_acoustics.analyze_t60(ir, FS)


class TestSHRIRContainer:
    def test_round_trip(self, tmp_path, small_room, small_geometry):
        rir = room_acoustics.simulate_environment(small_room, small_geometry, order=2, sample_rate=FS, length=0.03)
        direct_path, reverberant_path = room_acoustics.save_sh_rir(rir, tmp_path / "room")
        assert direct_path.name == "room.direct.shrir"
        assert reverberant_path.name == "room.reverberant.shrir"
        loaded = room_acoustics.load_sh_rir(tmp_path / "room")
        assert loaded.order == 2
        assert loaded.sample_rate == FS
        for original, restored in ((rir.direct, loaded.direct), (rir.reverberant, loaded.reverberant)):
            scale = np.max(np.abs(original.data))
            np.testing.assert_allclose(restored.data, original.data, atol=1e-6 * scale)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "room.direct.shrir").write_bytes(b"not-a-container\n")
        with pytest.raises(ContainerParseError):
            room_acoustics.load_sh_rir(tmp_path / "room")
