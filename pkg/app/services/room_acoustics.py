"""
Shoebox room simulation with the image method, SH-domain encoding of the
resulting impulse response with an exact direct/reverberant split, and the
acoustic measures reported for each environment (DRR, T60, critical distance).
"""
import logging
import math
import time
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy import sparse

from app.core.config import get_settings
from app.core.exceptions import (
    InvalidGeometryError,
    RIRTruncationError,
    UndefinedDRRError,
    InsufficientLengthError,
    ZeroEnergyError,
    ValidationException,
    ContainerParseError,
)
from app.core.logging import (
    log_event,
    log_operation_start,
    log_operation_complete,
    log_operation_error,
    operation_logger,
)
from app.models.domain import (
    RoomSpec,
    Geometry,
    ImageSourceSet,
    SHCoefficients,
    SplitSHImpulseResponse,
    coefficient_count,
    order_from_count,
    wrap_azimuth,
)
from app.services import sh_core
from app.utils.containers import write_container, read_container

logger = logging.getLogger(__name__)

# Room, listener and source distances of the two listening-test environments
LISTENING_ROOM_DIMENSIONS = (15.5, 9.8, 7.5)
LISTENING_REFLECTION_COEFFICIENT = 0.8
LISTENING_T60 = 0.75
LISTENING_LISTENER_POSITION = (9.0, 7.0, 1.7)
LISTENING_SOURCE_AZIMUTH_DEG = 30.0
LISTENING_CRITICAL_DISTANCE = 2.21
ENVIRONMENT_DISTANCE_FACTORS = {1: 1.5, 2: 3.0}

# Schroeder fit range (T20 extrapolated to 60 dB)
DECAY_FIT_START_DB = -5.0
DECAY_FIT_END_DB = -25.0

SH_RIR_MAGIC = "binaural-sh-rir"
SH_RIR_COMPONENTS = ("direct", "reverberant")


def _check_geometry(room: RoomSpec, geometry: Geometry) -> None:
    dims = np.asarray(room.dimensions)
    for label, position in (("listener", geometry.listener_position), ("source", geometry.source_position)):
        p = np.asarray(position)
        if np.any(p <= 0) or np.any(p >= dims):
            raise InvalidGeometryError(f"{label} position {list(position)} is not strictly inside room {list(dims)}")
    if geometry.source_distance == 0:
        raise InvalidGeometryError("source and listener positions coincide")


def build_environment(env_id: int, listener_facing: Optional[float] = None) -> Tuple[RoomSpec, Geometry]:
    """
    Room and geometry of listening environment 1 (source at 1.5 r_d) or 2 (3 r_d).

    The source sits 30 degrees counter-clockwise from the listener's facing
    direction at ear height. Facing defaults to Settings.listener_facing_deg.
    """
    if env_id not in ENVIRONMENT_DISTANCE_FACTORS:
        raise ValidationException(f"unknown environment {env_id}; expected one of {sorted(ENVIRONMENT_DISTANCE_FACTORS)}")
    if listener_facing is None:
        listener_facing = math.radians(get_settings().listener_facing_deg)

    room = RoomSpec(LISTENING_ROOM_DIMENSIONS, LISTENING_REFLECTION_COEFFICIENT, LISTENING_T60)
    distance = ENVIRONMENT_DISTANCE_FACTORS[env_id] * LISTENING_CRITICAL_DISTANCE
    azimuth = listener_facing + math.radians(LISTENING_SOURCE_AZIMUTH_DEG)
    lx, ly, lz = LISTENING_LISTENER_POSITION
    source = (lx + distance * math.cos(azimuth), ly + distance * math.sin(azimuth), lz)
    geometry = Geometry(LISTENING_LISTENER_POSITION, float(listener_facing), source)
    _check_geometry(room, geometry)
    return room, geometry


def enumerate_images(
    room: RoomSpec,
    geometry: Geometry,
    max_time: float,
    speed_of_sound: Optional[float] = None,
) -> ImageSourceSet:
    """
    All image sources arriving within `max_time`, sorted by delay.

    Image positions follow the Allen-Berkley lattice (1-2p)(s + 2rL) per axis
    with |r+p| + |r| wall reflections; each image carries gain R^count/(4 pi d)
    and its arrival direction in the listener frame.
    """
    operation = "image_enumeration"
    start_time = time.time()
    _check_geometry(room, geometry)
    c = speed_of_sound or get_settings().speed_of_sound
    direct_delay = geometry.source_distance / c
    if max_time <= direct_delay:
        raise ValidationException(f"max_time {max_time}s does not exceed the direct-path delay {direct_delay:.6f}s")

    log_operation_start(
        logger="app.services.room_acoustics",
        function="enumerate_images",
        operation=operation,
        message="Enumerating image sources",
        context={"room": room.to_dict(), "geometry": geometry.to_dict(), "max_time": max_time},
    )

    max_distance = c * max_time
    dims = np.asarray(room.dimensions)
    source = np.asarray(geometry.source_position)
    listener = np.asarray(geometry.listener_position)

    # Per axis: offset from the listener and reflection count for every (p, r)
    offsets, counts = [], []
    for axis in range(3):
        reach = int(np.ceil(max_distance / (2.0 * dims[axis]))) + 1
        r = np.arange(-reach, reach + 1)
        axis_offsets, axis_counts = [], []
        for p in (0, 1):
            axis_offsets.append((1 - 2 * p) * (source[axis] + 2.0 * r * dims[axis]) - listener[axis])
            axis_counts.append(np.abs(r + p) + np.abs(r))
        offsets.append(np.concatenate(axis_offsets))
        counts.append(np.concatenate(axis_counts))

    dy, dz = np.meshgrid(offsets[1], offsets[2], indexing="ij")
    cy, cz = np.meshgrid(counts[1], counts[2], indexing="ij")
    yz_sq = dy ** 2 + dz ** 2
    limit_sq = max_distance ** 2

    chunks = []
    for x_offset, x_count in zip(offsets[0], counts[0]):
        dist_sq = x_offset ** 2 + yz_sq
        keep = dist_sq <= limit_sq
        if not np.any(keep):
            continue
        y_sel, z_sel = dy[keep], dz[keep]
        chunks.append((
            np.full(y_sel.shape, x_offset),
            y_sel,
            z_sel,
            np.sqrt(dist_sq[keep]),
            x_count + cy[keep] + cz[keep],
        ))

    vx, vy, vz, distance, reflection_counts = (np.concatenate(parts) for parts in zip(*chunks))
    delays = distance / c
    gains = room.reflection_coefficient ** reflection_counts / (4.0 * np.pi * distance)
    elevation = np.arccos(np.clip(vz / distance, -1.0, 1.0))
    azimuth = wrap_azimuth(np.arctan2(vy, vx) - geometry.listener_facing)

    # R = 0 leaves only the direct path with non-zero gain
    if room.reflection_coefficient == 0:
        audible = reflection_counts == 0
    else:
        audible = np.ones(delays.shape, dtype=bool)
    order = np.lexsort((reflection_counts[audible], delays[audible]))

    images = ImageSourceSet(
        delays=delays[audible][order],
        gains=gains[audible][order],
        elevation=elevation[audible][order],
        azimuth=azimuth[audible][order],
        reflection_counts=reflection_counts[audible][order].astype(int),
    )

    log_operation_complete(
        logger="app.services.room_acoustics",
        function="enumerate_images",
        operation=operation,
        message="Image sources enumerated",
        context={"image_count": len(images), "direct_delay": direct_delay},
        duration=time.time() - start_time,
    )
    return images


def fractional_delay_pulses(delays_in_samples: np.ndarray, taps: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Unit-energy Hann-windowed sinc pulses centred on each (fractional) delay.

    Returns (start sample per pulse, pulse values of shape (M, taps)). An integer
    delay yields an exact unit impulse.
    """
    delays_in_samples = np.asarray(delays_in_samples, dtype=float)
    starts = np.floor(delays_in_samples).astype(np.int64) - taps // 2 + 1
    t = (starts[:, None] + np.arange(taps)[None, :]) - delays_in_samples[:, None]
    window = 0.5 * (1.0 + np.cos(2.0 * np.pi * t / taps))
    pulses = np.sinc(t) * window
    pulses /= np.sqrt(np.sum(pulses ** 2, axis=1, keepdims=True))
    return starts, pulses


def encode_sh_rir(
    images: ImageSourceSet,
    order: int,
    sample_rate: float,
    length: float,
) -> SplitSHImpulseResponse:
    """
    Time-domain SH encoding of an image-source set.

    Every image adds gain * pulse(t - delay) * conj(Y_n^m(direction)) to channel
    (n, m). The image without reflections goes to the direct component, all
    others to the reverberant component. Only m >= 0 channels are accumulated;
    the rest follow from the conjugate symmetry of a real field.
    """
    operation = "sh_rir_encoding"
    start_time = time.time()
    settings = get_settings()
    taps = settings.fractional_delay_taps
    chunk_size = settings.image_chunk_size
    images = ImageSourceSet.from_images(images)

    num_samples = int(round(length * sample_rate))
    if len(images) == 0:
        raise ValidationException("no image sources to encode")
    if int(np.sum(images.reflection_counts == 0)) != 1:
        raise ValidationException("image set must contain exactly one direct path")

    starts, pulses = fractional_delay_pulses(images.delays * sample_rate, taps)
    late = (starts < 0) | (starts + taps > num_samples)
    if np.any(late):
        worst = int(np.argmax(np.where(late, images.delays, -np.inf)))
        raise RIRTruncationError(float(images.delays[worst]), length)

    log_operation_start(
        logger="app.services.room_acoustics",
        function="encode_sh_rir",
        operation=operation,
        message="Encoding image sources into SH RIR",
        context={"order": order, "images": len(images), "samples": num_samples, "sample_rate": sample_rate},
    )

    try:
        keep = sh_core.nonnegative_indices(order)
        channels = coefficient_count(order)
        direct = np.zeros((channels, num_samples), dtype=np.complex128)
        reverberant = np.zeros((channels, num_samples), dtype=np.complex128)

        is_direct = images.reflection_counts == 0
        d = int(np.flatnonzero(is_direct)[0])
        y_direct = sh_core.sh_matrix_nonnegative(order, images.elevation[d], images.azimuth[d])[0]
        window = slice(int(starts[d]), int(starts[d]) + taps)
        direct[keep, window] = (images.gains[d] * y_direct.conj())[:, None] * pulses[d][None, :]

        reflected = np.flatnonzero(~is_direct)
        offsets = np.arange(taps)
        for begin in range(0, len(reflected), chunk_size):
            idx = reflected[begin:begin + chunk_size]
            # Images are delay-sorted, so each chunk touches a short span of samples
            first = int(starts[idx].min())
            span = int(starts[idx].max()) + taps - first
            rows = (starts[idx][:, None] - first + offsets[None, :]).ravel()
            cols = np.repeat(np.arange(len(idx)), taps)
            pulse_matrix = sparse.csr_matrix(
                (pulses[idx].ravel(), (rows, cols)), shape=(span, len(idx))
            )
            weights = images.gains[idx][:, None] * sh_core.sh_matrix_nonnegative(
                order, images.elevation[idx], images.azimuth[idx]
            ).conj()
            reverberant[keep, first:first + span] += (pulse_matrix @ weights).T

        sh_core.complete_real_field(direct, order)
        sh_core.complete_real_field(reverberant, order)

        rir = SplitSHImpulseResponse(
            SHCoefficients(order, direct), SHCoefficients(order, reverberant), float(sample_rate)
        )
    except Exception as e:
        log_operation_error(
            logger="app.services.room_acoustics",
            function="encode_sh_rir",
            operation=operation,
            error=e,
            context={"order": order, "images": len(images)},
        )
        raise

    log_operation_complete(
        logger="app.services.room_acoustics",
        function="encode_sh_rir",
        operation=operation,
        message="SH RIR encoded",
        context={"order": order, "channels": channels, "samples": num_samples},
        duration=time.time() - start_time,
    )
    return rir


def simulate_environment(
    room: RoomSpec,
    geometry: Geometry,
    order: int,
    sample_rate: Optional[float] = None,
    length: Optional[float] = None,
) -> SplitSHImpulseResponse:
    """Enumerate images and encode them; length defaults to rir_length_factor x target T60."""
    settings = get_settings()
    sample_rate = sample_rate or settings.sample_rate
    if length is None:
        if room.target_t60 <= 0:
            raise ValidationException("room has no target T60; pass an explicit RIR length")
        length = settings.rir_length_factor * room.target_t60
    # Leave room for the trailing half of the last pulse
    guard = (settings.fractional_delay_taps // 2 + 1) / sample_rate
    images = enumerate_images(room, geometry, length - guard)
    return encode_sh_rir(images, order, sample_rate, length)


def _omni_energy(coeffs: SHCoefficients) -> float:
    return float(np.sum(np.abs(coeffs.data[0]) ** 2))


def analyze_drr(rir: SplitSHImpulseResponse) -> float:
    """Direct-to-reverberant ratio in dB on the omnidirectional channel."""
    reverberant = _omni_energy(rir.reverberant)
    if reverberant == 0:
        raise UndefinedDRRError()
    return 10.0 * math.log10(_omni_energy(rir.direct) / reverberant)


def diffuse_field_drr(room: RoomSpec, t60: float, distance: float) -> float:
    """Statistical DRR 20 log10(r_d / r) of an ideal diffuse field."""
    if distance <= 0:
        raise ValidationException("distance must be positive")
    return 20.0 * math.log10(critical_distance(room, t60) / distance)


def energy_decay_curve(omni_rir: np.ndarray) -> np.ndarray:
    """Schroeder backward-integrated energy in dB relative to the total."""
    energy = np.real(np.asarray(omni_rir)) ** 2
    edc = np.cumsum(energy[::-1])[::-1]
    if edc[0] <= 0:
        raise ZeroEnergyError("impulse response for decay analysis")
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(edc / edc[0])


@operation_logger("t60_analysis")
def analyze_t60(omni_rir: np.ndarray, sample_rate: float) -> float:
    """T60 from a linear fit of the Schroeder curve between -5 and -25 dB."""
    decay_db = energy_decay_curve(omni_rir)
    reached = float(np.min(decay_db[np.isfinite(decay_db)]))
    if reached > DECAY_FIT_END_DB:
        raise InsufficientLengthError(DECAY_FIT_END_DB, reached)
    fit = (decay_db <= DECAY_FIT_START_DB) & (decay_db >= DECAY_FIT_END_DB)
    if np.count_nonzero(fit) < 2:
        raise InsufficientLengthError(DECAY_FIT_END_DB, reached)
    t = np.flatnonzero(fit) / sample_rate
    slope, _ = np.polyfit(t, decay_db[fit], 1)
    if slope >= 0:
        raise InsufficientLengthError(DECAY_FIT_END_DB, reached)
    return float(-60.0 / slope)


def critical_distance(room: RoomSpec, t60: float) -> float:
    """Distance at which direct and reverberant energy are equal: 0.057 sqrt(V/T60)."""
    if t60 <= 0:
        raise ValidationException("T60 must be positive")
    return 0.057 * math.sqrt(room.volume / t60)


def absorption_coefficient(room: RoomSpec) -> float:
    """Energy absorption 1 - R^2 of the pressure reflection coefficient."""
    return 1.0 - room.reflection_coefficient ** 2


def sabine_t60(room: RoomSpec) -> float:
    return 0.161 * room.volume / (absorption_coefficient(room) * room.surface_area)


def eyring_t60(room: RoomSpec) -> float:
    alpha = absorption_coefficient(room)
    if alpha >= 1.0:
        return 0.0
    return 0.161 * room.volume / (-room.surface_area * math.log(1.0 - alpha))


def save_sh_rir(rir: SplitSHImpulseResponse, stem: Path) -> Tuple[Path, Path]:
    """
    Write `<stem>.direct.shrir` and `<stem>.reverberant.shrir`.

    Payload is sample-major and channel-interleaved, each complex value stored
    as (real, imag).
    """
    stem = Path(stem)
    paths = []
    for component, coeffs in zip(SH_RIR_COMPONENTS, (rir.direct, rir.reverberant)):
        interleaved = np.empty((rir.num_samples, coeffs.count, 2), dtype=np.float32)
        interleaved[..., 0] = coeffs.data.real.T
        interleaved[..., 1] = coeffs.data.imag.T
        path = stem.with_name(f"{stem.name}.{component}.shrir")
        write_container(
            path,
            SH_RIR_MAGIC,
            {
                "order": rir.order,
                "sample_rate": repr(float(rir.sample_rate)),
                "channels": coeffs.count,
                "samples": rir.num_samples,
                "component": component,
            },
            interleaved,
        )
        paths.append(path)
    log_event(
        level="INFO",
        logger="app.services.room_acoustics",
        function="save_sh_rir",
        operation="sh_rir_export",
        event="file_written",
        message="SH RIR written",
        context={"paths": [str(p) for p in paths], "order": rir.order},
    )
    return paths[0], paths[1]


def _load_component(path: Path, component: str) -> Tuple[SHCoefficients, float]:
    container = read_container(path, SH_RIR_MAGIC)
    if container.get_str("component") != component:
        raise ContainerParseError(str(path), 0, f"expected {component} component, found {container.get_str('component')}")
    channels = container.get_int("channels")
    samples = container.get_int("samples")
    order = container.get_int("order")
    if channels != coefficient_count(order) or order_from_count(channels) != order:
        raise ContainerParseError(str(path), 0, f"{channels} channels do not match order {order}")
    if container.payload.size != channels * samples * 2:
        raise ContainerParseError(str(path), container.payload_offset, "payload size does not match channels x samples")
    values = container.payload.reshape(samples, channels, 2)
    data = (values[..., 0] + 1j * values[..., 1]).T
    return SHCoefficients(order, data), container.get_float("sample_rate")


def load_sh_rir(stem: Path) -> SplitSHImpulseResponse:
    """Read the pair written by save_sh_rir."""
    stem = Path(stem)
    direct, rate = _load_component(stem.with_name(f"{stem.name}.direct.shrir"), "direct")
    reverberant, other_rate = _load_component(stem.with_name(f"{stem.name}.reverberant.shrir"), "reverberant")
    if rate != other_rate:
        raise ContainerParseError(str(stem), 0, "direct and reverberant files disagree on sample rate")
    return SplitSHImpulseResponse(direct, reverberant, rate)
