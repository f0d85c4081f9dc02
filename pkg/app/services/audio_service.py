"""
Test signals and WAV file handling.

Generates seeded pink-noise bursts, reads and writes 16/24-bit PCM and
32-bit float WAV files through soundfile after checking the RIFF header,
and measures the RMS and peak levels used to align a stimulus set.
"""
import logging
import struct
import time
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import soundfile as sf

from app.core.config import get_settings
from app.core.exceptions import (
    ContainerParseError,
    InvalidDurationError,
    SilentSignalError,
    UnsupportedFormatError,
)
from app.core.logging import (
    log_event,
    log_operation_start,
    log_operation_complete,
    log_operation_error,
)
from app.models.domain import BinauralIR, SourceSignal, StereoSignal

logger = logging.getLogger(__name__)

# Peak of generated noise, -1 dBFS
PINK_PEAK = 10.0 ** (-1.0 / 20.0)

WAV_SUBTYPES = {16: "PCM_16", 24: "PCM_24", 32: "FLOAT"}
WAVE_FORMAT_PCM = 1
WAVE_FORMAT_IEEE_FLOAT = 3
WAVE_FORMAT_EXTENSIBLE = 0xFFFE
SUPPORTED_ENCODINGS = {(WAVE_FORMAT_PCM, 16), (WAVE_FORMAT_PCM, 24), (WAVE_FORMAT_IEEE_FLOAT, 32)}

AudioSignal = Union[SourceSignal, StereoSignal, BinauralIR]


def burst_envelope(burst_samples: int, fade_samples: int) -> np.ndarray:
    """Unit envelope with raised-cosine fade-in and fade-out of `fade_samples` each."""
    envelope = np.ones(burst_samples)
    if fade_samples:
        ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(fade_samples) / fade_samples))
        envelope[:fade_samples] = ramp
        envelope[burst_samples - fade_samples:] = ramp[::-1]
    return envelope


def pink_noise(num_samples: int, rng: np.random.Generator) -> np.ndarray:
    """White Gaussian noise shaped by 1/sqrt(f) in the frequency domain; DC removed."""
    spectrum = np.fft.rfft(rng.standard_normal(num_samples))
    freqs = np.arange(len(spectrum), dtype=float)
    shaping = np.zeros_like(freqs)
    shaping[1:] = 1.0 / np.sqrt(freqs[1:])
    return np.fft.irfft(spectrum * shaping, n=num_samples)


def pink_burst(
    burst_length: float = 1.0,
    fade_length: float = 0.02,
    pause_length: float = 0.3,
    repetitions: int = 3,
    seed: int = 0,
    sample_rate: Optional[int] = None,
) -> SourceSignal:
    """
    Repeating pink-noise burst: one seeded burst with raised-cosine fades,
    followed by a silent pause between repetitions (none after the last).
    """
    sample_rate = sample_rate or get_settings().sample_rate
    if burst_length <= 0 or fade_length < 0 or pause_length < 0:
        raise InvalidDurationError(
            f"burst={burst_length}s, fade={fade_length}s, pause={pause_length}s must be non-negative with a positive burst"
        )
    if 2 * fade_length > burst_length:
        raise InvalidDurationError(f"two fades of {fade_length}s do not fit in a {burst_length}s burst")
    if repetitions < 1:
        raise InvalidDurationError(f"repetitions must be at least 1, got {repetitions}")

    burst_samples = int(round(burst_length * sample_rate))
    fade_samples = int(round(fade_length * sample_rate))
    pause_samples = int(round(pause_length * sample_rate))

    rng = np.random.default_rng(seed)
    burst = pink_noise(burst_samples, rng) * burst_envelope(burst_samples, fade_samples)
    peak = np.max(np.abs(burst))
    if peak > 0:
        burst *= PINK_PEAK / peak

    period = burst_samples + pause_samples
    samples = np.zeros(repetitions * burst_samples + (repetitions - 1) * pause_samples)
    for rep in range(repetitions):
        samples[rep * period:rep * period + burst_samples] = burst

    logger.debug(f"Generated pink burst: {len(samples)} samples, seed={seed}")
    return SourceSignal(samples, float(sample_rate), label="noise")


def _inspect_wav_header(path: Path) -> None:
    """
    Walk the RIFF chunks and reject anything soundfile would read differently
    from what the toolkit supports: PCM 16/24-bit or 32-bit float, mono or stereo.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != b"RIFF":
        raise ContainerParseError(str(path), 0, "missing RIFF chunk identifier")
    if raw[8:12] != b"WAVE":
        raise ContainerParseError(str(path), 8, "RIFF form type is not WAVE")

    offset = 12
    fmt = None
    has_data = False
    while offset + 8 <= len(raw):
        chunk_id, size = struct.unpack_from("<4sI", raw, offset)
        body = offset + 8
        if chunk_id == b"fmt ":
            if size < 16 or body + size > len(raw):
                raise ContainerParseError(str(path), offset, f"fmt chunk of {size} bytes is truncated")
            fmt = struct.unpack_from("<HHIIHH", raw, body)
            if fmt[0] == WAVE_FORMAT_EXTENSIBLE:
                if size < 40:
                    raise ContainerParseError(str(path), offset, "extensible fmt chunk is truncated")
                sub_format = struct.unpack_from("<H", raw, body + 24)[0]
                fmt = (sub_format,) + fmt[1:]
        elif chunk_id == b"data":
            if fmt is None:
                raise ContainerParseError(str(path), offset, "data chunk precedes fmt chunk")
            if body + size > len(raw):
                raise ContainerParseError(str(path), offset, f"data chunk declares {size} bytes, file is shorter")
            has_data = True
        offset = body + size + (size & 1)

    if fmt is None:
        raise ContainerParseError(str(path), 12, "no fmt chunk")
    if not has_data:
        raise ContainerParseError(str(path), offset, "no data chunk")

    format_tag, channels, _, _, _, bits = fmt
    if format_tag not in (WAVE_FORMAT_PCM, WAVE_FORMAT_IEEE_FLOAT):
        raise UnsupportedFormatError(str(path), "fmt.audio_format", format_tag)
    if (format_tag, bits) not in SUPPORTED_ENCODINGS:
        raise UnsupportedFormatError(str(path), "fmt.bits_per_sample", bits)
    if channels not in (1, 2):
        raise UnsupportedFormatError(str(path), "fmt.num_channels", channels)


def read_wav(path: Path, label: Optional[str] = None) -> Union[SourceSignal, StereoSignal]:
    """Read a mono file as SourceSignal or a stereo file as StereoSignal (float64, values as stored)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Audio file not found: {path}")
    _inspect_wav_header(path)
    data, sample_rate = sf.read(str(path), dtype="float64", always_2d=True)
    label = label if label is not None else path.stem
    if data.shape[1] == 1:
        return SourceSignal(data[:, 0], float(sample_rate), label=label)
    return StereoSignal(data[:, 0], data[:, 1], float(sample_rate), label=label)


def write_wav(path: Path, signal: AudioSignal, bit_depth: Optional[int] = None) -> Path:
    """Write PCM 16/24-bit or 32-bit float WAV; stereo for two-channel signals."""
    operation = "wav_write"
    start_time = time.time()
    path = Path(path)
    bit_depth = bit_depth or get_settings().output_bit_depth
    if bit_depth not in WAV_SUBTYPES:
        raise UnsupportedFormatError(str(path), "bit_depth", bit_depth)

    if isinstance(signal, SourceSignal):
        frames = signal.samples
    else:
        frames = np.column_stack([signal.left, signal.right])

    log_operation_start(
        logger="app.services.audio_service",
        function="write_wav",
        operation=operation,
        message="Writing WAV file",
        context={"path": str(path), "bit_depth": bit_depth, "frames": len(frames)},
    )
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        data = frames.astype(np.float32) if bit_depth == 32 else frames
        sf.write(str(path), data, int(signal.sample_rate), subtype=WAV_SUBTYPES[bit_depth], format="WAV")
    except Exception as e:
        log_operation_error(
            logger="app.services.audio_service",
            function="write_wav",
            operation=operation,
            error=e,
            context={"path": str(path)},
        )
        raise

    log_operation_complete(
        logger="app.services.audio_service",
        function="write_wav",
        operation=operation,
        message="WAV file written",
        context={"path": str(path), "size_bytes": path.stat().st_size},
        duration=time.time() - start_time,
    )
    return path


def _channels(signal: AudioSignal) -> np.ndarray:
    if isinstance(signal, SourceSignal):
        return signal.samples[None, :]
    return signal.stacked()


def rms(signal: AudioSignal) -> float:
    """RMS over all channels."""
    return float(np.sqrt(np.mean(_channels(signal) ** 2)))


def rms_dbfs(signal: AudioSignal) -> float:
    value = rms(signal)
    return float(20.0 * np.log10(value)) if value > 0 else float("-inf")


def peak(signal: AudioSignal) -> float:
    channels = _channels(signal)
    return float(np.max(np.abs(channels))) if channels.size else 0.0


def peak_dbfs(signal: AudioSignal) -> float:
    value = peak(signal)
    return float(20.0 * np.log10(value)) if value > 0 else float("-inf")


def scale(signal: StereoSignal, gain: float) -> StereoSignal:
    return StereoSignal(signal.left * gain, signal.right * gain, signal.sample_rate, label=signal.label)


def rms_normalize(signals: Sequence[StereoSignal]) -> List[StereoSignal]:
    """
    Scale every signal to the RMS of the first one.

    One scalar per signal, so inter-ear structure is kept; raises
    SilentSignalError for a silent member.
    """
    if not signals:
        return []
    levels = []
    for sig in signals:
        level = rms(sig)
        if level == 0:
            raise SilentSignalError(sig.label or "unnamed signal")
        levels.append(level)
    target = levels[0]
    log_event(
        level="DEBUG",
        logger="app.services.audio_service",
        function="rms_normalize",
        operation="level_alignment",
        event="gains_computed",
        message="RMS normalization gains computed",
        context={"gains": [target / level for level in levels]},
    )
    return [scale(sig, target / level) for sig, level in zip(signals, levels)]
