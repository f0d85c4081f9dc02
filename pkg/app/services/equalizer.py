"""
Spectral equalization of order-truncated binaural signals toward a reference.

A single minimum-phase FIR is designed per condition from fractional-octave
smoothed magnitude spectra and applied identically to both ears.
"""
import dataclasses
import logging
import time
from pathlib import Path
from typing import Optional, Tuple, TypeVar

import numpy as np
from scipy import signal as sps

from app.core.config import get_settings
from app.core.exceptions import (
    ContainerParseError,
    SampleRateMismatchError,
    ValidationException,
    ZeroEnergyError,
)
from app.core.logging import log_operation_start, log_operation_complete, log_event
from app.models.domain import BinauralIR, EQFilter
from app.utils.containers import read_container, write_container

logger = logging.getLogger(__name__)

EQ_MAGIC = "binaural-eq"
BAND_REFERENCE_HZ = 1000.0

SignalT = TypeVar("SignalT", bound=BinauralIR)


def fractional_octave_smooth(magnitude: np.ndarray, fraction: int) -> np.ndarray:
    """
    Power average over [k 2^(-1/(2b)), k 2^(1/(2b))] around every bin k, b = fraction.

    Bins are assumed linearly spaced from DC; bin 0 is left unchanged.
    """
    magnitude = np.asarray(magnitude, dtype=float)
    if np.any(magnitude < 0):
        raise ValidationException("magnitude spectrum must be non-negative")
    if fraction <= 0:
        raise ValidationException("smoothing fraction must be positive")
    power = magnitude ** 2
    bins = np.arange(len(power))
    half_band = 2.0 ** (1.0 / (2.0 * fraction))
    low = np.minimum(np.ceil(bins / half_band).astype(int), bins)
    high = np.maximum(np.floor(bins * half_band).astype(int), bins)
    high = np.minimum(high, len(power) - 1)
    cumulative = np.concatenate([[0.0], np.cumsum(power)])
    mean_power = (cumulative[high + 1] - cumulative[low]) / (high - low + 1)
    return np.sqrt(mean_power)


def _ear_rms_spectrum(ir: BinauralIR, nfft: int) -> np.ndarray:
    left = np.abs(np.fft.rfft(ir.left, n=nfft)) ** 2
    right = np.abs(np.fft.rfft(ir.right, n=nfft)) ** 2
    return np.sqrt(0.5 * (left + right))


def _minimum_phase(magnitude: np.ndarray, taps: int) -> np.ndarray:
    """Real cepstrum folding; `magnitude` is sampled on the rfft grid of `taps` points."""
    log_magnitude = np.log(np.maximum(magnitude, 1e-12))
    cepstrum = np.fft.irfft(log_magnitude, n=taps)
    folded = np.zeros(taps)
    folded[0] = cepstrum[0]
    folded[1:taps // 2] = 2.0 * cepstrum[1:taps // 2]
    folded[taps // 2] = cepstrum[taps // 2]
    return np.fft.irfft(np.exp(np.fft.rfft(folded)), n=taps)


def _shape_gain(gain_db: np.ndarray, limit_db: float, band: np.ndarray) -> np.ndarray:
    """Clip to +/- limit_db and hold the band-edge values outside `band`."""
    gain_db = np.clip(gain_db, -limit_db, limit_db)
    if band.size:
        gain_db[:band[0]] = gain_db[band[0]]
        gain_db[band[-1] + 1:] = gain_db[band[-1]]
    return gain_db


def _level_ratio_db(target: np.ndarray, current: np.ndarray) -> np.ndarray:
    """Level of target over current in dB; +/-inf where one side is silent, 0 where both are."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = 20.0 * np.log10(target / current)
    return np.nan_to_num(ratio, nan=0.0, posinf=np.inf, neginf=-np.inf)


def design_eq(
    truncated: BinauralIR,
    reference: BinauralIR,
    smoothing_fraction: Optional[int] = None,
    gain_limit_db: Optional[float] = None,
    taps: Optional[int] = None,
) -> EQFilter:
    """
    Minimum-phase EQ matching the smoothed spectrum of `truncated` to `reference`.

    The gain curve starts as smoothed(|REF|) / smoothed(|TRUNC|) on the ear-RMS
    magnitude, clipped to +/- gain_limit_db and held constant outside the
    configured band. The FIR response is then measured on the filtered signal
    and the curve corrected by the remaining smoothed ratio, up to
    Settings.eq_refinement_iterations times, until a correction moves no bin
    by more than Settings.eq_tolerance_db.
    """
    operation = "eq_design"
    start_time = time.time()
    settings = get_settings()
    smoothing_fraction = smoothing_fraction or settings.eq_smoothing_fraction
    gain_limit_db = settings.eq_gain_limit_db if gain_limit_db is None else gain_limit_db
    taps = taps or settings.eq_taps
    if truncated.sample_rate != reference.sample_rate:
        raise SampleRateMismatchError(truncated.sample_rate, reference.sample_rate)
    if taps % 2:
        raise ValidationException("EQ tap count must be even")
    sample_rate = truncated.sample_rate

    log_operation_start(
        logger="app.services.equalizer",
        function="design_eq",
        operation=operation,
        message="Designing equalization filter",
        context={"smoothing_fraction": smoothing_fraction, "gain_limit_db": gain_limit_db, "taps": taps},
    )

    # grid long enough to hold the equalized output without time aliasing
    output_length = max(len(truncated), len(reference)) + taps - 1
    nfft = 1 << (output_length - 1).bit_length()
    trunc_rms = _ear_rms_spectrum(truncated, nfft)
    trunc_mag = fractional_octave_smooth(trunc_rms, smoothing_fraction)
    ref_mag = fractional_octave_smooth(_ear_rms_spectrum(reference, nfft), smoothing_fraction)
    if not np.any(trunc_mag > 0):
        raise ZeroEnergyError("truncated signal for EQ design")
    if not np.any(ref_mag > 0):
        raise ZeroEnergyError("reference signal for EQ design")

    freqs = np.fft.rfftfreq(nfft, 1.0 / sample_rate)
    high_hz = min(settings.eq_high_hold_hz, sample_rate / 2.0)
    band = np.flatnonzero((freqs >= settings.eq_low_hold_hz) & (freqs <= high_hz))
    # bins the truncated signal leaves empty get the full boost
    initial_db = np.where(trunc_mag > 0, _level_ratio_db(ref_mag, trunc_mag), gain_limit_db)
    gain_db = _shape_gain(initial_db, gain_limit_db, band)

    design_freqs = np.fft.rfftfreq(taps, 1.0 / sample_rate)
    iterations = 0
    correction = 0.0
    while True:
        design_db = np.interp(design_freqs, freqs, gain_db)
        filter_taps = _minimum_phase(10.0 ** (design_db / 20.0), taps)
        if iterations >= settings.eq_refinement_iterations:
            break
        response = np.abs(np.fft.rfft(filter_taps, n=nfft))
        equalized_mag = fractional_octave_smooth(trunc_rms * response, smoothing_fraction)
        refined = _shape_gain(gain_db + _level_ratio_db(ref_mag, equalized_mag), gain_limit_db, band)
        correction = float(np.max(np.abs(refined - gain_db)))
        if correction <= settings.eq_tolerance_db:
            break
        gain_db = refined
        iterations += 1

    log_operation_complete(
        logger="app.services.equalizer",
        function="design_eq",
        operation=operation,
        message="Equalization filter designed",
        context={
            "min_gain_db": float(design_db.min()),
            "max_gain_db": float(design_db.max()),
            "refinements": iterations,
            "last_correction_db": correction,
        },
        duration=time.time() - start_time,
    )
    return EQFilter(filter_taps, sample_rate, smoothing_fraction, gain_limit_db, gain_db=design_db)


def apply_eq(signal: SignalT, eq: EQFilter) -> SignalT:
    """Convolve both channels with the filter taps; returns the same signal type."""
    if signal.sample_rate != eq.sample_rate:
        raise SampleRateMismatchError(signal.sample_rate, eq.sample_rate)
    return dataclasses.replace(
        signal,
        left=sps.fftconvolve(signal.left, eq.taps, mode="full"),
        right=sps.fftconvolve(signal.right, eq.taps, mode="full"),
    )


def third_octave_band_energies(
    signal: BinauralIR,
    low_hz: float = 100.0,
    high_hz: float = 16000.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Energy in dB of both ears combined in each 1/3-octave band with centre in [low_hz, high_hz].

    Centres are 1000 * 2^(k/3) Hz; band edges sit a sixth of an octave either side.
    """
    sample_rate = signal.sample_rate
    # nominal band centres (100 Hz is 99.2 Hz exactly) are matched with a small tolerance
    first = int(np.ceil(3.0 * np.log2(low_hz / BAND_REFERENCE_HZ) - 0.05))
    last = int(np.floor(3.0 * np.log2(high_hz / BAND_REFERENCE_HZ) + 0.05))
    centres = BAND_REFERENCE_HZ * 2.0 ** (np.arange(first, last + 1) / 3.0)

    nfft = 1 << (len(signal) - 1).bit_length()
    power = np.abs(np.fft.rfft(signal.left, n=nfft)) ** 2 + np.abs(np.fft.rfft(signal.right, n=nfft)) ** 2
    freqs = np.fft.rfftfreq(nfft, 1.0 / sample_rate)
    cumulative = np.concatenate([[0.0], np.cumsum(power)])
    lower = np.searchsorted(freqs, centres * 2.0 ** (-1.0 / 6.0), side="left")
    upper = np.searchsorted(freqs, centres * 2.0 ** (1.0 / 6.0), side="left")
    energy = cumulative[upper] - cumulative[lower]
    with np.errstate(divide="ignore"):
        return centres, 10.0 * np.log10(energy)


def save_eq_filter(eq: EQFilter, path: Path) -> Path:
    path = write_container(
        path,
        EQ_MAGIC,
        {
            "taps": len(eq.taps),
            "sample_rate": repr(float(eq.sample_rate)),
            "smoothing_fraction": eq.smoothing_fraction,
            "gain_limit_db": repr(float(eq.gain_limit_db)),
        },
        eq.taps,
    )
    log_event(
        level="DEBUG",
        logger="app.services.equalizer",
        function="save_eq_filter",
        operation="eq_export",
        event="file_written",
        message="EQ filter written",
        context={"path": str(path), "taps": len(eq.taps)},
    )
    return path


def load_eq_filter(path: Path) -> EQFilter:
    """Read a tap file written by save_eq_filter (also used for headphone compensation filters)."""
    container = read_container(path, EQ_MAGIC)
    count = container.get_int("taps")
    if container.payload.size != count:
        raise ContainerParseError(
            str(path), container.payload_offset, f"payload holds {container.payload.size} taps, header declares {count}"
        )
    return EQFilter(
        taps=container.payload,
        sample_rate=container.get_float("sample_rate"),
        smoothing_fraction=container.get_int("smoothing_fraction"),
        gain_limit_db=container.get_float("gain_limit_db"),
    )
