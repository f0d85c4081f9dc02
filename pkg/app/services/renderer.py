"""
Binaural rendering of SH sound fields against SH-encoded HRTFs.

Per frequency bin each ear receives p = sum_nm A_nm (-1)^m H_{n,-m}, the
combination under which a unit plane wave from direction d reproduces the
HRTF at d exactly. Signals are transformed in blocks of SH channels and
accumulated in ascending flat-index order.
"""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal as sps

from app.core.config import get_settings
from app.core.exceptions import AliasingRiskError, OrderMismatchError, SampleRateMismatchError, ValidationException
from app.core.logging import log_operation_start, log_operation_complete, operation_logger
from app.models.domain import (
    BinauralIR,
    HRTFSH,
    QuadratureGrid,
    RenderCondition,
    SourceSignal,
    SplitSHImpulseResponse,
    StereoSignal,
    coefficient_count,
)
from app.services import sh_core

logger = logging.getLogger(__name__)


def fft_length(field_length: int, hrtf_length: int) -> int:
    """Smallest power of two holding the full linear convolution."""
    needed = field_length + hrtf_length - 1
    return 1 << max(needed - 1, 0).bit_length()


@lru_cache(maxsize=32)
def _mirrored_degrees(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Flat index of (n, -m) and the sign (-1)^m for each flat index (n, m)."""
    n, m = sh_core.degree_arrays(order)
    mirror = np.arange(coefficient_count(order)) - 2 * m
    sign = np.where(m % 2, -1.0, 1.0)
    return mirror, sign


def _check_orders(rir: SplitSHImpulseResponse, hrtf: HRTFSH, order: int) -> None:
    if order < 0:
        raise ValidationException(f"render order must be non-negative, got {order}")
    if order > rir.order:
        raise OrderMismatchError(order, rir.order, "sound field")
    if order > hrtf.order:
        raise OrderMismatchError(order, hrtf.order, "HRTF")
    if rir.sample_rate != hrtf.sample_rate:
        raise SampleRateMismatchError(rir.sample_rate, hrtf.sample_rate)


def _channel_products(parts: Sequence[np.ndarray], hrtf: HRTFSH, order: int, nfft: int):
    """
    Yield (flat slice, left products, right products) per channel block.

    Each product row is FFT(a_nm) * FFT((-1)^m h_{n,-m}); the SH signals in
    `parts` are summed channel by channel before the transform.
    """
    block = get_settings().render_channel_block
    mirror, sign = _mirrored_degrees(order)
    channels = coefficient_count(order)
    for begin in range(0, channels, block):
        rows = slice(begin, min(begin + block, channels))
        field = parts[0][rows]
        for extra in parts[1:]:
            field = field + extra[rows]
        spectrum = np.fft.fft(field, n=nfft, axis=1)
        idx = mirror[rows]
        weight = sign[rows][:, None]
        left = spectrum * np.fft.fft(weight * hrtf.left.data[idx], n=nfft, axis=1)
        right = spectrum * np.fft.fft(weight * hrtf.right.data[idx], n=nfft, axis=1)
        yield rows, left, right


def _render_parts(parts: Sequence[np.ndarray], hrtf: HRTFSH, order: int, sample_rate: float) -> BinauralIR:
    num_samples = parts[0].shape[1]
    out_length = num_samples + hrtf.ir_length - 1
    nfft = fft_length(num_samples, hrtf.ir_length)
    left = np.zeros(nfft, dtype=np.complex128)
    right = np.zeros(nfft, dtype=np.complex128)
    for _, block_left, block_right in _channel_products(parts, hrtf, order, nfft):
        for row in range(block_left.shape[0]):
            left += block_left[row]
            right += block_right[row]
    return BinauralIR(
        np.fft.ifft(left)[:out_length].real,
        np.fft.ifft(right)[:out_length].real,
        sample_rate,
    )


@operation_logger("render_uniform")
def render_uniform(rir: SplitSHImpulseResponse, hrtf: HRTFSH, order: int) -> BinauralIR:
    """Render direct + reverberant components together at a single SH order."""
    _check_orders(rir, hrtf, order)
    parts = [rir.direct.data, rir.reverberant.data]
    return _render_parts(parts, hrtf, order, rir.sample_rate)


def _sum_irs(first: BinauralIR, second: BinauralIR) -> BinauralIR:
    return BinauralIR(first.left + second.left, first.right + second.right, first.sample_rate)


@operation_logger("render_mixed")
def render_mixed(rir: SplitSHImpulseResponse, hrtf: HRTFSH, condition: RenderCondition) -> BinauralIR:
    """Direct component at condition.direct_order plus reverberant component at condition.reverb_order."""
    if condition.direct_order == condition.reverb_order:
        return render_uniform(rir, hrtf, condition.direct_order)
    _check_orders(rir, hrtf, condition.direct_order)
    _check_orders(rir, hrtf, condition.reverb_order)
    direct = _render_parts([rir.direct.data], hrtf, condition.direct_order, rir.sample_rate)
    reverberant = _render_parts([rir.reverberant.data], hrtf, condition.reverb_order, rir.sample_rate)
    return _sum_irs(direct, reverberant)


def _degree_spectra(parts: Sequence[np.ndarray], hrtf: HRTFSH, order: int, max_order: int, nfft: int):
    """Products summed over n for every degree m; row m + max_order holds degree m."""
    n, m = sh_core.degree_arrays(order)
    left = np.zeros((2 * max_order + 1, nfft), dtype=np.complex128)
    right = np.zeros_like(left)
    for rows, block_left, block_right in _channel_products(parts, hrtf, order, nfft):
        for offset, degree in enumerate(m[rows]):
            left[degree + max_order] += block_left[offset]
            right[degree + max_order] += block_right[offset]
    return left, right


def render_orientations(
    rir: SplitSHImpulseResponse,
    hrtf: HRTFSH,
    condition: RenderCondition,
    azimuths: Optional[Sequence[float]] = None,
    workers: Optional[int] = None,
) -> List[BinauralIR]:
    """
    BRIRs for a set of head azimuths (default: 360 steps of 1 degree).

    Turning the head by psi rotates the field by -psi, a factor exp(i m psi)
    per degree, so the per-degree spectra are computed once and every
    orientation is a weighted sum of them. psi = 0 is rendered directly and
    equals render_mixed.
    """
    operation = "orientation_rendering"
    start_time = time.time()
    settings = get_settings()
    if azimuths is None:
        azimuths = [math.radians(step) for step in range(360)]
    azimuths = [float(a) for a in azimuths]
    workers = workers or settings.parallel_workers

    _check_orders(rir, hrtf, condition.direct_order)
    _check_orders(rir, hrtf, condition.reverb_order)
    log_operation_start(
        logger="app.services.renderer",
        function="render_orientations",
        operation=operation,
        message="Rendering head orientations",
        context={"condition": condition.to_dict(), "orientations": len(azimuths), "workers": workers},
    )

    num_samples = rir.num_samples
    out_length = num_samples + hrtf.ir_length - 1
    nfft = fft_length(num_samples, hrtf.ir_length)
    top = max(condition.direct_order, condition.reverb_order)
    if condition.direct_order == condition.reverb_order:
        spectra_left, spectra_right = _degree_spectra(
            [rir.direct.data, rir.reverberant.data], hrtf, top, top, nfft
        )
    else:
        direct_left, direct_right = _degree_spectra([rir.direct.data], hrtf, condition.direct_order, top, nfft)
        reverb_left, reverb_right = _degree_spectra([rir.reverberant.data], hrtf, condition.reverb_order, top, nfft)
        spectra_left, spectra_right = direct_left + reverb_left, direct_right + reverb_right
    degrees = np.arange(-top, top + 1)

    def render_one(psi: float) -> BinauralIR:
        if psi == 0:
            return render_mixed(rir, hrtf, condition)
        phase = np.exp(1j * degrees * psi)[:, None]
        left = np.fft.ifft(np.sum(phase * spectra_left, axis=0))[:out_length].real
        right = np.fft.ifft(np.sum(phase * spectra_right, axis=0))[:out_length].real
        return BinauralIR(left, right, rir.sample_rate)

    if workers > 1 and len(azimuths) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(render_one, azimuths))
    else:
        results = [render_one(psi) for psi in azimuths]

    log_operation_complete(
        logger="app.services.renderer",
        function="render_orientations",
        operation=operation,
        message="Head orientations rendered",
        context={"orientations": len(results)},
        duration=time.time() - start_time,
    )
    return results


def quadrature_oracle_spectrum(
    field: np.ndarray,
    hrtf: np.ndarray,
    grid: QuadratureGrid,
    field_order: int,
    hrtf_order: int,
) -> np.ndarray:
    """Sphere integral of field x HRTF per bin: sum_j w_j a(d_j, k) h(d_j, k)."""
    if field_order + hrtf_order > 2 * grid.max_exact_order:
        raise AliasingRiskError(field_order + hrtf_order, 2 * grid.max_exact_order, "band-limit sum")
    field = np.asarray(field)
    hrtf = np.asarray(hrtf)
    if field.shape[0] != len(grid) or hrtf.shape[0] != len(grid):
        raise ValidationException("field and HRTF samples need one row per grid node")
    weights = grid.weights.reshape((-1,) + (1,) * (field.ndim - 1))
    return np.sum(weights * field * hrtf, axis=0)


def quadrature_render_oracle(
    field: np.ndarray,
    hrtf_left: np.ndarray,
    hrtf_right: np.ndarray,
    grid: QuadratureGrid,
    field_order: int,
    hrtf_order: int,
    sample_rate: float,
    length: Optional[int] = None,
) -> BinauralIR:
    """
    Reference renderer integrating the ear pressure over the sphere.

    Inputs are full-FFT spectra sampled on `grid`, one row per node; the
    result is the inverse transform, optionally cut to `length` samples.
    """
    left = np.fft.ifft(quadrature_oracle_spectrum(field, hrtf_left, grid, field_order, hrtf_order)).real
    right = np.fft.ifft(quadrature_oracle_spectrum(field, hrtf_right, grid, field_order, hrtf_order)).real
    if length is not None:
        left, right = left[:length], right[:length]
    return BinauralIR(left, right, sample_rate)


def convolve(source: SourceSignal, ir: BinauralIR) -> StereoSignal:
    """Full linear convolution of a mono source with each ear of a BRIR."""
    if source.sample_rate != ir.sample_rate:
        raise SampleRateMismatchError(source.sample_rate, ir.sample_rate)
    left = sps.fftconvolve(source.samples, ir.left, mode="full")
    right = sps.fftconvolve(source.samples, ir.right, mode="full")
    return StereoSignal(left, right, ir.sample_rate, label=source.label)


def aliasing_frequency(order: int, radius: Optional[float] = None, speed_of_sound: Optional[float] = None) -> float:
    """Upper frequency N c / (2 pi r) reproduced without spatial aliasing on a head of radius r."""
    settings = get_settings()
    radius = radius or settings.head_radius
    speed_of_sound = speed_of_sound or settings.speed_of_sound
    return order * speed_of_sound / (2.0 * math.pi * radius)
