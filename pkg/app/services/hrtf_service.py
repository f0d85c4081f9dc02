"""
HRTF sets: container I/O, least-squares SH encoding and band-limited synthetic sets.
"""
import logging
import time
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from app.core.config import get_settings
from app.core.exceptions import (
    ContainerParseError,
    InsufficientDirectionsError,
    UnsupportedSampleRateError,
    ValidationException,
)
from app.core.logging import log_event, log_operation_start, log_operation_complete
from app.models.domain import HRTFSet, HRTFSH, QuadratureGrid, SHCoefficients, coefficient_count
from app.services import sh_core
from app.utils.containers import read_container, write_container

logger = logging.getLogger(__name__)

HRTF_MAGIC = "binaural-hrtf"


def save_hrtf_set(hrtf: HRTFSet, path: Path) -> Path:
    """Header, (elevation, azimuth[, weight]) table, then left block and right block as float32."""
    table_columns = [hrtf.elevation, hrtf.azimuth]
    if hrtf.weights is not None:
        table_columns.append(hrtf.weights)
    path = write_container(
        path,
        HRTF_MAGIC,
        {
            "directions": len(hrtf),
            "ir_length": hrtf.ir_length,
            "sample_rate": repr(float(hrtf.sample_rate)),
            "weights": int(hrtf.weights is not None),
        },
        np.concatenate([hrtf.left.ravel(), hrtf.right.ravel()]),
        table=np.column_stack(table_columns),
    )
    log_event(
        level="INFO",
        logger="app.services.hrtf_service",
        function="save_hrtf_set",
        operation="hrtf_export",
        event="file_written",
        message="HRTF set written",
        context={"path": str(path), "directions": len(hrtf), "ir_length": hrtf.ir_length},
    )
    return path


def load_hrtf_set(path: Path) -> HRTFSet:
    """
    Read an HRTF container.

    Raises ContainerParseError on malformed headers or payload sizes and
    UnsupportedSampleRateError for rates outside Settings.supported_sample_rates.
    """
    settings = get_settings()
    container = read_container(path, HRTF_MAGIC)
    directions = container.get_int("directions")
    ir_length = container.get_int("ir_length")
    sample_rate = container.get_float("sample_rate")
    has_weights = container.get_int("weights") if "weights" in container.fields else 0

    if int(sample_rate) != sample_rate or int(sample_rate) not in settings.supported_sample_rates:
        raise UnsupportedSampleRateError(sample_rate, settings.supported_sample_rates)

    table = container.table
    expected_columns = 3 if has_weights else 2
    if table is None or table.shape != (directions, expected_columns):
        found = None if table is None else table.shape
        raise ContainerParseError(
            str(path), container.payload_offset,
            f"direction table shape {found} does not match {directions} directions x {expected_columns} columns",
        )
    expected_values = 2 * directions * ir_length
    if container.payload.size != expected_values:
        raise ContainerParseError(
            str(path), container.payload_offset,
            f"payload holds {container.payload.size} IR values, expected {expected_values}",
        )

    left, right = container.payload.reshape(2, directions, ir_length)
    try:
        hrtf = HRTFSet(
            elevation=table[:, 0],
            azimuth=table[:, 1],
            left=left,
            right=right,
            sample_rate=sample_rate,
            weights=table[:, 2] if has_weights else None,
        )
    except ValidationException as e:
        raise ContainerParseError(str(path), container.payload_offset, e.message)

    logger.info(f"Loaded HRTF set {path}: {directions} directions, {ir_length} taps at {sample_rate:g} Hz")
    return hrtf


def _fit_weights(hrtf: HRTFSet) -> np.ndarray:
    if hrtf.weights is not None:
        return np.asarray(hrtf.weights, dtype=float)
    return np.full(len(hrtf), 4.0 * np.pi / len(hrtf))


def encode_hrtf_sh(hrtf: HRTFSet, order: int, regularization: Optional[float] = None) -> HRTFSH:
    """
    Regularized weighted least-squares SH fit, solved for every time sample of both ears.

    Minimizes sum_q w_q |Y c - h|^2 + lambda |c|^2 with lambda relative to the
    mean column energy of the weighted basis. Per-sample relative residuals are
    kept on the result.
    """
    operation = "hrtf_sh_encoding"
    start_time = time.time()
    if regularization is None:
        regularization = get_settings().hrtf_regularization
    max_order = get_settings().max_sh_order
    if order < 0 or order > max_order:
        raise ValidationException(f"HRTF order must lie in [0, {max_order}], got {order}")
    if len(hrtf) < coefficient_count(order):
        raise InsufficientDirectionsError(len(hrtf), order)

    log_operation_start(
        logger="app.services.hrtf_service",
        function="encode_hrtf_sh",
        operation=operation,
        message="Fitting SH coefficients to HRTF set",
        context={"order": order, "directions": len(hrtf), "ir_length": hrtf.ir_length,
                 "regularization": regularization},
    )

    sqrt_w = np.sqrt(_fit_weights(hrtf))
    basis = sh_core.sh_matrix(order, hrtf.elevation, hrtf.azimuth)
    system = basis * sqrt_w[:, None]
    rhs = np.concatenate([hrtf.left, hrtf.right], axis=1) * sqrt_w[:, None]

    if regularization > 0:
        strength = regularization * np.sum(np.abs(system) ** 2) / system.shape[1]
        system = np.vstack([system, np.sqrt(strength) * np.eye(system.shape[1])])
        rhs = np.vstack([rhs, np.zeros((system.shape[1], rhs.shape[1]))])

    solution, _, rank, _ = np.linalg.lstsq(system, rhs.astype(np.complex128), rcond=None)
    if rank < coefficient_count(order):
        log_event(
            level="WARNING",
            logger="app.services.hrtf_service",
            function="encode_hrtf_sh",
            operation=operation,
            event="rank_deficient",
            message="SH fit system is rank deficient",
            context={"rank": int(rank), "coefficients": coefficient_count(order)},
        )

    length = hrtf.ir_length
    left = SHCoefficients(order, solution[:, :length])
    right = SHCoefficients(order, solution[:, length:])
    residual_left = _relative_residual(basis, left.data, hrtf.left)
    residual_right = _relative_residual(basis, right.data, hrtf.right)

    log_operation_complete(
        logger="app.services.hrtf_service",
        function="encode_hrtf_sh",
        operation=operation,
        message="HRTF SH fit complete",
        context={"order": order, "max_residual": float(max(residual_left.max(), residual_right.max()))},
        duration=time.time() - start_time,
    )
    return HRTFSH(order, left, right, hrtf.sample_rate, residual_left, residual_right)


def _relative_residual(basis: np.ndarray, coeffs: np.ndarray, measured: np.ndarray) -> np.ndarray:
    """||Y c - h|| / ||h|| per time sample (0 where the sample is silent)."""
    error = np.linalg.norm(basis @ coeffs - measured, axis=0)
    scale = np.linalg.norm(measured, axis=0)
    return np.divide(error, scale, out=np.zeros_like(error), where=scale > 0)


def _random_real_field(rng: np.random.Generator, order: int, length: int, decay: float) -> np.ndarray:
    """Random SH coefficients of a real field, shape ((order+1)^2, length)."""
    n, m = sh_core.degree_arrays(order)
    data = np.zeros((coefficient_count(order), length), dtype=np.complex128)
    keep = sh_core.nonnegative_indices(order)
    draws = rng.standard_normal((len(keep), length)) + 1j * rng.standard_normal((len(keep), length))
    draws[m[keep] == 0] = draws[m[keep] == 0].real
    envelope = np.exp(-np.arange(length) / decay)
    data[keep] = draws * envelope[None, :] / (1.0 + n[keep][:, None])
    return sh_core.complete_real_field(data, order)


def synthetic_hrtf(
    order: int,
    grid: QuadratureGrid,
    seed: int,
    ir_length: Optional[int] = None,
    sample_rate: Optional[float] = None,
    mirror: bool = False,
) -> Tuple[HRTFSet, HRTFSH]:
    """
    Band-limited HRTF set drawn from seeded random SH coefficients and sampled on `grid`.

    The coefficients describe real impulse responses, so the sampled set is real.
    With `mirror`, the right ear is the left ear reflected about the median
    plane, h_r(theta, phi) = h_l(theta, -phi). Returns the set and the true coefficients.
    """
    if order > grid.max_exact_order:
        raise ValidationException(f"grid exact to order {grid.max_exact_order} cannot carry order {order}")
    settings = get_settings()
    ir_length = ir_length or settings.synthetic_hrtf_length
    sample_rate = sample_rate or settings.sample_rate
    rng = np.random.default_rng(seed)
    decay = max(ir_length / 8.0, 1.0)

    left = _random_real_field(rng, order, ir_length, decay)
    if mirror:
        # Y_n^m(theta, -phi) = (-1)^m Y_n^-m(theta, phi); with the real-field symmetry this is c_r = conj(c_l)
        right = left.conj()
    else:
        right = _random_real_field(rng, order, ir_length, decay)

    basis = sh_core.sh_matrix(order, grid.elevation, grid.azimuth)
    hrtf = HRTFSet(
        elevation=grid.elevation,
        azimuth=grid.azimuth,
        left=(basis @ left).real,
        right=(basis @ right).real,
        sample_rate=float(sample_rate),
        weights=grid.weights,
    )
    truth = HRTFSH(order, SHCoefficients(order, left), SHCoefficients(order, right), float(sample_rate))
    logger.debug(f"Synthetic HRTF: order={order}, directions={len(hrtf)}, seed={seed}, mirror={mirror}")
    return hrtf, truth
