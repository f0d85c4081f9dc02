"""
Spherical-harmonics core: complex orthonormal basis with Condon-Shortley phase,
ACN flat indexing, Gauss-Legendre quadrature grids and the forward/inverse
spherical Fourier transforms built on them.
"""
import logging
from functools import lru_cache
from typing import Sequence, Tuple, Union

import numpy as np
from scipy import special

from app.core.exceptions import (
    InvalidDegreeError,
    AliasingRiskError,
    InvalidTruncationError,
    ValidationException,
)
from app.models.domain import (
    Direction,
    SHCoefficients,
    QuadratureGrid,
    coefficient_count,
    direction_arrays,
)

logger = logging.getLogger(__name__)

try:
    # scipy >= 1.15: sph_harm_y(n, m, polar, azimuth)
    from scipy.special import sph_harm_y as _sph_harm_y

    def _ynm(n, m, elevation, azimuth):
        return _sph_harm_y(n, m, elevation, azimuth)
except ImportError:  # pragma: no cover - older scipy
    from scipy.special import sph_harm as _sph_harm

    def _ynm(n, m, elevation, azimuth):
        return _sph_harm(m, n, azimuth, elevation)


Directions = Union[QuadratureGrid, Sequence[Direction], Tuple[np.ndarray, np.ndarray]]


def _check_degree(n: int, m: int) -> None:
    if n < 0 or abs(m) > n:
        raise InvalidDegreeError(n, m)


def _angles(directions: Directions) -> Tuple[np.ndarray, np.ndarray]:
    """Accept a grid, a list of Directions or an (elevation, azimuth) pair of arrays."""
    if isinstance(directions, QuadratureGrid):
        return np.asarray(directions.elevation, float), np.asarray(directions.azimuth, float)
    if isinstance(directions, tuple) and len(directions) == 2 and isinstance(directions[0], np.ndarray):
        return np.asarray(directions[0], float), np.asarray(directions[1], float)
    if isinstance(directions, Direction):
        directions = [directions]
    return direction_arrays(directions)


def flat_index(n: int, m: int) -> int:
    """ACN index n^2 + n + m."""
    _check_degree(n, m)
    return n * n + n + m


@lru_cache(maxsize=64)
def degree_arrays(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """(n, m) per flat index for all degrees up to `order`."""
    n = np.concatenate([np.full(2 * k + 1, k) for k in range(order + 1)])
    m = np.concatenate([np.arange(-k, k + 1) for k in range(order + 1)])
    n.setflags(write=False)
    m.setflags(write=False)
    return n, m


def sh_basis(n: int, m: int, direction: Direction) -> complex:
    """Orthonormal complex Y_n^m at one direction."""
    _check_degree(n, m)
    return complex(_ynm(n, m, direction.elevation, direction.azimuth))


def sh_matrix(order: int, elevation: np.ndarray, azimuth: np.ndarray) -> np.ndarray:
    """Basis matrix of shape (Q, (order+1)^2); row q holds Y_n^m at direction q."""
    if order < 0:
        raise InvalidDegreeError(order, 0)
    n, m = degree_arrays(order)
    elevation = np.atleast_1d(np.asarray(elevation, dtype=float))
    azimuth = np.atleast_1d(np.asarray(azimuth, dtype=float))
    return np.asarray(_ynm(n[None, :], m[None, :], elevation[:, None], azimuth[:, None]), dtype=np.complex128)


@lru_cache(maxsize=64)
def nonnegative_indices(order: int) -> np.ndarray:
    """Flat indices with m >= 0, ascending."""
    _, m = degree_arrays(order)
    indices = np.flatnonzero(m >= 0)
    indices.setflags(write=False)
    return indices


def sh_matrix_nonnegative(order: int, elevation: np.ndarray, azimuth: np.ndarray) -> np.ndarray:
    """Columns of sh_matrix with m >= 0 only, in nonnegative_indices order."""
    n, m = degree_arrays(order)
    keep = nonnegative_indices(order)
    elevation = np.atleast_1d(np.asarray(elevation, dtype=float))
    azimuth = np.atleast_1d(np.asarray(azimuth, dtype=float))
    return np.asarray(
        _ynm(n[keep][None, :], m[keep][None, :], elevation[:, None], azimuth[:, None]), dtype=np.complex128
    )


def complete_real_field(data: np.ndarray, order: int) -> np.ndarray:
    """
    Overwrite the m < 0 rows of `data` from its m >= 0 rows, in place.

    Uses c_{n,-m} = (-1)^m conj(c_{n,m}), which holds for any real-valued field.
    """
    _, m = degree_arrays(order)
    for idx in np.flatnonzero(m < 0):
        mirror = idx - 2 * m[idx]
        sign = -1.0 if m[idx] % 2 else 1.0
        data[idx] = sign * np.conj(data[mirror])
    return data


def make_grid(order: int) -> QuadratureGrid:
    """
    Gauss-Legendre rings in cos(elevation) times 2*order+2 equiangular azimuths.

    Products of two functions band-limited to `order` integrate exactly.
    """
    if order < 0:
        raise InvalidDegreeError(order, 0)
    nodes, ring_weights = special.roots_legendre(order + 1)
    azimuth_count = 2 * order + 2
    ring_elevation = np.arccos(nodes)
    ring_azimuth = 2.0 * np.pi * np.arange(azimuth_count) / azimuth_count

    elevation = np.repeat(ring_elevation, azimuth_count)
    azimuth = np.tile(ring_azimuth, order + 1)
    weights = np.repeat(ring_weights, azimuth_count) * (2.0 * np.pi / azimuth_count)

    logger.debug(f"Built quadrature grid: order={order}, nodes={len(weights)}")
    return QuadratureGrid(
        elevation=elevation,
        azimuth=(azimuth + np.pi) % (2.0 * np.pi) - np.pi,
        weights=weights,
        max_exact_order=order,
    )


def sft(values: np.ndarray, grid: QuadratureGrid, order: int) -> SHCoefficients:
    """
    Forward transform by quadrature: c_nm = sum_j w_j f(d_j) conj(Y_n^m(d_j)).

    `values` has one row per grid node; trailing axes (time, frequency) are kept.
    """
    if order > grid.max_exact_order:
        raise AliasingRiskError(order, grid.max_exact_order)
    values = np.asarray(values)
    if values.shape[0] != len(grid):
        raise ValidationException(f"expected {len(grid)} values per node row, got {values.shape[0]}")
    basis = sh_matrix(order, grid.elevation, grid.azimuth)
    weighted = values * grid.weights.reshape((-1,) + (1,) * (values.ndim - 1))
    data = np.tensordot(basis.conj().T, weighted, axes=(1, 0))
    return SHCoefficients(order, data)


def isft(coeffs: SHCoefficients, directions: Directions) -> np.ndarray:
    """Evaluate sum_nm c_nm Y_n^m at each direction; result has one row per direction."""
    elevation, azimuth = _angles(directions)
    basis = sh_matrix(coeffs.order, elevation, azimuth)
    return np.tensordot(basis, coeffs.data, axes=(1, 0))


def encode_plane_wave(amplitude: complex, direction: Direction, order: int) -> SHCoefficients:
    """Plane wave of the given amplitude arriving from `direction`: A * conj(Y_n^m)."""
    basis = sh_matrix(order, np.array([direction.elevation]), np.array([direction.azimuth]))[0]
    return SHCoefficients(order, amplitude * basis.conj())


def truncate(coeffs: SHCoefficients, new_order: int) -> SHCoefficients:
    """Drop every coefficient with n > new_order."""
    if new_order > coeffs.order:
        raise InvalidTruncationError(coeffs.order, new_order)
    if new_order < 0:
        raise InvalidDegreeError(new_order, 0)
    if new_order == coeffs.order:
        return coeffs
    return SHCoefficients(new_order, coeffs.data[:coefficient_count(new_order)])


def azimuth_phase(order: int, delta: float) -> np.ndarray:
    """Per-coefficient factor exp(-i m delta) mapping an azimuth phi to phi + delta."""
    _, m = degree_arrays(order)
    return np.exp(-1j * m * delta)


def rotate_azimuth(coeffs: SHCoefficients, delta: float) -> SHCoefficients:
    """Rotate a sound field about the vertical axis by `delta` radians."""
    if delta == 0:
        return coeffs
    phase = azimuth_phase(coeffs.order, delta)
    shape = (-1,) + (1,) * (coeffs.data.ndim - 1)
    return SHCoefficients(coeffs.order, coeffs.data * phase.reshape(shape))


def per_order_energy(coeffs: SHCoefficients) -> np.ndarray:
    """Energy per order n, summed over degrees and any trailing axes."""
    n, _ = degree_arrays(coeffs.order)
    power = np.abs(coeffs.data) ** 2
    if power.ndim > 1:
        power = power.reshape(power.shape[0], -1).sum(axis=1)
    return np.bincount(n, weights=power, minlength=coeffs.order + 1)


def fibonacci_directions(count: int) -> Tuple[np.ndarray, np.ndarray]:
    """Near-uniform spherical Fibonacci point set as (elevation, azimuth) arrays."""
    if count < 1:
        raise ValidationException("count must be positive")
    index = np.arange(count) + 0.5
    elevation = np.arccos(1.0 - 2.0 * index / count)
    golden_angle = np.pi * (3.0 - np.sqrt(5.0))
    azimuth = (golden_angle * index + np.pi) % (2.0 * np.pi) - np.pi
    return elevation, azimuth
