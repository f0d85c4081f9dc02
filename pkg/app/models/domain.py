"""
Domain models for the binaural toolkit.
These are immutable value types shared by the services; pydantic schemas for
scene configuration live in scene_schemas.py.
"""
from dataclasses import dataclass, field
from typing import Optional, Dict, Any, List, Tuple, Iterator, Sequence
import math

import numpy as np

from app.core.exceptions import ValidationException, InvalidDegreeError


def wrap_azimuth(azimuth):
    """Wrap azimuth(s) into [-pi, pi)."""
    return (np.asarray(azimuth, dtype=float) + np.pi) % (2.0 * np.pi) - np.pi


def coefficient_count(order: int) -> int:
    """Number of SH coefficients up to `order`: (N+1)^2."""
    return (order + 1) ** 2


def order_from_count(count: int) -> int:
    """Inverse of coefficient_count; raises if count is not a perfect square."""
    order = math.isqrt(count) - 1
    if order < 0 or (order + 1) ** 2 != count:
        raise ValidationException(f"{count} is not a valid SH coefficient count")
    return order


@dataclass(frozen=True)
class Direction:
    """Elevation measured down from the zenith, azimuth counter-clockwise from the x axis."""
    elevation: float
    azimuth: float

    def __post_init__(self):
        if not (0.0 <= self.elevation <= math.pi):
            raise ValidationException(f"elevation {self.elevation} outside [0, pi]")
        object.__setattr__(self, "elevation", float(self.elevation))
        object.__setattr__(self, "azimuth", float(wrap_azimuth(self.azimuth)))

    @classmethod
    def from_degrees(cls, elevation_deg: float, azimuth_deg: float) -> 'Direction':
        return cls(math.radians(elevation_deg), math.radians(azimuth_deg))

    def to_dict(self) -> Dict[str, Any]:
        return {"elevation": self.elevation, "azimuth": self.azimuth}


def direction_arrays(directions: Sequence[Direction]) -> Tuple[np.ndarray, np.ndarray]:
    """Split a sequence of Directions into (elevation, azimuth) arrays."""
    elevation = np.array([d.elevation for d in directions], dtype=float)
    azimuth = np.array([d.azimuth for d in directions], dtype=float)
    return elevation, azimuth


@dataclass(frozen=True)
class SHCoefficients:
    """
    Flat ACN-indexed complex SH coefficients.

    `data` has shape ((order+1)^2, ...): the leading axis is the flat index
    n^2 + n + m, trailing axes hold time samples or frequency bins when the
    instance represents an SH signal.
    """
    order: int
    data: np.ndarray

    def __post_init__(self):
        if self.order < 0:
            raise InvalidDegreeError(self.order, 0)
        data = np.asarray(self.data, dtype=np.complex128)
        if data.ndim == 0 or data.shape[0] != coefficient_count(self.order):
            raise ValidationException(
                f"order {self.order} needs {coefficient_count(self.order)} coefficients, got shape {data.shape}"
            )
        object.__setattr__(self, "data", data)

    @property
    def count(self) -> int:
        return self.data.shape[0]

    def __add__(self, other: 'SHCoefficients') -> 'SHCoefficients':
        if other.order != self.order:
            raise ValidationException(f"cannot add order {self.order} and order {other.order}")
        return SHCoefficients(self.order, self.data + other.data)

    def scaled(self, factor: complex) -> 'SHCoefficients':
        return SHCoefficients(self.order, self.data * factor)


@dataclass(frozen=True)
class QuadratureGrid:
    """Sphere sampling with weights integrating SH products up to max_exact_order exactly."""
    elevation: np.ndarray
    azimuth: np.ndarray
    weights: np.ndarray
    max_exact_order: int

    def __post_init__(self):
        if not (len(self.elevation) == len(self.azimuth) == len(self.weights)):
            raise ValidationException("grid arrays must have equal length")
        if np.any(self.weights <= 0):
            raise ValidationException("quadrature weights must be positive")

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def directions(self) -> List[Direction]:
        return [Direction(e, a) for e, a in zip(self.elevation, self.azimuth)]


@dataclass(frozen=True)
class RoomSpec:
    """Shoebox room with a single frequency-independent pressure reflection coefficient."""
    dimensions: Tuple[float, float, float]
    reflection_coefficient: float
    target_t60: float = 0.0

    def __post_init__(self):
        dims = tuple(float(d) for d in self.dimensions)
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise ValidationException(f"room dimensions must be three positive lengths, got {self.dimensions}")
        if not (0.0 <= self.reflection_coefficient < 1.0):
            raise ValidationException(f"reflection coefficient {self.reflection_coefficient} outside [0, 1)")
        object.__setattr__(self, "dimensions", dims)

    @property
    def volume(self) -> float:
        x, y, z = self.dimensions
        return x * y * z

    @property
    def surface_area(self) -> float:
        x, y, z = self.dimensions
        return 2.0 * (x * y + x * z + y * z)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dimensions": list(self.dimensions),
            "reflection_coefficient": self.reflection_coefficient,
            "target_t60": self.target_t60,
        }


@dataclass(frozen=True)
class Geometry:
    """Listener and source placement; listener_facing is the azimuth of the head's front axis."""
    listener_position: Tuple[float, float, float]
    listener_facing: float
    source_position: Tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "listener_position", tuple(float(v) for v in self.listener_position))
        object.__setattr__(self, "source_position", tuple(float(v) for v in self.source_position))

    @property
    def source_distance(self) -> float:
        return float(np.linalg.norm(np.subtract(self.source_position, self.listener_position)))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "listener_position": list(self.listener_position),
            "listener_facing": self.listener_facing,
            "source_position": list(self.source_position),
        }


@dataclass(frozen=True)
class ImageSource:
    """One image of the source: arrival delay, signed gain, listener-frame direction."""
    delay: float
    gain: float
    direction: Direction
    reflection_count: int


@dataclass(frozen=True)
class ImageSourceSet:
    """
    Array-backed list of image sources, sorted by delay.

    Iterating yields ImageSource values, so it can be used wherever a list of
    images is expected while keeping 10^5-image rooms cheap to hold.
    """
    delays: np.ndarray
    gains: np.ndarray
    elevation: np.ndarray
    azimuth: np.ndarray
    reflection_counts: np.ndarray

    def __len__(self) -> int:
        return len(self.delays)

    def __iter__(self) -> Iterator[ImageSource]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, index: int) -> ImageSource:
        return ImageSource(
            delay=float(self.delays[index]),
            gain=float(self.gains[index]),
            direction=Direction(float(self.elevation[index]), float(self.azimuth[index])),
            reflection_count=int(self.reflection_counts[index]),
        )

    @classmethod
    def from_images(cls, images: Sequence[ImageSource]) -> 'ImageSourceSet':
        if isinstance(images, ImageSourceSet):
            return images
        return cls(
            delays=np.array([i.delay for i in images], dtype=float),
            gains=np.array([i.gain for i in images], dtype=float),
            elevation=np.array([i.direction.elevation for i in images], dtype=float),
            azimuth=np.array([i.direction.azimuth for i in images], dtype=float),
            reflection_counts=np.array([i.reflection_count for i in images], dtype=int),
        )

    @property
    def direct_delay(self) -> float:
        return float(self.delays[self.reflection_counts == 0][0])


@dataclass(frozen=True)
class SplitSHImpulseResponse:
    """Time-domain SH RIR split exactly into the direct path and everything else."""
    direct: SHCoefficients
    reverberant: SHCoefficients
    sample_rate: float

    def __post_init__(self):
        if self.direct.order != self.reverberant.order:
            raise ValidationException("direct and reverberant components must share an order")
        if self.direct.data.shape != self.reverberant.data.shape:
            raise ValidationException("direct and reverberant components must share a shape")

    @property
    def order(self) -> int:
        return self.direct.order

    @property
    def num_samples(self) -> int:
        return self.direct.data.shape[1]

    def total(self) -> SHCoefficients:
        return self.direct + self.reverberant

    def direct_only(self) -> 'SplitSHImpulseResponse':
        return SplitSHImpulseResponse(
            self.direct, SHCoefficients(self.order, np.zeros_like(self.reverberant.data)), self.sample_rate
        )

    def reverberant_only(self) -> 'SplitSHImpulseResponse':
        return SplitSHImpulseResponse(
            SHCoefficients(self.order, np.zeros_like(self.direct.data)), self.reverberant, self.sample_rate
        )


@dataclass(frozen=True)
class HRTFSet:
    """Direction-indexed head-related impulse responses, arrays of shape (Q, L)."""
    elevation: np.ndarray
    azimuth: np.ndarray
    left: np.ndarray
    right: np.ndarray
    sample_rate: float
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        q = len(self.elevation)
        if len(self.azimuth) != q:
            raise ValidationException("elevation and azimuth tables differ in length")
        left = np.atleast_2d(np.asarray(self.left, dtype=float))
        right = np.atleast_2d(np.asarray(self.right, dtype=float))
        if left.shape[0] != q or right.shape[0] != q:
            raise ValidationException(f"{q} directions but {left.shape[0]}/{right.shape[0]} IR pairs")
        if left.shape != right.shape:
            raise ValidationException("left and right IR blocks differ in shape")
        if self.sample_rate <= 0:
            raise ValidationException("sample rate must be positive")
        if np.any((self.elevation < 0) | (self.elevation > np.pi)):
            raise ValidationException("elevation outside [0, pi]")
        object.__setattr__(self, "azimuth", wrap_azimuth(self.azimuth))
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def ir_length(self) -> int:
        return self.left.shape[1]

    @property
    def directions(self) -> List[Direction]:
        return [Direction(e, a) for e, a in zip(self.elevation, self.azimuth)]

    def __len__(self) -> int:
        return len(self.elevation)


@dataclass(frozen=True)
class HRTFSH:
    """SH-encoded HRTF; left/right data are shaped ((order+1)^2, L)."""
    order: int
    left: SHCoefficients
    right: SHCoefficients
    sample_rate: float
    residual_left: Optional[np.ndarray] = None
    residual_right: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.left.order != self.order or self.right.order != self.order:
            raise ValidationException("ear coefficient orders must equal the HRTF order")

    @property
    def ir_length(self) -> int:
        return self.left.data.shape[1]


@dataclass(frozen=True)
class RenderCondition:
    """Direct-path and reverberant SH orders for one rendered stimulus."""
    name: str
    direct_order: int
    reverb_order: int

    def __post_init__(self):
        if self.direct_order < 0 or self.reverb_order < 0:
            raise ValidationException(f"condition '{self.name}' has a negative order")

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "direct_order": self.direct_order, "reverb_order": self.reverb_order}


# Mixed, reference, third-order and anchor conditions of the listening experiment
DEFAULT_CONDITIONS: Tuple[RenderCondition, ...] = (
    RenderCondition("mixed", 30, 1),
    RenderCondition("reference", 30, 30),
    RenderCondition("third", 3, 3),
    RenderCondition("anchor", 1, 1),
)


@dataclass(frozen=True)
class BinauralIR:
    """Left/right ear impulse responses."""
    left: np.ndarray
    right: np.ndarray
    sample_rate: float

    def __post_init__(self):
        left = np.asarray(self.left, dtype=float)
        right = np.asarray(self.right, dtype=float)
        if left.shape != right.shape or left.ndim != 1:
            raise ValidationException("left and right channels must be 1-D with equal length")
        if not (np.all(np.isfinite(left)) and np.all(np.isfinite(right))):
            raise ValidationException("binaural channels contain non-finite values")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    def __len__(self) -> int:
        return len(self.left)

    def stacked(self) -> np.ndarray:
        """(2, n) array, left first."""
        return np.vstack([self.left, self.right])


@dataclass(frozen=True)
class StereoSignal(BinauralIR):
    """A rendered two-channel program signal."""
    label: str = ""


@dataclass(frozen=True)
class SourceSignal:
    """Mono source signal with samples in [-1, 1]."""
    samples: np.ndarray
    sample_rate: float
    label: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1:
            raise ValidationException("source signal must be mono")
        if self.sample_rate <= 0:
            raise ValidationException("sample rate must be positive")
        if samples.size and np.max(np.abs(samples)) > 1.0:
            raise ValidationException(f"source signal '{self.label}' exceeds [-1, 1]")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class EQFilter:
    """Minimum-phase FIR equalizer plus the gain curve it was designed from."""
    taps: np.ndarray
    sample_rate: float
    smoothing_fraction: int
    gain_limit_db: float
    gain_db: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=float)
        if taps.ndim != 1 or not np.all(np.isfinite(taps)):
            raise ValidationException("EQ taps must be a finite 1-D sequence")
        object.__setattr__(self, "taps", taps)

    @classmethod
    def identity(cls, sample_rate: float) -> 'EQFilter':
        return cls(np.array([1.0]), sample_rate, 0, 0.0)


# Manifest columns, in file order
MANIFEST_COLUMNS = (
    "file", "environment", "signal", "condition", "N_d", "N_r",
    "drr_db", "diffuse_drr_db", "t60_s", "peak_dbfs", "rms_dbfs",
)


@dataclass
class StimulusManifest:
    """Rows describing every stimulus file of a run; `path` is the written table."""
    rows: List[Dict[str, Any]]
    path: Optional[Any] = None

    def __len__(self) -> int:
        return len(self.rows)

    def files(self) -> List[str]:
        return [row["file"] for row in self.rows]


@dataclass
class AnalysisReport:
    """Environment metrics, per-order SH energy and band spectra written by the analyze command."""
    environments: List[Dict[str, Any]]
    order_energy: List[Dict[str, Any]]
    band_energy: List[Dict[str, Any]]
    paths: List[Any] = field(default_factory=list)
