"""
Pydantic models for scene configuration files.

A scene names the room, the listening positions, the HRTF source, the render
conditions and the source signals of one experiment. `configs/listening_test.json`
holds the listening-test defaults.
"""
import json
import math
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from app.core.config import get_settings
from app.core.exceptions import ValidationException
from app.models.domain import Geometry, RenderCondition, RoomSpec


class SignalKind(str, Enum):
    """Source signal types."""
    PINK = "pink"
    FILE = "file"


class RoomModel(BaseModel):
    dimensions: Tuple[float, float, float] = (15.5, 9.8, 7.5)
    reflection_coefficient: float = Field(default=0.8, ge=0.0, lt=1.0)
    target_t60: float = Field(default=0.75, gt=0.0, le=10.0)

    @field_validator("dimensions")
    @classmethod
    def validate_dimensions(cls, v: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if any(d <= 0 for d in v):
            raise ValueError("room dimensions must be positive")
        return v

    def to_domain(self) -> RoomSpec:
        return RoomSpec(self.dimensions, self.reflection_coefficient, self.target_t60)


class EnvironmentModel(BaseModel):
    """
    A listening position.

    Either a preset id (1: source at 1.5 r_d, 2: source at 3 r_d) or explicit
    listener and source positions in metres.
    """
    id: int = Field(ge=1)
    listener_position: Optional[Tuple[float, float, float]] = None
    source_position: Optional[Tuple[float, float, float]] = None

    @model_validator(mode="after")
    def validate_positions(self):
        if (self.listener_position is None) != (self.source_position is None):
            raise ValueError("listener_position and source_position must be given together")
        if self.listener_position is None and self.id not in (1, 2):
            raise ValueError(f"environment {self.id} needs explicit positions (presets are 1 and 2)")
        return self

    @property
    def is_preset(self) -> bool:
        return self.listener_position is None

    def to_geometry(self, listener_facing: float) -> Geometry:
        return Geometry(self.listener_position, listener_facing, self.source_position)


class HRTFModel(BaseModel):
    """Measured HRTF container, or a synthetic band-limited set of the given order."""
    path: Optional[str] = None
    synthetic_order: Optional[int] = Field(default=None, ge=0, le=30)
    synthetic_seed: int = 0
    ir_length: int = Field(default=128, ge=1)
    mirror: bool = True
    fit_order: Optional[int] = Field(default=None, ge=0, le=30)

    @model_validator(mode="after")
    def validate_source(self):
        if (self.path is None) == (self.synthetic_order is None):
            raise ValueError("exactly one of hrtf.path and hrtf.synthetic_order must be set")
        if self.path is not None and not Path(self.path).is_file():
            raise ValueError(f"HRTF file not found: {self.path}")
        return self

    @property
    def order(self) -> Optional[int]:
        """Order of the SH HRTF the scene will render with, if known before loading."""
        if self.synthetic_order is not None:
            return self.synthetic_order
        return self.fit_order


class ConditionModel(BaseModel):
    name: str = Field(min_length=1, pattern=r"^[A-Za-z0-9_\-]+$")
    direct_order: int = Field(ge=0, le=30)
    reverb_order: int = Field(ge=0, le=30)

    def to_domain(self) -> RenderCondition:
        return RenderCondition(self.name, self.direct_order, self.reverb_order)


class SignalModel(BaseModel):
    name: str = Field(min_length=1, pattern=r"^[A-Za-z0-9_\-]+$")
    kind: SignalKind = SignalKind.PINK
    path: Optional[str] = None
    burst_length: float = Field(default=1.0, gt=0.0)
    fade_length: float = Field(default=0.02, ge=0.0)
    pause_length: float = Field(default=0.3, ge=0.0)
    repetitions: int = Field(default=3, ge=1)

    @model_validator(mode="after")
    def validate_kind(self):
        if self.kind == SignalKind.FILE:
            if not self.path:
                raise ValueError(f"signal '{self.name}' of kind 'file' needs a path")
            if not Path(self.path).is_file():
                raise ValueError(f"signal file not found: {self.path}")
        elif 2 * self.fade_length > self.burst_length:
            raise ValueError(f"signal '{self.name}': fades longer than the burst")
        return self


def _default_conditions() -> List[ConditionModel]:
    return [
        ConditionModel(name="mixed", direct_order=30, reverb_order=1),
        ConditionModel(name="reference", direct_order=30, reverb_order=30),
        ConditionModel(name="third", direct_order=3, reverb_order=3),
        ConditionModel(name="anchor", direct_order=1, reverb_order=1),
    ]


class SceneSpec(BaseModel):
    """Full experiment configuration."""
    room: RoomModel = Field(default_factory=RoomModel)
    listener_facing_deg: Optional[float] = None  # None -> Settings.listener_facing_deg
    environments: List[EnvironmentModel] = Field(
        default_factory=lambda: [EnvironmentModel(id=1), EnvironmentModel(id=2)], min_length=1
    )
    hrtf: HRTFModel = Field(default_factory=lambda: HRTFModel(synthetic_order=30))
    sh_order: int = Field(default=30, ge=0, le=30)
    rir_length: Optional[float] = Field(default=None, gt=0.0)
    conditions: List[ConditionModel] = Field(default_factory=_default_conditions, min_length=1)
    reference_condition: str = "reference"
    signals: List[SignalModel] = Field(default_factory=lambda: [SignalModel(name="noise")], min_length=1)
    seed: int = 0
    sample_rate: int = 48000
    equalize: bool = True
    headphone_eq: Optional[str] = None
    orientation_resolution_deg: float = Field(default=1.0, gt=0.0, le=360.0)
    output_dir: str = "output"

    @model_validator(mode="after")
    def validate_scene(self):
        names = [c.name for c in self.conditions]
        if len(set(names)) != len(names):
            raise ValueError(f"condition names must be unique: {names}")
        if self.reference_condition not in names:
            raise ValueError(f"reference condition '{self.reference_condition}' is not among {names}")
        signal_names = [s.name for s in self.signals]
        if len(set(signal_names)) != len(signal_names):
            raise ValueError(f"signal names must be unique: {signal_names}")
        env_ids = [e.id for e in self.environments]
        if len(set(env_ids)) != len(env_ids):
            raise ValueError(f"environment ids must be unique: {env_ids}")

        top = max(max(c.direct_order, c.reverb_order) for c in self.conditions)
        if top > self.sh_order:
            raise ValueError(f"condition order {top} exceeds simulation order {self.sh_order}")
        hrtf_order = self.hrtf.order
        if hrtf_order is not None and top > hrtf_order:
            raise ValueError(f"condition order {top} exceeds HRTF order {hrtf_order}")
        if self.headphone_eq is not None and not Path(self.headphone_eq).is_file():
            raise ValueError(f"headphone EQ file not found: {self.headphone_eq}")
        return self

    @property
    def listener_facing(self) -> float:
        degrees = self.listener_facing_deg
        if degrees is None:
            degrees = get_settings().listener_facing_deg
        return math.radians(degrees)

    @property
    def max_order(self) -> int:
        return max(max(c.direct_order, c.reverb_order) for c in self.conditions)

    def render_conditions(self) -> List[RenderCondition]:
        return [c.to_domain() for c in self.conditions]

    def condition(self, name: str) -> RenderCondition:
        for c in self.conditions:
            if c.name == name:
                return c.to_domain()
        raise ValidationException(f"unknown condition '{name}'; available: {[c.name for c in self.conditions]}")

    def environment(self, env_id: int) -> EnvironmentModel:
        for env in self.environments:
            if env.id == env_id:
                return env
        raise ValidationException(f"unknown environment {env_id}; available: {[e.id for e in self.environments]}")


def load_scene(path: Path) -> SceneSpec:
    """
    Parse and validate a JSON scene file.

    Relative file paths inside the scene resolve against the scene file's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationException(f"scene file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValidationException(f"scene file {path} is not valid JSON: {e}")
    _resolve_paths(raw, path.parent)
    try:
        return SceneSpec.model_validate(raw)
    except ValidationError as e:
        raise ValidationException(f"scene file {path}: {e}")


def _resolve_paths(raw: dict, root: Path) -> None:
    def resolve(value: Optional[str]) -> Optional[str]:
        if value is None or Path(value).is_absolute():
            return value
        return str(root / value)

    hrtf = raw.get("hrtf")
    if isinstance(hrtf, dict) and hrtf.get("path"):
        hrtf["path"] = resolve(hrtf["path"])
    for signal in raw.get("signals", []) or []:
        if isinstance(signal, dict) and signal.get("path"):
            signal["path"] = resolve(signal["path"])
    if raw.get("headphone_eq"):
        raw["headphone_eq"] = resolve(raw["headphone_eq"])
