"""
Output Manager -- structured layout of every file a run writes.

    <out>/
    ├── stimuli/{environment}/{signal}_{condition}.wav
    ├── brirs/{environment}/{condition}[_az{deg}].wav
    ├── rirs/{environment}/sh_rir.{direct,reverberant}.shrir
    ├── filters/{environment}/{condition}.eq
    └── reports/{manifest,analysis}.tsv

Each stage asks this module for paths instead of building them itself, so a
rerun into the same directory overwrites the same files.
"""
import csv
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from app.core.exceptions import ValidationException

logger = logging.getLogger(__name__)

# Valid purpose directories within the output tree
VALID_PURPOSES = {"stimuli", "brirs", "rirs", "filters", "reports"}


def get_output_base(out_dir: Optional[Path] = None) -> Path:
    """
    Return (and create) the output base directory.

    Relative defaults resolve against the repository root (the directory
    containing the `app/` package).
    """
    if out_dir is None:
        from app.core.config import get_settings
        out_dir = get_settings().output_base_dir
        if not Path(out_dir).is_absolute():
            out_dir = Path(__file__).parent.parent.parent / out_dir
    base = Path(out_dir)
    base.mkdir(parents=True, exist_ok=True)
    return base


def get_output_dir(base: Path, purpose: str, identifier: Optional[str] = None) -> Path:
    """Return (and create) <base>/<purpose>[/<identifier>]."""
    if purpose not in VALID_PURPOSES:
        raise ValidationException(f"Invalid output purpose '{purpose}'. Must be one of: {sorted(VALID_PURPOSES)}")
    target = Path(base) / purpose
    if identifier:
        target = target / identifier
    target.mkdir(parents=True, exist_ok=True)
    return target


def get_output_path(base: Path, purpose: str, identifier: Optional[str], filename: str) -> Path:
    return get_output_dir(base, purpose, identifier) / filename


def environment_id(env: int) -> str:
    return f"env{env}"


def stimulus_path(base: Path, env: int, signal: str, condition: str) -> Path:
    return get_output_path(base, "stimuli", environment_id(env), f"{signal}_{condition}.wav")


def brir_path(base: Path, env: int, condition: str, azimuth_deg: Optional[float] = None) -> Path:
    suffix = "" if azimuth_deg is None else f"_az{azimuth_deg:06.2f}"
    return get_output_path(base, "brirs", environment_id(env), f"{condition}{suffix}.wav")


def write_table(path: Path, columns: Sequence[str], rows: List[Dict[str, Any]]) -> Path:
    """Tab-delimited text table with a header row; floats keep full repr precision."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), delimiter="\t", extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format_cell(row.get(k)) for k in columns})
    logger.info(f"Wrote table {path} ({len(rows)} rows)")
    return path


def read_table(path: Path) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f, delimiter="\t"))


def _format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        # numpy scalars subclass float but repr as np.float64(...)
        return repr(float(value))
    return str(value)


def list_outputs(base: Path, purpose: str) -> List[Path]:
    """All files under one purpose directory, sorted."""
    root = Path(base) / purpose
    if not root.exists():
        return []
    return sorted(p for p in root.rglob("*") if p.is_file())
