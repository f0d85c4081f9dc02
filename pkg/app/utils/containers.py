"""
Text-header binary containers for HRTF sets, SH impulse responses and EQ filters.

Layout (all three kinds):

    <magic>\\n
    key value\\n            (one per header field)
    ...
    end_header\\n
    v v v\\n                (optional table, `table_rows` lines of `table_columns` decimals)
    ...
    <payload>             float32 little-endian, `payload_values` values

Decimal table values are written with repr() so they re-read bit-exactly.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from app.core.exceptions import ContainerParseError

logger = logging.getLogger(__name__)

END_HEADER = b"end_header"
PAYLOAD_DTYPE = np.dtype("<f4")
MAX_HEADER_LINES = 256


@dataclass(frozen=True)
class Container:
    """A parsed container: header fields as text, optional float table, float32 payload."""
    path: Path
    magic: str
    fields: Dict[str, str]
    table: Optional[np.ndarray]
    payload: np.ndarray
    payload_offset: int

    def get_int(self, key: str) -> int:
        return int(self._get(key, int))

    def get_float(self, key: str) -> float:
        return float(self._get(key, float))

    def get_str(self, key: str, default: Optional[str] = None) -> str:
        if key not in self.fields:
            if default is not None:
                return default
            raise ContainerParseError(str(self.path), 0, f"missing header field '{key}'")
        return self.fields[key]

    def _get(self, key: str, kind):
        raw = self.get_str(key)
        try:
            return kind(raw)
        except ValueError:
            raise ContainerParseError(str(self.path), 0, f"header field '{key}' is not a {kind.__name__}: {raw!r}")


def write_container(
    path: Path,
    magic: str,
    fields: Dict[str, Any],
    payload: np.ndarray,
    table: Optional[np.ndarray] = None,
) -> Path:
    """Write a container; `payload` is flattened in C order and stored as float32 LE."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    flat = np.ascontiguousarray(payload, dtype=PAYLOAD_DTYPE).ravel()

    lines = [magic]
    header = dict(fields)
    if table is not None:
        table = np.atleast_2d(np.asarray(table, dtype=float))
        header["table_rows"] = table.shape[0]
        header["table_columns"] = table.shape[1]
    header["payload_values"] = flat.size
    for key, value in header.items():
        if " " in key or not key:
            raise ValueError(f"invalid header key {key!r}")
        lines.append(f"{key} {value}")
    lines.append(END_HEADER.decode())
    if table is not None:
        lines.extend(" ".join(repr(float(v)) for v in row) for row in table)

    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        f.write(flat.tobytes())

    logger.debug(f"Wrote {magic} container: {path} ({flat.size} values)")
    return path


def read_container(path: Path, magic: str) -> Container:
    """Parse a container written by write_container; raises ContainerParseError with the byte offset."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ContainerParseError(str(path), 0, f"cannot read file: {e}")

    offset = 0

    def next_line() -> bytes:
        nonlocal offset
        end = raw.find(b"\n", offset)
        if end < 0:
            raise ContainerParseError(str(path), offset, "unterminated header line")
        line = raw[offset:end]
        offset = end + 1
        return line

    line_start = offset
    first = next_line()
    if first.decode("ascii", "replace") != magic:
        raise ContainerParseError(str(path), line_start, f"expected magic '{magic}', found {first[:32]!r}")

    fields: Dict[str, str] = {}
    for _ in range(MAX_HEADER_LINES):
        line_start = offset
        line = next_line()
        if line == END_HEADER:
            break
        try:
            key, value = line.decode("ascii").split(" ", 1)
        except (UnicodeDecodeError, ValueError):
            raise ContainerParseError(str(path), line_start, f"malformed header line {line[:64]!r}")
        fields[key] = value.strip()
    else:
        raise ContainerParseError(str(path), offset, "header has no end_header marker")

    def header_int(key: str, default: Optional[int] = None) -> int:
        if key not in fields:
            if default is not None:
                return default
            raise ContainerParseError(str(path), offset, f"missing header field '{key}'")
        try:
            value = int(fields[key])
        except ValueError:
            raise ContainerParseError(str(path), offset, f"header field '{key}' is not an integer")
        if value < 0:
            raise ContainerParseError(str(path), offset, f"header field '{key}' is negative")
        return value

    table = None
    rows = header_int("table_rows", 0)
    if rows:
        columns = header_int("table_columns")
        table = np.empty((rows, columns), dtype=float)
        for r in range(rows):
            line_start = offset
            parts = next_line().split()
            if len(parts) != columns:
                raise ContainerParseError(
                    str(path), line_start, f"table row {r} has {len(parts)} values, expected {columns}"
                )
            try:
                table[r] = [float(p) for p in parts]
            except ValueError:
                raise ContainerParseError(str(path), line_start, f"table row {r} is not numeric")

    count = header_int("payload_values")
    expected = count * PAYLOAD_DTYPE.itemsize
    available = len(raw) - offset
    if available != expected:
        raise ContainerParseError(
            str(path), offset, f"payload holds {available} bytes, header declares {expected}"
        )
    payload = np.frombuffer(raw, dtype=PAYLOAD_DTYPE, count=count, offset=offset).astype(np.float64)

    return Container(
        path=path,
        magic=magic,
        fields=fields,
        table=table,
        payload=payload,
        payload_offset=offset,
    )
