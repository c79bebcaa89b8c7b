"""Field files and JSON reports.

A ``.field`` file is one line of JSON (the header) followed by the raw
little-endian sample bytes in row-major order::

    {"L": 128.0, "N": 4096, "byte_order": "little", "dim": 1, "dtype": "f64", ...}\\n<bytes>
"""

from __future__ import annotations

import hashlib
import json
import math
import subprocess
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__
from .spectral import Field, make_grid

FORMAT_NAME = "fracnls-field"
FORMAT_VERSION = 1
_DTYPES = {"f64": np.dtype("<f8"), "c128": np.dtype("<c16")}


class FieldFormatError(ValueError):
    """Unreadable, truncated or incompatible ``.field`` file."""


class NonFiniteError(ValueError):
    """A report contains NaN or infinity."""


def field_header(u: Field, s_used: Optional[float] = None) -> dict:
    g = u.grid
    head = {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "dim": g.dim,
        "N": g.n,
        "L": float(g.length),
        "is_real": bool(u.is_real),
        "dtype": "f64" if u.is_real else "c128",
        "byte_order": "little",
    }
    if s_used is not None:
        head["s_used"] = float(s_used)
    return head


def write_field(path, u: Field, s_used: Optional[float] = None) -> Path:
    path = Path(path)
    head = field_header(u, s_used)
    data = np.ascontiguousarray(u.values, dtype=_DTYPES[head["dtype"]])
    head["nbytes"] = int(data.nbytes)
    with open(path, "wb") as fh:
        fh.write(json.dumps(head, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(data.tobytes(order="C"))
    return path


def read_field_with_header(path) -> tuple[Field, dict]:
    raw = Path(path).read_bytes()
    cut = raw.find(b"\n")
    if cut < 0:
        raise FieldFormatError(f"{path}: missing header line")
    try:
        head = json.loads(raw[:cut].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FieldFormatError(f"{path}: header is not JSON ({exc})") from None
    if head.get("format") != FORMAT_NAME:
        raise FieldFormatError(f"{path}: not a {FORMAT_NAME} file")
    if head.get("format_version") != FORMAT_VERSION:
        raise FieldFormatError(
            f"{path}: format version {head.get('format_version')!r} is not supported (expected {FORMAT_VERSION})"
        )
    if head.get("byte_order") != "little" or head.get("dtype") not in _DTYPES:
        raise FieldFormatError(f"{path}: unsupported dtype/byte order {head.get('dtype')}/{head.get('byte_order')}")
    try:
        grid = make_grid(int(head["dim"]), int(head["N"]), float(head["L"]))
    except (KeyError, ValueError) as exc:
        raise FieldFormatError(f"{path}: bad grid in header ({exc})") from None
    dt = _DTYPES[head["dtype"]]
    payload = raw[cut + 1 :]
    expected = grid.size * dt.itemsize
    if len(payload) != expected or head.get("nbytes", expected) != expected:
        raise FieldFormatError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    vals = np.frombuffer(payload, dtype=dt).reshape(grid.shape).astype(dt.newbyteorder("="))
    return Field(grid, vals), head


def read_field(path) -> Field:
    return read_field_with_header(path)[0]


# --- reports ---------------------------------------------------------------------------


def _plain(obj: Any) -> Any:
    """Convert numpy scalars/arrays and tuples to JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def check_finite(obj: Any, where: str = "$") -> None:
    if isinstance(obj, float) and not math.isfinite(obj):
        raise NonFiniteError(f"non-finite value {obj} at {where}")
    if isinstance(obj, dict):
        for k, v in obj.items():
            check_finite(v, f"{where}.{k}")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            check_finite(v, f"{where}[{i}]")


def dumps(obj: Any) -> str:
    plain = _plain(obj)
    check_finite(plain)
    return json.dumps(plain, sort_keys=True, indent=2, allow_nan=False) + "\n"


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON form; key order does not matter."""
    canon = json.dumps(_plain(config), sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def provenance() -> str:
    here = Path(__file__).resolve().parent
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"], cwd=here, capture_output=True, text=True, timeout=5
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"fracnls {__version__} ({rev or 'no git'})"


def envelope(payload: dict, config: dict, wall_time: Optional[float] = None) -> dict:
    """Wrap a payload with version, config hash and provenance.

    Wall time is included only on request so repeated runs stay byte-identical.
    """
    out = {
        "tool_version": __version__,
        "config_hash": config_hash(config),
        "provenance": provenance(),
        "config": config,
        "payload": payload,
    }
    if wall_time is not None:
        out["wall_time"] = float(wall_time)
    return out


def write_report(path, payload: dict, config: Optional[dict] = None, wall_time: Optional[float] = None) -> Path:
    path = Path(path)
    doc = envelope(payload, config or {}, wall_time)
    text = dumps(doc)
    path.write_text(text, encoding="utf-8")
    return path


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.write_text(text, encoding="utf-8")
    return path
