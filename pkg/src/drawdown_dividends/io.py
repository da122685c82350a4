"""Deterministic CSV/JSON emission and config-file parsing.

Floats are written with 17 significant digits (enough to round-trip any
double) so that files from identical runs compare byte for byte.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .exceptions import ConfigError

__all__ = ["fmt_float", "to_json", "write_json", "write_csv", "read_config"]


def fmt_float(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        # JSON has no NaN/inf; null keeps the file parseable
        return fmt_float(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in sorted(obj.items())]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def to_json(obj, indent: int = 2) -> str:
    """JSON text with sorted keys and 17-digit floats."""
    return _encode(obj, indent, 0) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(to_json(obj))


def write_csv(path, header, columns) -> None:
    """Write equal-length columns; booleans as 0/1, floats with 17 digits."""
    columns = [np.asarray(col) for col in columns]
    n = len(columns[0])
    if any(len(col) != n for col in columns):
        raise ValueError("columns differ in length")
    cells = []
    for col in columns:
        if col.dtype == bool or np.issubdtype(col.dtype, np.integer):
            cells.append(col.astype(int).astype(str))
        else:
            cells.append(np.array([fmt_float(v) for v in col.astype(float)], dtype=object))
    lines = [",".join(header)]
    lines.extend(",".join(row) for row in zip(*cells))
    Path(path).write_text("\n".join(lines) + "\n")


def _flatten(obj, out):
    for key, value in obj.items():
        if isinstance(value, dict):
            _flatten(value, out)
        else:
            out[key] = value
    return out


def read_config(path) -> dict:
    """Read a flat ``key = value`` file or JSON (nested sections are flattened).

    Values from ``key = value`` files stay strings; the caller converts them
    with the same parsers as the command-line flags.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        return {str(k).replace("-", "_"): v for k, v in _flatten(data, {}).items()}
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out
