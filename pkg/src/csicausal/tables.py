"""Reading and writing output tables stamped with the run's config hash and seed."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import pandas as pd


def config_hash(config: dict) -> str:
    """SHA-256 (first 16 hex digits) of the canonical JSON form of ``config``."""
    text = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def header_line(stamp: dict) -> str:
    return "# " + " ".join(f"{k}={stamp[k]}" for k in sorted(stamp))


def write_csv(frame: pd.DataFrame, path, stamp: dict | None = None, columns=None, float_format="%.10g"):
    """CSV with fixed column order and an optional ``# key=value`` first line."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if stamp:
            fh.write(header_line(stamp) + "\n")
        frame.to_csv(fh, index=False, columns=columns, float_format=float_format, lineterminator="\n")
    return path


def read_csv(path, **kw) -> pd.DataFrame:
    """Read a CSV, skipping leading ``#`` comment lines."""
    skip = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            skip += 1
    kw.setdefault("float_precision", "round_trip")
    return pd.read_csv(path, skiprows=skip, **kw)


def read_stamp(path) -> dict:
    """The ``key=value`` pairs from a CSV's leading comment line."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if not first.startswith("#"):
        return {}
    return dict(tok.split("=", 1) for tok in first[1:].split() if "=" in tok)


def write_json(obj: dict, path, stamp: dict | None = None):
    out = dict(obj)
    out.update(stamp or {})
    Path(path).write_text(json.dumps(out, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return str(v)
