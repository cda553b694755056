"""On-disk formats: CSV tables, JSON manifests, content hashing.

Every file is written atomically (temp file + rename) so a crashed run
never leaves a half-written table behind.  Floats are serialized with
17 significant digits, enough to round-trip IEEE doubles exactly.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from typing import Iterable, Mapping, Sequence

import numpy as np

FLOAT_FMT = "%.17g"


def format_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % float(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def atomic_write_text(path: str, text: str) -> None:
    """Write text to path via a temp file in the same directory."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(
    path: str,
    columns: Sequence[str],
    rows: Iterable[Sequence],
    header_meta: Mapping[str, str] | None = None,
) -> None:
    """Write a CSV table with optional '# key=value' comment lines on top."""
    lines = []
    for k, v in (header_meta or {}).items():
        lines.append(f"# {k}={v}")
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path: str) -> tuple[dict[str, str], list[str], list[list[str]]]:
    """Read a CSV written by write_csv; returns (meta, columns, string rows)."""
    meta: dict[str, str] = {}
    columns: list[str] = []
    rows: list[list[str]] = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, _, v = body.partition("=")
                    meta[k.strip()] = v.strip()
                continue
            if not columns:
                columns = line.split(",")
            else:
                rows.append(line.split(","))
    return meta, columns, rows


def read_csv_numeric(path: str) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Read a CSV into named float columns (non-numeric columns kept as object)."""
    meta, columns, rows = read_csv(path)
    out: dict[str, np.ndarray] = {}
    for j, name in enumerate(columns):
        vals = [r[j] for r in rows]
        try:
            out[name] = np.array([float(v) for v in vals])
        except ValueError:
            out[name] = np.array(vals, dtype=object)
    return meta, out


def write_json(path: str, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: str):
    with open(path) as fh:
        return json.load(fh)


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def stable_hash(obj) -> str:
    """Order-independent hash of a JSON-serializable object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
