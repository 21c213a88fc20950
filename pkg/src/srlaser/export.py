"""Canonical, hash-stamped output files (JSON, CSV, SVG).

Every file carries the resolved configuration and a sha256 over its
canonical content, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

SCHEMA = "srlaser/1"


def sanitize(obj: Any) -> Any:
    """Plain JSON types; non-finite floats become the strings 'inf', '-inf', 'nan'."""
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, complex):
        return {"re": sanitize(obj.real), "im": sanitize(obj.imag)}
    if isinstance(obj, Path):
        return str(obj)
    return obj


def canonical_json(obj: Any, indent: int | None = None) -> str:
    return json.dumps(sanitize(obj), sort_keys=True, indent=indent, separators=(",", ":") if indent is None else (",", ": "), allow_nan=False)


def content_hash(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def stamp(payload: dict, config: dict | None) -> dict:
    doc = {"schema": SCHEMA, "config": config or {}, "data": payload}
    doc["sha256"] = content_hash(doc)
    return doc


def write_json(path: str | Path, payload: dict, config: dict | None = None) -> str:
    """Write ``{"schema", "config", "data", "sha256"}``; returns the hash."""
    doc = stamp(payload, config)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(doc, indent=1) + "\n")
    return doc["sha256"]


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def csv_text(header: Sequence[str], rows: Iterable[Sequence], config: dict | None = None) -> str:
    body = ",".join(header) + "\n" + "".join(",".join(_fmt(v) for v in row) + "\n" for row in rows)
    cfg = canonical_json(config or {})
    digest = hashlib.sha256((cfg + "\n" + body).encode()).hexdigest()
    return f"# schema={SCHEMA}\n# config={cfg}\n# sha256={digest}\n" + body


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence], config: dict | None = None) -> str:
    text = csv_text(header, rows, config)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return text.split("# sha256=", 1)[1].split("\n", 1)[0]


def _number(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return math.nan


def read_csv(path: str | Path) -> tuple[dict, list[str], np.ndarray]:
    """(config, header, numeric rows) from a file written by :func:`write_csv`.

    Empty and non-numeric fields read as NaN.
    """
    lines = Path(path).read_text().splitlines()
    cfg = {}
    body = [ln for ln in lines if not ln.startswith("#")]
    for ln in lines:
        if ln.startswith("# config="):
            cfg = json.loads(ln[len("# config=") :])
    header = body[0].split(",")
    rows = [[_number(v) for v in ln.split(",")] for ln in body[1:]]
    return cfg, header, np.array(rows, dtype=float)


def save_svg(fig, path: str | Path, config: dict | None = None) -> None:
    """Deterministic SVG: fixed hash salt, no date, config in the description."""
    import matplotlib

    matplotlib.rcParams["svg.hashsalt"] = "srlaser"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    desc = canonical_json(config or {})
    meta = {"Date": None, "Creator": "srlaser", "Description": desc + " sha256=" + hashlib.sha256(desc.encode()).hexdigest()}
    fig.savefig(path, format="svg", metadata=meta)
