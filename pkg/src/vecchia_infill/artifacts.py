"""CSV/JSON writers that embed tool version, resolved config and seed."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from . import __version__
from .gp import GPSample, LocationSet
from .matern import KernelParams

TOOL = "vecchia-infill"


def _meta(config: dict) -> dict:
    return {"tool": TOOL, "version": __version__, "seed": config.get("seed"), "config": config}


def write_csv(path: Path, columns: list[str], rows, config: dict, extra: dict | None = None) -> Path:
    """Write ``rows`` under ``#``-prefixed metadata lines."""
    meta = _meta(config)
    if extra:
        meta["extra"] = extra
    buf = io.StringIO()
    buf.write(f"# tool: {TOOL} {__version__}\n")
    buf.write(f"# seed: {meta['seed']}\n")
    buf.write(f"# meta: {json.dumps(meta, sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


def write_json(path: Path, payload: dict, config: dict) -> Path:
    doc = dict(_meta(config))
    doc["result"] = payload
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2, default=_jsonable) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def read_meta(path: Path) -> dict:
    for line in Path(path).read_text().splitlines():
        if line.startswith("# meta: "):
            return json.loads(line[len("# meta: ") :])
        if not line.startswith("#"):
            break
    raise ValueError(f"{path} has no embedded metadata")


def write_sample(path: Path, sample: GPSample, config: dict) -> Path:
    locs = sample.locations
    coords = ["x"] if locs.dim == 1 else ["x", "y"]
    rows = ([i, *locs.points[i].tolist(), float(sample.values[i])] for i in range(locs.n))
    extra = {"locations": locs.to_dict(), "params": vars(sample.params) if sample.params else None,
             "sample_seed": list(sample.seed)}
    return write_csv(path, ["index", *coords, "value"], rows, config, extra)


def read_sample(path: Path) -> GPSample:
    """Inverse of :func:`write_sample`; locations keep the stored order."""
    meta = read_meta(path)
    text = "\n".join(line for line in Path(path).read_text().splitlines() if not line.startswith("#"))
    reader = csv.DictReader(io.StringIO(text))
    rows = list(reader)
    if not rows:
        raise ValueError(f"{path} holds no sample rows")
    coords = [c for c in ("x", "y") if c in rows[0]]
    points = np.array([[float(r[c]) for c in coords] for r in rows])
    values = np.array([float(r["value"]) for r in rows])
    extra = meta.get("extra", {})
    kind = extra.get("locations", {}).get("kind", "custom")
    locs = LocationSet(points, np.arange(len(rows)), kind)
    params = KernelParams(**extra["params"]) if extra.get("params") else None
    return GPSample(values, locs, tuple(extra.get("sample_seed", ())), params)
