"""CSV / JSON emission of profiles, tables and run manifests."""

import json
import logging
import math
from dataclasses import asdict, fields, is_dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd

from discretize import DiscreteGraph, GraphFunction
from models import ParameterError, RunManifest

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifests.jsonl"
PROFILE_COLUMNS = ["edge_id", "arclength", "value"]


def emit_profile(u: GraphFunction, path: Path) -> Path:
    """
    Write (edge_id, arclength, value) rows, edges in mesh order.

    Vertex values appear once per incident edge end. Floats are written as
    shortest round-trip decimals.
    """
    frames = []
    for em in u.dg.edges:
        frames.append(pd.DataFrame({
            "edge_id": em.edge_id,
            "arclength": em.x,
            "value": u.dofs[em.dofs],
        }))
    df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=PROFILE_COLUMNS)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    logger.info(f"Profile saved to {path}")
    return path


def load_profile(path: Path, dg: DiscreteGraph) -> GraphFunction:
    """Read a profile written by emit_profile back onto its mesh."""
    df = pd.read_csv(path, float_precision="round_trip", dtype={"edge_id": str})
    if list(df.columns) != PROFILE_COLUMNS:
        raise ParameterError(f"{path}: expected columns {PROFILE_COLUMNS}, got {list(df.columns)}")

    dofs = np.zeros(dg.n_dofs)
    groups = dict(tuple(df.groupby("edge_id", sort=False)))
    for em in dg.edges:
        rows = groups.get(em.edge_id)
        if rows is None or len(rows) != len(em.x):
            raise ParameterError(f"{path}: edge '{em.edge_id}' does not match the mesh")
        dofs[em.dofs] = rows["value"].to_numpy()
    return GraphFunction(dg, dofs)


def to_jsonable(obj):
    """Plain JSON types; infinities become '-inf' / 'inf', NaN becomes null, graph functions are dropped."""
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, GraphFunction):
        return None
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [to_jsonable(v) for v in obj]
    if is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in fields(obj)
                if not isinstance(getattr(obj, f.name), (GraphFunction, DiscreteGraph))}
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def write_json(payload: dict, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_jsonable(payload), indent=2) + "\n")
    return path


def write_table(rows: list, path: Path) -> Path:
    """One CSV row per dict or dataclass."""
    records = [to_jsonable(r) for r in rows]
    df = pd.DataFrame(records)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    logger.info(f"Table with {len(df)} rows saved to {path}")
    return path


def append_manifest(manifest: RunManifest, out_dir: Path) -> str:
    """Append one JSON line to the manifest log of out_dir; returns the run id."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = to_jsonable(asdict(manifest))
    record["run_id"] = manifest.run_id
    with open(out_dir / MANIFEST_FILE, "a") as f:
        f.write(json.dumps(record) + "\n")
    return manifest.run_id
