"""CSV trajectories, initial-condition files and run manifests."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .netlist import format_float
from .reduced import BranchState, MeshState, ReducedSystem, branch_to_mesh


def trajectory_header(n: int) -> list:
    return ["t"] + [f"q{i}" for i in range(1, n + 1)] + [f"v{i}" for i in range(1, n + 1)] + \
        [f"p{i}" for i in range(1, n + 1)]


def write_table(path, header, rows):
    """Write a float table with 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_float(x) for x in row])
    return path


def read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = np.array([[float(x) for x in row] for row in r])
    return header, data.reshape(-1, len(header))


def write_trajectory_csv(path, traj, sys: ReducedSystem):
    """Branch-coordinate trajectory: t, q1..qn, v1..vn, p1..pn."""
    q, v, p = traj.to_branch(sys)
    return write_table(path, trajectory_header(sys.n), np.column_stack([traj.t, q, v, p]))


def initial_condition_from_dict(data: dict, sys: ReducedSystem) -> MeshState:
    """Initial state from ``{"coordinates": "mesh"|"branch", "q": [...], "v": [...], "t0": 0}``.

    Branch data must satisfy KCL and is mapped to mesh coordinates.
    """
    coords = data.get("coordinates", "mesh")
    t0 = float(data.get("t0", 0.0))
    if coords == "mesh":
        q = data.get("q", [0.0] * sys.size)
        v = data.get("v", [0.0] * sys.size)
        return MeshState.initial(sys, q, v, t0)
    if coords == "branch":
        q = np.asarray(data.get("q", [0.0] * sys.n), dtype=float)
        v = np.asarray(data.get("v", [0.0] * sys.n), dtype=float)
        if q.shape != (sys.n,) or v.shape != (sys.n,):
            raise ValueError(f"branch vectors must have length {sys.n}")
        mesh = branch_to_mesh(BranchState(t0, q, v, sys.L * v, np.zeros(sys.n)), sys)
        return MeshState.initial(sys, mesh.q, mesh.v, t0)
    raise ValueError(f"coordinates must be 'mesh' or 'branch', got {coords!r}")


def load_initial_condition(path, sys: ReducedSystem) -> MeshState:
    with open(path, encoding="utf-8") as fh:
        return initial_condition_from_dict(json.load(fh), sys)


def initial_condition_to_dict(ic: MeshState) -> dict:
    return {"coordinates": "mesh", "t0": float(ic.t), "q": [float(x) for x in ic.q], "v": [float(x) for x in ic.v]}


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
