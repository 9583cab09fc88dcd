"""JSON formats for edge measurements, vertex values and noise descriptions.

Edge and vertex data are keyed by id::

    {"space": "circle", "edges": {"e1": 0.25, "e2": 6.1}}

Values by space: ``real`` a number, ``real_d`` a list, ``circle`` an angle
in radians, ``product`` an object ``{"linear": [...], "circular": [...]}``
with radian angles.  Vertex files use ``"vertices"`` in place of ``"edges"``.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .abelian import GroupElement, ProductData
from .errors import NetsyncError, NoiseModelError
from .graph import Graph

SPACES = ("real", "real_d", "circle", "product")


class FormatError(NetsyncError, ValueError):
    pass


def _read_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise FormatError(f"{path}: expected a JSON object")
    return data


def write_json_atomic(path, data) -> Path:
    """Write JSON next to ``path`` and rename it into place."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(json.dumps(data, indent=2) + "\n")
    os.replace(tmp, path)
    return path


def _decode(space: str, values: list):
    try:
        if space == "real":
            return np.array([float(v) for v in values])
        if space == "real_d":
            arr = np.array([[float(c) for c in v] for v in values])
            if arr.ndim != 2:
                raise FormatError("real_d values must be equal-length lists")
            return arr
        if space == "circle":
            return np.exp(1j * np.array([float(v) for v in values]))
        if space == "product":
            return ProductData.from_elements(GroupElement.from_dict(v) for v in values)
    except (TypeError, ValueError, AttributeError) as exc:
        raise FormatError(f"bad {space} value: {exc}") from None
    raise FormatError(f"unknown space {space!r}; expected one of {SPACES}")


def _encode(space: str, data) -> list:
    if space == "real":
        return [float(v) for v in np.asarray(data, dtype=float)]
    if space == "real_d":
        return [[float(c) for c in row] for row in np.asarray(data, dtype=float)]
    if space == "circle":
        return [float(a) for a in np.mod(np.angle(np.asarray(data)), 2 * np.pi)]
    if space == "product":
        return [g.to_dict() for g in data.elements()]
    raise FormatError(f"unknown space {space!r}")


def _keyed(data: dict, key: str, ids: list, path) -> list:
    block = data.get(key)
    if not isinstance(block, dict):
        raise FormatError(f"{path}: missing {key!r} object")
    extra = set(block) - set(ids)
    if extra:
        raise FormatError(f"{path}: unknown {key[:-1]} ids {sorted(extra)[:5]}")
    missing = [i for i in ids if i not in block]
    if missing:
        raise FormatError(f"{path}: no value for {key[:-1]} ids {missing[:5]}")
    return [block[i] for i in ids]


def load_measurements(path, graph: Graph, space: str | None = None):
    """Return ``(space, data)`` with data in graph edge order."""
    data = _read_json(path)
    file_space = data.get("space", space)
    if space is not None and file_space != space:
        raise FormatError(f"{path}: file holds {file_space!r} data, {space!r} requested")
    values = _keyed(data, "edges", [e.id for e in graph.edges], path)
    return file_space, _decode(file_space, values)


def save_measurements(path, graph: Graph, space: str, r) -> Path:
    vals = _encode(space, r)
    return write_json_atomic(path, {"space": space, "edges": {e.id: v for e, v in zip(graph.edges, vals)}})


def load_vertex_values(path, graph: Graph, space: str | None = None):
    data = _read_json(path)
    file_space = data.get("space", space)
    if space is not None and file_space != space:
        raise FormatError(f"{path}: file holds {file_space!r} data, {space!r} requested")
    ids = [str(v) for v in graph.vertices]
    block = {str(k): v for k, v in (data.get("vertices") or {}).items()}
    return file_space, _decode(file_space, _keyed({"vertices": block}, "vertices", ids, path))


def vertex_document(graph: Graph, space: str, x, **extra) -> dict:
    vals = _encode(space, x)
    doc = {"space": space, "vertices": {str(v): val for v, val in zip(graph.vertices, vals)}}
    doc.update(extra)
    return doc


def load_noise_file(path, graph: Graph) -> dict:
    """Per-edge noise parameters: any of ``variances``, ``kappa`` (objects
    keyed by edge id) or ``covariance`` (an ``m x m`` nested list)."""
    data = _read_json(path)
    out = {}
    for key in ("variances", "kappa"):
        if key in data:
            try:
                out[key] = np.array(_keyed(data, key, [e.id for e in graph.edges], path), dtype=float)
            except (TypeError, ValueError) as exc:
                raise NoiseModelError(f"{path}: {key}: {exc}") from None
    if "covariance" in data:
        try:
            out["covariance"] = np.array(data["covariance"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise NoiseModelError(f"{path}: covariance: {exc}") from None
    if not out:
        raise NoiseModelError(f"{path}: expected 'variances', 'kappa' or 'covariance'")
    return out
