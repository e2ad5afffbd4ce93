"""Artifact reading and writing.

JSON reports are written with sorted keys and fixed indentation, CSV tables
with a fixed column order and round-trip float formatting, so identical
runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import Any

import numpy as np
import structlog
from pydantic import BaseModel

from levyperron.models.domain import BoundarySample
from levyperron.models.fields import ExteriorDatum, GridFunction
from levyperron.models.kernel import Kernel
from levyperron.models.lattice import Lattice
from levyperron.schemas.params import EllipticityParams
from levyperron.services.kernels import make_table_kernel

logger = structlog.get_logger(__name__)


def _format(value: Any) -> Any:
    if isinstance(value, float | np.floating):
        return repr(float(value))
    if isinstance(value, list | tuple):
        return ";".join(str(_format(v)) for v in value)
    return value


def _jsonable(payload: Any) -> Any:
    if isinstance(payload, BaseModel):
        return payload.model_dump(by_alias=True, mode="json")
    if isinstance(payload, Mapping):
        return {str(k): _jsonable(v) for k, v in payload.items()}
    if isinstance(payload, list | tuple):
        return [_jsonable(v) for v in payload]
    if isinstance(payload, np.ndarray):
        return payload.tolist()
    if isinstance(payload, np.generic):
        return payload.item()
    return payload


# ---------------------------------------------------------------------------
# Writers
# ---------------------------------------------------------------------------


def write_json(path: Path, payload: Any) -> Path:
    """Write a report, a list of reports or a plain mapping as sorted JSON."""
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_jsonable(payload), sort_keys=True, indent=2, allow_nan=True)
    path.write_text(text + "\n", encoding="utf-8")
    logger.debug("json_written", path=str(path))
    return path


def write_table(path: Path, fieldnames: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> Path:
    """Write tidy CSV rows in the given column order."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format(row.get(k, "")) for k in fieldnames})
    logger.debug("table_written", path=str(path))
    return path


def write_report_table(path: Path, reports: Sequence[BaseModel]) -> Path:
    """One CSV row per report, scalar fields only, columns in model field order."""
    if not reports:
        return write_table(path, [], [])
    rows = [r.model_dump(by_alias=True, mode="json") for r in reports]
    fields = [k for k, v in rows[0].items() if not isinstance(v, list | dict)]
    return write_table(path, fields, rows)


def write_solution(path: Path, w: GridFunction, residual: np.ndarray, active: Sequence[tuple[str, str]]) -> Path:
    """Interior nodes with coordinates, value, residual and the active (a, b)."""
    lattice = w.lattice
    nodes = lattice.nodes[lattice.interior_index]
    dim = lattice.dim
    coords = [f"x{j + 1}" for j in range(dim)]
    rows = []
    for node, value, res, (a, b) in zip(nodes, w.values[lattice.interior_index], residual, active, strict=True):
        row: dict[str, Any] = {name: float(v) for name, v in zip(coords, node, strict=True)}
        row.update(value=float(value), residual=float(res), a=a, b=b)
        rows.append(row)
    return write_table(path, [*coords, "value", "residual", "a", "b"], rows)


def write_field(path: Path, points: np.ndarray, columns: Mapping[str, Sequence[float] | np.ndarray]) -> Path:
    """Point cloud with coordinates x1..xd followed by one column per named field."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    coords = [f"x{j + 1}" for j in range(points.shape[1])]
    data = {name: np.asarray(values, dtype=float) for name, values in columns.items()}
    for name, values in data.items():
        if values.shape != (len(points),):
            msg = f"column {name} has {values.size} values for {len(points)} points"
            raise ValueError(msg)
    rows = []
    for i, point in enumerate(points):
        row: dict[str, Any] = {c: float(v) for c, v in zip(coords, point, strict=True)}
        row.update({name: float(values[i]) for name, values in data.items()})
        rows.append(row)
    return write_table(path, [*coords, *data], rows)


# ---------------------------------------------------------------------------
# Readers
# ---------------------------------------------------------------------------


def _require(path: Path) -> Path:
    path = Path(path)
    if not path.is_file():
        msg = f"file not found: {path}"
        raise FileNotFoundError(msg)
    return path


def _numeric_columns(path: Path) -> tuple[list[str], np.ndarray]:
    with _require(path).open(encoding="utf-8") as f:
        header = next(csv.reader(f), [])
    data = np.atleast_2d(np.genfromtxt(path, delimiter=",", skip_header=1))
    if data.size == 0 or np.any(np.isnan(data)):
        msg = f"{path} has missing or non-numeric entries"
        raise ValueError(msg)
    return [h.strip() for h in header], data


def read_solution(path: Path, lattice: Lattice, datum: ExteriorDatum) -> GridFunction:
    """Rebuild a grid function from a solution CSV on the lattice that produced it.

    Raises:
        FileNotFoundError: If the file does not exist.
        ValueError: If the rows do not match the interior nodes of ``lattice``.
    """
    with _require(path).open(newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    coords = [f"x{j + 1}" for j in range(lattice.dim)]
    interior = lattice.interior_index
    if len(rows) != interior.size:
        msg = f"{path} holds {len(rows)} nodes, the lattice has {interior.size} interior nodes"
        raise ValueError(msg)
    values = np.zeros(lattice.size)
    for row in rows:
        try:
            point = np.array([float(row[c]) for c in coords])
            value = float(row["value"])
        except (KeyError, ValueError) as exc:
            msg = f"{path} is not a solution table for dimension {lattice.dim}"
            raise ValueError(msg) from exc
        node = lattice.nearest_node(point)
        if np.linalg.norm(lattice.nodes[node] - point) > 1e-6 * lattice.h:
            msg = f"{path} node {point.tolist()} is not on the lattice of step {lattice.h}"
            raise ValueError(msg)
        values[node] = value
    return GridFunction(lattice, values, datum)


def load_boundary_samples(path: Path, dim: int) -> list[BoundarySample]:
    """Boundary samples from a CSV with columns x1..xn, n1..nn (inward normals, normalized on load)."""
    header, data = _numeric_columns(path)
    if data.shape[1] != 2 * dim:
        msg = f"{path} needs {2 * dim} columns (point and inward normal), got {data.shape[1]}"
        raise ValueError(msg)
    samples = []
    for row in data:
        normal = row[dim:]
        norm = float(np.linalg.norm(normal))
        if norm == 0.0:
            msg = f"{path} has a zero normal at {row[:dim].tolist()}"
            raise ValueError(msg)
        samples.append(BoundarySample(point=row[:dim].copy(), normal=normal / norm))
    logger.info("boundary_samples_loaded", path=str(path), samples=len(samples), columns=header)
    return samples


def load_table_kernel(path: Path, params: EllipticityParams, dim: int, label: str) -> Kernel:
    """Tabulated kernel from a CSV with columns z1..zn, density."""
    _, data = _numeric_columns(path)
    if data.shape[1] != dim + 1:
        msg = f"{path} needs {dim + 1} columns (offset and density), got {data.shape[1]}"
        raise ValueError(msg)
    return make_table_kernel(params, data[:, :dim], data[:, dim], label=label)
