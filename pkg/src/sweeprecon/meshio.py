"""ASCII PLY mesh exchange, plus raw debug dumps of scalar fields.

Vertices carry positions and unit normals; an optional header comment
records the marching-cubes grid resolution so downstream smoothness
comparisons can refuse meshes built at different resolutions.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import DataError
from .recon import ScalarField, TriangleMesh

_RESOLUTION_COMMENT = "grid_resolution_mm"


def write_mesh_ply(
    path,
    mesh: TriangleMesh,
    grid_resolution_mm: float | None = None,
    normals: np.ndarray | None = None,
) -> None:
    if normals is None:
        normals = mesh.vertex_normals()
    normals = np.asarray(normals, dtype=np.float64)
    if normals.shape != mesh.vertices.shape:
        raise ValueError("normals must be one unit vector per vertex")
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        if grid_resolution_mm is not None:
            fh.write(f"comment {_RESOLUTION_COMMENT} {float(grid_resolution_mm)!r}\n")
        fh.write(f"element vertex {len(mesh.vertices)}\n")
        for name in ("x", "y", "z", "nx", "ny", "nz"):
            fh.write(f"property double {name}\n")
        fh.write(f"element face {len(mesh.faces)}\n")
        fh.write("property list uchar int vertex_indices\nend_header\n")
        for v, n in zip(mesh.vertices, normals):
            row = (v[0], v[1], v[2], n[0], n[1], n[2])
            fh.write(" ".join(repr(float(c)) for c in row) + "\n")
        for f in mesh.faces:
            fh.write(f"3 {int(f[0])} {int(f[1])} {int(f[2])}\n")


def read_mesh_ply(path):
    """-> (TriangleMesh, normals or None, grid_resolution_mm or None)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0].strip() != "ply":
        raise DataError(f"{path}: not a PLY file")
    if len(lines) < 2 or lines[1].strip() != "format ascii 1.0":
        raise DataError(f"{path}: only 'format ascii 1.0' is supported")

    n_vertex = n_face = None
    vertex_props: list[str] = []
    resolution = None
    current_element = None
    body_start = None
    for i, line in enumerate(lines[2:], start=2):
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "comment":
            if len(tokens) == 3 and tokens[1] == _RESOLUTION_COMMENT:
                try:
                    resolution = float(tokens[2])
                except ValueError as exc:
                    raise DataError(f"{path}: bad resolution comment") from exc
            continue
        if tokens[0] == "element":
            if len(tokens) != 3:
                raise DataError(f"{path}: malformed element line {i + 1}")
            current_element = tokens[1]
            if tokens[1] == "vertex":
                n_vertex = int(tokens[2])
            elif tokens[1] == "face":
                n_face = int(tokens[2])
            else:
                raise DataError(f"{path}: unsupported element '{tokens[1]}'")
            continue
        if tokens[0] == "property":
            if current_element == "vertex":
                if len(tokens) != 3 or tokens[1] not in ("float", "double"):
                    raise DataError(f"{path}: unsupported vertex property: {line}")
                vertex_props.append(tokens[2])
            continue
        if tokens[0] == "end_header":
            body_start = i + 1
            break
        raise DataError(f"{path}: unexpected header line {i + 1}: {line}")
    if body_start is None or n_vertex is None or n_face is None:
        raise DataError(f"{path}: incomplete PLY header")
    for needed in ("x", "y", "z"):
        if needed not in vertex_props:
            raise DataError(f"{path}: vertex elements lack '{needed}'")
    if len(lines) < body_start + n_vertex + n_face:
        raise DataError(f"{path}: file shorter than header promises")

    cols = {name: vertex_props.index(name) for name in vertex_props}
    vertex_rows = np.array(
        [
            [float(tok) for tok in lines[body_start + r].split()]
            for r in range(n_vertex)
        ]
    ).reshape(n_vertex, len(vertex_props))
    vertices = vertex_rows[:, [cols["x"], cols["y"], cols["z"]]]
    normals = None
    if all(n in cols for n in ("nx", "ny", "nz")):
        normals = vertex_rows[:, [cols["nx"], cols["ny"], cols["nz"]]]

    faces = []
    for r in range(n_face):
        tokens = lines[body_start + n_vertex + r].split()
        if not tokens or int(tokens[0]) != 3 or len(tokens) != 4:
            raise DataError(f"{path}: only triangle faces are supported")
        faces.append([int(t) for t in tokens[1:]])
    faces_arr = (
        np.asarray(faces, dtype=np.intp) if faces else np.zeros((0, 3), dtype=np.intp)
    )
    return TriangleMesh(vertices, faces_arr), normals, resolution


def write_volume_raw(path, field: ScalarField) -> None:
    """Raw little-endian float64 dump with a JSON sidecar (path + '.json')."""
    with open(path, "wb") as fh:
        fh.write(field.values.astype("<f8").tobytes())
    sidecar = {
        "dims": list(field.values.shape),
        "origin_mm": np.asarray(field.origin, dtype=float).tolist(),
        "spacing_mm": float(field.spacing_mm),
        "dtype": "float64",
        "byte_order": "little",
        "layout": "row-major",
    }
    with open(f"{path}.json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_volume_raw(path) -> ScalarField:
    sidecar_path = f"{path}.json"
    if not os.path.exists(sidecar_path):
        raise DataError(f"{path}: missing sidecar {sidecar_path}")
    with open(sidecar_path) as fh:
        meta = json.load(fh)
    dims = tuple(meta["dims"])
    with open(path, "rb") as fh:
        raw = fh.read()
    expected = int(np.prod(dims)) * 8
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f8").reshape(dims)
    return ScalarField(
        values.astype(np.float64),
        origin=np.asarray(meta["origin_mm"], dtype=np.float64),
        spacing_mm=float(meta["spacing_mm"]),
    )
