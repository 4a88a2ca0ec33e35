"""Mesh smoothness and phantom-accuracy scoring.

Smoothness is the uniform (combinatorial) umbrella Laplacian: for each
vertex the mean offset to its 1-ring neighbors, reported as the mean and
median magnitude in mm. Cotangent weights would track continuous curvature
better but are not comparable across meshes of different triangle quality;
the uniform operator is, provided both meshes come from marching cubes at
the same grid resolution. Callers must not compare reports across
resolutions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .phantom import PhantomSpec
from .recon import TriangleMesh


@dataclass(frozen=True)
class RoughnessReport:
    """Laplacian magnitude statistics over one mesh.

    vertex_count is the number of vertices that entered the statistic
    (those with at least 3 neighbors); excluded_count the rest.
    magnitudes has one entry per mesh vertex, NaN where excluded.
    """

    laplacian_average: float
    laplacian_median: float
    vertex_count: int
    excluded_count: int
    magnitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.laplacian_average < 0 or self.laplacian_median < 0:
            raise ValueError("Laplacian magnitudes cannot be negative")


def mesh_laplacian_roughness(mesh: TriangleMesh) -> RoughnessReport:
    if len(mesh.vertices) < 4:
        raise ValueError("roughness needs a mesh with at least 4 vertices")
    adjacency = mesh.vertex_adjacency()
    magnitudes = np.full(len(mesh.vertices), np.nan)
    for v, neighbors in enumerate(adjacency):
        if len(neighbors) < 3:
            continue
        # neighbors are sorted, so the reduction order is fixed
        offset = mesh.vertices[neighbors].mean(axis=0) - mesh.vertices[v]
        magnitudes[v] = np.linalg.norm(offset)
    kept = magnitudes[np.isfinite(magnitudes)]
    if kept.size == 0:
        raise ValueError("no vertex has 3 or more neighbors")
    return RoughnessReport(
        laplacian_average=float(kept.mean()),
        laplacian_median=float(np.median(kept)),
        vertex_count=int(kept.size),
        excluded_count=int(len(mesh.vertices) - kept.size),
        magnitudes=magnitudes,
    )


def rasterize_mesh(
    mesh: TriangleMesh,
    origin: np.ndarray,
    spacing_mm: float,
    dims: tuple[int, int, int],
) -> np.ndarray:
    """Parity-fill a closed mesh onto a voxel grid.

    Casts one line per (x, y) column and counts triangle crossings below
    each voxel center; odd count means inside. Column coordinates are
    nudged by ~1e-7 voxels so lines never pass exactly through mesh
    edges (marching-cubes vertices lie on grid planes, so exact hits
    would otherwise be common).
    """
    origin = np.asarray(origin, dtype=np.float64)
    h = float(spacing_mm)
    if h <= 0:
        raise ValueError("spacing must be positive")
    nx, ny, nz = (int(d) for d in dims)
    volume = np.zeros((nx, ny, nz), dtype=bool)
    if len(mesh.faces) == 0:
        return volume
    # crossing z values per column, keyed by (ix, iy)
    crossings: dict[tuple[int, int], list[float]] = {}
    tri = mesh.vertices[mesh.faces]
    jitter = np.array([np.sqrt(2.0), np.sqrt(3.0)]) * 1e-7 * h
    for p0, p1, p2 in tri:
        e1 = p1[:2] - p0[:2]
        e2 = p2[:2] - p0[:2]
        denom = e1[0] * e2[1] - e1[1] * e2[0]
        if denom == 0.0:
            continue  # projects to a segment; contributes no parity
        los = np.minimum(np.minimum(p0[:2], p1[:2]), p2[:2])
        his = np.maximum(np.maximum(p0[:2], p1[:2]), p2[:2])
        i_lo = np.maximum(np.ceil((los - origin[:2] - jitter) / h), 0).astype(int)
        i_hi = np.minimum(
            np.floor((his - origin[:2] - jitter) / h), [nx - 1, ny - 1]
        ).astype(int)
        for ix in range(i_lo[0], i_hi[0] + 1):
            x = origin[0] + ix * h + jitter[0] - p0[0]
            for iy in range(i_lo[1], i_hi[1] + 1):
                y = origin[1] + iy * h + jitter[1] - p0[1]
                b1 = (x * e2[1] - y * e2[0]) / denom
                b2 = (y * e1[0] - x * e1[1]) / denom
                if b1 < 0.0 or b2 < 0.0 or b1 + b2 > 1.0:
                    continue
                z = p0[2] + b1 * (p1[2] - p0[2]) + b2 * (p2[2] - p0[2])
                crossings.setdefault((ix, iy), []).append(z)
    z_centers = origin[2] + np.arange(nz) * h
    for (ix, iy), zs in crossings.items():
        below = np.searchsorted(np.sort(zs), z_centers)
        volume[ix, iy] = below % 2 == 1
    return volume


def dice_against_phantom(
    labels: np.ndarray,
    origin: np.ndarray,
    spacing_mm: float,
    spec: PhantomSpec,
) -> float:
    """Dice overlap of a boolean grid against the analytic tube interior."""
    labels = np.asarray(labels).astype(bool)
    if labels.ndim != 3:
        raise ValueError("labels must be a 3D volume")
    origin = np.asarray(origin, dtype=np.float64)
    idx = np.stack(
        np.meshgrid(*(np.arange(d) for d in labels.shape), indexing="ij"), axis=-1
    )
    centers = origin + idx.reshape(-1, 3) * float(spacing_mm)
    truth = spec.inside(centers).reshape(labels.shape)
    intersection = np.count_nonzero(labels & truth)
    total = np.count_nonzero(labels) + np.count_nonzero(truth)
    if total == 0:
        return 0.0
    return 2.0 * intersection / total


def radial_error(mesh: TriangleMesh, spec: PhantomSpec) -> tuple[float, float]:
    """Per-vertex |distance to centerline - local radius|, mean and max in mm.

    Vertices whose closest centerline point is a clamped endpoint (they
    project beyond the tube ends) are excluded.
    """
    dist, s = spec.nearest_on_centerline(mesh.vertices)
    total = spec.total_arclength()
    interior = (s > 0.0) & (s < total)
    if not interior.any():
        raise ValueError("no mesh vertex projects onto the centerline interior")
    err = np.abs(dist[interior] - spec.radius_profile(s[interior]))
    return float(err.mean()), float(err.max())


@dataclass(frozen=True)
class MeshScores:
    """One CSV/report row: smoothness plus optional accuracy scores."""

    mesh_name: str
    roughness: RoughnessReport
    dice: float | None = None
    radial_mean_mm: float | None = None
    radial_max_mm: float | None = None


_CSV_COLUMNS = (
    "mesh",
    "laplacian_average",
    "laplacian_median",
    "vertex_count",
    "dice",
    "radial_mean_mm",
    "radial_max_mm",
)


def _row_cells(score: MeshScores) -> list:
    def opt(value):
        return "" if value is None else repr(float(value))

    return [
        score.mesh_name,
        repr(float(score.roughness.laplacian_average)),
        repr(float(score.roughness.laplacian_median)),
        score.roughness.vertex_count,
        opt(score.dice),
        opt(score.radial_mean_mm),
        opt(score.radial_max_mm),
    ]


def write_scores_csv(path, scores) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_COLUMNS)
        for score in scores:
            writer.writerow(_row_cells(score))


def format_scores_text(scores) -> str:
    lines = []
    for score in scores:
        r = score.roughness
        lines.append(f"mesh: {score.mesh_name}")
        lines.append(
            f"  laplacian roughness: mean {r.laplacian_average:.4f} mm,"
            f" median {r.laplacian_median:.4f} mm"
            f" over {r.vertex_count} vertices"
            + (f" ({r.excluded_count} excluded)" if r.excluded_count else "")
        )
        if score.dice is not None:
            lines.append(f"  dice vs phantom: {score.dice:.4f}")
        if score.radial_mean_mm is not None:
            lines.append(
                f"  radial error: mean {score.radial_mean_mm:.4f} mm,"
                f" max {score.radial_max_mm:.4f} mm"
            )
    return "\n".join(lines) + "\n"
