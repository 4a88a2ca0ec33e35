"""Probe B: isolate Poisson/MC roughness contributions with analytic clouds."""
import numpy as np

from sweeprecon.metrics import mesh_laplacian_roughness
from sweeprecon.recon import (
    LabeledPointCloud,
    ScalarField,
    estimate_normals,
    marching_cubes,
    poisson_reconstruct,
)


def rough(name, mesh, z_core=None):
    rep = mesh_laplacian_roughness(mesh)
    note = ""
    if z_core is not None:
        z = mesh.vertices[:, 2]
        m = (z >= z_core[0]) & (z < z_core[1]) & np.isfinite(rep.magnitudes)
        note = f"  core {rep.magnitudes[m].mean():.4f} (n {int(m.sum())})"
    print(f"{name}: mean {rep.laplacian_average:.4f} verts {rep.vertex_count}"
          f" closed {mesh.is_closed()}{note}", flush=True)


# 1. sphere: poisson from 2000 isotropic points vs pure SDF marching cubes
rng = np.random.default_rng(0)
v = rng.normal(size=(2000, 3))
v /= np.linalg.norm(v, axis=1, keepdims=True)
pts = 20.0 * v
cloud = LabeledPointCloud(pts, np.ones(len(pts)), v)
res = poisson_reconstruct(cloud, 1.0)
rough("sphere poisson 2000pts", marching_cubes(res.field, res.iso_value))

ax = np.arange(-26.0, 26.0 + 1e-9, 1.0)
G = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)
sdf = np.linalg.norm(G, axis=-1) - 20.0
rough("sphere sdf floor      ",
      marching_cubes(ScalarField(sdf, origin=np.array([-26.0] * 3), spacing_mm=1.0), 0.0))


# 2. tube rings at hull-like density, exact positions and normals
def ring_cloud(n_per_ring, ring_spacing, z0=0.0, z1=40.0, radius=10.0, stagger=True):
    zs = np.arange(z0, z1 + 1e-9, ring_spacing)
    pts, nrm = [], []
    for i, z in enumerate(zs):
        offset = (0.5 if stagger and i % 2 else 0.0) * 2 * np.pi / n_per_ring
        th = offset + 2 * np.pi * np.arange(n_per_ring) / n_per_ring
        pts.append(np.stack([radius * np.cos(th), radius * np.sin(th) - 40.0,
                             np.full(n_per_ring, z)], axis=1))
        n = np.stack([np.cos(th), np.sin(th), np.zeros(n_per_ring)], axis=1)
        nrm.append(n)
    return np.concatenate(pts), np.concatenate(nrm)


for n_ring, spacing in ((18, 1.5), (25, 1.0), (40, 0.75)):
    pts, nrm = ring_cloud(n_ring, spacing)
    cloud = LabeledPointCloud(pts, np.ones(len(pts)), nrm)
    res = poisson_reconstruct(cloud, 1.0)
    mesh = marching_cubes(res.field, res.iso_value)
    rough(f"tube rings {n_ring:2d}/{spacing} exactN ", mesh, z_core=(5, 35))

# 3. same ring cloud but estimated normals instead of exact
for n_ring, spacing in ((18, 1.5), (25, 1.0)):
    pts, _ = ring_cloud(n_ring, spacing)
    est = estimate_normals(pts, k=16, slab_thickness_mm=2 * spacing)
    cloud = LabeledPointCloud(pts, np.ones(len(pts)), est)
    res = poisson_reconstruct(cloud, 1.0)
    mesh = marching_cubes(res.field, res.iso_value)
    rough(f"tube rings {n_ring:2d}/{spacing} estN   ", mesh, z_core=(5, 35))

# 4. tube floor: pure SDF marching cubes, same open-ended extent
gx = np.arange(-16.0, 16.0 + 1e-9, 1.0)
gy = np.arange(-56.0, -24.0 + 1e-9, 1.0)
gz = np.arange(-5.0, 45.0 + 1e-9, 1.0)
G = np.stack(np.meshgrid(gx, gy, gz, indexing="ij"), axis=-1)
rho = np.sqrt(G[..., 0] ** 2 + (G[..., 1] + 40.0) ** 2) - 10.0
rough("tube sdf floor        ",
      marching_cubes(ScalarField(rho, origin=np.array([-16.0, -56.0, -5.0]),
                                 spacing_mm=1.0), 0.0),
      z_core=(5, 35))
