"""Probe C: decompose umbrella magnitudes into normal ripple vs mesh irregularity."""
import numpy as np

from sweeprecon.recon import (
    LabeledPointCloud,
    ScalarField,
    marching_cubes,
    poisson_reconstruct,
)


def decompose(name, mesh, core=None):
    vn = mesh.vertex_normals()
    adj = mesh.vertex_adjacency()
    keep = np.array([len(a) >= 3 for a in adj])
    if core is not None:
        z = mesh.vertices[:, 2]
        keep &= (z >= core[0]) & (z < core[1])
    normal_part, tangent_part, radii = [], [], []
    for i in np.flatnonzero(keep):
        u = mesh.vertices[adj[i]].mean(axis=0) - mesh.vertices[i]
        un = float(u @ vn[i])
        ut = np.linalg.norm(u - un * vn[i])
        normal_part.append(abs(un))
        tangent_part.append(ut)
    normal_part = np.array(normal_part)
    tangent_part = np.array(tangent_part)
    total = np.sqrt(normal_part**2 + tangent_part**2)
    print(f"{name}: total {total.mean():.4f}  normal {normal_part.mean():.4f}"
          f"  tangent {tangent_part.mean():.4f}  (n {len(total)})", flush=True)
    return keep


def ring_cloud(n_per_ring, ring_spacing, z0=0.0, z1=40.0, radius=10.0):
    zs = np.arange(z0, z1 + 1e-9, ring_spacing)
    pts, nrm = [], []
    for i, z in enumerate(zs):
        offset = (0.5 if i % 2 else 0.0) * 2 * np.pi / n_per_ring
        th = offset + 2 * np.pi * np.arange(n_per_ring) / n_per_ring
        pts.append(np.stack([radius * np.cos(th), radius * np.sin(th) - 40.0,
                             np.full(n_per_ring, z)], axis=1))
        nrm.append(np.stack([np.cos(th), np.sin(th), np.zeros(n_per_ring)], axis=1))
    return np.concatenate(pts), np.concatenate(nrm)


pts, nrm = ring_cloud(25, 1.0)
cloud = LabeledPointCloud(pts, np.ones(len(pts)), nrm)
res = poisson_reconstruct(cloud, 1.0)
mesh = marching_cubes(res.field, res.iso_value)
keep = decompose("tube poisson", mesh, core=(5, 35))
rho = np.sqrt(mesh.vertices[:, 0] ** 2 + (mesh.vertices[:, 1] + 40.0) ** 2)
print(f"   core radius mean {rho[keep].mean():.3f} std {rho[keep].std():.3f}"
      f" range [{rho[keep].min():.3f},{rho[keep].max():.3f}]", flush=True)

gx = np.arange(-16.0, 16.0 + 1e-9, 1.0)
gy = np.arange(-56.0, -24.0 + 1e-9, 1.0)
gz = np.arange(-5.0, 45.0 + 1e-9, 1.0)
G = np.stack(np.meshgrid(gx, gy, gz, indexing="ij"), axis=-1)
sdf_v = np.sqrt(G[..., 0] ** 2 + (G[..., 1] + 40.0) ** 2) - 10.0
sdf_mesh = marching_cubes(
    ScalarField(sdf_v, origin=np.array([-16.0, -56.0, -5.0]), spacing_mm=1.0), 0.0)
keep = decompose("tube sdf    ", sdf_mesh, core=(5, 35))
rho = np.sqrt(sdf_mesh.vertices[:, 0] ** 2 + (sdf_mesh.vertices[:, 1] + 40.0) ** 2)
print(f"   core radius mean {rho[keep].mean():.3f} std {rho[keep].std():.3f}", flush=True)

rng = np.random.default_rng(0)
v = rng.normal(size=(2000, 3))
v /= np.linalg.norm(v, axis=1, keepdims=True)
cloud = LabeledPointCloud(20.0 * v, np.ones(2000), v)
res = poisson_reconstruct(cloud, 1.0)
smesh = marching_cubes(res.field, res.iso_value)
keep = decompose("sphere poisson", smesh)
r = np.linalg.norm(smesh.vertices, axis=1)
print(f"   radius mean {r[keep].mean():.3f} std {r[keep].std():.3f}", flush=True)

ax = np.arange(-26.0, 26.0 + 1e-9, 1.0)
G = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)
sdf_v = np.linalg.norm(G, axis=-1) - 20.0
sphere_floor = marching_cubes(
    ScalarField(sdf_v, origin=np.array([-26.0] * 3), spacing_mm=1.0), 0.0)
decompose("sphere sdf    ", sphere_floor)
