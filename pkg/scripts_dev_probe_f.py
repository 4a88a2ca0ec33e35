"""Probe F: mesh-route floor vs baseline floor at reference scale.

The INR route's roughness floor is set by marching cubes on the Poisson
field; splat density fluctuations break the z-coherence an axis-aligned
tube would otherwise enjoy. Measures the floor as a function of FPS
count using a perfect classifier volume (no training), against the
baseline mesh from clean bh / gated fb bundles at 128x128.
"""
import time

import numpy as np

from sweeprecon.gating import gate_sweep
from sweeprecon.metrics import mesh_laplacian_roughness, radial_error
from sweeprecon.phantom import (
    BreathingModel,
    CorruptionSpec,
    NavParams,
    ProbeGeometry,
    simulate_sweep,
    straight_tube_phantom,
)
from sweeprecon.recon import (
    LabeledPointCloud,
    baseline_compound,
    estimate_normals,
    extract_aorta_points,
    furthest_point_sampling,
    marching_cubes,
    poisson_reconstruct,
    slice_boundary_hull,
)
from sweeprecon.inr import PredictedGrid

PROBE = ProbeGeometry(0.6, 60.0, 100.0, 128, 128)
NAV = NavParams()  # step 1.0 mm/frame, interval 0.1 s
PRED_RES = 0.75
RECON_RES = 1.0
SPEC = straight_tube_phantom(10.0, 100.0)


def perfect_grid(z0, z1):
    lo = np.array([-25.0, -65.0, z0])
    hi = np.array([25.0, -15.0, z1])
    axes = [np.arange(lo[a], hi[a] + 1e-9, PRED_RES) for a in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    dist, s = SPEC.nearest_on_centerline(pts)
    inside = dist <= SPEC.radius_profile(s)
    dims = tuple(len(a) for a in axes)
    probs = np.zeros(dims + (2,))
    probs[..., 1] = inside.reshape(dims)
    probs[..., 0] = 1.0 - probs[..., 1]
    intensity = np.zeros(dims)
    return PredictedGrid(intensity, probs, lo, PRED_RES)


def route_mesh(grid, fps_count):
    t0 = time.time()
    cloud = extract_aorta_points(grid)
    hull = slice_boundary_hull(cloud, 2 * PRED_RES)
    n = min(fps_count, len(hull))
    sub = furthest_point_sampling(hull.points, n)
    pts = hull.points[sub]
    normals = estimate_normals(pts, k=16, slab_thickness_mm=2 * PRED_RES)
    oriented = LabeledPointCloud(pts, hull.aorta_probability[sub], normals)
    res = poisson_reconstruct(oriented, RECON_RES)
    mesh = marching_cubes(res.field, res.iso_value)
    rep = mesh_laplacian_roughness(mesh)
    rmean, rmax = radial_error(mesh, SPEC)
    print(f"  fps {n:6d}: rough {rep.laplacian_average:.4f}"
          f" median {rep.laplacian_median:.4f} verts {rep.vertex_count}"
          f" radial {rmean:.3f}/{rmax:.3f} closed {mesh.is_closed()}"
          f" ({time.time()-t0:.0f}s)", flush=True)
    return rep.laplacian_average


def baseline_rough(name, frames):
    t0 = time.time()
    result = baseline_compound(frames, PROBE, RECON_RES)
    rep = mesh_laplacian_roughness(result.mesh)
    rmean, rmax = radial_error(result.mesh, SPEC)
    print(f"  {name}: rough {rep.laplacian_average:.4f}"
          f" median {rep.laplacian_median:.4f} verts {rep.vertex_count}"
          f" radial {rmean:.3f}/{rmax:.3f} ({time.time()-t0:.0f}s)", flush=True)
    return rep.laplacian_average


print("poisson route floor (perfect classifier, tube z 5..95):", flush=True)
grid = perfect_grid(5.0, 95.0)
floors = {n: route_mesh(grid, n) for n in (4096, 16384, 10**9)}

print("baselines:", flush=True)
bh = simulate_sweep(SPEC, PROBE, NAV, BreathingModel(amplitude_mm=8.0),
                    CorruptionSpec(), "breath_hold", seed=3)
print(f"  bh frames {len(bh.frames)}"
      f" disp p2p {np.ptp(np.asarray(bh.displacements_mm)):.3f}", flush=True)
b_bh = baseline_rough("bh  all   ", list(bh.frames))

fb = simulate_sweep(SPEC, PROBE, NAV, BreathingModel(amplitude_mm=8.0, period_s=4.0),
                    CorruptionSpec(), "free_breathing", seed=3)
gate = gate_sweep(fb)
sel = [fb.frames[i] for i in gate.selected_indices]
zs = sorted(f.pose.matrix[2, 3] for f in sel)
print(f"  fb frames {len(fb.frames)} gated {len(sel)}"
      f" max z-gap {np.diff(zs).max():.1f}", flush=True)
b_fb = baseline_rough("fb  gated ", sel)

for n, f in floors.items():
    print(f"ratio floor(fps={n})/bh = {f/b_bh:.3f}  /fb = {f/b_fb:.3f}", flush=True)
