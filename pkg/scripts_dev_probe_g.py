"""Probe G: real trained INR at the reference operating point.

Measures the actual criterion-1/8 quantities on the breath-hold
reference bundle (full defaults, seed 0) across prediction resolution
and normals_k, against perfect-classifier floors and the all-frame
baseline. Then the free-breathing side: junk point count as a function
of extraction threshold, and the gated-baseline ratio at the best
setting.
"""
import time

import numpy as np

from sweeprecon.config import PipelineConfig
from sweeprecon.gating import gate_sweep
from sweeprecon.inr import PredictedGrid, build_training_set, predict_grid, train
from sweeprecon.metrics import dice_against_phantom, mesh_laplacian_roughness, radial_error
from sweeprecon.metrics import rasterize_mesh
from sweeprecon.phantom import simulate_sweep
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

CONFIG = PipelineConfig()
SPEC = CONFIG.phantom.build()
PROBE = CONFIG.probe.build()
RECON_RES = 1.0


def junk_count(cloud):
    dist, s = SPEC.nearest_on_centerline(cloud.points)
    return int(np.sum(dist > SPEC.radius_profile(s) + 2.0))


def perfect_grid(lo, hi, res):
    axes = [np.arange(lo[a], hi[a] + 1e-9, res) for a in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    dist, s = SPEC.nearest_on_centerline(pts)
    inside = dist <= SPEC.radius_profile(s)
    dims = tuple(len(a) for a in axes)
    probs = np.zeros(dims + (2,))
    probs[..., 1] = inside.reshape(dims)
    probs[..., 0] = 1.0 - probs[..., 1]
    return PredictedGrid(np.zeros(dims), probs, np.asarray(lo, float), res)


def route_mesh(tag, grid, pred_res, k, threshold=0.5, fps_count=4096):
    t0 = time.time()
    cloud = extract_aorta_points(grid, threshold=threshold)
    jk = junk_count(cloud)
    hull = slice_boundary_hull(cloud, 2 * pred_res)
    n = min(fps_count, len(hull))
    sub = furthest_point_sampling(hull.points, n)
    pts = hull.points[sub]
    normals = estimate_normals(pts, k=k, slab_thickness_mm=2 * pred_res)
    oriented = LabeledPointCloud(pts, hull.aorta_probability[sub], normals)
    res = poisson_reconstruct(oriented, RECON_RES)
    mesh = marching_cubes(res.field, res.iso_value)
    rep = mesh_laplacian_roughness(mesh)
    rmean, rmax = radial_error(mesh, SPEC)
    lo = mesh.vertices.min(axis=0) - 2.0
    dims = tuple(int(np.ceil((mesh.vertices.max(axis=0) + 2.0 - lo)[a])) + 1 for a in range(3))
    labels = rasterize_mesh(mesh, lo, 1.0, dims)
    dice = dice_against_phantom(labels, lo, 1.0, SPEC)
    print(f"  {tag}: rough {rep.laplacian_average:.4f} med {rep.laplacian_median:.4f}"
          f" verts {rep.vertex_count} junk {jk} radial {rmean:.3f}/{rmax:.3f}"
          f" dice {dice:.4f} closed {mesh.is_closed()} ({time.time()-t0:.0f}s)",
          flush=True)
    return rep.laplacian_average


t0 = time.time()
bh = simulate_sweep(SPEC, PROBE, CONFIG.nav, CONFIG.breathing, CONFIG.corruption,
                    "breath_hold", seed=0)
zs = np.array([f.pose.matrix[2, 3] for f in bh.frames])
print(f"bh bundle: {len(bh.frames)} frames z {zs.min():.1f}..{zs.max():.1f}"
      f" ({time.time()-t0:.0f}s)", flush=True)

# --- baseline denominator (all frames)
t0 = time.time()
base = baseline_compound(list(bh.frames), PROBE, RECON_RES)
rep = mesh_laplacian_roughness(base.mesh)
rmean, rmax = radial_error(base.mesh, SPEC)
b_bh = rep.laplacian_average
print(f"bh baseline: rough {b_bh:.4f} med {rep.laplacian_median:.4f}"
      f" verts {rep.vertex_count} radial {rmean:.3f}/{rmax:.3f}"
      f" ({time.time()-t0:.0f}s)", flush=True)

# --- perfect-classifier floors over the same extent
lo = (-25.0, -65.0, float(zs.min()))
hi = (25.0, -15.0, float(zs.max()))
for pred_res in (0.75, 0.5, 0.4):
    g = perfect_grid(lo, hi, pred_res)
    for k in (16, 32):
        f = route_mesh(f"floor p{pred_res} k{k}", g, pred_res, k)
        print(f"    -> ratio/bh = {f/b_bh:.3f}", flush=True)

# --- real INR, stride 3, epochs 200
for lr, epochs, cap in ((3e-4, 200, 512), (1e-3, 200, 512)):
    tcfg = CONFIG.inr.build(seed=0)
    tcfg = type(tcfg)(epochs=epochs, learning_rate=lr, seed=0,
                      max_voxels_per_slice=cap, dtype="float32")
    t0 = time.time()
    ds = build_training_set(bh, tcfg, frame_stride=3)
    model, curve = train(ds, tcfg)
    print(f"train lr={lr} epochs={epochs} cap={cap}: {len(ds.batches)} slices"
          f" loss {curve[0]:.4f}->{curve[-1]:.5f}"
          f" (last5 {np.array2string(curve[-5:], precision=5)})"
          f" ({time.time()-t0:.0f}s)", flush=True)
    for pred_res in (0.75, 0.5):
        t0 = time.time()
        grid = predict_grid(model, np.array([lo, hi]), pred_res)
        print(f"  predict {pred_res}: dims {grid.class_probs.shape[:3]}"
              f" ({time.time()-t0:.0f}s)", flush=True)
        for k in (16, 32):
            f = route_mesh(f"inr lr{lr} p{pred_res} k{k}", grid, pred_res, k)
            print(f"    -> ratio/bh = {f/b_bh:.3f}", flush=True)

# --- free-breathing side
t0 = time.time()
fb = simulate_sweep(SPEC, PROBE, CONFIG.nav, CONFIG.breathing, CONFIG.corruption,
                    "free_breathing", seed=0)
gate = gate_sweep(fb)
sel = [fb.frames[i] for i in gate.selected_indices]
zsel = sorted(f.pose.matrix[2, 3] for f in sel)
print(f"fb bundle: {len(fb.frames)} frames, gated {len(sel)},"
      f" max z-gap {np.diff(zsel).max():.1f} ({time.time()-t0:.0f}s)", flush=True)

t0 = time.time()
base_fb = baseline_compound(sel, PROBE, RECON_RES)
rep = mesh_laplacian_roughness(base_fb.mesh)
b_fb = rep.laplacian_average
rmean, rmax = radial_error(base_fb.mesh, SPEC)
print(f"fb gated baseline: rough {b_fb:.4f} verts {rep.vertex_count}"
      f" radial {rmean:.3f}/{rmax:.3f} ({time.time()-t0:.0f}s)", flush=True)

tcfg = CONFIG.inr.build(seed=0)
tcfg = type(tcfg)(epochs=200, learning_rate=3e-4, seed=0,
                  max_voxels_per_slice=512, dtype="float32")
t0 = time.time()
ds = build_training_set(fb, tcfg, selected_indices=gate.selected_indices)
model, curve = train(ds, tcfg)
print(f"fb train: {len(ds.batches)} slices loss {curve[0]:.4f}->{curve[-1]:.5f}"
      f" ({time.time()-t0:.0f}s)", flush=True)

grid = predict_grid(model, np.array([lo, hi]), 0.5)
p1 = grid.class_probs[..., 1].ravel()
pts = grid.world_axes()
pw = np.stack(np.meshgrid(*pts, indexing="ij"), axis=-1).reshape(-1, 3)
dist, s = SPEC.nearest_on_centerline(pw)
outside = dist > SPEC.radius_profile(s) + 2.0
for thr in (0.5, 0.6, 0.7, 0.8, 0.9, 0.95):
    jk = int(np.sum((p1 > thr) & outside))
    tube = int(np.sum((p1 > thr) & ~outside))
    print(f"  fb threshold {thr}: junk {jk} tube-side {tube}", flush=True)

for thr in (0.5, 0.9):
    f = route_mesh(f"fb inr p0.5 k16 thr{thr}", grid, 0.5, 16, threshold=thr)
    print(f"    -> ratio/fb-baseline = {f/b_fb:.3f}", flush=True)
