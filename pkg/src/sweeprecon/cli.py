"""Command-line pipeline: simulation, stage commands, and the full chain.

Stages communicate exclusively through files in the output directory, so
any stage can be rerun or inspected in isolation:

    bundle/          tracked sweep (simulate)
    filter.json      per-slice verdicts (filter)
    gating.json      exhale selection (gate, free breathing)
    model.ckpt       trained network + loss_curve.csv (train)
    inr_mesh.ply     reconstructed surface (mesh)
    baseline_mesh.ply  linear-interpolation compound surface (baseline)
    metrics.csv, report.txt  comparative scores (metrics)
    run_manifest.json  every parameter, seed, and artifact hash

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from .bundleio import read_bundle, write_bundle
from .config import MODES, PipelineConfig, apply_overrides, load_config
from .errors import DataError, EmptyPointCloudError, SweepreconError, UsageError
from .gating import gate_sweep
from .geometry import calibration_matrix, pixels_to_world
from .inr import (
    build_training_set,
    load_checkpoint,
    predict_grid,
    save_checkpoint,
    save_loss_curve,
    train,
)
from .meshio import read_mesh_ply, write_mesh_ply, write_volume_raw
from .metrics import (
    MeshScores,
    dice_against_phantom,
    format_scores_text,
    mesh_laplacian_roughness,
    radial_error,
    rasterize_mesh,
    write_scores_csv,
)
from .phantom import simulate_sweep
from .recon import (
    LabeledPointCloud,
    ScalarField,
    baseline_compound,
    estimate_normals,
    extract_aorta_points,
    furthest_point_sampling,
    marching_cubes,
    poisson_reconstruct,
    slice_boundary_hull,
)
from .slicefilter import filter_frames

BUNDLE_DIR = "bundle"
FILTER_FILE = "filter.json"
GATING_FILE = "gating.json"
CHECKPOINT_FILE = "model.ckpt"
LOSS_CURVE_FILE = "loss_curve.csv"
INR_MESH_FILE = "inr_mesh.ply"
BASELINE_MESH_FILE = "baseline_mesh.ply"
METRICS_FILE = "metrics.csv"
REPORT_FILE = "report.txt"
MANIFEST_FILE = "run_manifest.json"

# xy padding around the labeled region when choosing the prediction box;
# z is never padded (the network has no data beyond the end planes)
PREDICT_PAD_MM = 10.0


class _Parser(argparse.ArgumentParser):
    """argparse maps usage problems onto exit code 1 via UsageError."""

    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON pipeline configuration")
    common.add_argument("--seed", type=int, metavar="N", help="override the config seed")
    common.add_argument("--out", metavar="DIR", help="override the output directory")
    common.add_argument("--mode", choices=MODES, help="override the sweep mode")

    parser = _Parser(prog="sweeprecon", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, handler, help_text, **extra):
        p = sub.add_parser(name, parents=[common], help=help_text)
        for flag, kwargs in extra.items():
            p.add_argument(flag, **kwargs)
        p.set_defaults(handler=handler)
        return p

    add("simulate", cmd_simulate, "write a simulated tracked sweep bundle")
    add(
        "filter",
        cmd_filter,
        "per-slice plausibility verdicts",
        **{"--bundle": dict(metavar="DIR", help="bundle directory (default OUT/bundle)")},
    )
    add(
        "gate",
        cmd_gate,
        "select exhale frames from the trajectory",
        **{"--bundle": dict(metavar="DIR")},
    )
    add(
        "train",
        cmd_train,
        "fit the implicit network to the (gated) sweep",
        **{"--bundle": dict(metavar="DIR")},
    )
    add(
        "mesh",
        cmd_mesh,
        "sample the trained network and reconstruct a surface",
        **{
            "--bundle": dict(metavar="DIR"),
            "--model": dict(metavar="PATH", help="checkpoint (default OUT/model.ckpt)"),
            "--dump-volumes": dict(action="store_true", help="also write raw float64 grids"),
        },
    )
    add(
        "baseline",
        cmd_baseline,
        "linear-interpolation compounding of the same frames",
        **{
            "--bundle": dict(metavar="DIR"),
            "--dump-volumes": dict(action="store_true"),
        },
    )
    add(
        "metrics",
        cmd_metrics,
        "comparative roughness/accuracy report for two meshes",
        **{
            "--inr": dict(metavar="PLY", help="default OUT/inr_mesh.ply"),
            "--baseline": dict(metavar="PLY", help="default OUT/baseline_mesh.ply"),
        },
    )
    add(
        "pipeline",
        cmd_pipeline,
        "run every stage in order and write the comparative report",
        **{
            "--bundle": dict(metavar="DIR", help="reuse an existing bundle instead of simulating"),
            "--dump-volumes": dict(action="store_true"),
        },
    )
    return parser


def _out_dir(config: PipelineConfig) -> str:
    os.makedirs(config.out_dir, exist_ok=True)
    return config.out_dir


def _hash_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _hash_path(path) -> str:
    """Digest of a file, or of a directory's sorted (name, digest) pairs."""
    if not os.path.isdir(path):
        return _hash_file(path)
    digest = hashlib.sha256()
    for root, dirs, files in sorted(os.walk(path)):
        dirs.sort()
        for name in sorted(files):
            full = os.path.join(root, name)
            rel = os.path.relpath(full, path)
            digest.update(rel.encode())
            digest.update(b"\0")
            digest.update(_hash_file(full).encode())
    return digest.hexdigest()


def _write_manifest(config: PipelineConfig, command: str, inputs, artifacts) -> str:
    """Record every parameter, seed, and input/output hash for the run."""
    out = config.out_dir
    manifest = {
        "command": command,
        "config": config.to_dict(),
        "inputs": {name: _hash_path(path) for name, path in inputs.items()},
        "outputs": {
            os.path.relpath(path, out): _hash_path(path) for path in artifacts
        },
    }
    path = os.path.join(out, MANIFEST_FILE)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _bundle_dir(args, config: PipelineConfig) -> str:
    path = args.bundle or os.path.join(config.out_dir, BUNDLE_DIR)
    if not os.path.isdir(path):
        raise DataError(f"no bundle at {path}; run simulate or pass --bundle")
    return path


def _selected_indices(config: PipelineConfig):
    """Gated frame indices from the gating stage's file, if it ran."""
    path = os.path.join(config.out_dir, GATING_FILE)
    if not os.path.exists(path):
        return None
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc.msg}") from exc
    if "selected_indices" not in payload:
        raise DataError(f"{path}: missing selected_indices")
    return [int(i) for i in payload["selected_indices"]]


def _chosen_frames(bundle, selected):
    if selected is None:
        return list(bundle.frames)
    try:
        return [bundle.frames[i] for i in selected]
    except IndexError as exc:
        raise DataError(f"gating index out of range: {exc}") from exc


def _predict_bbox(bundle, frames, config: PipelineConfig) -> np.ndarray:
    """Tight world box around the (cleaned) labeled pixels of the frames.

    Keeps the sampled region inside the data: laterally the labels plus a
    fixed pad, longitudinally exactly the spanned frame planes. Sampling
    beyond the end planes would query the network where it saw nothing.
    """
    cal = calibration_matrix(bundle.probe)
    labels = [f.label for f in frames]
    if config.gating.filter_enabled:
        cleaned, verdicts = filter_frames(
            labels,
            bundle.probe.pixel_spacing_mm,
            window=config.gating.window,
            rel_tolerance=config.gating.tolerance,
        )
        kept = [
            (frames[i], cleaned[i]) for i, v in enumerate(verdicts) if v.accepted
        ]
    else:
        kept = list(zip(frames, labels))
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for frame, label in kept:
        rows, cols = np.nonzero(label)
        if rows.size == 0:
            continue
        world = pixels_to_world(
            frame.pose, cal, np.stack([cols, rows], axis=-1).astype(np.float64)
        )
        lo = np.minimum(lo, world.min(axis=0))
        hi = np.maximum(hi, world.max(axis=0))
    if not np.all(np.isfinite(lo)):
        raise EmptyPointCloudError("no labeled pixels in any accepted frame")
    zs = np.array([f.pose.matrix[2, 3] for f in frames])
    pad = np.array([PREDICT_PAD_MM, PREDICT_PAD_MM, 0.0])
    lo, hi = lo - pad, hi + pad
    lo[2], hi[2] = zs.min(), zs.max()
    return np.stack([lo, hi])


def cmd_simulate(args, config: PipelineConfig):
    out = _out_dir(config)
    bundle = simulate_sweep(
        config.phantom.build(),
        config.probe.build(),
        config.nav,
        config.breathing,
        config.corruption,
        config.mode,
        seed=config.seed,
    )
    directory = os.path.join(out, BUNDLE_DIR)
    write_bundle(bundle, directory)
    zs = np.array([f.pose.matrix[2, 3] for f in bundle.frames])
    disp = np.asarray(bundle.displacements_mm)
    print(
        f"simulated {len(bundle.frames)} frames ({bundle.mode}):"
        f" sweep z {zs.min():.1f}..{zs.max():.1f} mm,"
        f" AP displacement peak-to-peak {np.ptp(disp):.2f} mm"
    )
    return {}, [directory]


def cmd_filter(args, config: PipelineConfig):
    out = _out_dir(config)
    bundle_dir = _bundle_dir(args, config)
    bundle = read_bundle(bundle_dir)
    _, verdicts = filter_frames(
        [f.label for f in bundle.frames],
        bundle.probe.pixel_spacing_mm,
        window=config.gating.window,
        rel_tolerance=config.gating.tolerance,
    )
    payload = {
        "window": config.gating.window,
        "tolerance": config.gating.tolerance,
        "accepted_count": sum(v.accepted for v in verdicts),
        "verdicts": [
            {
                "index": v.index,
                "accepted": v.accepted,
                "equivalent_radius_mm": v.equivalent_radius_mm,
                "running_estimate_mm": v.running_estimate_mm,
            }
            for v in verdicts
        ],
    }
    path = os.path.join(out, FILTER_FILE)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(
        f"accepted {payload['accepted_count']}/{len(verdicts)} slices"
        f" (window {config.gating.window}, tolerance {config.gating.tolerance})"
    )
    return {"bundle": bundle_dir}, [path]


def cmd_gate(args, config: PipelineConfig):
    out = _out_dir(config)
    bundle_dir = _bundle_dir(args, config)
    bundle = read_bundle(bundle_dir)
    result = gate_sweep(bundle, band_frac=config.gating.band_frac)
    payload = {
        "band_mm": result.band_mm,
        "prominence_mm": result.prominence_mm,
        "separation_frames": result.separation_frames,
        "minima_indices": [int(i) for i in result.minima_indices],
        "selected_indices": [int(i) for i in result.selected_indices],
        "ap_signal": [float(v) for v in result.ap_signal],
    }
    path = os.path.join(out, GATING_FILE)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(
        f"selected {len(result.selected_indices)}/{len(bundle.frames)} frames"
        f" around {len(result.minima_indices)} exhale minima"
        f" (band {result.band_mm:.2f} mm)"
    )
    return {"bundle": bundle_dir}, [path]


def cmd_train(args, config: PipelineConfig):
    out = _out_dir(config)
    bundle_dir = _bundle_dir(args, config)
    bundle = read_bundle(bundle_dir)
    train_cfg = config.inr.build(config.seed)
    dataset = build_training_set(
        bundle,
        train_cfg,
        selected_indices=_selected_indices(config),
        frame_stride=config.inr.frame_stride,
        filter_window=config.gating.window,
        filter_rel_tolerance=config.gating.tolerance,
        apply_filter=config.gating.filter_enabled,
        encoding_length=config.inr.encoding_length,
    )
    model, curve = train(dataset, train_cfg)
    ckpt = os.path.join(out, CHECKPOINT_FILE)
    curve_path = os.path.join(out, LOSS_CURVE_FILE)
    save_checkpoint(model, ckpt)
    save_loss_curve(curve_path, curve)
    print(
        f"trained {train_cfg.epochs} epochs on {len(dataset.batches)} slices;"
        f" final mean loss {curve[-1]:.6f}"
    )
    return {"bundle": bundle_dir}, [ckpt, curve_path]


def cmd_mesh(args, config: PipelineConfig):
    out = _out_dir(config)
    bundle_dir = _bundle_dir(args, config)
    ckpt = args.model or os.path.join(out, CHECKPOINT_FILE)
    if not os.path.exists(ckpt):
        raise DataError(f"no checkpoint at {ckpt}; run train or pass --model")
    bundle = read_bundle(bundle_dir)
    model = load_checkpoint(ckpt, dtype=np.dtype(config.inr.dtype))
    frames = _chosen_frames(bundle, _selected_indices(config))
    recon = config.recon

    bbox = _predict_bbox(bundle, frames, config)
    grid = predict_grid(model, bbox, recon.prediction_resolution_mm)
    cloud = extract_aorta_points(grid, threshold=recon.threshold)
    hull = slice_boundary_hull(cloud, recon.slab_thickness_mm)
    count = min(recon.fps_count, len(hull))
    subset = furthest_point_sampling(hull.points, count)
    points = hull.points[subset]
    normals = estimate_normals(
        points, k=recon.normals_k, slab_thickness_mm=recon.slab_thickness_mm
    )
    oriented = LabeledPointCloud(points, hull.aorta_probability[subset], normals)
    result = poisson_reconstruct(oriented, recon.grid_resolution_mm)
    mesh = marching_cubes(result.field, result.iso_value)

    mesh_path = os.path.join(out, INR_MESH_FILE)
    write_mesh_ply(mesh_path, mesh, grid_resolution_mm=recon.grid_resolution_mm)
    artifacts = [mesh_path]
    if args.dump_volumes:
        prob_path = os.path.join(out, "class_probability.raw")
        write_volume_raw(
            prob_path,
            ScalarField(
                grid.class_probs[..., 1].astype(np.float64),
                origin=grid.origin,
                spacing_mm=grid.spacing_mm,
            ),
        )
        field_path = os.path.join(out, "poisson_field.raw")
        write_volume_raw(field_path, result.field)
        artifacts += [prob_path, f"{prob_path}.json", field_path, f"{field_path}.json"]
    print(
        f"cloud {len(cloud)} -> hull {len(hull)} -> sampled {count};"
        f" mesh {len(mesh.vertices)} vertices, {len(mesh.faces)} faces"
        f" ({'closed' if mesh.is_closed() else 'open'})"
    )
    return {"bundle": bundle_dir, "model": ckpt}, artifacts


def cmd_baseline(args, config: PipelineConfig):
    out = _out_dir(config)
    bundle_dir = _bundle_dir(args, config)
    bundle = read_bundle(bundle_dir)
    frames = _chosen_frames(bundle, _selected_indices(config))
    result = baseline_compound(
        frames,
        bundle.probe,
        config.recon.grid_resolution_mm,
        max_gap_mm=config.recon.max_gap_mm,
    )
    mesh_path = os.path.join(out, BASELINE_MESH_FILE)
    write_mesh_ply(
        mesh_path, result.mesh, grid_resolution_mm=config.recon.grid_resolution_mm
    )
    artifacts = [mesh_path]
    if args.dump_volumes:
        vol_path = os.path.join(out, "baseline_volume.raw")
        write_volume_raw(vol_path, result.volume)
        artifacts += [vol_path, f"{vol_path}.json"]
    print(
        f"compounded {len(frames)} frames at"
        f" {config.recon.grid_resolution_mm:g} mm;"
        f" mesh {len(result.mesh.vertices)} vertices"
    )
    return {"bundle": bundle_dir}, artifacts


def _read_mesh(path):
    if not os.path.exists(path):
        raise DataError(f"no mesh at {path}")
    return read_mesh_ply(path)


def _score_mesh(name, mesh, resolution_mm, config: PipelineConfig) -> MeshScores:
    spec = config.phantom.build()
    roughness = mesh_laplacian_roughness(mesh)
    lo = mesh.vertices.min(axis=0) - 2 * resolution_mm
    hi = mesh.vertices.max(axis=0) + 2 * resolution_mm
    dims = tuple(np.ceil((hi - lo) / resolution_mm).astype(int) + 1)
    raster = rasterize_mesh(mesh, lo, resolution_mm, dims)
    dice = dice_against_phantom(raster, lo, resolution_mm, spec)
    radial_mean, radial_max = radial_error(mesh, spec)
    return MeshScores(
        mesh_name=name,
        roughness=roughness,
        dice=dice,
        radial_mean_mm=radial_mean,
        radial_max_mm=radial_max,
    )


def cmd_metrics(args, config: PipelineConfig):
    out = _out_dir(config)
    inr_path = args.inr or os.path.join(out, INR_MESH_FILE)
    base_path = args.baseline or os.path.join(out, BASELINE_MESH_FILE)
    inr_mesh, _, inr_res = _read_mesh(inr_path)
    base_mesh, _, base_res = _read_mesh(base_path)
    if inr_res is None or base_res is None:
        raise DataError(
            "mesh is missing its grid-resolution tag; roughness comparisons"
            " require meshes extracted at a known shared resolution"
        )
    if abs(inr_res - base_res) > 1e-12:
        raise DataError(
            f"grid resolutions differ ({inr_res:g} vs {base_res:g} mm);"
            " re-extract both meshes at a shared resolution"
        )
    scores = [
        _score_mesh("inr", inr_mesh, inr_res, config),
        _score_mesh("baseline", base_mesh, base_res, config),
    ]
    ratio = (
        scores[0].roughness.laplacian_average / scores[1].roughness.laplacian_average
    )
    csv_path = os.path.join(out, METRICS_FILE)
    report_path = os.path.join(out, REPORT_FILE)
    write_scores_csv(csv_path, scores)
    with open(report_path, "w") as fh:
        fh.write(format_scores_text(scores))
        fh.write(f"\nroughness ratio (inr/baseline): {ratio:.4f}\n")
        direction = "smoother than" if ratio < 1.0 else "not smoother than"
        fh.write(f"the network-sampled mesh is {direction} the compound mesh\n")
    print(f"roughness ratio (inr/baseline): {ratio:.4f}")
    return {"inr_mesh": inr_path, "baseline_mesh": base_path}, [csv_path, report_path]


def cmd_pipeline(args, config: PipelineConfig):
    out = _out_dir(config)
    simulate = args.bundle is None
    bundle_mode = config.mode if simulate else read_bundle(args.bundle).mode
    artifacts: list[str] = []
    inputs = {} if simulate else {"bundle": args.bundle}

    def run(name, handler):
        stage_args = argparse.Namespace(
            bundle=args.bundle, model=None, inr=None, baseline=None,
            dump_volumes=getattr(args, "dump_volumes", False),
        )
        print(f"[{name}]")
        try:
            _, produced = handler(stage_args, config)
        except SweepreconError as exc:
            done = ", ".join(artifacts) if artifacts else "none"
            raise type(exc)(
                f"stage {name!r} failed: {exc} (completed artifacts: {done})"
            ) from exc
        artifacts.extend(produced)

    stale_gating = os.path.join(out, GATING_FILE)
    if bundle_mode != "free_breathing" and os.path.exists(stale_gating):
        os.remove(stale_gating)  # later stages would silently honor it

    if simulate:
        run("simulate", cmd_simulate)
        args.bundle = os.path.join(out, BUNDLE_DIR)
    run("filter", cmd_filter)
    if bundle_mode == "free_breathing":
        run("gate", cmd_gate)
    run("train", cmd_train)
    run("mesh", cmd_mesh)
    run("baseline", cmd_baseline)
    run("metrics", cmd_metrics)
    manifest = _write_manifest(config, "pipeline", inputs, artifacts)
    print(f"pipeline complete: {len(artifacts)} artifacts, manifest {manifest}")
    return None


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        config = load_config(args.config) if args.config else PipelineConfig()
        config = apply_overrides(
            config, seed=args.seed, out_dir=args.out, mode=args.mode
        )
        result = args.handler(args, config)
        if result is not None:
            inputs, artifacts = result
            _write_manifest(config, args.command, inputs, artifacts)
        return 0
    except SweepreconError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
