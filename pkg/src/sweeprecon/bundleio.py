"""On-disk sweep bundle format.

A bundle is a directory: one manifest.json plus two raw rasters per
frame (intensity, then label, in separate files). Rasters are 8-bit
unsigned, row-major; intensities are stored as round(value * 255).
Multi-byte values never appear in the rasters, and the manifest is
plain JSON, so the format is endian-safe by construction.

The manifest stores each frame's full pixel-to-world affine (pose
composed with the probe calibration) as 16 row-major doubles. Readers
recover the rigid pose by peeling the calibration back off.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import DataError
from .geometry import ProbeGeometry, RigidTransform, calibration_matrix
from .phantom import BreathingModel, SweepBundle, TrackedFrame

FORMAT_VERSION = 1


def _calibration_inverse(probe: ProbeGeometry) -> np.ndarray:
    # closed form: tighter than a generic solve, and keeps the last row exact
    cal = calibration_matrix(probe)
    a, tx = cal[0, 0], cal[0, 3]
    b, ty = cal[2, 1], cal[2, 3]
    return np.array(
        [
            [1.0 / a, 0.0, 0.0, -tx / a],
            [0.0, 0.0, 1.0 / b, -ty / b],
            [0.0, -1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def write_bundle(bundle: SweepBundle, directory) -> str:
    os.makedirs(directory, exist_ok=True)
    cal = calibration_matrix(bundle.probe)
    frames = []
    for frame in bundle.frames:
        h, w = frame.intensity.shape
        intensity_file = f"frame_{frame.index:05d}_intensity.raw"
        label_file = f"frame_{frame.index:05d}_label.raw"
        quantized = np.round(frame.intensity * 255.0).astype(np.uint8)
        with open(os.path.join(directory, intensity_file), "wb") as fh:
            fh.write(quantized.tobytes())
        with open(os.path.join(directory, label_file), "wb") as fh:
            fh.write(frame.label.astype(np.uint8).tobytes())
        frames.append(
            {
                "index": frame.index,
                "timestamp_s": frame.timestamp_s,
                "pose": list((frame.pose.matrix @ cal).ravel()),
                "intensity_file": intensity_file,
                "label_file": label_file,
                "width": w,
                "height": h,
                "pixel_spacing_mm": list(bundle.probe.pixel_spacing_mm),
            }
        )
    probe = bundle.probe
    manifest = {
        "version": FORMAT_VERSION,
        "mode": bundle.mode,
        "seed": bundle.seed,
        "warning": bundle.warning,
        "probe": {
            "theta_rad": probe.theta_rad,
            "tip_radius_mm": probe.tip_radius_mm,
            "depth_mm": probe.depth_mm,
            "image_width_px": probe.image_width_px,
            "image_height_px": probe.image_height_px,
        },
        "breathing": {
            "amplitude_mm": bundle.breathing.amplitude_mm,
            "period_s": bundle.breathing.period_s,
            "phase_rad": bundle.breathing.phase_rad,
        },
        "frame_count": len(bundle.frames),
        "corrupted_flags": [bool(f) for f in bundle.corrupted_flags],
        "displacements_mm": list(bundle.displacements_mm),
        "frames": frames,
    }
    path = os.path.join(directory, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _require(manifest: dict, key: str, where: str):
    if key not in manifest:
        raise DataError(f"{where}: missing required key '{key}'")
    return manifest[key]


def read_bundle(directory) -> SweepBundle:
    path = os.path.join(directory, "manifest.json")
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"{directory}: no manifest.json") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc

    version = _require(manifest, "version", path)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported bundle version {version!r}")
    p = _require(manifest, "probe", path)
    try:
        probe = ProbeGeometry(
            p["theta_rad"],
            p["tip_radius_mm"],
            p["depth_mm"],
            p["image_width_px"],
            p["image_height_px"],
        )
        breathing = BreathingModel(**manifest.get(
            "breathing", {"amplitude_mm": 0.0}
        ))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: bad probe or breathing block ({exc})") from exc

    entries = _require(manifest, "frames", path)
    count = _require(manifest, "frame_count", path)
    if count != len(entries):
        raise DataError(
            f"{path}: frame_count {count} but {len(entries)} frame entries"
        )
    inv_cal = _calibration_inverse(probe)
    frames = []
    for e in entries:
        pose_values = _require(e, "pose", path)
        if len(pose_values) != 16:
            raise DataError(f"{path}: frame {e.get('index')}: pose needs 16 values")
        affine = np.asarray(pose_values, dtype=np.float64).reshape(4, 4)
        try:
            pose = RigidTransform(affine @ inv_cal)
        except ValueError as exc:
            raise DataError(
                f"{path}: frame {e.get('index')}: pose is not a rigid motion "
                f"composed with this probe's calibration ({exc})"
            ) from exc
        w, h = int(e["width"]), int(e["height"])
        rasters = []
        for key in ("intensity_file", "label_file"):
            raster_path = os.path.join(directory, _require(e, key, path))
            try:
                with open(raster_path, "rb") as fh:
                    raw = fh.read()
            except FileNotFoundError as exc:
                raise DataError(f"{raster_path}: raster file missing") from exc
            if len(raw) != w * h:
                raise DataError(
                    f"{raster_path}: expected {w * h} bytes, found {len(raw)}"
                )
            rasters.append(np.frombuffer(raw, dtype=np.uint8).reshape(h, w))
        label = rasters[1]
        if label.max(initial=0) > 1:
            raise DataError(f"{path}: frame {e.get('index')}: non-binary label")
        frames.append(
            TrackedFrame(
                pose=pose,
                intensity=rasters[0] / 255.0,
                label=label,
                timestamp_s=float(e["timestamp_s"]),
                index=int(e["index"]),
            )
        )
    flags = manifest.get("corrupted_flags", [False] * len(frames))
    disp = manifest.get("displacements_mm", [0.0] * len(frames))
    if len(flags) != len(frames) or len(disp) != len(frames):
        raise DataError(f"{path}: ground-truth arrays do not match frame count")
    try:
        return SweepBundle(
            frames=tuple(frames),
            probe=probe,
            mode=_require(manifest, "mode", path),
            breathing=breathing,
            corrupted_flags=np.asarray(flags, dtype=bool),
            displacements_mm=np.asarray(disp, dtype=np.float64),
            seed=int(manifest.get("seed", 0)),
            warning=bool(manifest.get("warning", False)),
        )
    except ValueError as exc:
        raise DataError(f"{path}: inconsistent bundle ({exc})") from exc
