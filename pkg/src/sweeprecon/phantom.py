"""Synthetic ground truth: tube phantom, breathing model, sweep simulator.

The phantom is a capsule around a piecewise-linear centerline with an
arclength-dependent radius (optionally a Gaussian bulge). A kinematic
visual-servo sweep drives a virtual probe along the longitudinal axis,
keeping the vessel laterally centered, while the phantom translates
rigidly along the anteroposterior axis following a raised-cosine
breathing waveform. A segmentation oracle supplies per-frame labels,
optionally corrupted to emulate segmentation failures.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import ProbeGeometry, RigidTransform, calibration_matrix

# Probe orientation for a transverse slice: image lateral axis -> world x,
# image depth axis -> world -y (probe looks down), plane normal -> world z.
PROBE_ROTATION = np.array(
    [
        [1.0, 0.0, 0.0],
        [0.0, 0.0, -1.0],
        [0.0, 1.0, 0.0],
    ]
)

AP_AXIS = np.array([0.0, 1.0, 0.0])

# rng stream tags, combined with the master seed and tick/frame counters
_STREAM_SPECKLE = 1
_STREAM_CORRUPT = 7

CORRUPTION_MODES = ("dropout", "spurious_blob", "dilation_error")


@dataclass(frozen=True)
class PhantomSpec:
    """Capsule tube around a polyline centerline, radii in mm.

    radius(s) = base + bulge_amplitude * exp(-(s - bulge_center)^2 /
    (2 bulge_sigma^2)) where s is arclength along the centerline.
    """

    centerline: np.ndarray
    base_radius_mm: float
    bulge_amplitude_mm: float = 0.0
    bulge_center_mm: float = 0.0
    bulge_sigma_mm: float = 10.0
    background_intensity: float = 0.1
    vessel_intensity: float = 0.8
    speckle_sigma: float = 0.02
    extent: np.ndarray = field(
        default_factory=lambda: np.array([[-60.0, -100.0, -20.0], [60.0, 20.0, 170.0]])
    )

    def __post_init__(self):
        c = np.asarray(self.centerline, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 3 or c.shape[0] < 2:
            raise ValueError("centerline must be an (n>=2, 3) polyline")
        e = np.asarray(self.extent, dtype=np.float64)
        if e.shape != (2, 3) or np.any(e[0] >= e[1]):
            raise ValueError("extent must be a (2,3) box with min < max")
        c.flags.writeable = False
        e.flags.writeable = False
        object.__setattr__(self, "centerline", c)
        object.__setattr__(self, "extent", e)
        for name in ("background_intensity", "vessel_intensity"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0,1], got {v}")
        if self.speckle_sigma < 0:
            raise ValueError("speckle_sigma must be >= 0")
        s = np.linspace(0.0, self.total_arclength(), 512)
        radii = self.radius_profile(s)
        if np.any(radii <= 0):
            raise ValueError("radius profile must be positive everywhere")
        # capsule must fit in the extent (caps included)
        pts = self._sample_centerline(s)
        rmax = radii.max()
        lo, hi = self.extent
        if np.any(pts - rmax < lo) or np.any(pts + rmax > hi):
            raise ValueError("vessel does not fit inside the declared extent")

    def _segments(self):
        a = self.centerline[:-1]
        b = self.centerline[1:]
        d = b - a
        lengths = np.linalg.norm(d, axis=1)
        if np.any(lengths == 0):
            raise ValueError("centerline has a zero-length segment")
        starts = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])
        return a, d, lengths, starts

    def total_arclength(self) -> float:
        return float(np.linalg.norm(np.diff(self.centerline, axis=0), axis=1).sum())

    def _sample_centerline(self, s) -> np.ndarray:
        a, d, lengths, starts = self._segments()
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, starts[-1] + lengths[-1])
        seg = np.clip(np.searchsorted(starts, s, side="right") - 1, 0, len(lengths) - 1)
        t = (s - starts[seg]) / lengths[seg]
        return a[seg] + t[:, None] * d[seg]

    def radius_profile(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        r = np.full_like(s, self.base_radius_mm)
        if self.bulge_amplitude_mm != 0.0:
            z = (s - self.bulge_center_mm) / self.bulge_sigma_mm
            r = r + self.bulge_amplitude_mm * np.exp(-0.5 * z * z)
        return r

    def nearest_on_centerline(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Distance to the centerline and arclength of the closest point.

        Points beyond the polyline ends clamp to the endpoints, which makes
        the inside test a capsule (rounded end caps).
        """
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        a, d, lengths, starts = self._segments()
        best_d2 = np.full(p.shape[0], np.inf)
        best_s = np.zeros(p.shape[0])
        for i in range(len(lengths)):
            rel = p - a[i]
            t = np.clip(rel @ d[i] / (lengths[i] ** 2), 0.0, 1.0)
            closest = a[i] + t[:, None] * d[i]
            d2 = np.sum((p - closest) ** 2, axis=1)
            better = d2 < best_d2
            best_d2[better] = d2[better]
            best_s[better] = starts[i] + t[better] * lengths[i]
        return np.sqrt(best_d2), best_s

    def inside(self, points) -> np.ndarray:
        dist, s = self.nearest_on_centerline(points)
        return dist <= self.radius_profile(s)


def straight_tube_phantom(
    radius_mm: float = 10.0,
    length_mm: float = 150.0,
    depth_mm: float = -40.0,
    **kwargs,
) -> PhantomSpec:
    """Straight tube along the longitudinal axis at a fixed AP depth."""
    centerline = np.array([[0.0, depth_mm, 0.0], [0.0, depth_mm, length_mm]])
    return PhantomSpec(centerline=centerline, base_radius_mm=radius_mm, **kwargs)


@dataclass(frozen=True)
class BreathingModel:
    """Raised-cosine anteroposterior displacement.

    amplitude is peak-to-peak: displacement runs from 0 (exhale) to
    amplitude (inhale).
    """

    amplitude_mm: float = 8.0
    period_s: float = 4.0
    phase_rad: float = 0.0

    def __post_init__(self):
        if self.amplitude_mm < 0:
            raise ValueError("amplitude must be >= 0")
        if self.period_s <= 0:
            raise ValueError("period must be > 0")


def breathing_displacement(model: BreathingModel, t) -> np.ndarray | float:
    t = np.asarray(t, dtype=np.float64)
    x = 2.0 * np.pi * t / model.period_s + model.phase_rad
    out = 0.5 * model.amplitude_mm * (1.0 - np.cos(x))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class CorruptionSpec:
    fraction_corrupted: float = 0.0
    modes: tuple[str, ...] = CORRUPTION_MODES
    rng_seed: int = 0
    dilation_factor: float = 1.5

    def __post_init__(self):
        if not (0.0 <= self.fraction_corrupted <= 1.0):
            raise ValueError("fraction_corrupted must be in [0,1]")
        bad = set(self.modes) - set(CORRUPTION_MODES)
        if bad or not self.modes:
            raise ValueError(f"unknown corruption modes: {sorted(bad)}")
        if self.dilation_factor <= 1.0:
            raise ValueError("dilation_factor must exceed 1")


@dataclass(frozen=True)
class NavParams:
    """Visual-servo sweep parameters."""

    gain: float = 0.5
    max_transverse_step_mm: float = 3.0
    longitudinal_step_mm: float = 1.0
    frame_interval_s: float = 0.1
    max_frames: int = 2000
    hold_threshold_frac: float = 0.05
    start_lateral_offset_mm: float = 3.0

    def __post_init__(self):
        if self.gain <= 0 or self.longitudinal_step_mm <= 0:
            raise ValueError("gain and longitudinal step must be positive")
        if self.frame_interval_s <= 0:
            raise ValueError("frame interval must be positive")
        if self.max_frames < 2:
            raise ValueError("max_frames must be >= 2")
        if not (0.0 <= self.hold_threshold_frac <= 1.0):
            raise ValueError("hold_threshold_frac must be in [0,1]")


@dataclass(frozen=True)
class TrackedFrame:
    """One posed B-mode-like frame.

    pose maps the probe image plane into world mm (rigid part only;
    compose with the probe calibration matrix to map pixels).
    """

    pose: RigidTransform
    intensity: np.ndarray
    label: np.ndarray
    timestamp_s: float
    index: int

    def __post_init__(self):
        inten = np.asarray(self.intensity, dtype=np.float64)
        lab = np.asarray(self.label, dtype=np.uint8)
        if inten.shape != lab.shape or inten.ndim != 2:
            raise ValueError("intensity and label must be equal-shape 2D rasters")
        if lab.max(initial=0) > 1:
            raise ValueError("label values must be in {0, 1}")
        inten.flags.writeable = False
        lab.flags.writeable = False
        object.__setattr__(self, "intensity", inten)
        object.__setattr__(self, "label", lab)


@dataclass(frozen=True)
class SweepBundle:
    """An ordered tracked sweep plus simulation ground truth.

    corrupted_flags and displacements_mm are evaluation-only ground truth
    and are never consumed by the reconstruction pipeline.
    """

    frames: tuple[TrackedFrame, ...]
    probe: ProbeGeometry
    mode: str
    breathing: BreathingModel
    corrupted_flags: np.ndarray
    displacements_mm: np.ndarray
    seed: int
    warning: bool = False

    def __post_init__(self):
        if self.mode not in ("breath_hold", "free_breathing"):
            raise ValueError(f"unknown sweep mode {self.mode!r}")
        if len(self.frames) < 2:
            raise ValueError("a sweep needs at least 2 frames")
        ts = np.array([f.timestamp_s for f in self.frames])
        if np.any(np.diff(ts) <= 0):
            raise ValueError("frame timestamps must be strictly increasing")
        flags = np.asarray(self.corrupted_flags, dtype=bool)
        disp = np.asarray(self.displacements_mm, dtype=np.float64)
        if flags.shape != (len(self.frames),) or disp.shape != (len(self.frames),):
            raise ValueError("ground-truth arrays must have one entry per frame")
        flags.flags.writeable = False
        disp.flags.writeable = False
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "corrupted_flags", flags)
        object.__setattr__(self, "displacements_mm", disp)

    def ap_signal(self) -> np.ndarray:
        """Per-frame anteroposterior pose coordinate, mm."""
        return np.array([f.pose.translation[1] for f in self.frames])


def _frame_pose(x_mm: float, y_mm: float, z_mm: float) -> RigidTransform:
    return RigidTransform.from_rotation_translation(PROBE_ROTATION, [x_mm, y_mm, z_mm])


def render_slice(
    spec: PhantomSpec,
    plane_pose: RigidTransform,
    g: ProbeGeometry,
    displacement_mm: float,
    seed,
) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize intensity and label for one posed frame.

    The phantom is displaced by +displacement along the anteroposterior
    axis, so each pixel's world point is queried at point - displacement.
    """
    cal = calibration_matrix(g)
    w, h = g.image_width_px, g.image_height_px
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    hom = np.stack([uu.ravel(), vv.ravel(), np.zeros(w * h), np.ones(w * h)], axis=1)
    full = plane_pose.matrix @ cal
    world = hom @ full.T[:, :3]
    query = world - displacement_mm * AP_AXIS
    label = spec.inside(query).reshape(h, w)
    intensity = np.where(label, spec.vessel_intensity, spec.background_intensity)
    if spec.speckle_sigma > 0:
        rng = np.random.default_rng(seed)
        intensity = intensity + rng.normal(0.0, spec.speckle_sigma, size=(h, w))
    intensity = np.clip(intensity, 0.0, 1.0)
    return intensity, label.astype(np.uint8)


def _disc_mask(shape, center_rc, radius_px) -> np.ndarray:
    rr, cc = np.ogrid[: shape[0], : shape[1]]
    return (rr - center_rc[0]) ** 2 + (cc - center_rc[1]) ** 2 <= radius_px**2


def corrupt_segmentation(
    label: np.ndarray,
    corruption: CorruptionSpec,
    slice_index: int,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, bool]:
    """Randomly corrupt one label raster; returns (label, was_corrupted).

    The flag is ground truth for evaluation and is never given to the
    reconstruction pipeline. Empty labels pass through untouched.
    """
    if rng is None:
        rng = np.random.default_rng([corruption.rng_seed, _STREAM_CORRUPT, slice_index])
    label = np.asarray(label)
    if corruption.fraction_corrupted == 0.0 or not label.any():
        return label, False
    if rng.uniform() >= corruption.fraction_corrupted:
        return label, False
    mode = corruption.modes[int(rng.integers(len(corruption.modes)))]
    if mode == "dropout":
        return np.zeros_like(label), True
    area = int(label.sum())
    r_eq = np.sqrt(area / np.pi)
    bg_dist = ndimage.distance_transform_edt(label == 0)
    if mode == "dilation_error":
        grown = label.astype(bool) | (bg_dist <= (corruption.dilation_factor - 1.0) * r_eq)
        return grown.astype(np.uint8), True
    # spurious blob: a clearly separated second component, larger than the
    # vessel cross-section so size alone cannot pick the true one
    factor = rng.uniform(1.3, 2.0)
    blob_r = factor * r_eq
    h, w = label.shape
    margin = int(np.ceil(blob_r)) + 1
    if 2 * margin >= min(h, w):
        return label, False
    for _ in range(50):
        cy = int(rng.integers(margin, h - margin))
        cx = int(rng.integers(margin, w - margin))
        if bg_dist[cy, cx] > blob_r + 2.0:
            out = label.copy()
            out[_disc_mask(label.shape, (cy, cx), blob_r)] = 1
            return out, True
    return label, False


def simulate_sweep(
    spec: PhantomSpec,
    g: ProbeGeometry,
    nav: NavParams,
    model: BreathingModel,
    corruption: CorruptionSpec,
    mode: str,
    seed: int = 0,
) -> SweepBundle:
    """Run the visual-servo sweep and return the tracked frame bundle.

    Each tick: render at the current pose, corrupt the oracle label,
    correct the lateral pose toward the label centroid (proportional,
    capped), then advance longitudinally. The sweep stops when the
    uncorrupted label is empty or max_frames is reached. breath_hold
    emits (and moves) only while the breathing displacement is below
    hold_threshold_frac of the amplitude; free_breathing emits every tick.
    """
    if mode not in ("breath_hold", "free_breathing"):
        raise ValueError(f"unknown sweep mode {mode!r}")
    su, _ = g.pixel_spacing_mm
    center_u = (g.image_width_px - 1) / 2.0
    hold_threshold = nav.hold_threshold_frac * model.amplitude_mm

    start = spec.centerline[0]
    x = float(start[0]) + nav.start_lateral_offset_mm
    y = 0.0
    z = float(start[2])

    frames: list[TrackedFrame] = []
    flags: list[bool] = []
    disps: list[float] = []
    warning = False
    max_ticks = 25 * nav.max_frames

    for tick in range(max_ticks):
        t = tick * nav.frame_interval_s
        disp = breathing_displacement(model, t)
        holding = model.amplitude_mm == 0.0 or disp < hold_threshold
        if mode == "breath_hold" and not holding:
            continue

        pose = _frame_pose(x, y + disp, z)
        intensity, label = render_slice(spec, pose, g, disp, [seed, _STREAM_SPECKLE, tick])
        if not label.any():
            break
        corrupted, was_corrupted = corrupt_segmentation(
            label, corruption, len(frames),
            np.random.default_rng([corruption.rng_seed, _STREAM_CORRUPT, len(frames)]),
        )
        frames.append(
            TrackedFrame(
                pose=pose,
                intensity=intensity,
                label=corrupted,
                timestamp_s=t,
                index=len(frames),
            )
        )
        flags.append(was_corrupted)
        disps.append(float(disp))
        if len(frames) >= nav.max_frames:
            warning = True
            break

        # lateral proportional correction from the (possibly corrupted)
        # segmentation, as the real servo would see it
        if corrupted.any():
            centroid_u = float(np.nonzero(corrupted)[1].mean())
            step = nav.gain * (centroid_u - center_u) * su
            step = float(np.clip(step, -nav.max_transverse_step_mm, nav.max_transverse_step_mm))
            x += step
        z += nav.longitudinal_step_mm
    else:
        warning = True

    if len(frames) < 2:
        raise ValueError("sweep produced fewer than 2 frames; check the initial pose")
    return SweepBundle(
        frames=tuple(frames),
        probe=g,
        mode=mode,
        breathing=model,
        corrupted_flags=np.array(flags),
        displacements_mm=np.array(disps),
        seed=seed,
        warning=warning,
    )
