"""Per-slice segmentation cleanup and accept/reject gating.

Each incoming label raster is reduced to its largest 4-connected
component, summarized by an equivalent circular radius, and checked
against a moving average of previously accepted radii. Slices whose
radius jumps relative to that running estimate are rejected; their
intensities can still train an appearance model, but their labels are
considered unreliable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

# 4-connectivity: no diagonal neighbors
_STRUCTURE = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

DEFAULT_WINDOW = 10
DEFAULT_REL_TOLERANCE = 0.2


@dataclass(frozen=True)
class SliceVerdict:
    index: int
    accepted: bool
    equivalent_radius_mm: float
    running_estimate_mm: float


def largest_connected_component(label: np.ndarray) -> np.ndarray:
    """Keep only the largest 4-connected foreground component.

    Ties break toward the component containing the lowest row-major
    pixel (label scan order). Empty input returns an empty raster.
    """
    label = np.asarray(label)
    labeled, count = ndimage.label(label != 0, structure=_STRUCTURE)
    if count == 0:
        return np.zeros_like(label)
    sizes = np.bincount(labeled.ravel())[1:]
    # argmax returns the first maximum; ids follow scan order, so the tie
    # goes to the component seen first in row-major order
    keep = int(np.argmax(sizes)) + 1
    return (labeled == keep).astype(label.dtype)


def equivalent_radius(label: np.ndarray, pixel_spacing_mm) -> float:
    """Radius of the circle with the same area as the foreground, mm."""
    spacing = np.atleast_1d(np.asarray(pixel_spacing_mm, dtype=np.float64))
    if spacing.size == 1:
        pixel_area = float(spacing[0]) ** 2
    elif spacing.size == 2:
        pixel_area = float(spacing[0] * spacing[1])
    else:
        raise ValueError("pixel_spacing_mm must be a scalar or a (u, v) pair")
    area = float(np.count_nonzero(label)) * pixel_area
    return float(np.sqrt(area / np.pi))


def gate_slices(
    radii,
    window: int = DEFAULT_WINDOW,
    rel_tolerance: float = DEFAULT_REL_TOLERANCE,
) -> list[SliceVerdict]:
    """Accept or reject each slice against a moving radius estimate.

    The estimate is the mean of the last `window` accepted radii. The
    first `window` slices seed the estimate and are accepted as long as
    they are nonempty; while seeding, each verdict reports the slice's
    own radius as the running estimate since no stable estimate exists
    yet. Radius-0 (empty) slices are always rejected and never enter
    the estimate.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if rel_tolerance < 0:
        raise ValueError("rel_tolerance must be >= 0")
    verdicts: list[SliceVerdict] = []
    accepted_radii: list[float] = []
    for i, radius in enumerate(radii):
        radius = float(radius)
        if radius < 0:
            raise ValueError(f"negative radius at slice {i}")
        tail = accepted_radii[-window:]
        estimate = float(np.mean(tail)) if tail else radius
        if radius == 0.0:
            ok = False
        elif i < window:
            ok = True
            estimate = radius
        else:
            ok = abs(radius - estimate) <= rel_tolerance * estimate
        if ok:
            accepted_radii.append(radius)
        verdicts.append(
            SliceVerdict(
                index=i,
                accepted=ok,
                equivalent_radius_mm=radius,
                running_estimate_mm=estimate,
            )
        )
    return verdicts


def filter_frames(
    labels,
    pixel_spacing_mm,
    window: int = DEFAULT_WINDOW,
    rel_tolerance: float = DEFAULT_REL_TOLERANCE,
) -> tuple[list[np.ndarray], list[SliceVerdict]]:
    """Clean every label raster and gate the sequence.

    Returns the largest-component labels (order preserved, one per
    input) and the per-slice verdicts.
    """
    cleaned = [largest_connected_component(lab) for lab in labels]
    radii = [equivalent_radius(lab, pixel_spacing_mm) for lab in cleaned]
    return cleaned, gate_slices(radii, window=window, rel_tolerance=rel_tolerance)
