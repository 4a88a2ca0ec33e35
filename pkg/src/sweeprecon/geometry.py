"""Rigid transforms, probe calibration, and pixel-to-world mapping.

Conventions used throughout the package: lengths in mm, angles in radians,
matrices row-major 4x4 homogeneous, double precision. World axes:
x = lateral (transverse), y = anteroposterior (up, toward the probe),
z = longitudinal (sweep direction).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHONORMALITY_TOL = 1e-9

# Index of the anteroposterior axis in world coordinates.
AP_AXIS = 1


def _as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (4, 4):
        raise ValueError(f"expected a 4x4 matrix, got shape {m.shape}")
    return m


@dataclass(frozen=True)
class RigidTransform:
    """A proper rigid transform (rotation + translation), immutable.

    The 4x4 matrix maps homogeneous column vectors; the upper-left 3x3
    block must be orthonormal with determinant +1 and the last row must
    be exactly (0, 0, 0, 1).
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = _as_matrix(self.matrix).copy()
        if not np.all(np.isfinite(m)):
            raise ValueError("rigid transform contains non-finite entries")
        if not np.array_equal(m[3], np.array([0.0, 0.0, 0.0, 1.0])):
            raise ValueError("last row of a rigid transform must be (0,0,0,1)")
        r = m[:3, :3]
        residual = np.abs(r.T @ r - np.eye(3)).max()
        if residual > ORTHONORMALITY_TOL:
            raise ValueError(
                f"rotation block not orthonormal (residual {residual:.3e})"
            )
        det = np.linalg.det(r)
        if abs(det - 1.0) > 1e-6:
            raise ValueError(f"rotation block has determinant {det:.6f}, not +1")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(4))

    @classmethod
    def from_rotation_translation(cls, rotation, translation) -> "RigidTransform":
        m = np.eye(4)
        m[:3, :3] = np.asarray(rotation, dtype=np.float64)
        m[:3, 3] = np.asarray(translation, dtype=np.float64)
        return cls(m)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(self.matrix @ other.matrix)

    def inverse(self) -> "RigidTransform":
        r = self.rotation.T
        m = np.eye(4)
        m[:3, :3] = r
        m[:3, 3] = -r @ self.translation
        return RigidTransform(m)

    def apply(self, points) -> np.ndarray:
        """Transform an (..., 3) array of points."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation


@dataclass(frozen=True)
class ProbeGeometry:
    """Convex probe imaging geometry.

    theta is the opening angle of the fan, tip_radius_mm the distance from
    the probe origin to its tip, depth_mm the user-selected imaging depth.
    """

    theta_rad: float
    tip_radius_mm: float
    depth_mm: float
    image_width_px: int
    image_height_px: int

    def __post_init__(self):
        if not (0.0 < self.theta_rad < np.pi):
            raise ValueError(f"opening angle must be in (0, pi), got {self.theta_rad}")
        if self.tip_radius_mm <= 0 or self.depth_mm <= 0:
            raise ValueError("tip radius and depth must be positive")
        if self.image_width_px < 2 or self.image_height_px < 2:
            raise ValueError("image must be at least 2x2 pixels")

    @property
    def fan_width_mm(self) -> float:
        """Lateral extent w spanned by the image."""
        big_r = self.depth_mm + self.tip_radius_mm
        return 2.0 * big_r * np.sin(self.theta_rad / 2.0)

    @property
    def height_offset_mm(self) -> float:
        """Offset h from the probe tip to the image origin."""
        r = self.tip_radius_mm
        return r - r * np.cos(self.theta_rad / 2.0)

    @property
    def pixel_spacing_mm(self) -> tuple[float, float]:
        """(lateral, axial) size of one pixel in mm."""
        return (
            self.fan_width_mm / self.image_width_px,
            self.depth_mm / self.image_height_px,
        )


@dataclass(frozen=True)
class PixelCoord:
    """A pixel location: u is the column index, v the row index."""

    u: float
    v: float


def compose_chain(wte, etp, pti) -> np.ndarray:
    """Full chain world <- end-effector <- probe <- image.

    The first two links must be rigid; the last is the calibration, which
    is a general affine (it scales pixels to mm). Evaluated strictly
    left-to-right so repeated calls are bitwise reproducible.
    """
    if not isinstance(wte, RigidTransform):
        wte = RigidTransform(wte)
    if not isinstance(etp, RigidTransform):
        etp = RigidTransform(etp)
    pti = _as_matrix(pti)
    if not np.array_equal(pti[3], np.array([0.0, 0.0, 0.0, 1.0])):
        raise ValueError("calibration matrix must be affine (last row 0,0,0,1)")
    return (wte.matrix @ etp.matrix) @ pti


def calibration_matrix(g: ProbeGeometry) -> np.ndarray:
    """Pixel-to-mm mapping of the probe image.

    Maps homogeneous pixel coordinates (u, v, 0, 1) into the probe frame:
    u scales linearly across the fan width w and is centered, v scales down
    the imaging depth, offset by the tip-to-image-origin height h.
    """
    w = g.fan_width_mm
    h = g.height_offset_mm
    m = np.array(
        [
            [w / g.image_width_px, 0.0, 0.0, -w / 2.0],
            [0.0, 0.0, -1.0, 0.0],
            [0.0, g.depth_mm / g.image_height_px, 0.0, -h],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    return m


def pixel_to_world(
    frame_pose: RigidTransform, cal: np.ndarray, p: PixelCoord, g: ProbeGeometry
) -> np.ndarray:
    """World-space position (mm) of one pixel of a posed frame."""
    if not (0 <= p.u <= g.image_width_px - 1 and 0 <= p.v <= g.image_height_px - 1):
        raise ValueError(
            f"pixel ({p.u}, {p.v}) outside image "
            f"{g.image_width_px}x{g.image_height_px}"
        )
    full = frame_pose.matrix @ _as_matrix(cal)
    vec = full @ np.array([p.u, p.v, 0.0, 1.0])
    return vec[:3]


def pixels_to_world(frame_pose: RigidTransform, cal: np.ndarray, uv) -> np.ndarray:
    """Vectorized pixel-to-world for an (N, 2) array of (u, v) coordinates.

    No bounds checking; callers own raster iteration.
    """
    uv = np.asarray(uv, dtype=np.float64)
    full = frame_pose.matrix @ _as_matrix(cal)
    n = uv.shape[0]
    hom = np.zeros((n, 4))
    hom[:, 0] = uv[:, 0]
    hom[:, 1] = uv[:, 1]
    hom[:, 3] = 1.0
    return hom @ full.T[:, :3]
