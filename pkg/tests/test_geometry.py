import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sweeprecon.geometry import (
    PixelCoord,
    ProbeGeometry,
    RigidTransform,
    calibration_matrix,
    compose_chain,
    pixel_to_world,
    pixels_to_world,
)


def random_rotation(rng):
    # QR of a Gaussian matrix, sign-fixed to det +1
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_rigid(rng):
    return RigidTransform.from_rotation_translation(
        random_rotation(rng), rng.uniform(-100, 100, 3)
    )


def naive_matmul(a, b):
    """Independent 4x4 multiply: explicit triple loop."""
    out = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            s = 0.0
            for k in range(4):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


class TestRigidTransform:
    def test_identity(self):
        t = RigidTransform.identity()
        assert np.array_equal(t.matrix, np.eye(4))

    def test_rejects_bad_last_row(self):
        m = np.eye(4)
        m[3, 0] = 1e-12
        with pytest.raises(ValueError, match="last row"):
            RigidTransform(m)

    def test_rejects_non_orthonormal(self):
        m = np.eye(4)
        m[0, 0] = 1.0 + 1e-6
        with pytest.raises(ValueError, match="orthonormal"):
            RigidTransform(m)

    def test_rejects_reflection(self):
        m = np.eye(4)
        m[0, 0] = -1.0
        with pytest.raises(ValueError, match="determinant"):
            RigidTransform(m)

    def test_rejects_wrong_shape(self):
        with pytest.raises(ValueError, match="4x4"):
            RigidTransform(np.eye(3))

    def test_matrix_is_immutable(self):
        t = RigidTransform.identity()
        with pytest.raises(ValueError):
            t.matrix[0, 0] = 2.0

    def test_inverse_roundtrip(self):
        rng = np.random.default_rng(3)
        t = random_rigid(rng)
        back = t.compose(t.inverse())
        assert np.abs(back.matrix - np.eye(4)).max() < 1e-12

    def test_apply_matches_matrix(self):
        rng = np.random.default_rng(4)
        t = random_rigid(rng)
        pts = rng.uniform(-50, 50, (7, 3))
        hom = np.c_[pts, np.ones(7)]
        expected = (t.matrix @ hom.T).T[:, :3]
        assert np.abs(t.apply(pts) - expected).max() < 1e-12

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_preserves_pairwise_distances(self, seed):
        rng = np.random.default_rng(seed)
        t = random_rigid(rng)
        pts = rng.uniform(-200, 200, (10, 3))
        moved = t.apply(pts)
        d0 = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
        d1 = np.linalg.norm(moved[:, None] - moved[None, :], axis=-1)
        scale = np.maximum(d0, 1.0)
        assert (np.abs(d1 - d0) / scale).max() < 1e-9


class TestComposeChain:
    def test_identity_chain(self):
        i = RigidTransform.identity()
        assert np.array_equal(compose_chain(i, i, np.eye(4)), np.eye(4))

    def test_pure_translation(self):
        t = RigidTransform.from_rotation_translation(np.eye(3), [10.0, 0.0, 0.0])
        i = RigidTransform.identity()
        full = compose_chain(t, i, np.eye(4))
        origin = full @ np.array([0.0, 0.0, 0.0, 1.0])
        assert np.array_equal(origin[:3], [10.0, 0.0, 0.0])

    def test_against_naive_multiply(self):
        rng = np.random.default_rng(11)
        a = random_rigid(rng)
        b = random_rigid(rng)
        cal = np.eye(4)
        cal[:3, :4] = rng.uniform(-2, 2, (3, 4))
        got = compose_chain(a, b, cal)
        want = naive_matmul(naive_matmul(a.matrix, b.matrix), cal)
        assert np.abs(got - want).max() < 1e-12

    def test_rejects_non_rigid_first_link(self):
        bad = np.eye(4)
        bad[0, 1] = 0.5
        with pytest.raises(ValueError):
            compose_chain(bad, RigidTransform.identity(), np.eye(4))

    def test_rejects_non_affine_calibration(self):
        bad = np.eye(4)
        bad[3, 2] = 1.0
        with pytest.raises(ValueError, match="affine"):
            compose_chain(RigidTransform.identity(), RigidTransform.identity(), bad)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_associativity(self, seed):
        rng = np.random.default_rng(seed)
        a = random_rigid(rng).matrix
        b = random_rigid(rng).matrix
        c = np.eye(4)
        c[:3, :4] = rng.uniform(-2, 2, (3, 4))
        assert np.abs((a @ b) @ c - a @ (b @ c)).max() < 1e-12


class TestCalibrationMatrix:
    def test_reference_geometry_entries(self):
        g = ProbeGeometry(
            theta_rad=1.2,
            tip_radius_mm=60.0,
            depth_mm=100.0,
            image_width_px=512,
            image_height_px=512,
        )
        m = calibration_matrix(g)
        # frozen from scalar arithmetic: w = 320 sin 0.6, h = 60(1 - cos 0.6)
        assert m[0, 0] == pytest.approx(0.3529015458718971, abs=1e-12)
        assert m[0, 3] == pytest.approx(-90.34279574320566, abs=1e-12)
        assert m[2, 1] == pytest.approx(0.1953125, abs=0)
        assert m[2, 3] == pytest.approx(-10.479863105419298, abs=1e-12)
        assert m[1, 2] == -1.0
        # every other entry is zero apart from the homogeneous 1
        mask = np.zeros((4, 4), bool)
        for idx in [(0, 0), (0, 3), (2, 1), (2, 3), (1, 2), (3, 3)]:
            mask[idx] = True
        assert np.all(m[~mask] == 0.0)
        assert m[3, 3] == 1.0

    def test_center_column_maps_to_zero_lateral(self):
        g = ProbeGeometry(1.2, 60.0, 100.0, 512, 512)
        m = calibration_matrix(g)
        x = m @ np.array([256.0, 10.0, 0.0, 1.0])
        assert abs(x[0]) < 1e-9

    def test_small_aperture_limit(self):
        g = ProbeGeometry(1e-9, 60.0, 100.0, 512, 512)
        m = calibration_matrix(g)
        for u in [0.0, 256.0, 511.0]:
            x = m @ np.array([u, 0.0, 0.0, 1.0])
            assert abs(x[0]) < 1e-6

    def test_depth_increases_down_rows(self):
        g = ProbeGeometry(0.6, 60.0, 100.0, 128, 128)
        m = calibration_matrix(g)
        top = m @ np.array([64.0, 0.0, 0.0, 1.0])
        bottom = m @ np.array([64.0, 127.0, 0.0, 1.0])
        assert bottom[2] > top[2]
        assert bottom[2] - top[2] == pytest.approx(100.0 * 127 / 128, rel=1e-12)

    @given(
        st.floats(0.1, 3.0),
        st.floats(5.0, 120.0),
        st.floats(20.0, 200.0),
        st.integers(2, 1024),
        st.integers(2, 1024),
    )
    @settings(max_examples=100, deadline=None)
    def test_width_span(self, theta, r, d, wpx, hpx):
        # the continuous image, u from 0 to W, spans exactly w laterally
        g = ProbeGeometry(theta, r, d, wpx, hpx)
        m = calibration_matrix(g)
        left = m @ np.array([0.0, hpx - 1.0, 0.0, 1.0])
        right = m @ np.array([float(wpx), hpx - 1.0, 0.0, 1.0])
        span = np.linalg.norm(right[:3] - left[:3])
        assert span == pytest.approx(g.fan_width_mm, rel=1e-9)


class TestPixelToWorld:
    def test_identity_everything(self):
        g = ProbeGeometry(1.2, 60.0, 100.0, 512, 512)
        p = pixel_to_world(RigidTransform.identity(), np.eye(4), PixelCoord(0, 0), g)
        assert np.array_equal(p, [0.0, 0.0, 0.0])

    def test_translation_adds_to_calibrated_point(self):
        g = ProbeGeometry(1.2, 60.0, 100.0, 512, 512)
        cal = calibration_matrix(g)
        shift = np.array([5.0, -7.0, 11.0])
        pose = RigidTransform.from_rotation_translation(np.eye(3), shift)
        p = PixelCoord(100, 200)
        base = cal @ np.array([100.0, 200.0, 0.0, 1.0])
        got = pixel_to_world(pose, cal, p, g)
        assert np.abs(got - (base[:3] + shift)).max() < 1e-12

    def test_corners_span_width_and_depth(self):
        g = ProbeGeometry(1.2, 60.0, 100.0, 512, 512)
        cal = calibration_matrix(g)
        pose = RigidTransform.identity()
        corners = [
            pixel_to_world(pose, cal, PixelCoord(u, v), g)
            for u, v in [(0, 0), (511, 0), (0, 511), (511, 511)]
        ]
        corners = np.array(corners)
        # all distinct
        for i in range(4):
            for j in range(i + 1, 4):
                assert np.linalg.norm(corners[i] - corners[j]) > 1.0
        lateral = corners[:, 0].max() - corners[:, 0].min()
        axial = corners[:, 2].max() - corners[:, 2].min()
        assert lateral == pytest.approx(g.fan_width_mm * 511 / 512, rel=1e-9)
        assert axial == pytest.approx(100.0 * 511 / 512, rel=1e-9)

    def test_out_of_bounds_rejected(self):
        g = ProbeGeometry(1.2, 60.0, 100.0, 512, 512)
        with pytest.raises(ValueError, match="outside"):
            pixel_to_world(
                RigidTransform.identity(), np.eye(4), PixelCoord(512, 0), g
            )

    def test_vectorized_matches_scalar(self):
        g = ProbeGeometry(0.9, 50.0, 80.0, 64, 64)
        cal = calibration_matrix(g)
        rng = np.random.default_rng(8)
        pose = random_rigid(rng)
        uv = rng.uniform(0, 63, (20, 2))
        batch = pixels_to_world(pose, cal, uv)
        for k in range(20):
            single = pixel_to_world(pose, cal, PixelCoord(*uv[k]), g)
            assert np.abs(batch[k] - single).max() < 1e-12
