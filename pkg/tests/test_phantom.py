import numpy as np
import pytest

from sweeprecon.geometry import ProbeGeometry, RigidTransform
from sweeprecon.phantom import (
    PROBE_ROTATION,
    BreathingModel,
    CorruptionSpec,
    NavParams,
    PhantomSpec,
    breathing_displacement,
    corrupt_segmentation,
    render_slice,
    simulate_sweep,
    straight_tube_phantom,
)

PROBE = ProbeGeometry(
    theta_rad=0.6, tip_radius_mm=60.0, depth_mm=100.0, image_width_px=128, image_height_px=128
)


def frame_pose(x, y, z):
    return RigidTransform.from_rotation_translation(PROBE_ROTATION, [x, y, z])


def bfs_component_count(label):
    """Count 4-connected components by explicit flood fill."""
    label = np.asarray(label) != 0
    seen = np.zeros_like(label, dtype=bool)
    count = 0
    h, w = label.shape
    for r in range(h):
        for c in range(w):
            if label[r, c] and not seen[r, c]:
                count += 1
                stack = [(r, c)]
                seen[r, c] = True
                while stack:
                    rr, cc = stack.pop()
                    for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        nr, nc = rr + dr, cc + dc
                        if 0 <= nr < h and 0 <= nc < w and label[nr, nc] and not seen[nr, nc]:
                            seen[nr, nc] = True
                            stack.append((nr, nc))
    return count


class TestPhantomSpec:
    def test_rejects_nonpositive_radius(self):
        with pytest.raises(ValueError, match="positive"):
            straight_tube_phantom(radius_mm=5.0, bulge_amplitude_mm=-6.0)

    def test_rejects_vessel_outside_extent(self):
        with pytest.raises(ValueError, match="extent"):
            straight_tube_phantom(radius_mm=10.0, length_mm=500.0)

    def test_capsule_end_caps(self):
        spec = straight_tube_phantom(radius_mm=10.0, length_mm=150.0)
        assert spec.inside([[0.0, -40.0, -5.0]])[0]
        assert not spec.inside([[0.0, -40.0, -11.0]])[0]
        assert spec.inside([[0.0, -40.0, 155.0]])[0]

    def test_bulge_radius_profile(self):
        spec = straight_tube_phantom(
            radius_mm=10.0, bulge_amplitude_mm=5.0, bulge_center_mm=75.0, bulge_sigma_mm=8.0
        )
        assert spec.radius_profile(75.0) == pytest.approx(15.0)
        assert spec.radius_profile(0.0) == pytest.approx(10.0, abs=1e-6)

    def test_nearest_arclength_straight(self):
        spec = straight_tube_phantom()
        dist, s = spec.nearest_on_centerline([[3.0, -44.0, 60.0]])
        assert dist[0] == pytest.approx(5.0)
        assert s[0] == pytest.approx(60.0)


class TestRenderSlice:
    def test_disc_area_matches_circle(self):
        spec = straight_tube_phantom(radius_mm=10.0)
        _, label = render_slice(spec, frame_pose(0.0, 0.0, 75.0), PROBE, 0.0, 1)
        su, sv = PROBE.pixel_spacing_mm
        area = label.sum() * su * sv
        assert area == pytest.approx(np.pi * 100.0, rel=0.05)

    def test_centroid_shifts_by_displacement(self):
        spec = straight_tube_phantom(radius_mm=10.0)
        pose = frame_pose(0.0, 0.0, 75.0)
        _, lab0 = render_slice(spec, pose, PROBE, 0.0, 1)
        _, lab8 = render_slice(spec, pose, PROBE, 8.0, 1)
        _, sv = PROBE.pixel_spacing_mm
        v0 = np.nonzero(lab0)[0].mean()
        v8 = np.nonzero(lab8)[0].mean()
        # phantom moved +8mm anteroposterior; world y decreases with row v
        shift = (v0 - v8) * sv
        assert shift == pytest.approx(8.0, abs=sv)

    def test_noiseless_intensity_two_valued(self):
        spec = straight_tube_phantom(speckle_sigma=0.0)
        inten, _ = render_slice(spec, frame_pose(0.0, 0.0, 75.0), PROBE, 0.0, 1)
        assert set(np.unique(inten)) == {spec.background_intensity, spec.vessel_intensity}

    def test_plane_outside_extent_all_background(self):
        spec = straight_tube_phantom()
        inten, label = render_slice(spec, frame_pose(0.0, 0.0, 300.0), PROBE, 0.0, 1)
        assert label.sum() == 0
        assert inten.shape == (128, 128)

    def test_label_matches_closed_form_tube_test(self):
        # straight tube: inside iff x^2 + (y+40)^2 <= r^2, away from the caps
        spec = straight_tube_phantom(radius_mm=10.0)
        pose = frame_pose(2.0, 1.0, 75.0)
        disp = 3.0
        _, label = render_slice(spec, pose, PROBE, disp, 1)
        su, sv = PROBE.pixel_spacing_mm
        w = PROBE.fan_width_mm
        h = PROBE.height_offset_mm
        expected = np.zeros_like(label)
        for v in range(128):
            for u in range(128):
                x = 2.0 + su * u - w / 2.0
                y = 1.0 - (sv * v - h) - disp
                expected[v, u] = x * x + (y + 40.0) ** 2 <= 100.0
        assert np.array_equal(label, expected)


class TestBreathing:
    def test_exhale_is_zero(self):
        m = BreathingModel(amplitude_mm=8.0, period_s=4.0, phase_rad=0.0)
        assert breathing_displacement(m, 0.0) == 0.0
        assert breathing_displacement(m, 4.0) == pytest.approx(0.0, abs=1e-12)

    def test_inhale_is_amplitude(self):
        m = BreathingModel(amplitude_mm=8.0, period_s=4.0)
        assert breathing_displacement(m, 2.0) == pytest.approx(8.0)

    @pytest.mark.parametrize("phase", [0.0, 1.0, np.pi / 2])
    def test_mean_over_period_is_half_amplitude(self, phase):
        m = BreathingModel(amplitude_mm=8.0, period_s=4.0, phase_rad=phase)
        t = np.linspace(0.0, 4.0, 100001)
        mean = np.trapezoid(breathing_displacement(m, t), t) / 4.0
        assert mean == pytest.approx(4.0, abs=1e-9)

    def test_nonnegative(self):
        m = BreathingModel(amplitude_mm=8.0, period_s=4.0, phase_rad=2.3)
        t = np.linspace(0, 20, 5001)
        assert np.all(breathing_displacement(m, t) >= 0)


class TestCorruption:
    def make_label(self):
        spec = straight_tube_phantom(radius_mm=10.0)
        _, label = render_slice(spec, frame_pose(0.0, 0.0, 75.0), PROBE, 0.0, 1)
        return label

    def test_zero_fraction_is_identity(self):
        label = self.make_label()
        out, flag = corrupt_segmentation(label, CorruptionSpec(fraction_corrupted=0.0), 0)
        assert out is label and not flag

    def test_dropout_zeroes_label(self):
        label = self.make_label()
        spec = CorruptionSpec(fraction_corrupted=1.0, modes=("dropout",))
        out, flag = corrupt_segmentation(label, spec, 0)
        assert flag and out.sum() == 0

    def test_spurious_blob_adds_disjoint_component(self):
        label = self.make_label()
        spec = CorruptionSpec(fraction_corrupted=1.0, modes=("spurious_blob",), rng_seed=5)
        out, flag = corrupt_segmentation(label, spec, 0)
        assert flag
        assert bfs_component_count(label) == 1
        assert bfs_component_count(out) == 2
        # original vessel pixels are untouched
        assert np.all(out[label == 1] == 1)

    def test_blob_is_larger_than_vessel(self):
        label = self.make_label()
        spec = CorruptionSpec(fraction_corrupted=1.0, modes=("spurious_blob",), rng_seed=5)
        out, _ = corrupt_segmentation(label, spec, 0)
        blob_area = out.sum() - label.sum()
        assert blob_area > 1.3**2 * label.sum() * 0.9

    def test_dilation_grows_area_by_factor_squared(self):
        label = self.make_label()
        spec = CorruptionSpec(
            fraction_corrupted=1.0, modes=("dilation_error",), dilation_factor=1.5
        )
        out, flag = corrupt_segmentation(label, spec, 0)
        assert flag
        assert out.sum() / label.sum() == pytest.approx(2.25, rel=0.1)

    def test_empty_label_untouched(self):
        empty = np.zeros((32, 32), np.uint8)
        out, flag = corrupt_segmentation(empty, CorruptionSpec(fraction_corrupted=1.0), 0)
        assert not flag and out.sum() == 0

    def test_reproducible_per_index(self):
        label = self.make_label()
        spec = CorruptionSpec(fraction_corrupted=1.0, rng_seed=9)
        a, _ = corrupt_segmentation(label, spec, 4)
        b, _ = corrupt_segmentation(label, spec, 4)
        assert np.array_equal(a, b)


NAV = NavParams()
NO_CORRUPTION = CorruptionSpec(fraction_corrupted=0.0)


class TestSimulateSweep:
    def test_servo_centers_vessel(self):
        spec = straight_tube_phantom(speckle_sigma=0.0)
        model = BreathingModel(amplitude_mm=8.0, period_s=4.0)
        bundle = simulate_sweep(spec, PROBE, NAV, model, NO_CORRUPTION, "breath_hold", seed=2)
        center = (PROBE.image_width_px - 1) / 2.0
        for f in bundle.frames[3:]:
            centroid_u = np.nonzero(f.label)[1].mean()
            assert abs(centroid_u - center) <= 2.0

    def test_zero_amplitude_modes_agree(self):
        spec = straight_tube_phantom(speckle_sigma=0.0)
        model = BreathingModel(amplitude_mm=0.0, period_s=4.0)
        bh = simulate_sweep(spec, PROBE, NAV, model, NO_CORRUPTION, "breath_hold", seed=2)
        fb = simulate_sweep(spec, PROBE, NAV, model, NO_CORRUPTION, "free_breathing", seed=2)
        assert len(bh.frames) == len(fb.frames)
        for a, b in zip(bh.frames, fb.frames):
            assert np.array_equal(a.pose.matrix, b.pose.matrix)
            assert np.array_equal(a.label, b.label)
            assert a.timestamp_s == b.timestamp_s

    def test_curved_tube_is_tracked(self):
        z = np.arange(0.0, 151.0, 5.0)
        centerline = np.c_[6.0 * np.sin(np.pi * z / 150.0), np.full_like(z, -40.0), z]
        spec = PhantomSpec(centerline=centerline, base_radius_mm=10.0, speckle_sigma=0.0)
        model = BreathingModel(amplitude_mm=0.0)
        bundle = simulate_sweep(spec, PROBE, NAV, model, NO_CORRUPTION, "free_breathing", seed=3)
        worst = 0.0
        for f in bundle.frames[5:]:
            tz = f.pose.translation[2]
            expected_x = 6.0 * np.sin(np.pi * min(tz, 150.0) / 150.0)
            worst = max(worst, abs(f.pose.translation[0] - expected_x))
        assert worst < 5.0

    def test_bit_reproducible(self):
        spec = straight_tube_phantom()
        model = BreathingModel(amplitude_mm=8.0)
        corr = CorruptionSpec(fraction_corrupted=0.2, rng_seed=11)
        a = simulate_sweep(spec, PROBE, NAV, model, corr, "free_breathing", seed=7)
        b = simulate_sweep(spec, PROBE, NAV, model, corr, "free_breathing", seed=7)
        assert len(a.frames) == len(b.frames)
        for fa, fb in zip(a.frames, b.frames):
            assert np.array_equal(fa.pose.matrix, fb.pose.matrix)
            assert np.array_equal(fa.intensity, fb.intensity)
            assert np.array_equal(fa.label, fb.label)
        assert np.array_equal(a.corrupted_flags, b.corrupted_flags)
        assert np.array_equal(a.displacements_mm, b.displacements_mm)

    def test_breath_hold_respects_threshold(self):
        spec = straight_tube_phantom()
        model = BreathingModel(amplitude_mm=8.0, period_s=4.0)
        bundle = simulate_sweep(spec, PROBE, NAV, model, NO_CORRUPTION, "breath_hold", seed=2)
        assert np.all(bundle.displacements_mm < 0.05 * 8.0)
        # free breathing covers the full displacement range instead
        fb = simulate_sweep(spec, PROBE, NAV, model, NO_CORRUPTION, "free_breathing", seed=2)
        assert fb.displacements_mm.max() > 7.0

    def test_timestamps_on_tick_grid(self):
        spec = straight_tube_phantom()
        model = BreathingModel(amplitude_mm=8.0)
        for mode in ("breath_hold", "free_breathing"):
            bundle = simulate_sweep(spec, PROBE, NAV, model, NO_CORRUPTION, mode, seed=2)
            ts = np.array([f.timestamp_s for f in bundle.frames])
            ticks = ts / NAV.frame_interval_s
            assert np.abs(ticks - np.round(ticks)).max() < 1e-9
            if mode == "free_breathing":
                assert np.allclose(np.diff(ts), NAV.frame_interval_s, atol=1e-12)

    def test_labels_match_analytic_tube_without_corruption(self):
        spec = straight_tube_phantom(radius_mm=10.0)
        model = BreathingModel(amplitude_mm=8.0)
        bundle = simulate_sweep(spec, PROBE, NAV, model, NO_CORRUPTION, "free_breathing", seed=2)
        su, sv = PROBE.pixel_spacing_mm
        w = PROBE.fan_width_mm
        hoff = PROBE.height_offset_mm
        for f in bundle.frames[:: len(bundle.frames) // 4]:
            tx, ty, tz = f.pose.translation
            disp = bundle.displacements_mm[f.index]
            if not (10.0 < tz < 140.0):
                continue
            u = np.arange(128.0)
            v = np.arange(128.0)
            x = tx + su * u - w / 2.0
            y = (ty - disp) - (sv * v - hoff)
            inside = (x[None, :] ** 2 + (y[:, None] + 40.0) ** 2) <= 100.0
            assert np.array_equal(f.label.astype(bool), inside)

    def test_sweep_covers_tube_length(self):
        spec = straight_tube_phantom(length_mm=150.0)
        model = BreathingModel(amplitude_mm=8.0)
        bundle = simulate_sweep(spec, PROBE, NAV, model, NO_CORRUPTION, "free_breathing", seed=2)
        zs = np.array([f.pose.translation[2] for f in bundle.frames])
        assert zs[0] == 0.0
        assert zs[-1] > 150.0
        assert not bundle.warning

    def test_max_frames_sets_warning(self):
        spec = straight_tube_phantom()
        model = BreathingModel(amplitude_mm=0.0)
        nav = NavParams(max_frames=10)
        bundle = simulate_sweep(spec, PROBE, nav, model, NO_CORRUPTION, "free_breathing", seed=2)
        assert bundle.warning and len(bundle.frames) == 10

    def test_ap_signal_equals_displacement(self):
        spec = straight_tube_phantom()
        model = BreathingModel(amplitude_mm=8.0)
        bundle = simulate_sweep(spec, PROBE, NAV, model, NO_CORRUPTION, "free_breathing", seed=2)
        assert np.abs(bundle.ap_signal() - bundle.displacements_mm).max() < 1e-12
