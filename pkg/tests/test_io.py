import json
import os

import numpy as np
import pytest

from sweeprecon.bundleio import read_bundle, write_bundle
from sweeprecon.errors import DataError
from sweeprecon.geometry import ProbeGeometry
from sweeprecon.meshio import (
    read_mesh_ply,
    read_volume_raw,
    write_mesh_ply,
    write_volume_raw,
)
from sweeprecon.phantom import (
    BreathingModel,
    CorruptionSpec,
    NavParams,
    simulate_sweep,
    straight_tube_phantom,
)
from sweeprecon.recon import ScalarField, TriangleMesh

PROBE = ProbeGeometry(0.6, 60.0, 100.0, 32, 32)


@pytest.fixture(scope="module")
def bundle():
    spec = straight_tube_phantom(10.0, 30.0)
    return simulate_sweep(
        spec, PROBE, NavParams(), BreathingModel(amplitude_mm=8.0),
        CorruptionSpec(fraction_corrupted=0.3), "free_breathing", seed=3,
    )


@pytest.fixture()
def bundle_dir(bundle, tmp_path):
    write_bundle(bundle, tmp_path)
    return tmp_path


def tamper_manifest(directory, mutate):
    path = os.path.join(directory, "manifest.json")
    with open(path) as fh:
        manifest = json.load(fh)
    mutate(manifest)
    with open(path, "w") as fh:
        json.dump(manifest, fh)


def tetra_mesh():
    vertices = np.array([
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
    ])
    faces = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return TriangleMesh(vertices, faces)


class TestBundleRoundtrip:
    def test_poses_recovered(self, bundle, bundle_dir):
        back = read_bundle(bundle_dir)
        for orig, got in zip(bundle.frames, back.frames):
            assert np.allclose(orig.pose.matrix, got.pose.matrix, atol=1e-9)

    def test_rasters_and_timestamps(self, bundle, bundle_dir):
        back = read_bundle(bundle_dir)
        for orig, got in zip(bundle.frames, back.frames):
            assert np.array_equal(orig.label, got.label)
            # intensity is quantized to 8 bits on write, deliberately lossy
            assert np.array_equal(np.round(orig.intensity * 255.0) / 255.0,
                                  got.intensity)
            assert orig.timestamp_s == got.timestamp_s
            assert orig.index == got.index

    def test_metadata_recovered(self, bundle, bundle_dir):
        back = read_bundle(bundle_dir)
        assert back.mode == bundle.mode
        assert back.seed == bundle.seed
        assert back.warning == bundle.warning
        assert back.probe == bundle.probe
        assert back.breathing == bundle.breathing
        assert np.array_equal(back.corrupted_flags, bundle.corrupted_flags)
        assert np.array_equal(back.displacements_mm, bundle.displacements_mm)

    def test_rewrite_is_byte_identical(self, bundle_dir, tmp_path_factory):
        other = tmp_path_factory.mktemp("rewrite")
        write_bundle(read_bundle(bundle_dir), other)
        names = sorted(os.listdir(bundle_dir))
        assert names == sorted(os.listdir(other))
        for name in names:
            with open(os.path.join(bundle_dir, name), "rb") as fh:
                first = fh.read()
            with open(os.path.join(other, name), "rb") as fh:
                assert first == fh.read(), name

    def test_manifest_is_sorted_json(self, bundle_dir):
        with open(os.path.join(bundle_dir, "manifest.json")) as fh:
            manifest = json.load(fh)
        assert manifest["frame_count"] == len(manifest["frames"])
        assert list(manifest) == sorted(manifest)


class TestBundleErrors:
    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="manifest"):
            read_bundle(tmp_path)

    def test_unparseable_manifest(self, tmp_path):
        (tmp_path / "manifest.json").write_text("{not json")
        with pytest.raises(DataError):
            read_bundle(tmp_path)

    def test_missing_version(self, bundle_dir):
        tamper_manifest(bundle_dir, lambda m: m.pop("version"))
        with pytest.raises(DataError, match="version"):
            read_bundle(bundle_dir)

    def test_unsupported_version(self, bundle_dir):
        tamper_manifest(bundle_dir, lambda m: m.update(version=99))
        with pytest.raises(DataError, match="version"):
            read_bundle(bundle_dir)

    def test_frame_count_mismatch(self, bundle_dir):
        tamper_manifest(bundle_dir, lambda m: m.update(frame_count=7))
        with pytest.raises(DataError, match="frame"):
            read_bundle(bundle_dir)

    def test_truncated_raster(self, bundle_dir):
        target = os.path.join(bundle_dir, "frame_00000_intensity.raw")
        with open(target, "rb") as fh:
            payload = fh.read()
        with open(target, "wb") as fh:
            fh.write(payload[:-5])
        with pytest.raises(DataError):
            read_bundle(bundle_dir)

    def test_nonrigid_pose_rejected(self, bundle_dir):
        def scale_first_pose(m):
            pose = m["frames"][0]["pose"]
            m["frames"][0]["pose"] = [2.0 * v for v in pose[:4]] + pose[4:]

        tamper_manifest(bundle_dir, scale_first_pose)
        with pytest.raises(DataError, match="rigid"):
            read_bundle(bundle_dir)

    def test_short_pose_rejected(self, bundle_dir):
        tamper_manifest(bundle_dir,
                        lambda m: m["frames"][0].update(pose=[1.0] * 15))
        with pytest.raises(DataError, match="pose"):
            read_bundle(bundle_dir)

    def test_nonbinary_label_rejected(self, bundle_dir):
        target = os.path.join(bundle_dir, "frame_00000_label.raw")
        with open(target, "rb") as fh:
            payload = bytearray(fh.read())
        payload[0] = 7
        with open(target, "wb") as fh:
            fh.write(bytes(payload))
        with pytest.raises(DataError):
            read_bundle(bundle_dir)

    def test_ground_truth_length_mismatch(self, bundle_dir):
        tamper_manifest(bundle_dir,
                        lambda m: m.update(corrupted_flags=m["corrupted_flags"][:-1]))
        with pytest.raises(DataError):
            read_bundle(bundle_dir)


class TestMeshPly:
    def test_roundtrip_exact(self, tmp_path):
        mesh = tetra_mesh()
        normals = mesh.vertex_normals()
        path = tmp_path / "tetra.ply"
        write_mesh_ply(path, mesh, grid_resolution_mm=1.5, normals=normals)
        back, got_normals, resolution = read_mesh_ply(path)
        assert np.array_equal(back.vertices, mesh.vertices)
        assert np.array_equal(back.faces, mesh.faces)
        assert np.array_equal(got_normals, normals)
        assert resolution == 1.5

    def test_default_normals_are_vertex_normals(self, tmp_path):
        mesh = tetra_mesh()
        path = tmp_path / "tetra.ply"
        write_mesh_ply(path, mesh)
        _, normals, resolution = read_mesh_ply(path)
        assert np.array_equal(normals, mesh.vertex_normals())
        assert resolution is None

    def test_empty_mesh_roundtrip(self, tmp_path):
        mesh = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.intp))
        path = tmp_path / "empty.ply"
        write_mesh_ply(path, mesh)
        back, normals, _ = read_mesh_ply(path)
        assert len(back.vertices) == 0
        assert len(back.faces) == 0

    def test_positions_only_file(self, tmp_path):
        path = tmp_path / "bare.ply"
        path.write_text(
            "ply\nformat ascii 1.0\n"
            "element vertex 3\n"
            "property double x\nproperty double y\nproperty double z\n"
            "element face 1\n"
            "property list uchar int vertex_indices\nend_header\n"
            "0 0 0\n1 0 0\n0 1 0\n"
            "3 0 1 2\n"
        )
        mesh, normals, resolution = read_mesh_ply(path)
        assert normals is None
        assert resolution is None
        assert mesh.vertices.shape == (3, 3)
        assert mesh.faces.tolist() == [[0, 1, 2]]

    def test_float_properties_accepted(self, tmp_path):
        path = tmp_path / "single.ply"
        path.write_text(
            "ply\nformat ascii 1.0\n"
            "element vertex 3\n"
            "property float x\nproperty float y\nproperty float z\n"
            "element face 1\n"
            "property list uchar int vertex_indices\nend_header\n"
            "0.5 0 0\n1 0.25 0\n0 1 0.125\n"
            "3 0 1 2\n"
        )
        mesh, _, _ = read_mesh_ply(path)
        assert mesh.vertices[0, 0] == 0.5

    @pytest.mark.parametrize("header", [
        "ascii_art\nformat ascii 1.0\n",
        "ply\nformat binary_little_endian 1.0\n",
        "ply\nformat ascii 1.0\nelement edge 3\n",
    ])
    def test_bad_headers_rejected(self, tmp_path, header):
        path = tmp_path / "bad.ply"
        path.write_text(header + "end_header\n")
        with pytest.raises(DataError):
            read_mesh_ply(path)

    def test_missing_coordinate_property(self, tmp_path):
        path = tmp_path / "noy.ply"
        path.write_text(
            "ply\nformat ascii 1.0\n"
            "element vertex 1\n"
            "property double x\nproperty double z\n"
            "element face 0\n"
            "property list uchar int vertex_indices\nend_header\n"
            "0 0\n"
        )
        with pytest.raises(DataError):
            read_mesh_ply(path)

    def test_quad_face_rejected(self, tmp_path):
        path = tmp_path / "quad.ply"
        path.write_text(
            "ply\nformat ascii 1.0\n"
            "element vertex 4\n"
            "property double x\nproperty double y\nproperty double z\n"
            "element face 1\n"
            "property list uchar int vertex_indices\nend_header\n"
            "0 0 0\n1 0 0\n1 1 0\n0 1 0\n"
            "4 0 1 2 3\n"
        )
        with pytest.raises(DataError):
            read_mesh_ply(path)

    def test_truncated_vertices_rejected(self, tmp_path):
        path = tmp_path / "short.ply"
        path.write_text(
            "ply\nformat ascii 1.0\n"
            "element vertex 4\n"
            "property double x\nproperty double y\nproperty double z\n"
            "element face 0\n"
            "property list uchar int vertex_indices\nend_header\n"
            "0 0 0\n1 0 0\n"
        )
        with pytest.raises(DataError):
            read_mesh_ply(path)


class TestVolumeRaw:
    def test_roundtrip(self, tmp_path):
        values = np.random.default_rng(0).normal(size=(4, 5, 6))
        field = ScalarField(values, origin=np.array([1.0, -2.0, 3.5]),
                            spacing_mm=0.5)
        path = tmp_path / "field.raw"
        write_volume_raw(path, field)
        back = read_volume_raw(path)
        assert np.array_equal(back.values, field.values)
        assert np.array_equal(back.origin, field.origin)
        assert back.spacing_mm == field.spacing_mm

    def test_sidecar_records_dims(self, tmp_path):
        field = ScalarField(np.zeros((2, 3, 4)), origin=np.zeros(3),
                            spacing_mm=1.0)
        path = tmp_path / "field.raw"
        write_volume_raw(path, field)
        with open(f"{path}.json") as fh:
            meta = json.load(fh)
        assert meta["dims"] == [2, 3, 4]
        assert meta["dtype"] == "float64"

    def test_missing_sidecar(self, tmp_path):
        path = tmp_path / "field.raw"
        path.write_bytes(b"\x00" * 8)
        with pytest.raises(DataError, match="sidecar"):
            read_volume_raw(path)

    def test_size_mismatch(self, tmp_path):
        field = ScalarField(np.zeros((2, 3, 4)), origin=np.zeros(3),
                            spacing_mm=1.0)
        path = tmp_path / "field.raw"
        write_volume_raw(path, field)
        with open(path, "ab") as fh:
            fh.write(b"\x00" * 8)
        with pytest.raises(DataError, match="bytes"):
            read_volume_raw(path)
