"""
Test cases for icosphere geometry, point location, resampling and the surface codecs
"""

import numpy as np
import pytest

from corticast.core.errors import FormatError, InvalidArgumentError, SchemaError
from corticast.schemas.mesh import BarycentricHit, FeatureField, SphereMesh
from corticast.services.mesh_service import SphereLocator, interpolate, mesh_service
from corticast.services.surface_io import (
    decode_features,
    decode_mesh,
    encode_features,
    encode_mesh,
    read_features,
    write_features,
)


def random_directions(n: int, seed: int) -> np.ndarray:
    points = np.random.default_rng(seed).normal(size=(n, 3))
    return points / np.linalg.norm(points, axis=1, keepdims=True)


def random_field(n_vertices: int, seed: int, channels=("a", "b", "c")) -> FeatureField:
    values = np.random.default_rng(seed).normal(size=(len(channels), n_vertices))
    return FeatureField(channel_names=list(channels), values=values)


class TestIcosphere:
    """Test cases for icosphere generation"""

    @pytest.mark.parametrize("order", [0, 1, 2, 3, 4, 5])
    def test_counts_and_euler(self, order):
        """Test V, E, F closed forms and the Euler characteristic"""
        mesh = mesh_service.icosphere(order)
        topology = mesh_service.check_topology(mesh)
        assert topology.n_vertices == 10 * 4 ** order + 2
        assert topology.n_edges == 30 * 4 ** order
        assert topology.n_faces == 20 * 4 ** order
        assert topology.euler == 2
        np.testing.assert_allclose(np.linalg.norm(mesh.vertices, axis=1), 1.0, atol=1e-12)

    def test_order_six_vertex_count(self):
        """Test the order-6 icosphere has 40962 vertices"""
        assert mesh_service.icosphere(6).n_vertices == 40962

    def test_order_zero_is_icosahedron(self):
        """Test order 0 gives the 12-vertex, 20-face icosahedron"""
        mesh = mesh_service.icosphere(0)
        assert mesh.n_vertices == 12
        assert mesh.n_triangles == 20

    def test_invalid_order(self):
        """Test orders outside [0, max] are rejected"""
        with pytest.raises(InvalidArgumentError):
            mesh_service.icosphere(9)
        with pytest.raises(InvalidArgumentError):
            mesh_service.icosphere(-1)

    def test_deterministic(self):
        """Test two builds are bitwise identical"""
        first, second = mesh_service.icosphere(3), mesh_service.icosphere(3)
        assert np.array_equal(first.vertices, second.vertices)
        assert np.array_equal(first.triangles, second.triangles)

    def test_triangles_face_outward(self, ico2):
        """Test counter-clockwise winding seen from outside"""
        corners = ico2.vertices[ico2.triangles]
        normals = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
        assert np.all(np.einsum("ij,ij->i", normals, corners.mean(axis=1)) > 0.0)

    def test_open_mesh_fails_topology(self, ico2):
        """Test a mesh with a missing triangle is not a closed manifold"""
        opened = SphereMesh(vertices=ico2.vertices, triangles=ico2.triangles[1:])
        with pytest.raises(SchemaError):
            mesh_service.check_topology(opened)

    def test_mirror_maps_icosphere_onto_itself(self, ico2):
        """Test the vertex set is symmetric under x -> -x"""
        mirrored = mesh_service.mirror_sagittal(ico2)
        original = {tuple(np.round(v, 12)) for v in ico2.vertices}
        reflected = {tuple(np.round(v, 12)) for v in mirrored.vertices}
        assert original == reflected


class TestLocate:
    """Test cases for barycentric point location"""

    @pytest.mark.parametrize("order", [0, 1, 2, 3, 4])
    def test_bucket_grid_matches_brute_force(self, order):
        """Test accelerated and brute-force location agree on 1000 random directions"""
        mesh = mesh_service.icosphere(order)
        locator = SphereLocator(mesh)
        table = random_field(mesh.n_vertices, seed=1).values.T
        for direction in random_directions(1000, seed=2 + order):
            fast = locator.locate(direction)
            slow = locator.locate_brute_force(direction)
            fast_value = interpolate(fast, table[mesh.triangles[fast.triangle_index]])
            slow_value = interpolate(slow, table[mesh.triangles[slow.triangle_index]])
            np.testing.assert_allclose(fast_value, slow_value, atol=1e-9)

    def test_weights_reconstruct_direction(self, ico2):
        """Test the weights lie on the containing triangle"""
        locator = SphereLocator(ico2)
        for direction in random_directions(50, seed=4):
            hit = locator.locate(direction)
            corners = ico2.vertices[ico2.triangles[hit.triangle_index]]
            point = np.asarray(hit.weights) @ corners
            np.testing.assert_allclose(point / np.linalg.norm(point), direction, atol=1e-9)

    def test_vertex_direction_is_one_hot(self, ico2):
        """Test a direction on a vertex snaps to that corner"""
        locator = SphereLocator(ico2)
        vertex = 17
        hit = locator.locate(ico2.vertices[vertex])
        corner = list(ico2.triangles[hit.triangle_index]).index(vertex)
        assert hit.weights[corner] == 1.0
        assert sorted(hit.weights) == [0.0, 0.0, 1.0]

    def test_direction_near_vertex_keeps_planar_weights(self, ico2):
        """Test a direction 5e-7 away from a vertex is not snapped onto it"""
        locator = SphereLocator(ico2)
        vertex = ico2.vertices[17]
        tangent = np.cross(vertex, np.eye(3)[np.argmin(np.abs(vertex))])
        tangent /= np.linalg.norm(tangent)
        direction = vertex + 5e-7 * tangent
        direction /= np.linalg.norm(direction)
        hit = locator.locate(direction)
        assert max(hit.weights) < 1.0
        corners = ico2.vertices[ico2.triangles[hit.triangle_index]]
        point = np.asarray(hit.weights) @ corners
        np.testing.assert_allclose(point / np.linalg.norm(point), direction, atol=1e-10)

    def test_snap_tolerance_covers_float32_rounding(self, ico2):
        """Test a vertex rounded to float32 still locates as one-hot"""
        locator = SphereLocator(ico2)
        rounded = ico2.vertices.astype(np.float32).astype(np.float64)
        rounded /= np.linalg.norm(rounded, axis=1, keepdims=True)
        for direction in rounded:
            assert sorted(locator.locate(direction).weights) == [0.0, 0.0, 1.0]

    def test_non_unit_direction(self, ico2):
        """Test a direction off the unit sphere is rejected"""
        with pytest.raises(InvalidArgumentError):
            mesh_service.locate(ico2, [0.0, 0.0, 2.0])

    def test_interpolate_constant_exactly(self):
        """Test anchored interpolation reproduces a constant bitwise"""
        hit = BarycentricHit(triangle_index=0, weights=(0.2, 0.3, 0.5))
        corners = np.full((3, 2), 0.7)
        assert np.array_equal(interpolate(hit, corners), np.array([0.7, 0.7]))


class TestResample:
    """Test cases for resampling between spherical meshes"""

    def test_constant_field(self, ico2, ico3):
        """Test a constant field resamples to exactly that constant"""
        field = FeatureField(channel_names=["c"], values=np.full((1, ico3.n_vertices), 2.5))
        result = mesh_service.resample(ico3, field, ico2)
        assert np.all(result.values == 2.5)

    def test_identity_is_bitwise(self, ico2):
        """Test resampling onto the same icosphere returns the input bitwise"""
        field = random_field(ico2.n_vertices, seed=5)
        result = mesh_service.resample(ico2, field, ico2)
        assert np.array_equal(result.values, field.values)

    def test_identity_through_file_format(self, ico2):
        """Test identity resampling from a mesh read back from .smesh"""
        stored = decode_mesh(encode_mesh(ico2))
        field = decode_features(encode_features(random_field(ico2.n_vertices, seed=6)))
        result = mesh_service.resample(stored, field, ico2)
        assert np.array_equal(result.values, field.values)

    def test_mirror_twice_is_identity(self, ico2):
        """Test mirrored resampling is an involution on the icosphere"""
        field = random_field(ico2.n_vertices, seed=7)
        once = mesh_service.resample(ico2, field, ico2, mirror=True)
        twice = mesh_service.resample(ico2, once, ico2, mirror=True)
        assert not np.array_equal(once.values, field.values)
        np.testing.assert_allclose(twice.values, field.values, atol=1e-12)

    def test_coordinate_field_to_finer_mesh(self, ico2, ico3):
        """Test a coordinate field is reproduced up to the chord error of the coarse mesh"""
        field = FeatureField(channel_names=["x"], values=ico2.vertices[:, 0][None, :])
        result = mesh_service.resample(ico2, field, ico3)
        np.testing.assert_allclose(result.values[0], ico3.vertices[:, 0], atol=0.03)
        assert np.array_equal(result.values[0, :ico2.n_vertices], ico2.vertices[:, 0])

    def test_coordinate_field_to_coarser_mesh(self, ico2, ico3):
        """Test each target vertex gets the planar interpolation of its containing triangle"""
        field = FeatureField(channel_names=["x"], values=ico3.vertices[:, 0][None, :])
        assert np.array_equal(mesh_service.resample(ico3, field, ico2).values[0], ico2.vertices[:, 0])

        rotation, _ = np.linalg.qr(np.random.default_rng(9).normal(size=(3, 3)))
        rotation *= np.sign(np.linalg.det(rotation))
        target = SphereMesh(vertices=ico2.vertices @ rotation.T, triangles=ico2.triangles)
        result = mesh_service.resample(ico3, field, target)
        locator = SphereLocator(ico3)
        table = field.values.T
        for index, direction in enumerate(target.vertices):
            hit = locator.locate_brute_force(direction)
            expected = interpolate(hit, table[ico3.triangles[hit.triangle_index]])
            np.testing.assert_allclose(result.values[:, index], expected, atol=1e-9)
        np.testing.assert_allclose(result.values[0], target.vertices[:, 0], atol=0.01)

    def test_vertex_count_mismatch(self, ico2, ico3):
        """Test a field that does not match its mesh is rejected"""
        with pytest.raises(InvalidArgumentError):
            mesh_service.resample(ico3, random_field(ico2.n_vertices, seed=8), ico2)


class TestSurfaceCodecs:
    """Test cases for the .smesh and .sfeat formats"""

    def test_mesh_header(self, ico2):
        """Test the header reports the vertex and triangle counts"""
        payload = encode_mesh(ico2)
        assert payload[:4] == b"SMSH"
        assert int.from_bytes(payload[8:12], "little") == 162
        assert int.from_bytes(payload[12:16], "little") == 320

    def test_mesh_reader_renormalizes(self, ico2):
        """Test float32 coordinates come back unit length in float64"""
        mesh = decode_mesh(encode_mesh(ico2))
        np.testing.assert_allclose(np.linalg.norm(mesh.vertices, axis=1), 1.0, atol=1e-15)
        np.testing.assert_allclose(mesh.vertices, ico2.vertices, atol=1e-6)
        assert np.array_equal(mesh.triangles, ico2.triangles)

    def test_truncated_mesh(self, ico2):
        """Test a truncated .smesh is a format error"""
        with pytest.raises(FormatError):
            decode_mesh(encode_mesh(ico2)[:-5])

    def test_bad_magic(self, ico2):
        """Test a wrong magic number is a format error"""
        with pytest.raises(FormatError):
            decode_mesh(b"XXXX" + encode_mesh(ico2)[4:])
        with pytest.raises(FormatError):
            decode_features(b"SMSH" + encode_features(random_field(12, seed=1))[4:])

    def test_features_keep_names_and_float32_values(self, tmp_path):
        """Test channel names survive and values are float32-exact"""
        field = random_field(42, seed=9, channels=("sulcal_depth", "myelin"))
        path = tmp_path / "subject.sfeat"
        write_features(field, path)
        loaded = read_features(path)
        assert loaded.channel_names == ["sulcal_depth", "myelin"]
        assert np.array_equal(loaded.values, field.values.astype(np.float32).astype(np.float64))

    def test_truncated_features(self):
        """Test a truncated .sfeat is a format error"""
        with pytest.raises(FormatError):
            decode_features(encode_features(random_field(42, seed=10))[:-1])

    def test_missing_file(self, tmp_path):
        """Test reading a missing file is a format error"""
        with pytest.raises(FormatError):
            read_features(tmp_path / "absent.sfeat")


if __name__ == "__main__":
    pytest.main([__file__])
