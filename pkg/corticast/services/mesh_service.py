"""
Icosphere generation and barycentric resampling between spherical meshes
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Tuple

import numpy as np

from corticast.core.config import settings
from corticast.core.errors import InvalidArgumentError, SchemaError
from corticast.schemas.mesh import BarycentricHit, FeatureField, SphereMesh, TopologySummary

logger = logging.getLogger(__name__)

_PHI = (1.0 + math.sqrt(5.0)) / 2.0

# Regular icosahedron, fixed canonical coordinates (normalized below)
_ICOSAHEDRON_VERTICES = np.array([
    [-1.0, _PHI, 0.0],
    [1.0, _PHI, 0.0],
    [-1.0, -_PHI, 0.0],
    [1.0, -_PHI, 0.0],
    [0.0, -1.0, _PHI],
    [0.0, 1.0, _PHI],
    [0.0, -1.0, -_PHI],
    [0.0, 1.0, -_PHI],
    [_PHI, 0.0, -1.0],
    [_PHI, 0.0, 1.0],
    [-_PHI, 0.0, -1.0],
    [-_PHI, 0.0, 1.0],
], dtype=np.float64)

_ICOSAHEDRON_TRIANGLES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
], dtype=np.int64)


def icosphere_vertex_count(order: int) -> int:
    return 10 * 4 ** order + 2


def order_for_vertex_count(n_vertices: int) -> Optional[int]:
    """Inverse of icosphere_vertex_count, None when n is not an icosphere size"""
    for order in range(settings.ICOSPHERE_MAX_ORDER + 1):
        if icosphere_vertex_count(order) == n_vertices:
            return order
    return None


def _normalize_rows(points: np.ndarray) -> np.ndarray:
    return points / np.linalg.norm(points, axis=1, keepdims=True)


def _barycentric(corners: np.ndarray, direction: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Planar barycentric weights of the ray-plane intersection for a stack of triangles

    corners is T x 3 x 3. Returns (weights T x 3, facing mask T); triangles whose
    plane faces away from the ray get weights of -inf.
    """
    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    normal = np.cross(b - a, c - a)
    denom = normal @ direction
    facing = denom > 0.0
    safe = np.where(facing, denom, 1.0)
    t = np.einsum("ij,ij->i", normal, a) / safe
    point = t[:, None] * direction[None, :]
    nn = np.einsum("ij,ij->i", normal, normal)
    w_a = np.einsum("ij,ij->i", np.cross(b - point, c - point), normal) / nn
    w_b = np.einsum("ij,ij->i", np.cross(c - point, a - point), normal) / nn
    w_c = np.einsum("ij,ij->i", np.cross(a - point, b - point), normal) / nn
    weights = np.stack([w_a, w_b, w_c], axis=1)
    weights[~facing] = -np.inf
    return weights, facing


class SphereLocator:
    """Point location on a spherical mesh through a latitude-longitude bucket grid

    Every triangle is registered in each bucket its bounding spherical cap touches,
    so a bucket holds every triangle that can contain a direction inside it. Lookups
    scan that bucket in ascending triangle order and fall back to a full scan when
    nothing in the bucket accepts the direction.
    """

    def __init__(self, mesh: SphereMesh, tolerance: float = None, snap_tolerance: float = None):
        if mesh.n_triangles == 0:
            raise InvalidArgumentError("cannot locate on an empty mesh")
        self.mesh = mesh
        self.tolerance = settings.LOCATE_TOLERANCE if tolerance is None else tolerance
        self.snap_tolerance = settings.SNAP_TOLERANCE if snap_tolerance is None else snap_tolerance
        self.corners = mesh.vertices[mesh.triangles]
        resolution = math.sqrt(mesh.n_triangles)
        self.n_lat = max(1, int(math.ceil(resolution)))
        self.n_lon = max(1, int(math.ceil(2.0 * resolution)))
        self._buckets = self._build_buckets()

    def _lat_band(self, lat: float) -> int:
        band = int(math.floor((lat + math.pi / 2.0) / math.pi * self.n_lat))
        return min(max(band, 0), self.n_lat - 1)

    def _lon_cell(self, lon: float) -> int:
        return int(math.floor((lon + math.pi) / (2.0 * math.pi) * self.n_lon))

    def _build_buckets(self) -> List[np.ndarray]:
        margin = 1e-6
        centroids = _normalize_rows(self.corners.mean(axis=1))
        cosines = np.einsum("tkj,tj->tk", self.corners, centroids)
        radii = np.arccos(np.clip(cosines.min(axis=1), -1.0, 1.0)) + margin
        lats = np.arcsin(np.clip(centroids[:, 2], -1.0, 1.0))
        lons = np.arctan2(centroids[:, 1], centroids[:, 0])

        cells: List[List[int]] = [[] for _ in range(self.n_lat * self.n_lon)]
        for index in range(self.mesh.n_triangles):
            lat, lon, radius = float(lats[index]), float(lons[index]), float(radii[index])
            lat_lo, lat_hi = lat - radius, lat + radius
            if lat_hi >= math.pi / 2.0 or lat_lo <= -math.pi / 2.0 or math.sin(radius) >= math.cos(lat):
                lon_cells = range(self.n_lon)
            else:
                half_width = math.asin(math.sin(radius) / math.cos(lat))
                first = self._lon_cell(lon - half_width)
                last = self._lon_cell(lon + half_width)
                if last - first + 1 >= self.n_lon:
                    lon_cells = range(self.n_lon)
                else:
                    lon_cells = [cell % self.n_lon for cell in range(first, last + 1)]
            for band in range(self._lat_band(lat_lo), self._lat_band(lat_hi) + 1):
                row = band * self.n_lon
                for cell in lon_cells:
                    cells[row + cell].append(index)
        # triangles were visited in ascending order, so every bucket is already sorted
        buckets = [np.array(cell, dtype=np.int64) for cell in cells]
        logger.debug(
            f"Built {self.n_lat}x{self.n_lon} locate grid for {self.mesh.n_triangles} triangles"
        )
        return buckets

    def _bucket(self, direction: np.ndarray) -> np.ndarray:
        lat = math.asin(min(1.0, max(-1.0, float(direction[2]))))
        lon = math.atan2(float(direction[1]), float(direction[0]))
        cell = self._lon_cell(lon) % self.n_lon
        return self._buckets[self._lat_band(lat) * self.n_lon + cell]

    def _select(self, candidates: np.ndarray, direction: np.ndarray) -> Optional[BarycentricHit]:
        weights, _ = _barycentric(self.corners[candidates], direction)
        min_weights = weights.min(axis=1)
        accepted = min_weights >= -self.tolerance
        if not np.any(accepted):
            return None
        # argmax keeps the first (lowest triangle index) maximum
        best = int(np.argmax(np.where(accepted, min_weights, -np.inf)))
        triangle = int(candidates[best])
        chosen = np.clip(weights[best], 0.0, None)
        chosen = chosen / chosen.sum()
        distances = np.linalg.norm(self.corners[triangle] - direction[None, :], axis=1)
        nearest = int(np.argmin(distances))
        if distances[nearest] <= self.snap_tolerance:
            chosen = np.zeros(3)
            chosen[nearest] = 1.0
        return BarycentricHit(triangle_index=triangle, weights=tuple(float(w) for w in chosen))

    @staticmethod
    def _check_direction(direction) -> np.ndarray:
        vector = np.asarray(direction, dtype=np.float64).reshape(3)
        norm = float(np.linalg.norm(vector))
        if abs(norm - 1.0) > 1e-9:
            raise InvalidArgumentError(f"direction must be a unit vector (norm {norm:.12f})")
        return vector

    def locate(self, direction) -> BarycentricHit:
        vector = self._check_direction(direction)
        hit = self._select(self._bucket(vector), vector)
        if hit is None:
            logger.debug("Bucket miss, falling back to a full scan")
            hit = self.locate_brute_force(vector)
        return hit

    def locate_brute_force(self, direction) -> BarycentricHit:
        """Scan every triangle; the oracle the bucket grid is tested against"""
        vector = self._check_direction(direction)
        hit = self._select(np.arange(self.mesh.n_triangles), vector)
        if hit is None:
            raise SchemaError("no triangle contains the direction; the mesh does not cover the sphere")
        return hit


def interpolate(hit: BarycentricHit, corner_values: np.ndarray) -> np.ndarray:
    """Weighted corner average anchored at the heaviest corner

    corner_values is 3 x C. Anchoring reproduces constants and one-hot weights exactly.
    """
    weights = hit.weights
    anchor = max(range(3), key=lambda k: weights[k])
    result = corner_values[anchor].copy()
    for k in range(3):
        if k != anchor and weights[k] != 0.0:
            result = result + weights[k] * (corner_values[k] - corner_values[anchor])
    return result


class MeshService:
    """Service class for icosphere geometry and spherical resampling"""

    def __init__(self):
        self.max_order = settings.ICOSPHERE_MAX_ORDER

    def icosphere(self, order: int) -> SphereMesh:
        """Icosahedron refined `order` times by edge-midpoint subdivision

        Midpoints are appended in sorted (min_index, max_index) edge order and
        re-projected onto the unit sphere, so vertex numbering is deterministic.
        """
        if not isinstance(order, (int, np.integer)) or order < 0 or order > self.max_order:
            raise InvalidArgumentError(
                f"icosphere order must be an integer in [0, {self.max_order}], got {order}"
            )
        vertices = _normalize_rows(_ICOSAHEDRON_VERTICES)
        triangles = _ICOSAHEDRON_TRIANGLES.copy()
        for _ in range(int(order)):
            vertices, triangles = self._subdivide(vertices, triangles)
        logger.debug(f"Built order-{order} icosphere with {len(vertices)} vertices")
        return SphereMesh(vertices=vertices, triangles=triangles)

    @staticmethod
    def _subdivide(vertices: np.ndarray, triangles: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        a, b, c = triangles[:, 0], triangles[:, 1], triangles[:, 2]
        edges = np.concatenate([
            np.stack([a, b], axis=1),
            np.stack([b, c], axis=1),
            np.stack([c, a], axis=1),
        ])
        edges.sort(axis=1)
        unique_edges, inverse = np.unique(edges, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        midpoints = _normalize_rows((vertices[unique_edges[:, 0]] + vertices[unique_edges[:, 1]]) / 2.0)
        offset = len(vertices)
        n_faces = len(triangles)
        ab = offset + inverse[:n_faces]
        bc = offset + inverse[n_faces:2 * n_faces]
        ca = offset + inverse[2 * n_faces:]
        children = np.stack([
            np.stack([a, ab, ca], axis=1),
            np.stack([b, bc, ab], axis=1),
            np.stack([c, ca, bc], axis=1),
            np.stack([ab, bc, ca], axis=1),
        ], axis=1).reshape(-1, 3)
        return np.concatenate([vertices, midpoints]), children

    def check_topology(self, mesh: SphereMesh) -> TopologySummary:
        """Enumerate edges explicitly; every edge must border exactly two triangles"""
        t = mesh.triangles
        edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        edges.sort(axis=1)
        unique_edges, counts = np.unique(edges, axis=0, return_counts=True)
        if np.any(counts != 2):
            bad = int(np.sum(counts != 2))
            raise SchemaError(f"mesh is not a closed 2-manifold: {bad} edges not shared by exactly 2 triangles")
        return TopologySummary(n_vertices=mesh.n_vertices, n_edges=len(unique_edges), n_faces=mesh.n_triangles)

    def locate(self, mesh: SphereMesh, direction) -> BarycentricHit:
        return SphereLocator(mesh).locate(direction)

    def mirror_sagittal(self, mesh: SphereMesh) -> SphereMesh:
        """Reflect x -> -x and swap two corners so triangles stay outward-facing"""
        vertices = mesh.vertices * np.array([-1.0, 1.0, 1.0])
        triangles = mesh.triangles[:, [0, 2, 1]]
        return SphereMesh(vertices=vertices, triangles=triangles)

    def resample(
        self,
        source_mesh: SphereMesh,
        source_field: FeatureField,
        target_mesh: SphereMesh,
        mirror: bool = False,
        locator: Optional[SphereLocator] = None,
    ) -> FeatureField:
        """Barycentric interpolation of a source field at every target vertex"""
        if source_field.n_vertices != source_mesh.n_vertices:
            raise InvalidArgumentError(
                f"field has {source_field.n_vertices} vertices but the source mesh has {source_mesh.n_vertices}"
            )
        if mirror:
            source_mesh = self.mirror_sagittal(source_mesh)
            locator = None
        if locator is None:
            locator = SphereLocator(source_mesh)
        corner_table = source_field.values.T
        targets = target_mesh.vertices

        def _run(rows: range) -> np.ndarray:
            block = np.empty((len(rows), source_field.n_channels))
            for out, row in enumerate(rows):
                hit = locator.locate(targets[row])
                corners = corner_table[source_mesh.triangles[hit.triangle_index]]
                block[out] = interpolate(hit, corners)
            return block

        n_targets = target_mesh.n_vertices
        workers = min(settings.resolved_threads(), max(1, n_targets // 2048))
        if workers <= 1:
            result = _run(range(n_targets))
        else:
            bounds = np.linspace(0, n_targets, workers + 1).astype(int)
            chunks = [range(bounds[i], bounds[i + 1]) for i in range(workers)]
            with ThreadPoolExecutor(max_workers=workers) as pool:
                result = np.concatenate(list(pool.map(_run, chunks)))
        logger.info(
            f"Resampled {source_field.n_channels} channels from {source_mesh.n_vertices} to {n_targets} vertices"
        )
        return FeatureField(channel_names=list(source_field.channel_names), values=result.T)


# Global mesh service instance
mesh_service = MeshService()
