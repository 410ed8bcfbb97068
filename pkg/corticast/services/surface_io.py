"""
Binary codecs for spherical meshes (.smesh) and per-vertex features (.sfeat)

Both formats are little-endian. Coordinates and feature values are stored as
float32; readers widen to float64 and re-project mesh vertices onto the unit
sphere.
"""

import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from corticast.core.errors import FormatError
from corticast.core.files import write_bytes_atomic
from corticast.schemas.mesh import FeatureField, SphereMesh

logger = logging.getLogger(__name__)

MESH_MAGIC = b"SMSH"
FEATURE_MAGIC = b"SFTR"
FORMAT_VERSION = 1

PathLike = Union[str, Path]


def encode_mesh(mesh: SphereMesh) -> bytes:
    header = MESH_MAGIC + struct.pack("<III", FORMAT_VERSION, mesh.n_vertices, mesh.n_triangles)
    coordinates = mesh.vertices.astype("<f4").tobytes()
    indices = mesh.triangles.astype("<u4").tobytes()
    return header + coordinates + indices


def decode_mesh(payload: bytes, source: str = "<bytes>") -> SphereMesh:
    if len(payload) < 16 or payload[:4] != MESH_MAGIC:
        raise FormatError(f"{source}: not a .smesh file (bad magic)")
    version, n_vertices, n_triangles = struct.unpack_from("<III", payload, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{source}: unsupported .smesh version {version}")
    expected = 16 + 12 * n_vertices + 12 * n_triangles
    if len(payload) != expected:
        raise FormatError(f"{source}: expected {expected} bytes, found {len(payload)} (truncated or padded)")
    offset = 16
    coordinates = np.frombuffer(payload, dtype="<f4", count=3 * n_vertices, offset=offset)
    offset += 12 * n_vertices
    indices = np.frombuffer(payload, dtype="<u4", count=3 * n_triangles, offset=offset)
    vertices = coordinates.astype(np.float64).reshape(n_vertices, 3)
    norms = np.linalg.norm(vertices, axis=1, keepdims=True)
    if n_vertices and np.any(norms == 0.0):
        raise FormatError(f"{source}: zero-length vertex cannot be projected onto the sphere")
    if n_vertices:
        vertices = vertices / norms
    try:
        return SphereMesh(vertices=vertices, triangles=indices.astype(np.int64).reshape(n_triangles, 3))
    except ValueError as e:
        raise FormatError(f"{source}: invalid mesh: {e}")


def encode_features(field: FeatureField) -> bytes:
    parts = [FEATURE_MAGIC, struct.pack("<III", FORMAT_VERSION, field.n_vertices, field.n_channels)]
    for name in field.channel_names:
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise FormatError(f"channel name too long: {name[:32]}...")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
    parts.append(field.values.astype("<f4").tobytes())
    return b"".join(parts)


def decode_features(payload: bytes, source: str = "<bytes>") -> FeatureField:
    if len(payload) < 16 or payload[:4] != FEATURE_MAGIC:
        raise FormatError(f"{source}: not a .sfeat file (bad magic)")
    version, n_vertices, n_channels = struct.unpack_from("<III", payload, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{source}: unsupported .sfeat version {version}")
    offset = 16
    names = []
    try:
        for _ in range(n_channels):
            (length,) = struct.unpack_from("<H", payload, offset)
            offset += 2
            raw = payload[offset:offset + length]
            if len(raw) != length:
                raise FormatError(f"{source}: truncated channel name")
            names.append(raw.decode("utf-8"))
            offset += length
    except struct.error:
        raise FormatError(f"{source}: truncated channel table")
    except UnicodeDecodeError as e:
        raise FormatError(f"{source}: channel name is not UTF-8: {e}")
    expected = offset + 4 * n_channels * n_vertices
    if len(payload) != expected:
        raise FormatError(f"{source}: expected {expected} bytes, found {len(payload)} (truncated or padded)")
    values = np.frombuffer(payload, dtype="<f4", count=n_channels * n_vertices, offset=offset)
    try:
        return FeatureField(channel_names=names, values=values.astype(np.float64).reshape(n_channels, n_vertices))
    except ValueError as e:
        raise FormatError(f"{source}: invalid feature field: {e}")


def write_mesh(mesh: SphereMesh, path: PathLike) -> None:
    write_bytes_atomic(path, encode_mesh(mesh))
    logger.info(f"Wrote mesh with {mesh.n_vertices} vertices to {path}")


def read_mesh(path: PathLike) -> SphereMesh:
    try:
        payload = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read mesh {path}: {e}")
    return decode_mesh(payload, str(path))


def write_features(field: FeatureField, path: PathLike) -> None:
    write_bytes_atomic(path, encode_features(field))
    logger.debug(f"Wrote {field.n_channels} channels x {field.n_vertices} vertices to {path}")


def read_features(path: PathLike) -> FeatureField:
    try:
        payload = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read features {path}: {e}")
    return decode_features(payload, str(path))
