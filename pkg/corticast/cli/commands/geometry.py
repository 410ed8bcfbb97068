"""
Geometry commands: icosphere generation and feature resampling
"""

import argparse
import logging

from corticast.cli.cli import emit
from corticast.core.config import settings
from corticast.core.errors import SchemaError
from corticast.services.mesh_service import mesh_service
from corticast.services.surface_io import read_features, read_mesh, write_features, write_mesh

logger = logging.getLogger(__name__)


def register(subparsers, common: argparse.ArgumentParser) -> None:
    icosphere = subparsers.add_parser(
        "icosphere", parents=[common],
        help="Write an icosphere mesh (.smesh)",
        description="Subdivide the icosahedron ORDER times and write the unit-sphere mesh.",
    )
    icosphere.add_argument("--order", type=int, required=True,
                           help=f"Subdivision order, 0 to {settings.ICOSPHERE_MAX_ORDER} (6 gives 40962 vertices)")
    icosphere.add_argument("--out", required=True, help="Output .smesh path")
    icosphere.set_defaults(handler=cmd_icosphere)

    resample = subparsers.add_parser(
        "resample", parents=[common],
        help="Resample a feature file onto an icosphere (.sfeat)",
        description="Barycentric resampling of per-vertex features from a spherical mesh onto an icosphere.",
    )
    resample.add_argument("--mesh", required=True, help="Source spherical mesh (.smesh)")
    resample.add_argument("--features", required=True, help="Source features on that mesh (.sfeat)")
    resample.add_argument("--target-order", type=int, default=6, help="Target icosphere order (default: 6)")
    resample.add_argument("--mirror", action="store_true",
                          help="Mirror the source mesh across the sagittal plane first (right hemispheres; default: off)")
    resample.add_argument("--out", required=True, help="Output .sfeat path")
    resample.set_defaults(handler=cmd_resample)


def cmd_icosphere(args: argparse.Namespace) -> int:
    mesh = mesh_service.icosphere(args.order)
    write_mesh(mesh, args.out)
    logger.info(f"Wrote order-{args.order} icosphere to {args.out}")
    emit({"order": args.order, "n_vertices": mesh.n_vertices, "n_triangles": mesh.n_triangles, "path": args.out})
    return 0


def cmd_resample(args: argparse.Namespace) -> int:
    source_mesh = read_mesh(args.mesh)
    source_field = read_features(args.features)
    if source_field.n_vertices != source_mesh.n_vertices:
        raise SchemaError(
            f"{args.features}: {source_field.n_vertices} vertices but {args.mesh} has {source_mesh.n_vertices}",
            details={"features": args.features, "mesh": args.mesh},
        )
    target_mesh = mesh_service.icosphere(args.target_order)
    field = mesh_service.resample(source_mesh, source_field, target_mesh, mirror=args.mirror)
    write_features(field, args.out)
    emit({
        "n_vertices": field.n_vertices,
        "channels": field.channel_names,
        "mirrored": bool(args.mirror),
        "path": args.out,
    })
    return 0
