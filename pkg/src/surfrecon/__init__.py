"""Surface reconstruction by front/back classification of octree vertices."""

from .config import PipelineConfig, load_config, parse_config
from .errors import ReconError
from .pipeline import reconstruct
from .pointcloud_io import (
    OrientedPointCloud,
    TriangleMesh,
    load_mesh,
    load_point_cloud,
    save_mesh,
    save_point_cloud,
)

__all__ = [
    "OrientedPointCloud",
    "PipelineConfig",
    "ReconError",
    "TriangleMesh",
    "load_config",
    "load_mesh",
    "load_point_cloud",
    "parse_config",
    "reconstruct",
    "save_mesh",
    "save_point_cloud",
]
__version__ = "0.1.0"
