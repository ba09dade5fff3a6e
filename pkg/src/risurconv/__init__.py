"""Rotation-invariant point cloud features and the RISurConv classifier."""

from .cloud import PointCloud, Rotation, apply_rotation, estimate_normals, load_cloud, random_rotation
from .risp import RispMatrix, angle, extended_risp, risp, risp_features, tetrahedron_mu
from .sampling import Neighborhood, farthest_point_sample, knn

__version__ = "0.1.0"

__all__ = [
    "Neighborhood", "PointCloud", "RispMatrix", "Rotation", "angle", "apply_rotation", "estimate_normals",
    "extended_risp", "farthest_point_sample", "knn", "load_cloud", "random_rotation", "risp",
    "risp_features", "tetrahedron_mu",
]
