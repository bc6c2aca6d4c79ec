"""Radar-driven depth reconstruction and Gaussian-splat point clouds.

The main entry points are :class:`LocalizedGPRegressor` (one GP per
angular grid cell) and :class:`ExactGPRegressor` (a single global GP),
both following the scikit-learn estimator API.
"""

__version__ = "0.1.0"

from .geometry import (
    AngularCoordinate,
    AngularRange,
    Point3,
    cartesian_to_spherical,
    spherical_to_cartesian,
)
from .gp import ExactGPRegressor, GpDataset, GpPosterior, GpSettings
from .kernel import RbfKernel, gram_matrix
from .localized import LocalizedGPRegressor, LocalizedGpModel, RegionPartition, fit_localized
from .pointcloud import PointCloud, SparseDepthScan, build_point_cloud, sample_query_locations

__all__ = [
    "AngularCoordinate",
    "AngularRange",
    "ExactGPRegressor",
    "GpDataset",
    "GpPosterior",
    "GpSettings",
    "LocalizedGPRegressor",
    "LocalizedGpModel",
    "Point3",
    "PointCloud",
    "RbfKernel",
    "RegionPartition",
    "SparseDepthScan",
    "build_point_cloud",
    "cartesian_to_spherical",
    "fit_localized",
    "gram_matrix",
    "sample_query_locations",
    "spherical_to_cartesian",
]
