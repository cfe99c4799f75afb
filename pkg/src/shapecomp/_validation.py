"""Input validation helpers shared by the public API surface."""

from __future__ import annotations

import numpy as np

from .geometry import OccupancyGrid, PointCloud


def as_points(x, name: str = "points") -> np.ndarray:
    """Coerce a PointCloud or array-like to a float64 (k, 3) array."""
    if isinstance(x, PointCloud):
        return x.points
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must be a PointCloud or (k, 3) array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite coordinates")
    return arr


def as_cloud(x, name: str = "points") -> PointCloud:
    if isinstance(x, PointCloud):
        return x
    return PointCloud(as_points(x, name))


def as_grid(x, name: str = "grid") -> OccupancyGrid:
    if isinstance(x, OccupancyGrid):
        return x
    arr = np.asarray(x)
    if arr.ndim != 3:
        raise ValueError(f"{name} must be an OccupancyGrid or (N, N, N) array, got shape {arr.shape}")
    return OccupancyGrid(arr)
