"""Point clouds, occupancy grids, and the maps between them.

All voxel work happens in the unit cube [0, 1]^3 on cubic grids. A grid cell
(i, j, k) covers the half-open box [i/N, (i+1)/N) x ... ; a coordinate of 1.0
belongs to the last cell. Normalization rescales a cloud so its longest axis
spans 0.9 centered at 0.5, which leaves headroom for voxel-boundary effects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PointCloud",
    "OccupancyGrid",
    "Latent",
    "NormalizeTransform",
    "normalize",
    "voxelize",
    "occupancy_to_points",
    "mask_from_partial",
    "downsample_mask",
]

NORMALIZED_SPAN = 0.9


@dataclass
class PointCloud:
    """Points (k, 3) float64 with optional integer part labels (k,)."""

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must be (k, 3), got {self.points.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int32)
            if self.labels.shape != (len(self.points),):
                raise ValueError(
                    f"labels must be ({len(self.points)},), got {self.labels.shape}")

    def __len__(self) -> int:
        return len(self.points)

    def select(self, index: np.ndarray) -> "PointCloud":
        labels = None if self.labels is None else self.labels[index]
        return PointCloud(self.points[index], labels)


@dataclass
class OccupancyGrid:
    """Cubic voxel grid with values in [0, 1]; cell value is occupancy."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        s = self.values.shape
        if self.values.ndim != 3 or len(set(s)) != 1:
            raise ValueError(f"grid must be cubic (N, N, N), got {s}")
        if self.values.size and (self.values.min() < 0 or self.values.max() > 1):
            raise ValueError("grid values must lie in [0, 1]")

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    def binarize(self, threshold: float = 0.5) -> "OccupancyGrid":
        return OccupancyGrid((self.values > threshold).astype(self.values.dtype))


@dataclass
class Latent:
    """Latent grid (n, n, n, c) produced by the occupancy encoder."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        s = self.values.shape
        if self.values.ndim != 4 or len(set(s[:3])) != 1:
            raise ValueError(f"latent must be (n, n, n, c), got {s}")

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[3]


@dataclass(frozen=True)
class NormalizeTransform:
    """Affine map p -> p * scale + offset taking original points into the cube."""

    scale: float
    offset: tuple = field(default=(0.0, 0.0, 0.0))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) * self.scale + np.asarray(self.offset)

    def invert(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.offset)) / self.scale


def normalize(cloud: PointCloud) -> tuple[PointCloud, NormalizeTransform]:
    """Center a cloud at (0.5, 0.5, 0.5) and scale its longest axis to span 0.9.

    Returns the normalized cloud and the transform that was applied, so
    completions can be mapped back to the input frame. A cloud with zero
    extent on every axis cannot be normalized and raises ValueError.
    """
    pts = cloud.points
    if len(pts) == 0:
        raise ValueError("cannot normalize an empty point cloud")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    extent = float((hi - lo).max())
    if extent == 0.0:
        raise ValueError("cannot normalize a degenerate cloud with zero extent")
    scale = NORMALIZED_SPAN / extent
    center = (lo + hi) / 2.0
    offset = 0.5 - center * scale
    tform = NormalizeTransform(scale, tuple(offset))
    return PointCloud(tform.apply(pts), cloud.labels), tform


def voxelize(cloud: PointCloud, resolution: int) -> OccupancyGrid:
    """Binary occupancy of the cells containing at least one point.

    Points must lie in [0, 1]^3; a coordinate of exactly 1.0 clamps into the
    last cell rather than falling outside.
    """
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    pts = cloud.points
    if len(pts) == 0:
        raise ValueError("cannot voxelize an empty point cloud")
    if pts.min() < 0.0 or pts.max() > 1.0:
        raise ValueError("points must lie in the unit cube; normalize first")
    idx = np.minimum((pts * resolution).astype(np.int64), resolution - 1)
    values = np.zeros((resolution,) * 3, dtype=np.float64)
    values[idx[:, 0], idx[:, 1], idx[:, 2]] = 1.0
    return OccupancyGrid(values)


def voxel_indices(points: np.ndarray, resolution: int) -> np.ndarray:
    """Cell index of each point under the voxelize convention."""
    return np.minimum((np.asarray(points) * resolution).astype(np.int64), resolution - 1)


def occupancy_to_points(grid: OccupancyGrid, threshold: float = 0.5) -> PointCloud:
    """Centers of all cells with occupancy strictly above the threshold."""
    idx = np.argwhere(grid.values > threshold)
    if len(idx) == 0:
        raise ValueError(f"no voxel above threshold {threshold}")
    return PointCloud((idx + 0.5) / grid.resolution)


def mask_from_partial(grid: OccupancyGrid) -> np.ndarray:
    """Boolean observed-region mask of a partial-shape grid.

    Idempotent under re-voxelization: the mask of a mask-valued grid is the
    grid itself.
    """
    return grid.values > 0.5


def downsample_mask(mask: np.ndarray, resolution: int) -> np.ndarray:
    """Blockwise any() reduction of a cubic boolean mask to a coarser cube.

    A coarse cell is set iff any fine cell inside it is set, so coverage is
    monotone: no observed voxel ever leaves the mask.
    """
    mask = np.asarray(mask)
    if mask.ndim != 3 or len(set(mask.shape)) != 1:
        raise ValueError(f"mask must be cubic, got {mask.shape}")
    big = mask.shape[0]
    if resolution < 1 or big % resolution:
        raise ValueError(f"cannot reduce {big}^3 mask to {resolution}^3")
    f = big // resolution
    blocks = mask.astype(bool).reshape(resolution, f, resolution, f, resolution, f)
    return blocks.any(axis=(1, 3, 5))
