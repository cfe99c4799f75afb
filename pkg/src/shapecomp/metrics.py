"""Point-cloud distance metrics for completion quality and diversity.

All distances are plain (non-squared) euclidean. Chamfer and earth mover's
distances subsample large clouds with deterministic farthest-point sampling
seeded at the lexicographically smallest point, so repeated evaluation of the
same inputs gives bit-identical results. The unidirectional metrics never
subsample: they certify observed-region fidelity, where dropping points would
hide errors.

Reported-scale conventions live in :mod:`shapecomp.report`; everything here
returns raw distances in normalized-cube units.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from ._validation import as_points

__all__ = [
    "farthest_point_subsample",
    "chamfer",
    "emd",
    "ucd_uhd",
    "mmd",
    "tmd",
]

CHAMFER_SUBSAMPLE = 2048
EMD_SUBSAMPLE = 256


def farthest_point_subsample(points, count: int) -> np.ndarray:
    """Indices of a farthest-point subsample.

    Starts from the lexicographically smallest point and greedily adds the
    point farthest from the selected set; argmax ties resolve to the lowest
    index. Returns all indices (in selection order) when the cloud already
    has at most ``count`` points.
    """
    pts = as_points(points)
    n = len(pts)
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if n <= count:
        return np.arange(n)
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))[0]
    dist = np.linalg.norm(pts - pts[chosen[0]], axis=1)
    for i in range(1, count):
        chosen[i] = np.argmax(dist)
        dist = np.minimum(dist, np.linalg.norm(pts - pts[chosen[i]], axis=1))
    return chosen


def _maybe_subsample(pts: np.ndarray, count: int | None) -> np.ndarray:
    if count is None or len(pts) <= count:
        return pts
    return pts[farthest_point_subsample(pts, count)]


def chamfer(a, b, subsample: int | None = CHAMFER_SUBSAMPLE) -> float:
    """Symmetric chamfer distance: mean of the two directional NN means, halved."""
    pa = _maybe_subsample(as_points(a, "a"), subsample)
    pb = _maybe_subsample(as_points(b, "b"), subsample)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("chamfer distance needs non-empty clouds")
    d_ab, _ = cKDTree(pb).query(pa)
    d_ba, _ = cKDTree(pa).query(pb)
    return 0.5 * (float(np.mean(d_ab)) + float(np.mean(d_ba)))


def emd(a, b, subsample: int | None = EMD_SUBSAMPLE) -> float:
    """Mean per-point cost of the exact optimal one-to-one assignment.

    With ``subsample`` set, both clouds are reduced to the same size
    min(subsample, len(a), len(b)). With ``subsample=None`` the clouds must
    already have equal sizes.
    """
    pa = as_points(a, "a")
    pb = as_points(b, "b")
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("emd needs non-empty clouds")
    if subsample is None:
        if len(pa) != len(pb):
            raise ValueError(f"emd needs equal sizes, got {len(pa)} and {len(pb)}")
    else:
        m = min(subsample, len(pa), len(pb))
        pa = _maybe_subsample(pa, m)
        pb = _maybe_subsample(pb, m)
    cost = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1))
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def ucd_uhd(partial, completed) -> tuple[float, float]:
    """Unidirectional chamfer (mean) and Hausdorff (max) from partial to completed.

    No subsampling: every observed point is checked against the completion.
    """
    pp = as_points(partial, "partial")
    pc = as_points(completed, "completed")
    if len(pp) == 0 or len(pc) == 0:
        raise ValueError("ucd_uhd needs non-empty clouds")
    d, _ = cKDTree(pc).query(pp)
    return float(np.mean(d)), float(np.max(d))


def mmd(gt, runs) -> float:
    """Minimum matching distance: best chamfer between any run and the truth."""
    runs = list(runs)
    if not runs:
        raise ValueError("mmd needs at least one run")
    return min(chamfer(r, gt) for r in runs)


def tmd(runs) -> float:
    """Total mutual difference: mean pairwise chamfer among runs (diversity)."""
    runs = list(runs)
    if len(runs) < 2:
        raise ValueError("tmd needs at least two runs")
    pairs = list(itertools.combinations(range(len(runs)), 2))
    return float(np.mean([chamfer(runs[i], runs[j]) for i, j in pairs]))
