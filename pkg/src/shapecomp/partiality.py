"""Procedural shapes, partial-observation patterns, and the toy benchmark.

Five parametric families of surface point clouds (superellipsoid, table,
chair, mug, lamp) with per-part labels, three ways of making them partial
(depth scan, box crop, part removal), and a builder that freezes 30 objects x
3 patterns x 2 samples = 180 partials to disk with a JSON manifest. The same
generator seeds always produce byte-identical artifacts.

Shapes are generated in a canonical frame roughly centered at the origin;
callers normalize into the unit cube before voxel work. Patterns operate on
normalized clouds and always return an exact subset of their input points.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import PointCloud, normalize, voxel_indices
from .geometry_io import write_ply

__all__ = [
    "ShapeSpec",
    "PartialSample",
    "BenchmarkConfig",
    "PartialityError",
    "FAMILY_LABELS",
    "PART_NAMES",
    "PATTERNS",
    "gen_shape",
    "single_scan",
    "random_crop",
    "semantic_part",
    "build_benchmark",
    "load_manifest",
]

logger = logging.getLogger(__name__)

# label 0 is reserved for the unconditional embedding
FAMILY_LABELS = {"superellipsoid": 1, "table": 2, "chair": 3, "mug": 4, "lamp": 5}

PART_NAMES = {
    "superellipsoid": ["body"],
    "table": ["top", "leg_fl", "leg_fr", "leg_bl", "leg_br"],
    "chair": ["seat", "back", "leg_fl", "leg_fr", "leg_bl", "leg_br"],
    "mug": ["body", "handle"],
    "lamp": ["base", "pole", "shade"],
}

PATTERNS = ("single_scan", "random_crop", "semantic_part")

# families with a part that can stand alone within the kept-fraction bounds
BENCH_FAMILIES = ("table", "chair", "mug", "lamp")

MIN_KEPT_FRACTION = 0.2
MAX_KEPT_FRACTION = 0.9


class PartialityError(RuntimeError):
    """A pattern could not produce a valid partial within its retry budget."""


@dataclass
class ShapeSpec:
    """Recipe for one procedural object. ``params`` pins otherwise random
    family parameters (used by tests; the benchmark relies on seeds only)."""

    family: str
    seed: int
    points: int = 8192
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in PART_NAMES:
            raise ValueError(f"unknown family {self.family!r}, expected one of {sorted(PART_NAMES)}")
        if self.points < 1:
            raise ValueError("points must be positive")


@dataclass
class PartialSample:
    """One benchmark entry: a partial view paired with its complete shape."""

    object_id: str
    pattern: str
    sample_index: int
    partial: PointCloud
    gt: PointCloud
    params: dict = field(default_factory=dict)

    @property
    def kept_fraction(self) -> float:
        return len(self.partial) / len(self.gt)

    def validate(self) -> None:
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}")
        frac = self.kept_fraction
        if not MIN_KEPT_FRACTION <= frac <= MAX_KEPT_FRACTION:
            raise ValueError(f"{self.object_id}/{self.pattern}: kept fraction {frac:.3f} "
                             f"outside [{MIN_KEPT_FRACTION}, {MAX_KEPT_FRACTION}]")
        gt_rows = {p.tobytes() for p in np.ascontiguousarray(self.gt.points)}
        for p in np.ascontiguousarray(self.partial.points):
            if p.tobytes() not in gt_rows:
                raise ValueError(f"{self.object_id}/{self.pattern}: partial point not in gt")


# ---------------------------------------------------------------------------
# surface samplers
# ---------------------------------------------------------------------------


def _sample_box(rng, n, center, size):
    """Uniform samples on the surface of an axis-aligned box."""
    center = np.asarray(center, dtype=np.float64)
    sx, sy, sz = size
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.random((n, 2)) - 0.5
    pts = np.empty((n, 3))
    for f in range(6):
        sel = face == f
        axis = f // 2
        sign = 1.0 if f % 2 else -1.0
        others = [a for a in range(3) if a != axis]
        pts[sel, axis] = sign * size[axis] / 2
        pts[sel, others[0]] = uv[sel, 0] * size[others[0]]
        pts[sel, others[1]] = uv[sel, 1] * size[others[1]]
    return pts + center


def _sample_cylinder(rng, n, center, radius, height, cap_bottom=True, cap_top=True):
    """Uniform samples on a z-aligned cylinder surface."""
    center = np.asarray(center, dtype=np.float64)
    lateral = 2 * np.pi * radius * height
    cap = np.pi * radius ** 2
    areas = [lateral, cap if cap_bottom else 0.0, cap if cap_top else 0.0]
    part = rng.choice(3, size=n, p=np.array(areas) / sum(areas))
    theta = rng.random(n) * 2 * np.pi
    pts = np.empty((n, 3))
    lat = part == 0
    pts[lat, 0] = radius * np.cos(theta[lat])
    pts[lat, 1] = radius * np.sin(theta[lat])
    pts[lat, 2] = (rng.random(lat.sum()) - 0.5) * height
    for which, sign in ((1, -1.0), (2, 1.0)):
        sel = part == which
        r = radius * np.sqrt(rng.random(sel.sum()))
        pts[sel, 0] = r * np.cos(theta[sel])
        pts[sel, 1] = r * np.sin(theta[sel])
        pts[sel, 2] = sign * height / 2
    return pts + center


def _sample_cone(rng, n, center, r_bottom, r_top, height):
    """Samples on the lateral surface of a z-aligned truncated cone."""
    center = np.asarray(center, dtype=np.float64)
    u = rng.random(n)
    if abs(r_top - r_bottom) < 1e-12:
        t = u
    else:
        # area density is linear in t; invert its CDF
        t = (-r_bottom + np.sqrt(r_bottom ** 2 + (r_top ** 2 - r_bottom ** 2) * u)) / (r_top - r_bottom)
    r = r_bottom + (r_top - r_bottom) * t
    theta = rng.random(n) * 2 * np.pi
    pts = np.stack([r * np.cos(theta), r * np.sin(theta), (t - 0.5) * height], axis=1)
    return pts + center


def _sample_torus_arc(rng, n, center, ring_radius, tube_radius, arc=(-np.pi / 2, np.pi / 2)):
    """Samples on a torus arc with axis y, swept through the x-z plane."""
    center = np.asarray(center, dtype=np.float64)
    theta = rng.random(n) * (arc[1] - arc[0]) + arc[0]
    # surface density over the tube angle is proportional to R + r*cos(phi)
    phi = np.empty(n)
    done = 0
    while done < n:
        cand = rng.random(n - done) * 2 * np.pi
        accept = rng.random(n - done) <= (ring_radius + tube_radius * np.cos(cand)) / (ring_radius + tube_radius)
        good = cand[accept]
        phi[done : done + len(good)] = good
        done += len(good)
    rad = ring_radius + tube_radius * np.cos(phi)
    pts = np.stack([rad * np.cos(theta), tube_radius * np.sin(phi), rad * np.sin(theta)], axis=1)
    return pts + center


def _signed_pow(x, e):
    return np.sign(x) * np.abs(x) ** e


def _allocate(total: int, fractions) -> list[int]:
    """Largest-remainder allocation of ``total`` into len(fractions) parts."""
    raw = np.asarray(fractions, dtype=np.float64) * total
    counts = np.floor(raw).astype(int)
    for i in np.argsort(raw - counts)[::-1][: total - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


def gen_shape(spec: ShapeSpec) -> PointCloud:
    """Deterministic labeled surface cloud in the family's canonical frame."""
    rng = np.random.default_rng(spec.seed)
    p = spec.params
    n = spec.points

    if spec.family == "superellipsoid":
        radii = p.get("radii", tuple(rng.uniform(0.25, 0.5, 3)))
        e1, e2 = p.get("exponents", tuple(rng.uniform(0.4, 1.6, 2)))
        u = rng.uniform(-np.pi, np.pi, n)
        v = rng.uniform(-np.pi / 2, np.pi / 2, n)
        pts = np.stack([
            radii[0] * _signed_pow(np.cos(v), e1) * _signed_pow(np.cos(u), e2),
            radii[1] * _signed_pow(np.cos(v), e1) * _signed_pow(np.sin(u), e2),
            radii[2] * _signed_pow(np.sin(v), e1),
        ], axis=1)
        return PointCloud(pts, np.zeros(n, dtype=np.int32))

    if spec.family == "table":
        width = p.get("width", rng.uniform(0.7, 1.0))
        depth = p.get("depth", rng.uniform(0.7, 1.0))
        height = p.get("height", rng.uniform(0.55, 0.8))
        thick = p.get("thickness", rng.uniform(0.06, 0.12))
        leg = p.get("leg", rng.uniform(0.05, 0.09))
        counts = _allocate(n, [0.44, 0.14, 0.14, 0.14, 0.14])
        parts = [_sample_box(rng, counts[0], (0, 0, (height - thick) / 2), (width, depth, thick))]
        leg_h = height - thick
        for i, (sx, sy) in enumerate([(-1, -1), (1, -1), (-1, 1), (1, 1)]):
            cx = sx * (width / 2 - leg)
            cy = sy * (depth / 2 - leg)
            parts.append(_sample_box(rng, counts[1 + i], (cx, cy, -thick / 2), (leg, leg, leg_h)))

    elif spec.family == "chair":
        width = p.get("width", rng.uniform(0.5, 0.7))
        depth = p.get("depth", rng.uniform(0.5, 0.7))
        seat_h = p.get("seat_height", rng.uniform(0.35, 0.5))
        back_h = p.get("back_height", rng.uniform(0.45, 0.65))
        thick = p.get("thickness", rng.uniform(0.05, 0.09))
        leg = p.get("leg", rng.uniform(0.04, 0.07))
        counts = _allocate(n, [0.28, 0.28, 0.11, 0.11, 0.11, 0.11])
        parts = [
            _sample_box(rng, counts[0], (0, 0, 0), (width, depth, thick)),
            _sample_box(rng, counts[1], (0, (depth - thick) / 2, back_h / 2 + thick / 2),
                        (width, thick, back_h)),
        ]
        for i, (sx, sy) in enumerate([(-1, -1), (1, -1), (-1, 1), (1, 1)]):
            cx = sx * (width / 2 - leg)
            cy = sy * (depth / 2 - leg)
            parts.append(_sample_box(rng, counts[2 + i], (cx, cy, -(seat_h + thick) / 2),
                                     (leg, leg, seat_h - thick)))

    elif spec.family == "mug":
        radius = p.get("radius", rng.uniform(0.28, 0.38))
        height = p.get("height", rng.uniform(0.6, 0.9))
        ring = p.get("ring", rng.uniform(0.13, 0.2))
        tube = p.get("tube", rng.uniform(0.04, 0.07))
        counts = _allocate(n, [0.75, 0.25])
        parts = [
            _sample_cylinder(rng, counts[0], (0, 0, 0), radius, height, cap_top=False),
            _sample_torus_arc(rng, counts[1], (radius, 0, 0), ring, tube),
        ]

    elif spec.family == "lamp":
        base_r = p.get("base_radius", rng.uniform(0.18, 0.28))
        base_h = p.get("base_height", rng.uniform(0.05, 0.09))
        pole_r = p.get("pole_radius", rng.uniform(0.02, 0.035))
        shade_rb = p.get("shade_bottom", rng.uniform(0.18, 0.26))
        shade_rt = p.get("shade_top", rng.uniform(0.08, 0.14))
        shade_h = p.get("shade_height", rng.uniform(0.18, 0.28))
        total_h = p.get("height", rng.uniform(0.8, 1.1))
        counts = _allocate(n, [0.28, 0.24, 0.48])
        z0 = -total_h / 2
        pole_h = total_h - base_h - shade_h
        parts = [
            _sample_cylinder(rng, counts[0], (0, 0, z0 + base_h / 2), base_r, base_h),
            _sample_cylinder(rng, counts[1], (0, 0, z0 + base_h + pole_h / 2), pole_r, pole_h,
                             cap_bottom=False, cap_top=False),
            _sample_cone(rng, counts[2], (0, 0, total_h / 2 - shade_h / 2), shade_rb, shade_rt, shade_h),
        ]
    else:  # pragma: no cover - guarded by ShapeSpec validation
        raise AssertionError(spec.family)

    labels = np.concatenate([np.full(len(part), i, dtype=np.int32) for i, part in enumerate(parts)])
    return PointCloud(np.vstack(parts), labels)


# ---------------------------------------------------------------------------
# partiality patterns
# ---------------------------------------------------------------------------


def _view_rotation(view: np.ndarray) -> np.ndarray:
    """Rotation whose third row is ``view``: applying it sends view to +z."""
    v = np.asarray(view, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("view direction must be non-zero")
    v = v / norm
    helper = np.array([0.0, 0.0, 1.0]) if abs(v[2]) < 0.999 else np.array([1.0, 0.0, 0.0])
    u = np.cross(helper, v)
    u /= np.linalg.norm(u)
    w = np.cross(v, u)
    return np.stack([u, w, v])


def single_scan(cloud: PointCloud, rng: np.random.Generator | int,
                resolution: int = 32, d_tol: int = 1,
                view: np.ndarray | None = None) -> tuple[PointCloud, dict]:
    """Keep the points a depth camera would see from one random direction.

    The cloud is rotated so the view direction becomes +z, re-normalized, and
    voxelized; within each (x, y) voxel column only points at most ``d_tol``
    cells behind the first occupied cell survive. Returns the surviving
    subset of the input points (bit-exact) and the draw parameters.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if view is None:
        view = rng.standard_normal(3)
        while np.linalg.norm(view) < 1e-12:  # pragma: no cover
            view = rng.standard_normal(3)
    rot = _view_rotation(view)
    rotated = PointCloud((cloud.points - 0.5) @ rot.T + 0.5)
    frame, _ = normalize(rotated)
    idx = voxel_indices(frame.points, resolution)
    column = idx[:, 0] * resolution + idx[:, 1]
    nearest = np.full(resolution * resolution, resolution, dtype=np.int64)
    np.minimum.at(nearest, column, idx[:, 2])
    keep = idx[:, 2] <= nearest[column] + d_tol
    params = {"view": [float(x) for x in np.asarray(view) / np.linalg.norm(view)],
              "resolution": resolution, "d_tol": d_tol}
    return cloud.select(np.flatnonzero(keep)), params


def random_crop(cloud: PointCloud, rng: np.random.Generator | int,
                fraction: float = 0.4, max_tries: int = 20) -> tuple[PointCloud, dict]:
    """Remove the points inside a random axis-aligned box.

    The box holds ``fraction`` of the bounding-box volume, is centered on a
    randomly chosen point, and is then translated to lie inside the bounding
    box (so sparse regions can yield empty crops). Draws are rejected and
    retried while they would keep less than the minimum fraction of points.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    pts = cloud.points
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    side = (hi - lo) * fraction ** (1.0 / 3.0)
    for _ in range(max_tries):
        center = pts[rng.integers(len(pts))].copy()
        center = np.clip(center, lo + side / 2, hi - side / 2)
        inside = np.all(np.abs(pts - center) <= side / 2, axis=1)
        kept = np.flatnonzero(~inside)
        if len(kept) >= MIN_KEPT_FRACTION * len(pts):
            params = {"fraction": fraction, "center": [float(c) for c in center],
                      "side": [float(s) for s in side]}
            return cloud.select(kept), params
    raise PartialityError(f"random_crop kept less than {MIN_KEPT_FRACTION:.0%} of points "
                          f"in {max_tries} tries")


def semantic_part(cloud: PointCloud, keep: int) -> tuple[PointCloud, dict]:
    """Keep one labeled part of the shape.

    If the requested part holds less than the minimum kept fraction, the
    largest other part that qualifies is used instead. An unlabeled cloud is
    treated as a single part 0, so keeping part 0 is the identity.
    """
    labels = cloud.labels if cloud.labels is not None else np.zeros(len(cloud), dtype=np.int32)
    present, counts = np.unique(labels, return_counts=True)
    if keep not in present:
        raise ValueError(f"part {keep} not present, cloud has parts {present.tolist()}")
    chosen = int(keep)
    if counts[present == chosen][0] < MIN_KEPT_FRACTION * len(cloud):
        eligible = [(c, int(lab)) for lab, c in zip(present, counts)
                    if c >= MIN_KEPT_FRACTION * len(cloud)]
        if not eligible:
            raise PartialityError("no part is large enough to stand alone")
        chosen = max(eligible)[1]
    sel = np.flatnonzero(labels == chosen)
    return cloud.select(sel), {"requested": int(keep), "kept_part": chosen}


# ---------------------------------------------------------------------------
# benchmark builder
# ---------------------------------------------------------------------------


@dataclass
class BenchmarkConfig:
    objects: int = 30
    samples_per_pattern: int = 2
    points: int = 8192
    seed: int = 0
    families: tuple = BENCH_FAMILIES
    scan_resolution: int = 32
    crop_fraction_range: tuple = (0.3, 0.55)
    max_tries: int = 20

    def to_dict(self) -> dict:
        return {"objects": self.objects, "samples_per_pattern": self.samples_per_pattern,
                "points": self.points, "seed": self.seed, "families": list(self.families),
                "scan_resolution": self.scan_resolution,
                "crop_fraction_range": list(self.crop_fraction_range),
                "max_tries": self.max_tries}


def _draw_partial(pattern: str, gt: PointCloud, family: str, rng, cfg: BenchmarkConfig):
    if pattern == "single_scan":
        return single_scan(gt, rng, resolution=cfg.scan_resolution)
    if pattern == "random_crop":
        fraction = float(rng.uniform(*cfg.crop_fraction_range))
        return random_crop(gt, rng, fraction=fraction, max_tries=cfg.max_tries)
    counts = np.bincount(gt.labels)
    eligible = [int(lab) for lab in np.argsort(counts)[::-1]
                if counts[lab] >= MIN_KEPT_FRACTION * len(gt)]
    keep = eligible[int(rng.integers(len(eligible)))] if len(eligible) > 1 else eligible[0]
    return semantic_part(gt, keep)


def build_benchmark(cfg: BenchmarkConfig, out_dir) -> dict:
    """Generate the full benchmark to ``out_dir`` and return the manifest.

    Partials violating the kept-fraction bounds are redrawn with fresh
    sub-seeds (up to ``cfg.max_tries``); every emitted sample passes
    :meth:`PartialSample.validate`.
    """
    out_dir = Path(out_dir)
    (out_dir / "gt").mkdir(parents=True, exist_ok=True)
    (out_dir / "partial").mkdir(parents=True, exist_ok=True)
    objects = []
    partials = []
    for i in range(cfg.objects):
        family = cfg.families[i % len(cfg.families)]
        seed = int(np.random.default_rng([cfg.seed, i]).integers(2 ** 31))
        spec = ShapeSpec(family, seed, points=cfg.points)
        gt_norm, _ = normalize(gen_shape(spec))
        object_id = f"obj_{i:03d}"
        gt_path = f"gt/{object_id}.ply"
        write_ply(out_dir / gt_path, gt_norm, binary=True)
        objects.append({"id": object_id, "family": family, "label": FAMILY_LABELS[family],
                        "seed": seed, "points": cfg.points, "gt": gt_path})
        for pi, pattern in enumerate(PATTERNS):
            for s in range(cfg.samples_per_pattern):
                sample = None
                for attempt in range(cfg.max_tries):
                    rng = np.random.default_rng([cfg.seed, i, pi, s, attempt])
                    partial, params = _draw_partial(pattern, gt_norm, family, rng, cfg)
                    frac = len(partial) / len(gt_norm)
                    if MIN_KEPT_FRACTION <= frac <= MAX_KEPT_FRACTION:
                        sample = PartialSample(object_id, pattern, s, partial, gt_norm, params)
                        break
                if sample is None:
                    raise PartialityError(f"{object_id}/{pattern}/{s}: no valid draw "
                                          f"in {cfg.max_tries} tries")
                sample.validate()
                pid = f"{object_id}_{pattern}_{s}"
                path = f"partial/{pid}.ply"
                write_ply(out_dir / path, sample.partial, binary=True)
                partials.append({"id": pid, "object_id": object_id, "pattern": pattern,
                                 "sample": s, "path": path,
                                 "kept_fraction": round(sample.kept_fraction, 6),
                                 "points": len(sample.partial), "params": params})
        logger.info("built %s (%s): %d partials", object_id, family, len(PATTERNS) * cfg.samples_per_pattern)
    manifest = {"format": "shapecomp-benchmark", "version": 1, "seed": cfg.seed,
                "config": cfg.to_dict(), "objects": objects, "partials": partials}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_manifest(path) -> dict:
    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("format") != "shapecomp-benchmark":
        raise ValueError(f"{path}: not a benchmark manifest")
    if manifest.get("version") != 1:
        raise ValueError(f"{path}: unsupported version {manifest.get('version')}")
    root = path.parent
    for entry in manifest["objects"]:
        if not (root / entry["gt"]).exists():
            raise FileNotFoundError(f"{path}: missing gt file {entry['gt']}")
    for entry in manifest["partials"]:
        if not (root / entry["path"]).exists():
            raise FileNotFoundError(f"{path}: missing partial file {entry['path']}")
    return manifest
