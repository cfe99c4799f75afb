"""Shape generators, partiality patterns, and the benchmark builder."""

import json

import numpy as np
import pytest

from shapecomp.geometry import PointCloud, normalize, voxel_indices
from shapecomp.geometry_io import read_ply
from shapecomp.partiality import (
    BENCH_FAMILIES,
    BenchmarkConfig,
    FAMILY_LABELS,
    PART_NAMES,
    PATTERNS,
    PartialityError,
    PartialSample,
    ShapeSpec,
    build_benchmark,
    gen_shape,
    load_manifest,
    random_crop,
    semantic_part,
    single_scan,
)

from _oracles import zbuffer_keep_loops


def _lattice_cloud(n=16, lo=0.05, hi=0.95):
    axis = np.linspace(lo, hi, n)
    x, y, z = np.meshgrid(axis, axis, axis, indexing="ij")
    return PointCloud(np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1))


# ---------------------------------------------------------------------------
# shape generation
# ---------------------------------------------------------------------------


def test_unit_exponent_superellipsoid_is_a_sphere():
    spec = ShapeSpec("superellipsoid", seed=7, points=4096,
                     params={"radii": (0.5, 0.5, 0.5), "exponents": (1.0, 1.0)})
    cloud = gen_shape(spec)
    radii = np.linalg.norm(cloud.points, axis=1)
    assert np.max(np.abs(radii - 0.5)) < 1e-6


def test_gen_shape_deterministic():
    a = gen_shape(ShapeSpec("mug", seed=11, points=500))
    b = gen_shape(ShapeSpec("mug", seed=11, points=500))
    c = gen_shape(ShapeSpec("mug", seed=12, points=500))
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert not np.array_equal(a.points, c.points)


@pytest.mark.parametrize("family", sorted(PART_NAMES))
def test_part_labels_match_family(family):
    cloud = gen_shape(ShapeSpec(family, seed=3, points=2000))
    expected = len(PART_NAMES[family])
    assert sorted(np.unique(cloud.labels)) == list(range(expected))
    assert len(cloud) == 2000


def test_table_has_five_parts_with_dominant_top():
    cloud = gen_shape(ShapeSpec("table", seed=5, points=5000))
    counts = np.bincount(cloud.labels)
    assert len(counts) == 5
    assert counts[0] > counts[1]
    # the four legs share the remaining mass roughly evenly
    assert counts[1:].max() - counts[1:].min() <= 1
    assert counts.sum() == 5000


def test_part_allocation_exact_for_odd_totals():
    cloud = gen_shape(ShapeSpec("chair", seed=9, points=1001))
    assert len(cloud) == 1001
    assert len(np.bincount(cloud.labels)) == 6


def test_shapes_fit_in_bounded_canonical_frame():
    for family in sorted(PART_NAMES):
        cloud = gen_shape(ShapeSpec(family, seed=21, points=1500))
        assert np.all(np.isfinite(cloud.points))
        assert np.max(np.abs(cloud.points)) < 1.0


def test_shape_spec_rejects_bad_input():
    with pytest.raises(ValueError, match="unknown family"):
        ShapeSpec("teapot", seed=0)
    with pytest.raises(ValueError, match="points"):
        ShapeSpec("mug", seed=0, points=0)


# ---------------------------------------------------------------------------
# single_scan
# ---------------------------------------------------------------------------


def test_scan_of_solid_lattice_keeps_near_layers():
    cloud = _lattice_cloud(16)
    partial, params = single_scan(cloud, 0, resolution=16, d_tol=1, view=(0, 0, 1))
    # every column of the z-aligned lattice keeps its two nearest layers
    assert len(partial) == 16 * 16 * 2
    kept_z = np.unique(partial.points[:, 2])
    np.testing.assert_allclose(kept_z, [0.05, 0.11], atol=1e-12)
    assert params["d_tol"] == 1


def test_scan_direction_controls_which_side_survives():
    pts = np.array([[0.5, 0.5, 0.1], [0.5, 0.5, 0.9]])
    cloud = PointCloud(pts)
    front, _ = single_scan(cloud, 0, view=(0, 0, 1))
    back, _ = single_scan(cloud, 0, view=(0, 0, -1))
    np.testing.assert_array_equal(front.points, pts[:1])
    np.testing.assert_array_equal(back.points, pts[1:])


def test_scan_keeps_unoccluded_points():
    rng = np.random.default_rng(4)
    pts = rng.random((50, 3)) * 0.8 + 0.1
    # an isolated point with free line of sight must survive a +z scan
    pts[0] = [0.05, 0.05, 0.05]
    cloud = PointCloud(pts)
    partial, _ = single_scan(cloud, 0, view=(0, 0, 1))
    assert any(np.array_equal(p, pts[0]) for p in partial.points)


def test_scan_matches_loop_zbuffer_oracle():
    rng = np.random.default_rng(8)
    cloud = PointCloud(rng.random((400, 3)))
    partial, params = single_scan(cloud, rng)
    # replay the published view through the loop oracle
    from shapecomp.partiality import _view_rotation

    rot = _view_rotation(np.array(params["view"]))
    frame, _ = normalize(PointCloud((cloud.points - 0.5) @ rot.T + 0.5))
    idx = voxel_indices(frame.points, params["resolution"])
    keep = zbuffer_keep_loops(idx, params["resolution"], params["d_tol"])
    np.testing.assert_array_equal(partial.points, cloud.points[keep])


def test_scan_returns_exact_subset():
    cloud = gen_shape(ShapeSpec("lamp", seed=2, points=3000))
    frame, _ = normalize(cloud)
    partial, _ = single_scan(frame, 123)
    gt_rows = {p.tobytes() for p in frame.points}
    assert all(p.tobytes() in gt_rows for p in partial.points)
    assert 0 < len(partial) <= len(frame)


def test_scan_is_input_order_invariant():
    rng = np.random.default_rng(15)
    pts = rng.random((300, 3))
    perm = rng.permutation(300)
    a, _ = single_scan(PointCloud(pts), 0, view=(1, 2, 3))
    b, _ = single_scan(PointCloud(pts[perm]), 0, view=(1, 2, 3))
    sort = lambda q: q[np.lexsort(q.T)]
    np.testing.assert_array_equal(sort(a.points), sort(b.points))


def test_scan_rejects_zero_view():
    with pytest.raises(ValueError, match="view"):
        single_scan(_lattice_cloud(4), 0, view=(0, 0, 0))


# ---------------------------------------------------------------------------
# random_crop
# ---------------------------------------------------------------------------


def test_crop_removal_fraction_brackets_box_volume():
    cloud = _lattice_cloud(16, 0.0, 1.0)
    removed = []
    for seed in range(100):
        partial, _ = random_crop(cloud, seed, fraction=0.5)
        removed.append(1.0 - len(partial) / len(cloud))
    removed = np.array(removed)
    # a half-volume box clipped into a uniform cube removes 30..70 percent
    assert removed.min() >= 0.3
    assert removed.max() <= 0.7
    assert 0.35 <= removed.mean() <= 0.65


def test_crop_box_is_exact():
    cloud = _lattice_cloud(12)
    partial, params = random_crop(cloud, 3, fraction=0.4)
    center = np.array(params["center"])
    side = np.array(params["side"])
    inside = np.all(np.abs(cloud.points - center) <= side / 2, axis=1)
    np.testing.assert_array_equal(partial.points, cloud.points[~inside])


def test_crop_rejects_bad_fraction():
    cloud = _lattice_cloud(4)
    for bad in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ValueError, match="fraction"):
            random_crop(cloud, 0, fraction=bad)


def test_crop_raises_when_no_draw_keeps_enough():
    # all points coincide, so any crop box removes everything
    cloud = PointCloud(np.full((5, 3), 0.5))
    with pytest.raises(PartialityError, match="tries"):
        random_crop(cloud, 0, fraction=0.5)


def test_crop_deterministic_per_seed():
    cloud = _lattice_cloud(10)
    a, _ = random_crop(cloud, 42, fraction=0.45)
    b, _ = random_crop(cloud, 42, fraction=0.45)
    np.testing.assert_array_equal(a.points, b.points)


# ---------------------------------------------------------------------------
# semantic_part
# ---------------------------------------------------------------------------


def test_semantic_part_keeps_requested_part():
    cloud = gen_shape(ShapeSpec("chair", seed=6, points=4000))
    partial, params = semantic_part(cloud, 0)
    assert params["kept_part"] == 0
    assert set(np.unique(partial.labels)) == {0}
    assert len(partial) == int(np.sum(cloud.labels == 0))


def test_semantic_part_falls_back_to_largest_eligible():
    cloud = gen_shape(ShapeSpec("chair", seed=6, points=4000))
    # chair legs are ~11 percent each, below the keep floor
    partial, params = semantic_part(cloud, 3)
    assert params["requested"] == 3
    assert params["kept_part"] in (0, 1)
    assert len(partial) >= 0.2 * len(cloud)


def test_semantic_part_identity_on_unlabeled_cloud():
    cloud = PointCloud(np.random.default_rng(0).random((50, 3)))
    partial, params = semantic_part(cloud, 0)
    np.testing.assert_array_equal(partial.points, cloud.points)
    assert params["kept_part"] == 0


def test_semantic_part_rejects_missing_label():
    cloud = gen_shape(ShapeSpec("mug", seed=1, points=100))
    with pytest.raises(ValueError, match="not present"):
        semantic_part(cloud, 9)


# ---------------------------------------------------------------------------
# benchmark builder
# ---------------------------------------------------------------------------


def test_partial_sample_validation():
    gt = _lattice_cloud(8)
    good = PartialSample("obj", "random_crop", 0, gt.select(np.arange(256)), gt)
    good.validate()
    tiny = PartialSample("obj", "random_crop", 0, gt.select(np.arange(5)), gt)
    with pytest.raises(ValueError, match="fraction"):
        tiny.validate()
    alien = PartialSample("obj", "random_crop", 0,
                          PointCloud(gt.points[:200] + 1e-9), gt)
    with pytest.raises(ValueError, match="not in gt"):
        alien.validate()


def test_small_benchmark_build(tmp_path):
    cfg = BenchmarkConfig(objects=4, samples_per_pattern=1, points=600, seed=9)
    manifest = build_benchmark(cfg, tmp_path)
    assert len(manifest["objects"]) == 4
    assert len(manifest["partials"]) == 4 * len(PATTERNS)
    for entry in manifest["partials"]:
        assert 0.2 <= entry["kept_fraction"] <= 0.9
        partial = read_ply(tmp_path / entry["path"])
        assert len(partial) == entry["points"]
    for entry in manifest["objects"]:
        gt = read_ply(tmp_path / entry["gt"])
        assert len(gt) == 600
        assert entry["label"] == FAMILY_LABELS[entry["family"]]
        # stored ground truth is normalized into the unit cube
        assert gt.points.min() >= 0.0 and gt.points.max() <= 1.0
    assert load_manifest(tmp_path / "manifest.json") == manifest


def test_benchmark_partials_are_subsets(tmp_path):
    cfg = BenchmarkConfig(objects=2, samples_per_pattern=1, points=500, seed=3)
    manifest = build_benchmark(cfg, tmp_path)
    gts = {e["id"]: read_ply(tmp_path / e["gt"]) for e in manifest["objects"]}
    for entry in manifest["partials"]:
        gt = gts[entry["object_id"]]
        sample = PartialSample(entry["object_id"], entry["pattern"], entry["sample"],
                               read_ply(tmp_path / entry["path"]), gt)
        sample.validate()


def test_benchmark_build_is_byte_identical(tmp_path):
    cfg = BenchmarkConfig(objects=3, samples_per_pattern=1, points=400, seed=5)
    build_benchmark(cfg, tmp_path / "a")
    build_benchmark(cfg, tmp_path / "b")
    for rel in ["manifest.json", "gt/obj_000.ply", "partial/obj_001_random_crop_0.ply"]:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_default_benchmark_has_180_partials(tmp_path):
    manifest = build_benchmark(BenchmarkConfig(), tmp_path)
    assert len(manifest["objects"]) == 30
    assert len(manifest["partials"]) == 180
    families = {e["family"] for e in manifest["objects"]}
    assert families == set(BENCH_FAMILIES)
    by_pattern = {p: 0 for p in PATTERNS}
    for entry in manifest["partials"]:
        by_pattern[entry["pattern"]] += 1
    assert all(v == 60 for v in by_pattern.values())


def test_load_manifest_rejects_corruption(tmp_path):
    cfg = BenchmarkConfig(objects=1, samples_per_pattern=1, points=400, seed=2,
                          families=("mug",))
    build_benchmark(cfg, tmp_path)
    path = tmp_path / "manifest.json"
    blob = json.loads(path.read_text())
    blob["version"] = 99
    path.write_text(json.dumps(blob))
    with pytest.raises(ValueError, match="version"):
        load_manifest(path)
    blob["version"] = 1
    (tmp_path / blob["partials"][0]["path"]).unlink()
    path.write_text(json.dumps(blob))
    with pytest.raises(FileNotFoundError):
        load_manifest(path)
