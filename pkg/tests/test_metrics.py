import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import chamfer_loops, emd_bruteforce

from shapecomp.metrics import chamfer, emd, farthest_point_subsample, mmd, tmd, ucd_uhd


def cloud(seed, n=50, scale=1.0):
    return np.random.default_rng(seed).random((n, 3)) * scale


def test_chamfer_identity_is_zero():
    a = cloud(0)
    assert chamfer(a, a) == 0.0


def test_chamfer_singletons():
    assert chamfer(np.array([[0.0, 0, 0]]), np.array([[1.0, 0, 0]])) == pytest.approx(1.0)


def test_chamfer_matches_bruteforce():
    rng = np.random.default_rng(1)
    for trial in range(200):
        a = rng.random((rng.integers(1, 40), 3))
        b = rng.random((rng.integers(1, 40), 3))
        assert chamfer(a, b) == pytest.approx(chamfer_loops(a, b), abs=1e-9)


def test_chamfer_symmetric_and_translation_invariant():
    a, b = cloud(2), cloud(3)
    assert chamfer(a, b) == pytest.approx(chamfer(b, a), abs=1e-12)
    shift = np.array([0.1, -0.2, 0.3])
    assert chamfer(a + shift, b + shift) == pytest.approx(chamfer(a, b), abs=1e-9)


def test_chamfer_subsample_deterministic():
    a = cloud(4, n=5000)
    b = cloud(5, n=4000)
    v1 = chamfer(a, b, subsample=512)
    v2 = chamfer(a, b, subsample=512)
    assert v1 == v2
    # permuting the input must not change the subsample (lexicographic start)
    perm = np.random.default_rng(6).permutation(len(a))
    assert chamfer(a[perm], b, subsample=512) == v1


def test_fps_properties():
    pts = cloud(7, n=100)
    idx = farthest_point_subsample(pts, 10)
    assert len(np.unique(idx)) == 10
    start = pts[idx[0]]
    lex = pts[np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))[0]]
    assert np.array_equal(start, lex)
    small = farthest_point_subsample(pts[:5], 10)
    assert np.array_equal(small, np.arange(5))
    with pytest.raises(ValueError, match="count"):
        farthest_point_subsample(pts, 0)


def test_fps_covers_extremes():
    # two tight clusters: a 2-point subsample must take one from each
    a = np.zeros((20, 3)) + np.linspace(0, 0.01, 20)[:, None]
    b = np.ones((20, 3)) + np.linspace(0, 0.01, 20)[:, None]
    pts = np.vstack([a, b])
    idx = farthest_point_subsample(pts, 2)
    sides = pts[idx][:, 0] > 0.5
    assert sides.sum() == 1


def test_emd_identity_and_permutation():
    a = cloud(8, n=30)
    assert emd(a, a, subsample=None) == 0.0
    perm = np.random.default_rng(9).permutation(len(a))
    assert emd(a, a[perm], subsample=None) == pytest.approx(0.0, abs=1e-12)


def test_emd_matches_factorial_enumeration():
    rng = np.random.default_rng(10)
    for _ in range(5):
        a = rng.random((8, 3))
        b = rng.random((8, 3))
        assert emd(a, b, subsample=None) == pytest.approx(emd_bruteforce(a, b), abs=1e-9)


def test_emd_dominates_directional_chamfer():
    rng = np.random.default_rng(11)
    for _ in range(20):
        a = rng.random((25, 3))
        b = rng.random((25, 3))
        d_ab = np.sqrt(((a[:, None] - b[None]) ** 2).sum(-1))
        directional = max(d_ab.min(axis=1).mean(), d_ab.min(axis=0).mean())
        assert emd(a, b, subsample=None) >= directional - 1e-12


def test_emd_size_rules():
    with pytest.raises(ValueError, match="equal sizes"):
        emd(cloud(0, n=10), cloud(1, n=12), subsample=None)
    # subsampled mode reduces both to the smaller count instead of failing
    val = emd(cloud(0, n=10), cloud(1, n=300), subsample=64)
    assert val > 0


def test_ucd_uhd_containment_and_example():
    a = cloud(12, n=40)
    completed = np.vstack([a, cloud(13, n=60)])
    assert ucd_uhd(a, completed) == (0.0, 0.0)
    mean, mx = ucd_uhd(np.array([[0.0, 0, 0]]), np.array([[0.0, 0, 3], [0.0, 4, 0]]))
    assert (mean, mx) == pytest.approx((3.0, 3.0))


def test_uhd_at_least_ucd():
    rng = np.random.default_rng(14)
    for _ in range(20):
        mean, mx = ucd_uhd(rng.random((30, 3)), rng.random((20, 3)))
        assert mx >= mean


def test_mmd_rules():
    gt = cloud(15, n=40)
    superset = np.vstack([gt, cloud(16, n=10)])
    # a run containing every gt point still pays for its extra points
    assert mmd(gt, [gt]) == 0.0
    runs = [cloud(s, n=40) for s in (17, 18, 19, 20, 21)]
    assert mmd(gt, runs) == pytest.approx(min(chamfer(r, gt) for r in runs))
    assert mmd(gt, [superset]) == pytest.approx(chamfer(superset, gt))
    with pytest.raises(ValueError, match="at least one"):
        mmd(gt, [])


def test_tmd_rules():
    a = cloud(22, n=40)
    assert tmd([a, a.copy(), a.copy()]) == 0.0
    b, c = cloud(23, n=40), cloud(24, n=40)
    assert tmd([a, b]) == pytest.approx(chamfer(a, b))
    expected = np.mean([chamfer(x, y) for x, y in
                        [(a, b), (a, c), (b, c)]])
    assert tmd([a, b, c]) == pytest.approx(expected)
    with pytest.raises(ValueError, match="at least two"):
        tmd([a])


def test_metrics_validate_inputs():
    with pytest.raises(ValueError, match="non-empty"):
        chamfer(np.empty((0, 3)), cloud(0))
    with pytest.raises(ValueError, match=r"\(k, 3\)"):
        chamfer(np.ones((4, 2)), cloud(0))
    with pytest.raises(ValueError, match="non-finite"):
        ucd_uhd(np.array([[np.nan, 0, 0]]), cloud(0))


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_chamfer_triangle_like_bound(seed):
    # moving one cloud by delta changes chamfer by at most |delta|
    rng = np.random.default_rng(seed)
    a = rng.random((15, 3))
    b = rng.random((12, 3))
    delta = rng.standard_normal(3) * 0.05
    assert abs(chamfer(a, b + delta) - chamfer(a, b)) <= np.linalg.norm(delta) + 1e-12
