import numpy as np
import pytest

from shapecomp.geometry import OccupancyGrid, PointCloud
from shapecomp.geometry_io import (
    GeometryFormatError,
    load_geometry,
    read_obj,
    read_ply,
    save_geometry,
    write_obj,
    write_ply,
)


def random_cloud(seed, n=64, labels=False):
    rng = np.random.default_rng(seed)
    pts = (rng.standard_normal((n, 3)) * 0.3).astype(np.float32).astype(np.float64)
    lab = rng.integers(0, 5, n) if labels else None
    return PointCloud(pts, lab)


@pytest.mark.parametrize("binary", [False, True])
@pytest.mark.parametrize("with_labels", [False, True])
def test_ply_round_trip(tmp_path, binary, with_labels):
    cloud = random_cloud(7, labels=with_labels)
    path = tmp_path / "c.ply"
    write_ply(path, cloud, binary=binary)
    back = read_ply(path)
    assert np.array_equal(back.points, cloud.points)  # float32 exact
    if with_labels:
        assert np.array_equal(back.labels, cloud.labels)
    else:
        assert back.labels is None


def test_ply_ascii_binary_agree(tmp_path):
    cloud = random_cloud(8, labels=True)
    write_ply(tmp_path / "a.ply", cloud, binary=False)
    write_ply(tmp_path / "b.ply", cloud, binary=True)
    a = read_ply(tmp_path / "a.ply")
    b = read_ply(tmp_path / "b.ply")
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.labels, b.labels)


def test_ply_extreme_coordinates_round_trip(tmp_path):
    pts = np.array([[1e-20, -1e20, 3.14159265], [np.float32(1 / 3), -0.0, 1e-8]],
                   dtype=np.float32)
    path = tmp_path / "x.ply"
    write_ply(path, PointCloud(pts.astype(np.float64)))
    assert np.array_equal(read_ply(path).points.astype(np.float32), pts)


def test_ply_not_a_ply(tmp_path):
    path = tmp_path / "no.ply"
    path.write_bytes(b"solid nope\n")
    with pytest.raises(GeometryFormatError, match="byte 0"):
        read_ply(path)


def test_ply_big_endian_rejected(tmp_path):
    path = tmp_path / "be.ply"
    path.write_bytes(b"ply\nformat binary_big_endian 1.0\nelement vertex 0\n"
                     b"property float x\nproperty float y\nproperty float z\nend_header\n")
    with pytest.raises(GeometryFormatError, match="format"):
        read_ply(path)


def test_ply_face_element_rejected(tmp_path):
    path = tmp_path / "f.ply"
    path.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n"
                     b"property float y\nproperty float z\nelement face 1\nend_header\n")
    with pytest.raises(GeometryFormatError, match="element"):
        read_ply(path)


def test_ply_wrong_properties_rejected(tmp_path):
    path = tmp_path / "p.ply"
    path.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n"
                     b"property float z\nproperty float y\nend_header\n0 0 0\n")
    with pytest.raises(GeometryFormatError, match="x y z"):
        read_ply(path)


def test_ply_ascii_bad_line_reports_offset(tmp_path):
    path = tmp_path / "bad.ply"
    good = (b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\n"
            b"property float y\nproperty float z\nend_header\n")
    line1 = b"0.5 0.5 0.5\n"
    path.write_bytes(good + line1 + b"0.1 0.2\n")
    with pytest.raises(GeometryFormatError, match=f"byte {len(good) + len(line1)}"):
        read_ply(path)


def test_ply_ascii_missing_rows(tmp_path):
    path = tmp_path / "short.ply"
    path.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\n"
                     b"property float y\nproperty float z\nend_header\n0 0 0\n")
    with pytest.raises(GeometryFormatError, match="expected 3 vertices, got 1"):
        read_ply(path)


def test_ply_binary_truncation_reports_offset(tmp_path):
    path = tmp_path / "t.ply"
    write_ply(path, random_cloud(3, n=10), binary=True)
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(GeometryFormatError, match=f"byte {len(raw) - 5}"):
        read_ply(path)


def test_ply_reads_small_label_types(tmp_path):
    path = tmp_path / "u8.ply"
    path.write_bytes(b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
                     b"property float x\nproperty float y\nproperty float z\n"
                     b"property uchar part\nend_header\n"
                     + np.float32([0.25, 0.5, 0.75]).tobytes() + bytes([7]))
    cloud = read_ply(path)
    assert np.array_equal(cloud.labels, [7])


def test_obj_round_trip(tmp_path):
    cloud = random_cloud(9)
    path = tmp_path / "c.obj"
    write_obj(path, cloud)
    assert np.array_equal(read_obj(path).points, cloud.points)


def test_obj_faces_warn_once_normals_silent(tmp_path):
    path = tmp_path / "m.obj"
    path.write_bytes(b"# comment\nv 0 0 0\nvn 1 0 0\nv 1 1 1\nf 1 2 1\nf 2 1 2\n")
    with pytest.warns(UserWarning, match="faces are ignored") as rec:
        cloud = read_obj(path)
    assert len(rec) == 1
    assert len(cloud) == 2


def test_obj_bad_vertex_reports_offset(tmp_path):
    path = tmp_path / "b.obj"
    head = b"v 0 0 0\n"
    path.write_bytes(head + b"v 1 nope 2\n")
    with pytest.raises(GeometryFormatError, match=f"byte {len(head)}"):
        read_obj(path)
    path.write_bytes(b"v 1 2\n")
    with pytest.raises(GeometryFormatError, match="3 coordinates"):
        read_obj(path)


def test_obj_empty_rejected(tmp_path):
    path = tmp_path / "e.obj"
    path.write_bytes(b"# nothing here\n")
    with pytest.raises(GeometryFormatError, match="no vertices"):
        read_obj(path)


def test_lsct_cloud_and_grid_dispatch(tmp_path):
    cloud = random_cloud(11)
    save_geometry(tmp_path / "c.lsct", cloud)
    back = load_geometry(tmp_path / "c.lsct")
    assert isinstance(back, PointCloud)
    assert np.array_equal(back.points, cloud.points)

    grid = OccupancyGrid((np.random.default_rng(0).random((8, 8, 8)) > 0.5).astype(np.float32))
    save_geometry(tmp_path / "g.lsct", grid)
    back = load_geometry(tmp_path / "g.lsct")
    assert isinstance(back, OccupancyGrid)
    assert np.array_equal(back.values, grid.values)


def test_lsct_odd_rank_rejected(tmp_path):
    from shapecomp.tensorio import write_tensor

    write_tensor(tmp_path / "t.lsct", np.zeros((2, 2, 2, 2), dtype=np.float32))
    with pytest.raises(GeometryFormatError, match="neither cloud nor grid"):
        load_geometry(tmp_path / "t.lsct")


def test_format_inference_and_overrides(tmp_path):
    cloud = random_cloud(12)
    path = tmp_path / "data.bin"
    save_geometry(path, cloud, fmt="ply")
    assert isinstance(load_geometry(path, fmt="ply"), PointCloud)
    with pytest.raises(ValueError, match="cannot infer"):
        load_geometry(path)
    with pytest.raises(ValueError, match="unknown geometry format"):
        load_geometry(path, fmt="stl")


def test_grid_refuses_ply(tmp_path):
    grid = OccupancyGrid(np.zeros((4, 4, 4)))
    with pytest.raises(ValueError, match="lsct"):
        save_geometry(tmp_path / "g.ply", grid)
