"""Readers and writers for point-cloud and grid files.

Three formats: PLY (ASCII or binary little-endian vertices, x/y/z float32
plus an optional ``part`` label), OBJ (``v`` lines only; faces are ignored
with a warning), and the LSCT raw tensor container (rank 2 ``(k, 3)`` clouds
or rank 3 cubic grids). Coordinates round-trip losslessly at float32
precision. Malformed input raises :class:`GeometryFormatError` with the byte
offset of the problem.
"""

from __future__ import annotations

import struct
import warnings
from pathlib import Path

import numpy as np

from .geometry import OccupancyGrid, PointCloud
from .tensorio import TensorFormatError, read_tensor, write_tensor

__all__ = [
    "GeometryFormatError",
    "read_ply",
    "write_ply",
    "read_obj",
    "write_obj",
    "load_geometry",
    "save_geometry",
]

_FLOAT_NAMES = {"float", "float32"}
_LABEL_NAMES = {"uchar": "u1", "uint8": "u1", "ushort": "u2", "uint16": "u2",
                "uint": "u4", "uint32": "u4"}


class GeometryFormatError(ValueError):
    def __init__(self, path, offset: int, message: str) -> None:
        super().__init__(f"{path}: byte {offset}: {message}")
        self.path = str(path)
        self.offset = offset


def _split_lines(raw: bytes):
    """Yield (byte offset, line without newline) for each line."""
    start = 0
    while start < len(raw):
        end = raw.find(b"\n", start)
        if end == -1:
            yield start, raw[start:]
            return
        yield start, raw[start:end]
        start = end + 1


def read_ply(path) -> PointCloud:
    path = Path(path)
    raw = path.read_bytes()
    lines = _split_lines(raw)

    def next_line():
        try:
            return next(lines)
        except StopIteration:
            raise GeometryFormatError(path, len(raw), "unexpected end of header") from None

    off, line = next_line()
    if line.strip() != b"ply":
        raise GeometryFormatError(path, off, f"not a PLY file, first line {line[:20]!r}")
    fmt = None
    n_vertices = None
    properties: list[tuple[str, str]] = []
    in_vertex_element = False
    while True:
        off, line = next_line()
        words = line.decode("ascii", "replace").split()
        if not words or words[0] == "comment":
            continue
        if words[0] == "format":
            if words[1:] == ["ascii", "1.0"]:
                fmt = "ascii"
            elif words[1:] == ["binary_little_endian", "1.0"]:
                fmt = "binary"
            else:
                raise GeometryFormatError(path, off, f"unsupported format {' '.join(words[1:])}")
        elif words[0] == "element":
            if len(words) != 3 or words[1] != "vertex":
                raise GeometryFormatError(path, off, f"unsupported element {' '.join(words[1:])}")
            try:
                n_vertices = int(words[2])
            except ValueError:
                raise GeometryFormatError(path, off, f"bad vertex count {words[2]!r}") from None
            in_vertex_element = True
        elif words[0] == "property":
            if not in_vertex_element or len(words) != 3:
                raise GeometryFormatError(path, off, f"unexpected property {line!r}")
            properties.append((words[2], words[1]))
        elif words[0] == "end_header":
            data_start = off + len(line) + 1
            break
        else:
            raise GeometryFormatError(path, off, f"unknown header keyword {words[0]!r}")
    if fmt is None:
        raise GeometryFormatError(path, 4, "missing format line")
    if n_vertices is None:
        raise GeometryFormatError(path, 4, "missing vertex element")
    names = [p[0] for p in properties]
    if names not in (["x", "y", "z"], ["x", "y", "z", "part"]):
        raise GeometryFormatError(path, 4, f"vertex properties must be x y z [part], got {names}")
    for name, ptype in properties[:3]:
        if ptype not in _FLOAT_NAMES:
            raise GeometryFormatError(path, 4, f"property {name} must be float, got {ptype}")
    has_labels = len(properties) == 4
    if has_labels and properties[3][1] not in _LABEL_NAMES:
        raise GeometryFormatError(path, 4, f"part label must be unsigned int, got {properties[3][1]}")

    if fmt == "ascii":
        pts = np.empty((n_vertices, 3), dtype=np.float64)
        labels = np.empty(n_vertices, dtype=np.int32) if has_labels else None
        want = 4 if has_labels else 3
        for i in range(n_vertices):
            try:
                off, line = next(lines)
            except StopIteration:
                raise GeometryFormatError(path, len(raw), f"expected {n_vertices} vertices, got {i}") from None
            tokens = line.split()
            if len(tokens) != want:
                raise GeometryFormatError(path, off, f"vertex line needs {want} values, got {len(tokens)}")
            try:
                pts[i] = [float(np.float32(float(t))) for t in tokens[:3]]
                if has_labels:
                    labels[i] = int(tokens[3])
            except ValueError:
                raise GeometryFormatError(path, off, f"bad vertex line {line[:40]!r}") from None
        return PointCloud(pts, labels)

    label_dtype = _LABEL_NAMES[properties[3][1]] if has_labels else None
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if has_labels:
        fields.append(("part", "<" + label_dtype))
    row = np.dtype(fields)
    need = data_start + row.itemsize * n_vertices
    if len(raw) < need:
        raise GeometryFormatError(path, len(raw), f"truncated vertex data, need {need} bytes")
    rows = np.frombuffer(raw, dtype=row, count=n_vertices, offset=data_start)
    pts = np.stack([rows["x"], rows["y"], rows["z"]], axis=1).astype(np.float64)
    labels = rows["part"].astype(np.int32) if has_labels else None
    return PointCloud(pts, labels)


def write_ply(path, cloud: PointCloud, binary: bool = False) -> None:
    pts = np.asarray(cloud.points, dtype=np.float32)
    labels = cloud.labels
    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"element vertex {len(pts)}",
              "property float x",
              "property float y",
              "property float z"]
    if labels is not None:
        header.append("property uint part")
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            if labels is None:
                fh.write(np.ascontiguousarray(pts, dtype="<f4").tobytes())
            else:
                row = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("part", "<u4")])
                rows = np.empty(len(pts), dtype=row)
                rows["x"], rows["y"], rows["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
                rows["part"] = labels.astype("<u4")
                fh.write(rows.tobytes())
        else:
            for i, p in enumerate(pts):
                # %.9g preserves float32 exactly through a parse round trip
                text = f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}"
                if labels is not None:
                    text += f" {int(labels[i])}"
                fh.write((text + "\n").encode("ascii"))


def read_obj(path) -> PointCloud:
    path = Path(path)
    raw = path.read_bytes()
    pts = []
    warned_faces = False
    for off, line in _split_lines(raw):
        words = line.decode("ascii", "replace").split()
        if not words:
            continue
        if words[0] == "v":
            if len(words) not in (4, 5):
                raise GeometryFormatError(path, off, f"vertex line needs 3 coordinates, got {len(words) - 1}")
            try:
                pts.append([float(np.float32(float(t))) for t in words[1:4]])
            except ValueError:
                raise GeometryFormatError(path, off, f"bad vertex line {line[:40]!r}") from None
        elif words[0] == "f" and not warned_faces:
            warnings.warn(f"{path}: OBJ faces are ignored, reading vertices only", stacklevel=2)
            warned_faces = True
        # all other keywords (vn, vt, comments, ...) are silently skipped
    if not pts:
        raise GeometryFormatError(path, len(raw), "no vertices found")
    return PointCloud(np.asarray(pts, dtype=np.float64))


def write_obj(path, cloud: PointCloud) -> None:
    pts = np.asarray(cloud.points, dtype=np.float32)
    with open(path, "wb") as fh:
        for p in pts:
            fh.write(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n".encode("ascii"))


_FORMATS = {"ply", "obj", "lsct"}


def _infer_format(path, fmt: str | None) -> str:
    if fmt is not None:
        fmt = fmt.lower()
        if fmt not in _FORMATS:
            raise ValueError(f"unknown geometry format {fmt!r}, expected one of {sorted(_FORMATS)}")
        return fmt
    suffix = Path(path).suffix.lower().lstrip(".")
    if suffix in _FORMATS:
        return suffix
    raise ValueError(f"cannot infer geometry format from {path}")


def load_geometry(path, fmt: str | None = None) -> PointCloud | OccupancyGrid:
    """Read a cloud or grid; LSCT rank disambiguates (2 = cloud, 3 = grid)."""
    fmt = _infer_format(path, fmt)
    if fmt == "ply":
        return read_ply(path)
    if fmt == "obj":
        return read_obj(path)
    try:
        values = read_tensor(path)
    except TensorFormatError as exc:
        raise GeometryFormatError(exc.path, exc.offset, str(exc)) from exc
    if values.ndim == 2 and values.shape[1] == 3:
        return PointCloud(values.astype(np.float64))
    if values.ndim == 3:
        return OccupancyGrid(values)
    raise GeometryFormatError(path, 6, f"tensor of shape {values.shape} is neither cloud nor grid")


def save_geometry(path, obj: PointCloud | OccupancyGrid, fmt: str | None = None,
                  binary: bool = False) -> None:
    fmt = _infer_format(path, fmt)
    if isinstance(obj, OccupancyGrid):
        if fmt != "lsct":
            raise ValueError(f"occupancy grids can only be saved as lsct, not {fmt}")
        write_tensor(path, obj.values)
        return
    if fmt == "ply":
        write_ply(path, obj, binary=binary)
    elif fmt == "obj":
        write_obj(path, obj)
    else:
        write_tensor(path, obj.points)
