"""File formats and dataset layout.

PCF1 array file (little-endian)::

    b"PCF1" | u32 rank | rank x u32 extent | float32 payload (row-major)

Dataset tree::

    root/<category>/<sample>/partial_<view>.ply
                             feat_<view>.pcf      (optional)
                             gt.ply
"""
from __future__ import annotations

import logging
import os
import re
import struct
from dataclasses import dataclass

import numpy as np

from .checkpoint import atomic_write
from .errors import ContractError, DataError, FormatError
from .geometry import PointCloud

log = logging.getLogger(__name__)

PCF_MAGIC = b"PCF1"
N_VIEWS = 24


# ---------------------------------------------------------------------------
# XYZ text
# ---------------------------------------------------------------------------

def read_xyz(path) -> PointCloud:
    pts = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            fields = body.split()
            if len(fields) != 3:
                raise FormatError(f"{path}:{lineno}: expected 'x y z', got {len(fields)} fields")
            try:
                xyz = [float(v) for v in fields]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric value in {body!r}") from None
            if not all(np.isfinite(xyz)):
                raise FormatError(f"{path}:{lineno}: non-finite coordinate")
            pts.append(xyz)
    if not pts:
        raise FormatError(f"{path}: no points")
    return PointCloud(np.asarray(pts, dtype=np.float64))


def write_xyz(cloud, path) -> None:
    pts = np.asarray(getattr(cloud, "points", cloud))
    text = "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.astype(np.float64).tolist())
    atomic_write(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# PLY subset
# ---------------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


@dataclass
class _Element:
    name: str
    count: int
    props: list  # (name, dtype) or (name, ("list", count_dtype, item_dtype))


def _parse_ply_header(fh, path):
    first = fh.readline()
    if first.strip() != b"ply":
        raise FormatError(f"{path}: not a PLY file (missing 'ply' magic)")
    fmt = None
    elements: list[_Element] = []
    while True:
        line = fh.readline()
        if not line:
            raise FormatError(f"{path}: header ended without end_header")
        tok = line.decode("ascii", "replace").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "end_header":
            break
        if tok[0] == "format":
            if len(tok) < 3 or tok[1] not in ("ascii", "binary_little_endian") or tok[2] != "1.0":
                raise FormatError(f"{path}: unsupported PLY format line {' '.join(tok)!r}")
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append(_Element(tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise FormatError(f"{path}: property before any element")
            if tok[1] == "list":
                if tok[2] not in _PLY_TYPES or tok[3] not in _PLY_TYPES:
                    raise FormatError(f"{path}: unsupported PLY list type {' '.join(tok)!r}")
                elements[-1].props.append((tok[4], ("list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]])))
            else:
                if tok[1] not in _PLY_TYPES:
                    raise FormatError(f"{path}: unsupported PLY property type {tok[1]!r}")
                elements[-1].props.append((tok[2], _PLY_TYPES[tok[1]]))
        else:
            raise FormatError(f"{path}: unsupported PLY header line {' '.join(tok)!r}")
    if fmt is None:
        raise FormatError(f"{path}: PLY header has no format line")
    return fmt, elements


def read_ply(path) -> PointCloud:
    """Read vertex x, y, z from an ascii or binary little-endian PLY file."""
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh, path)
        body = fh.read()
    vertex = None
    off = 0
    lines = body.decode("ascii", "replace").split("\n") if fmt == "ascii" else None
    line_pos = 0
    for el in elements:
        names = [p[0] for p in el.props]
        if el.name == "vertex":
            for axis in "xyz":
                if axis not in names:
                    raise FormatError(f"{path}: vertex element lacks property {axis!r}")
        has_list = any(isinstance(p[1], tuple) for p in el.props)
        if fmt == "ascii":
            rows = []
            for _ in range(el.count):
                while line_pos < len(lines) and not lines[line_pos].strip():
                    line_pos += 1
                if line_pos >= len(lines):
                    raise FormatError(f"{path}: truncated ascii body in element {el.name!r}")
                rows.append(lines[line_pos].split())
                line_pos += 1
            if el.name == "vertex":
                try:
                    vertex = np.array([[float(r[names.index(a)]) for a in "xyz"] for r in rows], dtype=np.float64)
                except (ValueError, IndexError):
                    raise FormatError(f"{path}: malformed vertex line in ascii body") from None
            continue
        if not has_list:
            dt = np.dtype([(n, "<" + t) for n, t in el.props])
            need = dt.itemsize * el.count
            if off + need > len(body):
                raise FormatError(f"{path}: truncated binary body at byte {off} in element {el.name!r}")
            rec = np.frombuffer(body, dtype=dt, count=el.count, offset=off)
            off += need
            if el.name == "vertex":
                vertex = np.stack([rec[a].astype(np.float64) for a in "xyz"], axis=1)
            continue
        if el.name == "vertex":
            raise FormatError(f"{path}: list properties on vertex are unsupported")
        for _ in range(el.count):
            for _, t in el.props:
                if isinstance(t, tuple):
                    cnt_dt = np.dtype("<" + t[1])
                    if off + cnt_dt.itemsize > len(body):
                        raise FormatError(f"{path}: truncated binary body at byte {off}")
                    cnt = int(np.frombuffer(body, cnt_dt, 1, off)[0])
                    off += cnt_dt.itemsize + cnt * np.dtype(t[2]).itemsize
                else:
                    off += np.dtype(t).itemsize
            if off > len(body):
                raise FormatError(f"{path}: truncated binary body in element {el.name!r}")
    if vertex is None:
        raise FormatError(f"{path}: no vertex element")
    if not np.all(np.isfinite(vertex)):
        raise FormatError(f"{path}: non-finite vertex coordinate")
    return PointCloud(vertex)


def write_ply(cloud, path, binary: bool = True) -> None:
    pts = np.asarray(getattr(cloud, "points", cloud))
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {len(pts)}\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
    ).encode("ascii")
    if binary:
        body = np.ascontiguousarray(pts, dtype="<f4").tobytes()
    else:
        body = "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.astype(np.float32).astype(np.float64).tolist())
        body = body.encode("ascii")
    atomic_write(path, header + body)


# ---------------------------------------------------------------------------
# PCF1 arrays
# ---------------------------------------------------------------------------

def pcf_bytes(arr) -> bytes:
    a = np.asarray(arr)
    return PCF_MAGIC + struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape) + np.ascontiguousarray(a, dtype="<f4").tobytes()


def write_pcf(arr, path) -> None:
    atomic_write(path, pcf_bytes(arr))


def parse_pcf(buf: bytes, source="<bytes>") -> np.ndarray:
    if len(buf) < 8:
        raise FormatError(f"{source}: truncated PCF1 header at byte {len(buf)} (need 8)")
    if buf[:4] != PCF_MAGIC:
        raise FormatError(f"{source}: bad magic {buf[:4]!r} at byte 0 (expected b'PCF1')")
    (rank,) = struct.unpack_from("<I", buf, 4)
    if len(buf) < 8 + 4 * rank:
        raise FormatError(f"{source}: truncated extents at byte {len(buf)} (need {8 + 4 * rank})")
    shape = struct.unpack_from(f"<{rank}I", buf, 8)
    start = 8 + 4 * rank
    expected = 4 * int(np.prod(shape, dtype=np.int64))
    actual = len(buf) - start
    if actual != expected:
        raise FormatError(
            f"{source}: payload at byte {start} has {actual} bytes, expected {expected} for shape {tuple(shape)}"
        )
    return np.frombuffer(buf, dtype="<f4", offset=start).reshape(shape).astype(np.float32)


def read_pcf(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_pcf(fh.read(), path)


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------

def normalize(cloud):
    """Centre on the centroid and scale so the farthest point has norm 1.

    Returns ``(normalized, centroid, scale)``; ``points * scale`` after
    centring gives the normalised coordinates.
    """
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=np.float64)
    if len(pts) < 1:
        raise ContractError("normalize on an empty cloud")
    centroid = pts.mean(axis=0)
    centred = pts - centroid
    radius = np.sqrt((centred ** 2).sum(axis=1)).max()
    if radius == 0:
        raise ContractError("normalize: all points identical, scale undefined")
    scale = 1.0 / radius
    return PointCloud(centred * scale), centroid, scale


def apply_normalization(cloud, centroid, scale) -> PointCloud:
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=np.float64)
    return PointCloud((pts - centroid) * scale)


def denormalize(cloud, centroid, scale) -> PointCloud:
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=np.float64)
    return PointCloud(pts / scale + centroid)


# ---------------------------------------------------------------------------
# dataset layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetEntry:
    category: str
    sample: str
    partial: str
    features: str | None
    gt: str
    view: int


_PARTIAL_RE = re.compile(r"^partial_(\d+)\.ply$")


def index_dataset(root) -> list[DatasetEntry]:
    """Walk ``root/<category>/<sample>/`` in lexicographic order."""
    root = os.fspath(root)
    if not os.path.isdir(root):
        raise DataError(f"dataset root {root!r} does not exist")
    entries: list[DatasetEntry] = []
    for cat in sorted(os.listdir(root)):
        cdir = os.path.join(root, cat)
        if not os.path.isdir(cdir):
            continue
        for sample in sorted(os.listdir(cdir)):
            sdir = os.path.join(cdir, sample)
            if not os.path.isdir(sdir):
                continue
            gt = os.path.join(sdir, "gt.ply")
            if not os.path.isfile(gt):
                log.warning("skipping %s/%s: gt.ply missing", cat, sample)
                continue
            views = []
            for fname in os.listdir(sdir):
                m = _PARTIAL_RE.match(fname)
                if m:
                    views.append(int(m.group(1)))
            for view in sorted(views):
                if not 0 <= view < N_VIEWS:
                    raise DataError(f"{sdir}: view id {view} outside [0, {N_VIEWS})")
                feat = os.path.join(sdir, f"feat_{view}.pcf")
                entries.append(DatasetEntry(
                    category=cat, sample=sample,
                    partial=os.path.join(sdir, f"partial_{view}.ply"),
                    features=feat if os.path.isfile(feat) else None,
                    gt=gt, view=view,
                ))
    if not entries:
        raise DataError(f"dataset root {root!r} contains no samples")
    return entries
