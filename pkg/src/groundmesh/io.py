"""PLY meshes and clouds, depth/mask rasters with JSON sidecars, transform JSON."""

from __future__ import annotations

import json
import os

import numpy as np

from .depth import BinaryMask, CameraIntrinsics, DepthImage
from .geometry import PointCloud, RigidScaleTransform, TriangleMesh


class PlyError(ValueError):
    """Malformed PLY content; the message names the offending line or row."""


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


# --- PLY ----------------------------------------------------------------------

def write_ply(path, geometry, binary=True):
    """Write a PointCloud or TriangleMesh.

    Binary files are little-endian with float64 coordinates, so they round-trip
    bit for bit. ASCII files print 9 significant digits.
    """
    if isinstance(geometry, TriangleMesh):
        verts, normals, faces = geometry.vertices, None, geometry.faces
    elif isinstance(geometry, PointCloud):
        verts, normals, faces = geometry.points, geometry.normals, None
    else:
        raise TypeError("expected PointCloud or TriangleMesh")
    fmt = "binary_little_endian" if binary else "ascii"
    head = ["ply", f"format {fmt} 1.0", f"element vertex {len(verts)}"]
    head += [f"property double {c}" for c in "xyz"]
    if normals is not None:
        head += [f"property double n{c}" for c in "xyz"]
    if faces is not None:
        head += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    head.append("end_header")
    cols = verts if normals is None else np.hstack([verts, normals])
    with open(path, "wb") as f:
        f.write(("\n".join(head) + "\n").encode("ascii"))
        if binary:
            f.write(np.ascontiguousarray(cols, dtype="<f8").tobytes())
            if faces is not None:
                rec = np.empty(len(faces), dtype=[("n", "u1"), ("v", "<i4", (3,))])
                rec["n"] = 3
                rec["v"] = faces
                f.write(rec.tobytes())
        else:
            lines = [" ".join(f"{x:.9g}" for x in row) for row in cols]
            if faces is not None:
                lines += ["3 " + " ".join(str(int(i)) for i in row) for row in faces]
            if lines:
                f.write(("\n".join(lines) + "\n").encode("ascii"))


def _parse_header(f):
    lines = []
    while True:
        raw = f.readline()
        if not raw:
            raise PlyError(f"line {len(lines) + 1}: header ended without end_header")
        line = raw.decode("ascii", errors="replace").strip()
        lines.append(line)
        if line == "end_header":
            break
    if lines[0] != "ply":
        raise PlyError("line 1: missing 'ply' magic")
    fmt = None
    elements = []
    for no, line in enumerate(lines[1:-1], start=2):
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) != 3 or tok[1] not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise PlyError(f"line {no}: unsupported format {line!r}")
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise PlyError(f"line {no}: malformed element line {line!r}")
            elements.append({"name": tok[1], "count": int(tok[2]), "props": []})
        elif tok[0] == "property":
            if not elements:
                raise PlyError(f"line {no}: property before any element")
            if tok[1] == "list":
                if len(tok) != 5 or tok[2] not in _PLY_TYPES or tok[3] not in _PLY_TYPES:
                    raise PlyError(f"line {no}: malformed list property {line!r}")
                elements[-1]["props"].append((tok[4], "list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]]))
            else:
                if len(tok) != 3 or tok[1] not in _PLY_TYPES:
                    raise PlyError(f"line {no}: malformed property {line!r}")
                elements[-1]["props"].append((tok[2], "scalar", _PLY_TYPES[tok[1]], None))
        else:
            raise PlyError(f"line {no}: unknown header keyword {tok[0]!r}")
    if fmt is None:
        raise PlyError("header has no format line")
    return fmt, elements, len(lines)


def _read_ascii(f, elements, first_line):
    text = f.read().decode("ascii", errors="replace").splitlines()
    rows = iter(enumerate(text, start=first_line + 1))
    out = {}
    for el in elements:
        scalars = [p for p in el["props"] if p[1] == "scalar"]
        lists = [p for p in el["props"] if p[1] == "list"]
        table = {p[0]: np.empty(el["count"]) for p in scalars}
        lists_out = {p[0]: [] for p in lists}
        for r in range(el["count"]):
            try:
                no, line = next(rows)
                while not line.strip():
                    no, line = next(rows)
            except StopIteration:
                raise PlyError(f"file ended after {r} of {el['count']} {el['name']} rows") from None
            tok = line.split()
            pos = 0
            try:
                for name, kind, _, _ in el["props"]:
                    if kind == "scalar":
                        table[name][r] = float(tok[pos])
                        pos += 1
                    else:
                        n = int(tok[pos])
                        vals = [int(v) for v in tok[pos + 1:pos + 1 + n]]
                        if len(vals) != n:
                            raise IndexError
                        lists_out[name].append(vals)
                        pos += 1 + n
            except (IndexError, ValueError):
                raise PlyError(f"line {no}: malformed {el['name']} row {r}") from None
            if pos != len(tok):
                raise PlyError(f"line {no}: {el['name']} row {r} has {len(tok)} values, expected {pos}")
        out[el["name"]] = (table, lists_out)
    for no, line in rows:
        if line.strip():
            raise PlyError(f"line {no}: unexpected data after last element")
    return out


def _read_binary(f, elements, big):
    end = ">" if big else "<"
    data = f.read()
    pos = 0
    out = {}
    for el in elements:
        scalars = [p for p in el["props"] if p[1] == "scalar"]
        lists = [p for p in el["props"] if p[1] == "list"]
        if not lists:
            dt = np.dtype([(p[0], end + p[2]) for p in scalars])
            need = dt.itemsize * el["count"]
            if pos + need > len(data):
                raise PlyError(f"binary data too short for {el['count']} {el['name']} rows")
            rec = np.frombuffer(data, dtype=dt, count=el["count"], offset=pos)
            pos += need
            out[el["name"]] = ({p[0]: rec[p[0]].astype(np.float64) for p in scalars}, {})
            continue
        table = {p[0]: np.empty(el["count"]) for p in scalars}
        lists_out = {p[0]: [] for p in lists}
        for r in range(el["count"]):
            for name, kind, t, it in el["props"]:
                try:
                    if kind == "scalar":
                        dt = np.dtype(end + t)
                        table[name][r] = np.frombuffer(data, dt, 1, pos)[0]
                        pos += dt.itemsize
                    else:
                        ct, vt = np.dtype(end + t), np.dtype(end + it)
                        n = int(np.frombuffer(data, ct, 1, pos)[0])
                        pos += ct.itemsize
                        lists_out[name].append(np.frombuffer(data, vt, n, pos).astype(np.int64).tolist())
                        pos += n * vt.itemsize
                except ValueError:
                    raise PlyError(f"binary data ends inside {el['name']} row {r}") from None
        out[el["name"]] = (table, lists_out)
    if pos != len(data):
        raise PlyError(f"{len(data) - pos} trailing bytes after last element")
    return out


def read_ply(path):
    """Read a PLY file: TriangleMesh when it has faces, else PointCloud."""
    with open(path, "rb") as f:
        fmt, elements, n_header = _parse_header(f)
        names = [e["name"] for e in elements]
        if "vertex" not in names:
            raise PlyError("no vertex element")
        if fmt == "ascii":
            data = _read_ascii(f, elements, n_header)
        else:
            data = _read_binary(f, elements, fmt == "binary_big_endian")
    vtab, _ = data["vertex"]
    for c in "xyz":
        if c not in vtab:
            raise PlyError(f"vertex element lacks property {c!r}")
    pts = np.stack([vtab[c] for c in "xyz"], axis=1)
    if not np.all(np.isfinite(pts)):
        raise PlyError("vertex coordinates contain NaN or Inf")
    if "face" in data:
        _, flists = data["face"]
        key = "vertex_indices" if "vertex_indices" in flists else "vertex_index"
        if key not in flists:
            raise PlyError("face element lacks a vertex_indices list")
        faces = flists[key]
        for r, f in enumerate(faces):
            if len(f) != 3:
                raise PlyError(f"face {r} has {len(f)} vertices; only triangles are supported")
            for v in f:
                if not 0 <= v < len(pts):
                    raise PlyError(f"face {r} references vertex {v}, but there are {len(pts)} vertices")
        return TriangleMesh(pts, np.array(faces, dtype=np.int64).reshape(-1, 3))
    normals = None
    if all(f"n{c}" in vtab for c in "xyz"):
        normals = np.stack([vtab[f"n{c}"] for c in "xyz"], axis=1)
    return PointCloud(pts, normals)


# --- rasters ------------------------------------------------------------------

def _sidecar(path):
    return os.path.splitext(os.fspath(path))[0] + ".json"


def _read_header(path):
    with open(_sidecar(path)) as f:
        try:
            head = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"malformed raster header: {e}") from None
    try:
        w, h = int(head["width"]), int(head["height"])
    except (KeyError, TypeError, ValueError):
        raise ValueError("raster header needs integer width and height") from None
    if w < 1 or h < 1:
        raise ValueError("raster dimensions must be positive")
    return head, w, h


def write_depth(path, depth, intrinsics=None):
    """Float32 little-endian raster plus a ``.json`` header next to it."""
    head = {"width": depth.width, "height": depth.height}
    if intrinsics is not None:
        if (intrinsics.width, intrinsics.height) != (depth.width, depth.height):
            raise ValueError("intrinsics do not match the raster size")
        head.update(intrinsics.to_dict())
    with open(path, "wb") as f:
        f.write(depth.values.astype("<f4").tobytes())
    with open(_sidecar(path), "w") as f:
        json.dump(head, f, indent=2)


def read_depth(path):
    """Returns ``(DepthImage, CameraIntrinsics or None)``."""
    head, w, h = _read_header(path)
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) != 4 * w * h:
        raise ValueError(f"raster holds {len(raw)} bytes, header implies {4 * w * h}")
    values = np.frombuffer(raw, dtype="<f4").reshape(h, w).astype(np.float64)
    intr = None
    if all(k in head for k in ("fx", "fy", "cx", "cy")):
        intr = CameraIntrinsics(float(head["fx"]), float(head["fy"]), float(head["cx"]), float(head["cy"]), w, h)
    return DepthImage(values), intr


def write_mask(path, mask):
    """8-bit raster, 255 inside the mask and 0 outside, plus its header."""
    h, w = mask.shape
    with open(path, "wb") as f:
        f.write(np.where(mask.values, 255, 0).astype(np.uint8).tobytes())
    with open(_sidecar(path), "w") as f:
        json.dump({"width": w, "height": h}, f, indent=2)


def read_mask(path):
    _, w, h = _read_header(path)
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) != w * h:
        raise ValueError(f"mask holds {len(raw)} bytes, header implies {w * h}")
    v = np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
    if np.any((v != 0) & (v != 255)):
        raise ValueError("mask values must be 0 or 255")
    return BinaryMask(v == 255)


# --- transforms ---------------------------------------------------------------

def write_transform(path, transform):
    with open(path, "w") as f:
        json.dump(transform.to_dict(), f, indent=2)


def read_transform(path):
    """Load ``{"scale", "rotation" (9 row-major), "translation"}``; SO(3) is checked."""
    with open(path) as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"malformed transform file: {e}") from None
    if not isinstance(d, dict) or not {"scale", "rotation", "translation"} <= d.keys():
        raise ValueError("transform needs scale, rotation and translation")
    try:
        return RigidScaleTransform.from_dict(d)
    except TypeError:
        raise ValueError("transform entries must be numbers") from None
