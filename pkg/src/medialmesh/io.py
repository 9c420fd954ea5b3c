"""File formats: MetaImage volumes, PLY/OBJ meshes and point clouds, JSON
sphere clouds and skeletons."""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from .grid import VoxelGrid

_MET_TYPES = {
    "MET_UCHAR": np.dtype("<u1"),
    "MET_CHAR": np.dtype("<i1"),
    "MET_USHORT": np.dtype("<u2"),
    "MET_SHORT": np.dtype("<i2"),
    "MET_UINT": np.dtype("<u4"),
    "MET_INT": np.dtype("<i4"),
    "MET_FLOAT": np.dtype("<f4"),
    "MET_DOUBLE": np.dtype("<f8"),
}
_WRITE_TYPES = {"MET_UCHAR", "MET_USHORT", "MET_FLOAT"}


class FormatError(ValueError):
    pass


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _parse_header(text: str) -> dict:
    header = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"malformed header line {lineno}: {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        header[key] = value
        if key == "ElementDataFile":
            break
    return header


def read_mhd(path) -> VoxelGrid:
    """Read a 3D MetaImage (.mhd with detached payload, or .mha with LOCAL)."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    # header is ASCII up to and including the ElementDataFile line
    marker = raw.find(b"ElementDataFile")
    if marker < 0:
        raise FormatError(f"{path}: missing ElementDataFile")
    eol = raw.find(b"\n", marker)
    eol = len(raw) if eol < 0 else eol + 1
    try:
        header = _parse_header(raw[:eol].decode("ascii"))
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: header is not ASCII") from exc

    if header.get("ObjectType", "Image") != "Image":
        raise FormatError(f"{path}: ObjectType must be Image")
    try:
        ndims = int(header.get("NDims", "3"))
        dims = tuple(int(v) for v in header["DimSize"].split())
        spacing = tuple(float(v) for v in header.get("ElementSpacing", "1 1 1").split())
        offset = tuple(float(v) for v in header.get("Offset", header.get("Origin", "0 0 0")).split())
        etype = header["ElementType"]
        datafile = header["ElementDataFile"]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: bad header ({exc})") from exc
    if ndims != 3 or len(dims) != 3 or len(spacing) != 3 or len(offset) != 3:
        raise FormatError(f"{path}: only 3D images are supported")
    if etype not in _MET_TYPES:
        raise FormatError(f"{path}: unsupported ElementType {etype}")
    if header.get("BinaryDataByteOrderMSB", "False").lower() == "true":
        raise FormatError(f"{path}: big-endian payloads are not supported")
    if header.get("CompressedData", "False").lower() == "true":
        raise FormatError(f"{path}: compressed payloads are not supported")

    dtype = _MET_TYPES[etype]
    count = int(np.prod(dims))
    if datafile == "LOCAL":
        payload = raw[eol:]
    else:
        data_path = os.path.join(os.path.dirname(path), datafile)
        try:
            with open(data_path, "rb") as fh:
                payload = fh.read()
        except OSError as exc:
            raise FormatError(f"{path}: cannot read payload {datafile}: {exc}") from exc
    if len(payload) < count * dtype.itemsize:
        raise FormatError(f"{path}: payload too short ({len(payload)} bytes for {count} x {etype})")
    flat = np.frombuffer(payload, dtype=dtype, count=count)
    try:
        return VoxelGrid.from_flat(flat.astype(dtype.newbyteorder("=")), dims, spacing, offset)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_mhd(path, grid: VoxelGrid, element_type: str | None = None) -> None:
    """Write ``path`` (.mhd) plus a sibling .raw payload, little-endian, x-fastest."""
    path = os.fspath(path)
    data = np.asarray(grid.data)
    if element_type is None:
        if np.issubdtype(data.dtype, np.floating):
            element_type = "MET_FLOAT"
        elif data.size and (data.min() < 0 or data.max() > 65535):
            element_type = "MET_FLOAT"
        elif data.size and data.max() > 255:
            element_type = "MET_USHORT"
        else:
            element_type = "MET_UCHAR"
    if element_type not in _WRITE_TYPES:
        raise ValueError(f"cannot write {element_type}")
    dtype = _MET_TYPES[element_type]
    base = os.path.splitext(path)[0]
    raw_name = os.path.basename(base) + ".raw"
    fmt = lambda xs: " ".join(repr(float(x)) for x in xs)  # noqa: E731
    header = (
        "ObjectType = Image\n"
        "NDims = 3\n"
        "BinaryData = True\n"
        "BinaryDataByteOrderMSB = False\n"
        f"DimSize = {' '.join(str(d) for d in grid.dims)}\n"
        f"ElementSpacing = {fmt(grid.spacing)}\n"
        f"Offset = {fmt(grid.origin)}\n"
        f"ElementType = {element_type}\n"
        f"ElementDataFile = {raw_name}\n"
    )
    with open(path, "w", encoding="ascii") as fh:
        fh.write(header)
    with open(os.path.join(os.path.dirname(path), raw_name), "wb") as fh:
        fh.write(data.ravel(order="F").astype(dtype).tobytes())


# --- JSON ---

def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, allow_nan=False)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# --- meshes and clouds ---

def _provenance_lines(provenance: dict | None) -> list[str]:
    if not provenance:
        return []
    return ["provenance " + json.dumps(provenance, sort_keys=True, separators=(",", ":"))]


def write_ply_mesh(path, vertices, faces, provenance: dict | None = None) -> None:
    """Binary little-endian PLY with float32 xyz and uint8/int32 face lists."""
    v = np.ascontiguousarray(vertices, dtype="<f4")
    f = np.ascontiguousarray(faces, dtype="<i4")
    head = ["ply", "format binary_little_endian 1.0"]
    head += ["comment " + c for c in _provenance_lines(provenance)]
    head += [
        f"element vertex {len(v)}",
        "property float x", "property float y", "property float z",
        f"element face {len(f)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    face_rec = np.empty(len(f), dtype=[("n", "u1"), ("idx", "<i4", (3,))])
    face_rec["n"] = 3
    face_rec["idx"] = f
    with open(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode("ascii"))
        fh.write(v.tobytes())
        fh.write(face_rec.tobytes())


def write_ply_cloud(path, points, normals, provenance: dict | None = None) -> None:
    """Binary PLY point cloud with nx, ny, nz normals."""
    p = np.asarray(points, dtype="<f4")
    n = np.asarray(normals, dtype="<f4")
    rec = np.empty(len(p), dtype=[(k, "<f4") for k in ("x", "y", "z", "nx", "ny", "nz")])
    for i, k in enumerate("xyz"):
        rec[k] = p[:, i]
        rec["n" + k] = n[:, i]
    head = ["ply", "format binary_little_endian 1.0"]
    head += ["comment " + c for c in _provenance_lines(provenance)]
    head += [f"element vertex {len(p)}"]
    head += [f"property float {k}" for k in ("x", "y", "z", "nx", "ny", "nz")]
    head += ["end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode("ascii"))
        fh.write(rec.tobytes())


def read_ply(path):
    """Minimal reader for the PLY files written here. Returns (vertex record
    array, faces or None, comments)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    end = raw.find(b"end_header\n")
    if end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii").splitlines()
    body = raw[end + len(b"end_header\n"):]
    if header[0] != "ply" or "binary_little_endian" not in header[1]:
        raise FormatError(f"{path}: only binary little-endian PLY is supported")
    comments = [h[len("comment "):] for h in header if h.startswith("comment ")]
    elements = []
    for h in header:
        parts = h.split()
        if parts[0] == "element":
            elements.append([parts[1], int(parts[2]), []])
        elif parts[0] == "property":
            elements[-1][2].append(parts[1:])
    vert = faces = None
    pos = 0
    for name, count, props in elements:
        if name == "vertex":
            dt = np.dtype([(p[1], "<f4") for p in props])
            vert = np.frombuffer(body, dtype=dt, count=count, offset=pos)
            pos += dt.itemsize * count
        elif name == "face":
            dt = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
            rec = np.frombuffer(body, dtype=dt, count=count, offset=pos)
            faces = rec["idx"].copy()
            pos += dt.itemsize * count
    return vert, faces, comments


def write_obj(path, vertices, faces, provenance: dict | None = None) -> None:
    lines = ["# " + c for c in _provenance_lines(provenance)]
    lines += [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in np.asarray(vertices, dtype=float)]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces, dtype=int)]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
