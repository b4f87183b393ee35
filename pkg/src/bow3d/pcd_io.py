"""PCD v0.7 reader/writer.

Supports DATA ascii and DATA binary with fields x y z [rgb]
[normal_x normal_y normal_z curvature]; binary_compressed is rejected.
Color travels as the PCL-style packed float whose bit pattern is
0x00RRGGBB (an unsigned rgb field is also accepted on read). Coordinates
are stored on disk as little-endian float32, so exact round-trips hold for
clouds whose values are float32-representable; anything else is rounded.

Rows with NaN/Inf coordinates are dropped on load and counted on the
returned cloud (organized clouds from RGB-D sensors contain invalid depth
pixels); the width x height organization is not preserved.
"""

from __future__ import annotations

import os
from typing import Union

import numpy as np

from .cloud import PointCloud
from .errors import PcdError

__all__ = ["load_pcd", "save_pcd"]

_HEADER_KEYS = ("VERSION", "FIELDS", "SIZE", "TYPE", "COUNT", "WIDTH", "HEIGHT", "VIEWPOINT", "POINTS", "DATA")

_DTYPES = {
    ("F", 4): "<f4",
    ("F", 8): "<f8",
    ("U", 1): "<u1",
    ("U", 2): "<u2",
    ("U", 4): "<u4",
    ("U", 8): "<u8",
    ("I", 1): "<i1",
    ("I", 2): "<i2",
    ("I", 4): "<i4",
    ("I", 8): "<i8",
}


def _parse_header(lines: list[str]) -> dict:
    meta: dict = {}
    for ln in lines:
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        parts = ln.split()
        key, values = parts[0].upper(), parts[1:]
        if key not in _HEADER_KEYS:
            continue  # tolerate unknown header lines
        meta[key] = values
    missing = [k for k in _HEADER_KEYS if k not in meta]
    if missing:
        raise PcdError(f"malformed header: missing {' '.join(missing)}")

    fields = [f.lower() for f in meta["FIELDS"]]
    try:
        sizes = [int(s) for s in meta["SIZE"]]
        counts = [int(c) for c in meta["COUNT"]]
        width = int(meta["WIDTH"][0])
        height = int(meta["HEIGHT"][0])
        points = int(meta["POINTS"][0])
        viewpoint = [float(v) for v in meta["VIEWPOINT"]]
    except (ValueError, IndexError) as exc:
        raise PcdError(f"malformed header: {exc}") from exc
    types = [t.upper() for t in meta["TYPE"]]

    if not (len(fields) == len(sizes) == len(types) == len(counts)):
        raise PcdError(
            "COUNT/SIZE inconsistent with declared fields: "
            f"{len(fields)} fields but {len(sizes)} sizes, {len(types)} types, {len(counts)} counts"
        )
    if any(c != 1 for c in counts):
        raise PcdError("COUNT values other than 1 are not supported")
    for f, t, s in zip(fields, types, sizes):
        if (t, s) not in _DTYPES:
            raise PcdError(f"unsupported TYPE/SIZE {t}{s} for field {f}")
    for coord in ("x", "y", "z"):
        if coord not in fields:
            raise PcdError(f"malformed header: field {coord} is required")
    if len(viewpoint) != 7:
        raise PcdError("malformed header: VIEWPOINT needs 7 values")
    if points != width * height:
        raise PcdError(f"malformed header: POINTS {points} != WIDTH*HEIGHT {width * height}")

    data = meta["DATA"][0].lower()
    if data == "binary_compressed":
        raise PcdError("unsupported DATA encoding: binary_compressed")
    if data not in ("ascii", "binary"):
        raise PcdError(f"unsupported DATA encoding: {data}")

    return {
        "fields": fields,
        "sizes": sizes,
        "types": types,
        "points": points,
        "viewpoint": viewpoint[:3],
        "data": data,
    }


def _decode_rgb(packed: np.ndarray, type_char: str) -> np.ndarray:
    if type_char == "F":
        bits = packed.astype(np.float32).view(np.uint32)
    else:
        bits = packed.astype(np.uint32)
    r = (bits >> 16) & 0xFF
    g = (bits >> 8) & 0xFF
    b = bits & 0xFF
    return np.stack([r, g, b], axis=1).astype(np.uint8)


def _pack_rgb(colors: np.ndarray) -> np.ndarray:
    c = colors.astype(np.uint32)
    bits = (c[:, 0] << 16) | (c[:, 1] << 8) | c[:, 2]
    return bits.view(np.float32)


def load_pcd(path: Union[str, os.PathLike]) -> PointCloud:
    """Load a PCD v0.7 file into a PointCloud.

    NaN coordinate rows are dropped and counted on `dropped_invalid`.
    Raises PcdError for malformed headers, unsupported encodings, or a data
    payload inconsistent with the declared point count.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise PcdError(f"no such file: {path}")
    with open(path, "rb") as fh:
        header_lines: list[str] = []
        while True:
            raw = fh.readline()
            if not raw:
                raise PcdError("malformed header: no DATA line found")
            try:
                line = raw.decode("ascii")
            except UnicodeDecodeError as exc:
                raise PcdError("malformed header: non-ascii bytes before DATA line") from exc
            header_lines.append(line)
            if line.split() and line.split()[0].upper() == "DATA":
                break
        meta = _parse_header(header_lines)
        payload = fh.read()

    fields, types = meta["fields"], meta["types"]
    n_declared = meta["points"]
    dtype = np.dtype([(f"f{i}", _DTYPES[(t, s)]) for i, (t, s) in enumerate(zip(types, meta["sizes"]))])

    if meta["data"] == "binary":
        expected = n_declared * dtype.itemsize
        if len(payload) < expected:
            raise PcdError(
                f"point count mismatch: header declares {n_declared} points, "
                f"payload holds {len(payload) // dtype.itemsize}"
            )
        rows = np.frombuffer(payload[:expected], dtype=dtype)
        columns = {f: rows[f"f{i}"] for i, f in enumerate(fields)}
    else:
        text_rows = [ln.split() for ln in payload.decode("ascii", errors="replace").splitlines() if ln.strip()]
        if len(text_rows) != n_declared:
            raise PcdError(
                f"point count mismatch: header declares {n_declared} points, found {len(text_rows)} rows"
            )
        if any(len(r) != len(fields) for r in text_rows):
            raise PcdError("ascii row has wrong number of columns")
        try:
            table = np.array(text_rows, dtype=np.float64) if text_rows else np.zeros((0, len(fields)))
        except ValueError as exc:
            raise PcdError(f"unparseable ascii data: {exc}") from exc
        columns = {}
        for i, (f, t, s) in enumerate(zip(fields, types, meta["sizes"])):
            # Snap each column to its declared storage type so ascii and
            # binary payloads decode to identical values.
            columns[f] = table[:, i].astype(_DTYPES[(t, s)])

    xyz = np.stack(
        [np.asarray(columns["x"], dtype=np.float64),
         np.asarray(columns["y"], dtype=np.float64),
         np.asarray(columns["z"], dtype=np.float64)],
        axis=1,
    )
    finite = np.isfinite(xyz).all(axis=1)
    dropped = int(len(xyz) - finite.sum())
    xyz = xyz[finite]

    colors = None
    if "rgb" in columns:
        type_char = types[fields.index("rgb")]
        colors = _decode_rgb(np.asarray(columns["rgb"])[finite], type_char)

    normals = curvatures = valid = None
    if all(f in columns for f in ("normal_x", "normal_y", "normal_z")):
        normals = np.stack(
            [np.asarray(columns["normal_x"], dtype=np.float64)[finite],
             np.asarray(columns["normal_y"], dtype=np.float64)[finite],
             np.asarray(columns["normal_z"], dtype=np.float64)[finite]],
            axis=1,
        )
        valid = np.isfinite(normals).all(axis=1)
        if "curvature" in columns:
            curvatures = np.asarray(columns["curvature"], dtype=np.float64)[finite]
        else:
            curvatures = np.zeros(len(normals))

    return PointCloud(
        points=xyz,
        colors=colors,
        normals=normals,
        curvatures=curvatures,
        normal_valid=valid,
        viewpoint=np.asarray(meta["viewpoint"]),
        dropped_invalid=dropped,
    )


def save_pcd(cloud: PointCloud, path: Union[str, os.PathLike], encoding: str = "binary") -> None:
    """Write a cloud as PCD v0.7 with float32 payload fields.

    Binary round-trips are exact for float32-representable values; ascii is
    written with 9 significant digits, which also recovers float32 exactly.
    Raises PcdError for an empty cloud or unknown encoding.
    """
    if encoding not in ("ascii", "binary"):
        raise PcdError(f"unknown encoding: {encoding}")
    if len(cloud) == 0:
        raise PcdError("refusing to save an empty cloud")

    fields = ["x", "y", "z"]
    if cloud.has_colors:
        fields.append("rgb")
    if cloud.has_normals:
        fields += ["normal_x", "normal_y", "normal_z", "curvature"]

    n = len(cloud)
    cols: list[np.ndarray] = [
        cloud.points[:, 0].astype(np.float32),
        cloud.points[:, 1].astype(np.float32),
        cloud.points[:, 2].astype(np.float32),
    ]
    if cloud.has_colors:
        cols.append(_pack_rgb(cloud.colors))
    if cloud.has_normals:
        nrm = cloud.normals.astype(np.float32)
        cols += [nrm[:, 0], nrm[:, 1], nrm[:, 2], cloud.curvatures.astype(np.float32)]

    vx, vy, vz = (repr(float(v)) for v in cloud.viewpoint)
    header = "\n".join(
        [
            "# .PCD v0.7 - Point Cloud Data file format",
            "VERSION 0.7",
            "FIELDS " + " ".join(fields),
            "SIZE " + " ".join(["4"] * len(fields)),
            "TYPE " + " ".join(["F"] * len(fields)),
            "COUNT " + " ".join(["1"] * len(fields)),
            f"WIDTH {n}",
            "HEIGHT 1",
            f"VIEWPOINT {vx} {vy} {vz} 1 0 0 0",
            f"POINTS {n}",
            f"DATA {encoding}",
        ]
    ) + "\n"

    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if encoding == "binary":
            rows = np.empty(n, dtype=np.dtype([(f"f{i}", "<f4") for i in range(len(cols))]))
            for i, col in enumerate(cols):
                rows[f"f{i}"] = col
            fh.write(rows.tobytes())
        else:
            table = np.stack([c.astype(np.float32) for c in cols], axis=1)
            lines = [" ".join(f"{v:.9g}" for v in row) for row in table.astype(np.float64)]
            fh.write(("\n".join(lines) + "\n").encode("ascii"))
