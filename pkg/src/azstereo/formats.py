"""Binary map files, OBJ meshes, and metrics JSON.

Map formats (all little-endian, row-major):

* azimuth  "AZMP": magic, u32 version=1, u32 width, u32 height, then
  width*height float32 radians, NaN = invalid pixel.
* mask     "MSK1": magic, u32 width, u32 height, then width*height
  bytes of 0/1.
* normals  "NRM3": magic, u32 width, u32 height, then interleaved
  3*width*height float32 world-frame components, NaN triplets where
  masked out.
* depth    "DPT1": magic, u32 width, u32 height, then width*height
  float32 ray parameters, NaN = no intersection.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

AZIMUTH_MAGIC = b"AZMP"
AZIMUTH_VERSION = 1
MASK_MAGIC = b"MSK1"
NORMAL_MAGIC = b"NRM3"
DEPTH_MAGIC = b"DPT1"


class FileFormatError(ValueError):
    """Wrong magic, truncated payload, or inconsistent header."""


def _read_header(raw: bytes, magic: bytes, n_fields: int):
    if len(raw) < len(magic) + 4 * n_fields or raw[: len(magic)] != magic:
        raise FileFormatError(f"bad magic, expected {magic!r}")
    fields = struct.unpack_from(f"<{n_fields}I", raw, len(magic))
    return fields, len(magic) + 4 * n_fields


def _payload(raw: bytes, offset: int, dtype, count: int) -> np.ndarray:
    itemsize = np.dtype(dtype).itemsize
    if len(raw) != offset + count * itemsize:
        raise FileFormatError("payload size does not match header")
    return np.frombuffer(raw, dtype=dtype, count=count, offset=offset)


def write_azimuth(path, values: np.ndarray):
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape
    header = AZIMUTH_MAGIC + struct.pack("<III", AZIMUTH_VERSION, w, h)
    Path(path).write_bytes(header + values.astype("<f4").tobytes())


def read_azimuth(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    (version, w, h), off = _read_header(raw, AZIMUTH_MAGIC, 3)
    if version != AZIMUTH_VERSION:
        raise FileFormatError(f"unsupported azimuth version {version}")
    return _payload(raw, off, "<f4", w * h).reshape(h, w).astype(np.float64)


def write_mask(path, values: np.ndarray):
    values = np.asarray(values).astype(bool)
    h, w = values.shape
    header = MASK_MAGIC + struct.pack("<II", w, h)
    Path(path).write_bytes(header + values.astype(np.uint8).tobytes())


def read_mask(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    (w, h), off = _read_header(raw, MASK_MAGIC, 2)
    return _payload(raw, off, np.uint8, w * h).reshape(h, w).astype(bool)


def write_normals(path, values: np.ndarray):
    values = np.asarray(values, dtype=np.float64)
    h, w, _ = values.shape
    header = NORMAL_MAGIC + struct.pack("<II", w, h)
    Path(path).write_bytes(header + values.astype("<f4").tobytes())


def read_normals(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    (w, h), off = _read_header(raw, NORMAL_MAGIC, 2)
    return _payload(raw, off, "<f4", 3 * w * h).reshape(h, w, 3).astype(np.float64)


def write_depth(path, values: np.ndarray):
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape
    header = DEPTH_MAGIC + struct.pack("<II", w, h)
    Path(path).write_bytes(header + values.astype("<f4").tobytes())


def read_depth(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    (w, h), off = _read_header(raw, DEPTH_MAGIC, 2)
    return _payload(raw, off, "<f4", w * h).reshape(h, w).astype(np.float64)


def write_obj(path, vertices: np.ndarray, triangles: np.ndarray):
    """ASCII OBJ with v and f records (1-based indices)."""
    lines = []
    for v in np.asarray(vertices, dtype=np.float64):
        lines.append(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")
    for tri in np.asarray(triangles, dtype=np.int64):
        lines.append(f"f {tri[0] + 1} {tri[1] + 1} {tri[2] + 1}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> tuple[np.ndarray, np.ndarray]:
    vertices, triangles = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            vertices.append([float(p) for p in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:4]]
            triangles.append(idx)
    if not vertices:
        return np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)
    return np.asarray(vertices, dtype=np.float64), np.asarray(triangles, dtype=np.int64)


def write_metrics(path, metrics: dict):
    Path(path).write_text(json.dumps(metrics, indent=2) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
