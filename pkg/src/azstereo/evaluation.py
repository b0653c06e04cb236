"""Geometry and normal metrics, isosurface extraction, visible-point
sampling, and normal-map rendering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from skimage import measure

from . import tracing
from .synth import pixel_rays


class MetricError(ValueError):
    """Empty inputs or mismatched dimensions for a metric."""


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (T, 3) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle index out of range")

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0


@dataclass
class Metrics:
    chamfer: float
    precision: float
    recall: float
    fscore: float
    mae_deg: float

    def to_dict(self) -> dict:
        return {
            "chamfer": self.chamfer,
            "precision": self.precision,
            "recall": self.recall,
            "fscore": self.fscore,
            "mae_deg": self.mae_deg,
        }


def chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean nearest-neighbor distance between point sets.

    (1/2|a|) sum min-dist(a->b) + (1/2|b|) sum min-dist(b->a), with
    exact nearest neighbors.
    """
    a = _require_points(a)
    b = _require_points(b)
    d_ab = cKDTree(b).query(a)[0]
    d_ba = cKDTree(a).query(b)[0]
    return float(0.5 * d_ab.mean() + 0.5 * d_ba.mean())


def fscore(a: np.ndarray, b: np.ndarray, tau: float) -> tuple[float, float, float]:
    """Precision (a within tau of b), recall (b within tau of a), and
    their harmonic mean."""
    if tau <= 0:
        raise MetricError("tau must be positive")
    a = _require_points(a)
    b = _require_points(b)
    d_ab = cKDTree(b).query(a)[0]
    d_ba = cKDTree(a).query(b)[0]
    precision = float((d_ab < tau).mean())
    recall = float((d_ba < tau).mean())
    f = 0.0 if precision + recall == 0 else 2.0 * precision * recall / (precision + recall)
    return precision, recall, f


def _require_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    if x.shape[0] == 0:
        raise MetricError("empty point set")
    return x


def normal_mae(pred: np.ndarray, gt: np.ndarray, mask=None) -> float:
    """Mean angular error in degrees over valid masked pixels.

    Full-vector comparison: opposed normals score 180 degrees.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise MetricError("normal maps have different shapes")
    valid = np.isfinite(pred).all(axis=-1) & np.isfinite(gt).all(axis=-1)
    if mask is not None:
        valid &= np.asarray(mask).astype(bool)
    if not valid.any():
        raise MetricError("no valid pixels to compare")
    p = pred[valid]
    g = gt[valid]
    p = p / np.linalg.norm(p, axis=1, keepdims=True)
    g = g / np.linalg.norm(g, axis=1, keepdims=True)
    dots = np.clip(np.einsum("ij,ij->i", p, g), -1.0, 1.0)
    return float(np.degrees(np.arccos(dots)).mean())


def marching_cubes(field, bbox, resolution: int) -> Mesh:
    """Zero level set triangulation on a regular grid with linear edge
    interpolation.  A field positive everywhere yields an empty mesh.
    """
    if resolution < 8:
        raise ValueError("resolution must be at least 8 per axis")
    sdf = tracing.as_sdf(field)
    lo, hi = np.asarray(bbox[0], dtype=np.float64), np.asarray(bbox[1], dtype=np.float64)
    axes = [np.linspace(lo[k], hi[k], resolution) for k in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    values = sdf(grid.reshape(-1, 3)).reshape(resolution, resolution, resolution)
    if values.min() > 0.0 or values.max() < 0.0:
        return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    spacing = (hi - lo) / (resolution - 1)
    verts, faces, _, _ = measure.marching_cubes(values, level=0.0, spacing=tuple(spacing))
    verts = verts + lo
    # Drop degenerate triangles left by the extraction.
    v = verts[faces]
    areas = 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)
    return Mesh(verts, faces[areas > 1e-12])


def mesh_edge_counts(mesh: Mesh) -> dict:
    """Undirected edge -> number of incident triangles."""
    edges = {}
    for tri in mesh.triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            edges[key] = edges.get(key, 0) + 1
    return edges


def mesh_is_watertight(mesh: Mesh) -> bool:
    return all(c == 2 for c in mesh_edge_counts(mesh).values())


def mesh_euler_characteristic(mesh: Mesh) -> int:
    used = np.unique(mesh.triangles)
    return int(len(used) - len(mesh_edge_counts(mesh)) + len(mesh.triangles))


def ray_mesh_first_hit(mesh: Mesh, origins: np.ndarray, dirs: np.ndarray,
                       chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """First ray-triangle intersections (Moller-Trumbore), chunked over
    rays to bound memory.  Returns (hit, t)."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = origins.shape[0]
    hit = np.zeros(n, dtype=bool)
    t_out = np.full(n, np.nan)
    if mesh.is_empty:
        return hit, t_out
    v0 = mesh.vertices[mesh.triangles[:, 0]]
    e1 = mesh.vertices[mesh.triangles[:, 1]] - v0
    e2 = mesh.vertices[mesh.triangles[:, 2]] - v0
    for start in range(0, n, chunk):
        o = origins[start : start + chunk]
        d = dirs[start : start + chunk]
        p = np.cross(d[:, None, :], e2[None, :, :])
        det = np.einsum("rtj,tj->rt", p, e1)
        ok = np.abs(det) > 1e-12
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = o[:, None, :] - v0[None, :, :]
        u = np.einsum("rtj,rtj->rt", s, p) * inv
        q = np.cross(s, e1[None, :, :])
        v = np.einsum("rj,rtj->rt", d, q) * inv
        t = np.einsum("tj,rtj->rt", e2, q) * inv
        good = ok & (u >= -1e-12) & (v >= -1e-12) & (u + v <= 1.0 + 1e-12) & (t > 1e-9)
        t = np.where(good, t, np.inf)
        t_best = t.min(axis=1)
        sel = np.isfinite(t_best)
        hit[start : start + chunk] = sel
        t_out[start : start + chunk] = np.where(sel, t_best, np.nan)
    return hit, t_out


def visible_points(surface, cameras, resolution=None, eps: float = 1e-5,
                   max_steps: int = 128, t_min: float = 1e-6, t_max: float = np.inf):
    """First-intersection points of every pixel ray, unioned over views.

    ``surface`` is a field-like object (sphere traced) or a Mesh (exact
    ray-triangle intersection).  ``resolution`` overrides the intrinsic
    image size.
    """
    if not cameras:
        raise MetricError("need at least one camera")
    points = []
    for cam in cameras:
        cam_r = cam if resolution is None else _with_resolution(cam, resolution)
        origin, dirs = pixel_rays(cam_r)
        flat = dirs.reshape(-1, 3)
        origins = np.broadcast_to(origin, flat.shape)
        if isinstance(surface, Mesh):
            hit, t = ray_mesh_first_hit(surface, origins, flat)
        else:
            hit, t, _, invalid = tracing.sphere_trace_batch(
                tracing.as_sdf(surface), origins, flat,
                np.full(flat.shape[0], t_min), np.full(flat.shape[0], t_max),
                eps=eps, max_steps=max_steps,
            )
            hit = hit & ~invalid
        if hit.any():
            points.append(origin + t[hit, None] * flat[hit])
    if not points:
        return np.zeros((0, 3))
    return np.concatenate(points, axis=0)


def _with_resolution(camera, resolution):
    from .geom import Camera, CameraIntrinsics

    w, h = resolution if isinstance(resolution, (tuple, list)) else (resolution, resolution)
    k = camera.intrinsics
    sx, sy = w / k.width, h / k.height
    intr = CameraIntrinsics(
        fx=k.fx * sx,
        fy=k.fy * sy,
        cx=(k.cx + 0.5) * sx - 0.5,
        cy=(k.cy + 0.5) * sy - 0.5,
        width=w,
        height=h,
    )
    return Camera(intr, camera.pose)


def render_normal_map(field, camera, eps: float = 1e-5, max_steps: int = 128,
                      t_min: float = 1e-6, t_max: float = np.inf):
    """Sphere-trace every pixel and return camera-facing unit normals.

    Returns (normals (H, W, 3) with NaN triplets on misses, mask).
    """
    origin, dirs = pixel_rays(camera)
    h, w = dirs.shape[:2]
    flat = dirs.reshape(-1, 3)
    origins = np.broadcast_to(origin, flat.shape)
    hit, t, _, invalid = tracing.sphere_trace_batch(
        tracing.as_sdf(field), origins, flat,
        np.full(flat.shape[0], t_min), np.full(flat.shape[0], t_max),
        eps=eps, max_steps=max_steps,
    )
    hit = hit & ~invalid
    normals = np.full((h * w, 3), np.nan)
    if hit.any():
        pts = origin + t[hit, None] * flat[hit]
        if hasattr(field, "sdf_gradient"):
            _, g = field.sdf_gradient(pts)
        else:
            g, _ = field.gradient(pts)
        g = g / np.linalg.norm(g, axis=1, keepdims=True)
        # Flip away-facing normals toward the camera.
        facing = np.einsum("ij,ij->i", g, flat[hit])
        g = np.where(facing[:, None] > 0, -g, g)
        normals[hit] = g
    return normals.reshape(h, w, 3), hit.reshape(h, w)
