"""Analytic signed-distance shapes used as ground truth.

Each shape provides an exact SDF and an exact unit gradient everywhere
off its medial axis, plus closed-form (or tracing-based) first ray
intersections for rendering and for use as test oracles.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass
class FieldEval:
    """A field sample: signed distance plus spatial gradient.

    ``gradient_defined`` is False on medial-axis points, where the
    returned gradient is an arbitrary unit vector.
    """

    value: float
    gradient: np.ndarray
    gradient_defined: bool = True


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise ValueError("zero-length vector")
    return v / n


@dataclass(frozen=True)
class Sphere:
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.5

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    def sdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.linalg.norm(x - np.asarray(self.center), axis=-1) - self.radius

    def gradient(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Unit gradient and a defined-mask; the center is the medial axis."""
        x = np.asarray(x, dtype=np.float64)
        d = x - np.asarray(self.center)
        n = np.linalg.norm(d, axis=-1, keepdims=True)
        defined = n[..., 0] > 1e-12
        g = np.where(defined[..., None], d / np.where(n > 0, n, 1.0), [0.0, 0.0, 1.0])
        return g, defined


@dataclass(frozen=True)
class Torus:
    """Torus centered at the origin around ``axis``."""

    major_radius: float = 0.5
    minor_radius: float = 0.2
    axis: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not (0 < self.minor_radius < self.major_radius):
            raise ValueError("need 0 < minor_radius < major_radius")

    @cached_property
    def _frame(self) -> np.ndarray:
        """Rotation whose rows map world coordinates to the axis frame."""
        a = _unit(self.axis)
        helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = _unit(np.cross(helper, a))
        e2 = np.cross(a, e1)
        return np.stack([e1, e2, a])

    def sdf(self, x: np.ndarray) -> np.ndarray:
        p = np.asarray(x, dtype=np.float64) @ self._frame.T
        rho = np.hypot(p[..., 0], p[..., 1])
        return np.hypot(rho - self.major_radius, p[..., 2]) - self.minor_radius

    def gradient(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = np.asarray(x, dtype=np.float64) @ self._frame.T
        rho = np.hypot(p[..., 0], p[..., 1])
        q0 = rho - self.major_radius
        m = np.hypot(q0, p[..., 2])
        defined = (rho > 1e-12) & (m > 1e-12)
        rho_s = np.where(rho > 0, rho, 1.0)
        m_s = np.where(m > 0, m, 1.0)
        g_local = np.stack(
            [
                (q0 / m_s) * (p[..., 0] / rho_s),
                (q0 / m_s) * (p[..., 1] / rho_s),
                p[..., 2] / m_s,
            ],
            axis=-1,
        )
        g = np.where(defined[..., None], g_local @ self._frame, self._frame[2])
        return g, defined


@dataclass(frozen=True)
class RoundedBox:
    """Axis-aligned box with rounded edges, centered at the origin."""

    half_extents: tuple = (0.4, 0.3, 0.2)
    corner_radius: float = 0.05

    def __post_init__(self):
        if self.corner_radius < 0:
            raise ValueError("corner radius must be non-negative")

    def sdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        q = np.abs(x) - np.asarray(self.half_extents)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside - self.corner_radius

    def gradient(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        sign = np.where(x >= 0, 1.0, -1.0)
        q = np.abs(x) - np.asarray(self.half_extents)
        qp = np.maximum(q, 0.0)
        out_norm = np.linalg.norm(qp, axis=-1)
        outside = out_norm > 1e-12
        # Outside: gradient points away from the nearest box point.
        g_out = qp * sign / np.where(out_norm > 0, out_norm, 1.0)[..., None]
        # Inside: gradient along the axis of the least-deep face.
        kmax = q.argmax(axis=-1)
        g_in = np.zeros_like(np.atleast_2d(x.reshape(-1, 3)), dtype=np.float64).reshape(x.shape)
        idx = np.indices(kmax.shape)
        g_in[(*idx, kmax)] = np.take_along_axis(sign, kmax[..., None], axis=-1)[..., 0]
        g = np.where(outside[..., None], g_out, g_in)
        # Medial axis: interior argmax ties (equidistant faces).
        q_sorted = np.sort(q, axis=-1)
        tie = ~outside & (np.abs(q_sorted[..., -1] - q_sorted[..., -2]) < 1e-12)
        return g, ~tie


AnalyticShape = Sphere | Torus | RoundedBox


def analytic_sdf(shape: AnalyticShape, x) -> FieldEval:
    """Exact signed distance and unit gradient at a single point."""
    x = np.asarray(x, dtype=np.float64).reshape(3)
    g, defined = shape.gradient(x)
    return FieldEval(value=float(shape.sdf(x)), gradient=g, gradient_defined=bool(defined))


def ray_intersect(shape: AnalyticShape, origins, dirs, t_min=0.0, t_max=np.inf):
    """First ray intersections with an analytic shape.

    origins, dirs: (N, 3) with unit directions.  Returns
    (hit (N,) bool, t (N,) with NaN where missed).  Sphere and torus use
    closed forms; the rounded box marches its exact SDF.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    if isinstance(shape, Sphere):
        return _ray_sphere(shape, origins, dirs, t_min, t_max)
    if isinstance(shape, Torus):
        return _ray_torus(shape, origins, dirs, t_min, t_max)
    return _ray_march(shape, origins, dirs, t_min, t_max)


def _ray_sphere(shape, origins, dirs, t_min, t_max):
    oc = origins - np.asarray(shape.center)
    b = np.einsum("ij,ij->i", oc, dirs)
    c = np.einsum("ij,ij->i", oc, oc) - shape.radius**2
    disc = b * b - c
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t_near = -b - sq
    t_far = -b + sq
    t = np.where(t_near >= t_min, t_near, t_far)
    hit &= (t >= t_min) & (t <= t_max)
    return hit, np.where(hit, t, np.nan)


def _ray_torus(shape, origins, dirs, t_min, t_max):
    frame = shape._frame
    o = origins @ frame.T
    d = dirs @ frame.T
    R2 = shape.major_radius**2
    od = np.einsum("ij,ij->i", o, d)
    o2 = np.einsum("ij,ij->i", o, o)
    k1 = o2 + R2 - shape.minor_radius**2
    J = d[:, 0] ** 2 + d[:, 1] ** 2
    K = 2.0 * (o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1])
    L = o[:, 0] ** 2 + o[:, 1] ** 2
    # Quartic t^4 + a3 t^3 + a2 t^2 + a1 t + a0 = 0 for unit directions.
    a3 = 4.0 * od
    a2 = 4.0 * od**2 + 2.0 * k1 - 4.0 * R2 * J
    a1 = 4.0 * od * k1 - 4.0 * R2 * K
    a0 = k1**2 - 4.0 * R2 * L
    n = origins.shape[0]
    comp = np.zeros((n, 4, 4))
    comp[:, 1, 0] = comp[:, 2, 1] = comp[:, 3, 2] = 1.0
    comp[:, 0, 3] = -a0
    comp[:, 1, 3] = -a1
    comp[:, 2, 3] = -a2
    comp[:, 3, 3] = -a3
    roots = np.linalg.eigvals(comp)  # (N, 4) complex
    scale = 1.0 + np.abs(roots.real)
    real = np.abs(roots.imag) <= 1e-7 * scale
    t_cand = np.where(real, roots.real, np.nan)
    # Newton-polish candidates on the exact SDF to scrub eigvalue noise.
    for _ in range(3):
        pts = origins[:, None, :] + t_cand[..., None] * dirs[:, None, :]
        flat = pts.reshape(-1, 3)
        ok = np.isfinite(flat).all(axis=1)
        f = np.full(flat.shape[0], np.nan)
        gdot = np.ones(flat.shape[0])
        if ok.any():
            f[ok] = shape.sdf(flat[ok])
            g, _ = shape.gradient(flat[ok])
            gd = np.einsum("ij,ij->i", g, np.repeat(dirs, 4, axis=0)[ok])
            gdot[ok] = np.where(np.abs(gd) > 1e-9, gd, 1.0)
        t_cand = t_cand - (f / gdot).reshape(n, 4)
    pts = origins[:, None, :] + t_cand[..., None] * dirs[:, None, :]
    f_final = np.full((n, 4), np.inf)
    flat = pts.reshape(-1, 3)
    ok = np.isfinite(flat).all(axis=1)
    f_final.reshape(-1)[ok] = np.abs(shape.sdf(flat[ok]))
    good = (f_final < 1e-9) & (t_cand >= t_min) & (t_cand <= t_max)
    t_sel = np.where(good, t_cand, np.inf).min(axis=1)
    hit = np.isfinite(t_sel)
    return hit, np.where(hit, t_sel, np.nan)


def _ray_march(shape, origins, dirs, t_min, t_max, eps=1e-9, max_steps=256):
    n = origins.shape[0]
    t = np.full(n, max(t_min, 0.0))
    hit = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)
    if not np.isfinite(t_max):
        t_max = 1e6
    for _ in range(max_steps):
        if not active.any():
            break
        pts = origins[active] + t[active, None] * dirs[active]
        f = shape.sdf(pts)
        conv = np.abs(f) < eps
        idx = np.flatnonzero(active)
        hit[idx[conv]] = True
        active[idx[conv]] = False
        t[idx[~conv]] += f[~conv]
        overshoot = t > t_max
        active &= ~overshoot
    return hit, np.where(hit, t, np.nan)
