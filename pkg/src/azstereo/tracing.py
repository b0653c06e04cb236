"""Ray and surface-point marching over signed-distance fields.

Sphere tracing steps each ray by the signed distance at the current
point; the minimal-distance search supports the silhouette term; the
reverse march from a surface point toward a camera decides visibility
with four termination conditions (dipped inside, converged onto another
surface point, passed the camera center, or ran out of steps).

All routines accept anything exposing a vectorized ``sdf(points) ->
values`` (neural networks, analytic shapes) or a bare callable.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch

DEFAULT_EPS = 1e-5
DEFAULT_MAX_STEPS = 64
DEFAULT_PUSH = 1e-3

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class InvalidStartError(ValueError):
    """Sphere tracing must start outside the surface."""


class UnstableIntersectionError(ValueError):
    """Grazing ray: the gradient is nearly orthogonal to the direction."""


def as_sdf(field):
    """Coerce a field-like object to a vectorized sdf callable."""
    if callable(field) and not hasattr(field, "sdf"):
        return field
    return field.sdf


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_min: float = 0.0
    t_max: float = np.inf

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        if not self.t_min < self.t_max:
            raise ValueError("need t_min < t_max")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t):
        return self.origin + np.multiply.outer(np.asarray(t, dtype=np.float64), self.direction)


@dataclass
class Hit:
    point: np.ndarray
    t: float
    steps: int
    residual: float


class VisibilityOutcome(Enum):
    VISIBLE = "visible"
    OCCLUDED_BY_HIT = "occluded_by_hit"
    ENTERED_SURFACE = "entered_surface"
    MAX_STEPS_EXCEEDED = "max_steps_exceeded"


_OUTCOME_CODES = {
    0: VisibilityOutcome.VISIBLE,
    1: VisibilityOutcome.OCCLUDED_BY_HIT,
    2: VisibilityOutcome.ENTERED_SURFACE,
    3: VisibilityOutcome.MAX_STEPS_EXCEEDED,
}


@dataclass
class VisibilityResult:
    outcome: VisibilityOutcome
    steps: int

    @property
    def visible(self) -> bool:
        return self.outcome is VisibilityOutcome.VISIBLE


def sphere_trace(field, ray: Ray, eps: float = DEFAULT_EPS, max_steps: int = DEFAULT_MAX_STEPS):
    """March a single ray; returns a Hit or None on a miss.

    Raises InvalidStartError when the march would start at or inside
    the surface.
    """
    sdf = as_sdf(field)
    hit, t, steps, invalid = sphere_trace_batch(
        sdf,
        ray.origin[None],
        ray.direction[None],
        np.array([ray.t_min]),
        np.array([ray.t_max]),
        eps,
        max_steps,
    )
    if invalid[0]:
        raise InvalidStartError("sphere trace starts inside the surface")
    if not hit[0]:
        return None
    point = ray.at(t[0])
    residual = abs(float(sdf(point[None])[0]))
    return Hit(point=point, t=float(t[0]), steps=int(steps[0]), residual=residual)


def sphere_trace_batch(sdf, origins, dirs, t_min, t_max, eps=DEFAULT_EPS, max_steps=DEFAULT_MAX_STEPS):
    """Vectorized sphere tracing.

    Returns (hit, t, steps, invalid_start); rays flagged invalid_start
    began at f <= 0 and are reported as non-hits.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = origins.shape[0]
    t = np.array(np.broadcast_to(np.asarray(t_min, dtype=np.float64), (n,)))
    tmax = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,))
    f0 = sdf(origins + t[:, None] * dirs)
    invalid = f0 <= 0.0
    hit = np.abs(f0) < eps
    hit &= ~invalid
    steps = np.zeros(n, dtype=np.int64)
    active = ~invalid & ~hit
    f = f0.copy()
    for _ in range(max_steps):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        t[idx] += f[idx]
        escaped = t[idx] > tmax[idx]
        active[idx[escaped]] = False
        idx = idx[~escaped]
        if idx.size == 0:
            continue
        pts = origins[idx] + t[idx, None] * dirs[idx]
        fi = sdf(pts)
        f[idx] = fi
        steps[idx] += 1
        conv = np.abs(fi) < eps
        hit[idx[conv]] = True
        active[idx[conv]] = False
    return hit, np.where(hit, t, np.nan), steps, invalid


def min_sdf_along_ray(field, ray: Ray, samples: int = 64, refine: int = 8, extra_t=None):
    """Minimum field value along a ray segment.

    Midpoint-stratified samples over [t_min, t_max] followed by a local
    golden-section refinement around the best sample.  Returns
    (f_star, t_star).
    """
    sdf = as_sdf(field)
    extra = None if extra_t is None else np.array([[float(extra_t)]])
    f, t = min_sdf_batch(
        sdf,
        ray.origin[None],
        ray.direction[None],
        np.array([ray.t_min]),
        np.array([ray.t_max]),
        samples,
        refine,
        extra,
    )
    return float(f[0]), float(t[0])


def min_sdf_batch(sdf, origins, dirs, t_min, t_max, samples=64, refine=8, extra_t=None):
    """Vectorized minimal SDF along ray segments; returns (f_star, t_star).

    ``extra_t`` (N, K) appends known candidate parameters (e.g. traced
    hits) to the stratified grid so intersecting rays always report a
    non-positive minimum.
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = origins.shape[0]
    t0 = np.broadcast_to(np.asarray(t_min, dtype=np.float64), (n,))
    t1 = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,))
    frac = (np.arange(samples) + 0.5) / samples
    ts = t0[:, None] + frac[None, :] * (t1 - t0)[:, None]
    if extra_t is not None:
        extra = np.asarray(extra_t, dtype=np.float64).reshape(n, -1)
        extra = np.where(np.isfinite(extra), extra, t0[:, None])
        ts = np.concatenate([ts, np.clip(extra, t0[:, None], t1[:, None])], axis=1)
        ts = np.sort(ts, axis=1)
    pts = origins[:, None, :] + ts[..., None] * dirs[:, None, :]
    fs = sdf(pts.reshape(-1, 3)).reshape(n, -1)
    best = fs.argmin(axis=1)
    rows = np.arange(n)
    f_best = fs[rows, best]
    t_best = ts[rows, best]
    # Golden-section refinement in the bracket around the best sample
    # (two probe evaluations per iteration keeps the update simple).
    a = ts[rows, np.maximum(best - 1, 0)]
    b = ts[rows, np.minimum(best + 1, ts.shape[1] - 1)]
    for _ in range(refine):
        c = b - _GOLDEN * (b - a)
        d = a + _GOLDEN * (b - a)
        fc = sdf(origins + c[:, None] * dirs)
        fd = sdf(origins + d[:, None] * dirs)
        take_c = fc < fd
        b = np.where(take_c, d, b)
        a = np.where(take_c, a, c)
        f_ref = np.where(take_c, fc, fd)
        t_ref = np.where(take_c, c, d)
        better = f_ref < f_best
        f_best = np.where(better, f_ref, f_best)
        t_best = np.where(better, t_ref, t_best)
    return f_best, t_best


def visibility(field, x, camera, push: float = DEFAULT_PUSH, eps: float = DEFAULT_EPS,
               max_steps: int = DEFAULT_MAX_STEPS) -> VisibilityResult:
    """Is the surface point ``x`` visible from ``camera``?

    Marches from the point (pushed off the surface by ``push``) toward
    the camera center, stepping by the signed distance.
    """
    sdf = as_sdf(field)
    codes, steps = visibility_batch(
        sdf,
        np.asarray(x, dtype=np.float64).reshape(1, 3),
        camera.pose.center[None],
        push,
        eps,
        max_steps,
    )
    return VisibilityResult(outcome=_OUTCOME_CODES[int(codes[0])], steps=int(steps[0]))


def visibility_batch(sdf, points, centers, push=DEFAULT_PUSH, eps=DEFAULT_EPS,
                     max_steps=DEFAULT_MAX_STEPS):
    """Vectorized reverse march of surface points toward camera centers.

    Returns (codes, steps) with codes 0=visible, 1=occluded by a hit,
    2=entered the surface, 3=step cap exceeded (treated invisible).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    n = points.shape[0]
    delta = centers - points
    dist = np.linalg.norm(delta, axis=1)
    dirs = delta / np.maximum(dist, 1e-300)[:, None]
    s = np.full(n, push)
    codes = np.full(n, 3, dtype=np.int64)
    steps = np.zeros(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    # Degenerate query: the point already sits at the camera center.
    at_cam = dist <= push
    codes[at_cam] = 0
    active[at_cam] = False
    for _ in range(max_steps):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        pts = points[idx] + s[idx, None] * dirs[idx]
        f = sdf(pts)
        steps[idx] += 1
        entered = f < 0.0
        converged = ~entered & (f < eps)
        codes[idx[entered]] = 2
        codes[idx[converged]] = 1
        done = entered | converged
        active[idx[done]] = False
        idx = idx[~done]
        if idx.size == 0:
            continue
        s[idx] += f[~done]
        passed = s[idx] >= dist[idx]
        codes[idx[passed]] = 0
        active[idx[passed]] = False
    return codes, steps


def differentiable_intersection(field, ray: Ray, hit: Hit, min_slope: float = 1e-6) -> torch.Tensor:
    """Intersection point carrying parameter sensitivity.

    Implements the implicit-function derivative of the moving intersection:
    ``x(theta) = x0 - dir * f(x0; theta) / (grad_f(x0; theta0) . dir)``
    with the denominator detached.  Raises UnstableIntersectionError for
    grazing rays.
    """
    x0 = torch.from_numpy(np.asarray(hit.point, dtype=np.float64).reshape(1, 3))
    d = torch.from_numpy(np.asarray(ray.direction, dtype=np.float64))
    _, g = field.gradient(x0, create_graph=False)
    denom = float(g.detach().reshape(3) @ d)
    if abs(denom) <= min_slope:
        raise UnstableIntersectionError(f"|grad . dir| = {abs(denom):.2e}")
    f0 = field.forward(x0).reshape(())
    return x0.detach().reshape(3) - d * (f0 / denom)
