"""Camera models, azimuth/tangent algebra, tangent-stack rank analysis,
and camera normalization.

Conventions used throughout the package:

* World-to-camera transform ``x_c = R @ x + t``; the rows ``r1, r2, r3``
  of ``R`` are the world directions of the camera x-, y-, and optical
  axes.
* Pixel coordinates: ``u = fx * x_c / z_c + cx`` (rightward),
  ``v = fy * y_c / z_c + cy`` (downward, along the camera y-axis).
  Array element ``[row, col]`` corresponds to the continuous pixel
  coordinate ``(u, v) = (col, row)``.
* Azimuth of a world normal ``n``: ``phi = atan2(r2 . n, r1 . n)``
  mapped into ``[0, 2*pi)``.  Only the camera-frame x and y components
  of the normal enter, so the zenith angle never needs to be computed.
* A pixel azimuth lifts to the world-space unit tangent
  ``t(phi) = r1 * sin(phi) - r2 * cos(phi)``, which is orthogonal to
  the surface normal and parallel to the image plane.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * np.pi

# Normals within this of the optical axis have no defined azimuth.
AZIMUTH_EPS = 1e-6

# Default singular-value ratio tolerances for rank classification.
RANK_TOL_LO = 1e-6
RANK_TOL_HI = 1e-3


class BehindCameraError(ValueError):
    """Point has non-positive camera-frame depth."""


class UndefinedAzimuthError(ValueError):
    """Normal is parallel to the optical axis; azimuth is 0 = 0."""


class DegenerateNormalError(ValueError):
    """Tangent stack does not span a 2D tangent plane."""


class DegenerateRigError(ValueError):
    """All optical axes collinear; normalization system is singular."""


class EmptyStackError(ValueError):
    """Rank classification needs at least one tangent row."""


def _as_vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in ("width", "height"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform ``x_c = R x + t``.

    ``R`` must be a rotation matrix (orthonormal within 1e-9, det +1).
    """

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.ascontiguousarray(np.asarray(self.R, dtype=np.float64).reshape(3, 3))
        t = _as_vec3(self.t).copy()
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9):
            raise ValueError("R is not orthonormal within 1e-9")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("det(R) != 1 within 1e-9")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @property
    def r1(self) -> np.ndarray:
        return self.R[0]

    @property
    def r2(self) -> np.ndarray:
        return self.R[1]

    @property
    def r3(self) -> np.ndarray:
        return self.R[2]

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates (-R^T t)."""
        return -self.R.T @ self.t


@dataclass(frozen=True)
class Camera:
    intrinsics: CameraIntrinsics
    pose: CameraPose


@dataclass
class AzimuthMap:
    """Per-pixel azimuth angles in radians, NaN where undefined."""

    values: np.ndarray  # (H, W) float64, valid entries in [0, 2*pi)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("azimuth map must be 2D")
        valid = self.values[np.isfinite(self.values)]
        if valid.size and (valid.min() < 0.0 or valid.max() >= TWO_PI):
            raise ValueError("valid azimuth values must lie in [0, 2*pi)")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)


@dataclass
class SilhouetteMask:
    """Binary per-pixel occupancy."""

    values: np.ndarray  # (H, W) bool

    def __post_init__(self):
        self.values = np.asarray(self.values).astype(bool)
        if self.values.ndim != 2:
            raise ValueError("mask must be 2D")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def project(camera: Camera, x) -> tuple[float, float, float]:
    """Project a world point to pixel coordinates.

    Returns (u, v, depth) where depth is the camera-frame z.  Raises
    BehindCameraError when depth <= 0.
    """
    xc = camera.pose.R @ _as_vec3(x) + camera.pose.t
    depth = float(xc[2])
    if depth <= 0.0:
        raise BehindCameraError(f"point has camera-frame depth {depth}")
    k = camera.intrinsics
    u = k.fx * xc[0] / depth + k.cx
    v = k.fy * xc[1] / depth + k.cy
    return float(u), float(v), depth


def project_points(camera: Camera, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of (N, 3) points.

    Returns (uv (N, 2), depth (N,)).  Points behind the camera get
    depth <= 0 and garbage uv; callers filter on depth.
    """
    xs = np.asarray(xs, dtype=np.float64).reshape(-1, 3)
    xc = xs @ camera.pose.R.T + camera.pose.t
    depth = xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(depth == 0.0, np.nan, depth)
        u = camera.intrinsics.fx * xc[:, 0] / z + camera.intrinsics.cx
        v = camera.intrinsics.fy * xc[:, 1] / z + camera.intrinsics.cy
    return np.stack([u, v], axis=1), depth


def azimuth_of_normal(pose: CameraPose, n) -> float:
    """Azimuth in [0, 2*pi) of a unit world normal as seen by the camera.

    Raises UndefinedAzimuthError when the normal is within AZIMUTH_EPS
    of the optical axis (the defining ratio degenerates to 0 = 0).
    """
    n = _as_vec3(n)
    if abs(np.linalg.norm(n) - 1.0) > 1e-6:
        raise ValueError("normal must be unit length within 1e-6")
    nx = float(pose.r1 @ n)
    ny = float(pose.r2 @ n)
    if nx * nx + ny * ny < AZIMUTH_EPS * AZIMUTH_EPS:
        raise UndefinedAzimuthError("normal parallel to the optical axis")
    return _wrap_azimuth(np.arctan2(ny, nx))


def azimuth_of_normals(pose: CameraPose, normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized azimuths of (N, 3) unit normals.

    Returns (phi (N,), valid (N,)); undefined entries are NaN.
    """
    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    nx = normals @ pose.r1
    ny = normals @ pose.r2
    valid = nx * nx + ny * ny >= AZIMUTH_EPS * AZIMUTH_EPS
    phi = np.full(normals.shape[0], np.nan)
    phi[valid] = _wrap_azimuth(np.arctan2(ny[valid], nx[valid]))
    return phi, valid


def _wrap_azimuth(phi):
    """Map angles into [0, 2*pi); rounding can land on 2*pi exactly."""
    w = np.mod(phi, TWO_PI)
    return np.where(w >= TWO_PI, 0.0, w) if np.ndim(w) else (0.0 if w >= TWO_PI else float(w))


def azimuth_to_tangent(pose: CameraPose, phi) -> np.ndarray:
    """Lift azimuth(s) to world-space unit tangent(s).

    t(phi) = r1 sin(phi) - r2 cos(phi).  The result has unit norm, is
    parallel to the image plane, and is orthogonal to any normal whose
    azimuth is phi.  Scalar phi gives (3,), array phi gives (N, 3).
    """
    phi = np.asarray(phi, dtype=np.float64)
    s, c = np.sin(phi), np.cos(phi)
    t = np.multiply.outer(s, pose.r1) - np.multiply.outer(c, pose.r2)
    return t


def tangent_half_pi(pose: CameraPose, phi) -> np.ndarray:
    """Lift of phi + pi/2: t'(phi) = -r1 cos(phi) - r2 sin(phi).

    t' is the in-image-plane rotation of t(phi) by a quarter turn and is
    orthogonal to it; it is the alternative tangent candidate under a
    quarter-turn measurement ambiguity.
    """
    phi = np.asarray(phi, dtype=np.float64)
    s, c = np.sin(phi), np.cos(phi)
    return -np.multiply.outer(c, pose.r1) - np.multiply.outer(s, pose.r2)


@dataclass
class TSCAccumulator:
    """Sum of visible tangent outer products plus the visibility count.

    ``M = sum_i vis_i * t_i t_i^T`` and ``count = sum_i vis_i``.  The
    normalized form ``M / count`` has unit trace whenever count > 0.
    """

    M: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    count: int = 0

    @property
    def is_empty(self) -> bool:
        return self.count == 0

    @property
    def mean_outer(self) -> np.ndarray:
        """The count-normalized matrix; undefined (raises) when empty."""
        if self.count == 0:
            raise ValueError("empty accumulator has no normalized form")
        return self.M / self.count


def accumulate_tsc(tangents, visibility) -> TSCAccumulator:
    """Accumulate tangent outer products over visible views.

    Negating any subset of the input tangents leaves the result
    bitwise-identical because only outer products enter.
    """
    tangents = np.asarray(tangents, dtype=np.float64).reshape(-1, 3)
    vis = np.asarray(visibility, dtype=bool).reshape(-1)
    if len(tangents) != len(vis):
        raise ValueError("tangents and visibility must have equal length")
    sel = tangents[vis]
    M = sel.T @ sel
    M = 0.5 * (M + M.T)
    return TSCAccumulator(M=M, count=int(vis.sum()))


class RankClass(Enum):
    LINE = 1
    TANGENT_PLANE = 2
    FULL_SPACE = 3


@dataclass(frozen=True)
class RankClassification:
    rank_class: RankClass
    ambiguous: bool
    singular_values: np.ndarray

    def __eq__(self, other):
        if isinstance(other, RankClass):
            return self.rank_class is other
        return NotImplemented


def classify_rank(stack, tol_lo: float = RANK_TOL_LO, tol_hi: float = RANK_TOL_HI) -> RankClassification:
    """Classify the effective rank of a stack of unit tangent rows.

    Uses singular-value ratios of the (C, 3) stack: FullSpace when
    s3/s1 > tol_hi, TangentPlane when s2/s1 > tol_hi and s3/s1 <= tol_lo,
    Line when s2/s1 <= tol_lo.  Ratios falling between tol_lo and tol_hi
    are reported as the lower class with the ambiguous flag set.
    """
    stack = np.asarray(stack, dtype=np.float64).reshape(-1, 3)
    if stack.shape[0] < 1:
        raise EmptyStackError("rank classification needs at least one row")
    sv = np.linalg.svd(stack, compute_uv=False)
    s = np.zeros(3)
    s[: sv.shape[0]] = sv
    r2 = s[1] / s[0]
    r3 = s[2] / s[0]
    if r3 > tol_hi:
        return RankClassification(RankClass.FULL_SPACE, False, s)
    if r2 > tol_hi:
        return RankClassification(RankClass.TANGENT_PLANE, r3 > tol_lo, s)
    return RankClassification(RankClass.LINE, r2 > tol_lo, s)


def normal_from_tangents(stack, tol_lo: float = RANK_TOL_LO, tol_hi: float = RANK_TOL_HI) -> np.ndarray:
    """Recover the (sign-canonicalized) normal from a rank-2 tangent stack.

    The normal is the right singular vector of the smallest singular
    value.  The sign is presentation-only (the consistency quadratic
    form is sign-invariant), canonicalized so the first nonzero
    component is positive.  Raises DegenerateNormalError unless the
    stack classifies as TangentPlane.
    """
    stack = np.asarray(stack, dtype=np.float64).reshape(-1, 3)
    cls = classify_rank(stack, tol_lo, tol_hi)
    if cls.rank_class is not RankClass.TANGENT_PLANE:
        raise DegenerateNormalError(f"stack classifies as {cls.rank_class.name}")
    _, _, vt = np.linalg.svd(stack)
    n = vt[2]
    for comp in n:
        if comp != 0.0:
            if comp < 0.0:
                n = -n
            break
    return n


def normalize_cameras(cameras, s_r: float) -> tuple[np.ndarray, float, list[Camera]]:
    """Shift and scale camera centers so the observed object fits the unit ball.

    The offset ``x_o`` is the point closest to all optical axes (least
    squares over the axis-distance quadratic); the scale is
    ``s = max_i ||o_i - x_o|| / s_r``.  Rotations are unchanged;
    translations are recomputed from the new centers
    ``(o_i - x_o) / s``.

    Raises DegenerateRigError when all optical axes are collinear.
    """
    if len(cameras) < 2:
        raise ValueError("need at least two cameras")
    A = np.zeros((3, 3))
    b = np.zeros(3)
    centers = []
    for cam in cameras:
        z = cam.pose.r3
        o = cam.pose.center
        Z = np.eye(3) - np.outer(z, z)
        A += Z
        b += Z @ o
        centers.append(o)
    eigvals = np.linalg.eigvalsh(A)
    if eigvals[0] < 1e-9 * max(eigvals[-1], 1.0):
        raise DegenerateRigError("all optical axes are collinear")
    x_o = np.linalg.solve(A.T @ A, A.T @ b)
    s = max(np.linalg.norm(o - x_o) for o in centers) / s_r
    out = []
    for cam, o in zip(cameras, centers):
        o_new = (o - x_o) / s
        t_new = -cam.pose.R @ o_new
        out.append(Camera(cam.intrinsics, CameraPose(cam.pose.R, t_new)))
    return x_o, float(s), out


def denormalize_points(points: np.ndarray, x_o, s: float) -> np.ndarray:
    """Map points from the normalized frame back to original world units."""
    return np.asarray(points, dtype=np.float64) * s + np.asarray(x_o, dtype=np.float64)


def normalize_points(points: np.ndarray, x_o, s: float) -> np.ndarray:
    """Map world points into the normalized frame."""
    return (np.asarray(points, dtype=np.float64) - np.asarray(x_o, dtype=np.float64)) / s


def look_at_pose(eye, target, up=(0.0, 0.0, 1.0)) -> CameraPose:
    """World-to-camera pose for a camera at ``eye`` looking at ``target``.

    The camera y-axis points "down" relative to ``up`` (image rows grow
    downward).  ``up`` must not be parallel to the viewing direction.
    """
    eye = _as_vec3(eye)
    target = _as_vec3(target)
    up = _as_vec3(up)
    fwd = target - eye
    norm = np.linalg.norm(fwd)
    if norm < 1e-12:
        raise ValueError("eye and target coincide")
    fwd = fwd / norm
    right = np.cross(fwd, up)
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-9:
        # Viewing direction parallel to up: fall back to world x as up hint.
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
        rnorm = np.linalg.norm(right)
    right = right / rnorm
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    # Round tiny rounding residue off so the orthonormality gate passes.
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    t = -R @ eye
    return CameraPose(R, t)


# cameras.json field names are a format contract.
_CAMERA_FIELDS = ("fx", "fy", "cx", "cy", "width", "height", "R", "t")


def cameras_to_json(cameras, path=None) -> str:
    """Serialize cameras to the cameras.json array format."""
    records = []
    for cam in cameras:
        k, p = cam.intrinsics, cam.pose
        records.append(
            {
                "fx": k.fx,
                "fy": k.fy,
                "cx": k.cx,
                "cy": k.cy,
                "width": k.width,
                "height": k.height,
                "R": [float(v) for v in p.R.reshape(-1)],
                "t": [float(v) for v in p.t],
            }
        )
    text = json.dumps(records, indent=2)
    if path is not None:
        Path(path).write_text(text)
    return text


def cameras_from_json(source) -> list[Camera]:
    """Parse cameras from a cameras.json path or JSON string."""
    text = str(source)
    if isinstance(source, Path) or not text.lstrip().startswith(("[", "{")):
        text = Path(source).read_text()
    records = json.loads(text)
    cameras = []
    for i, rec in enumerate(records):
        missing = [f for f in _CAMERA_FIELDS if f not in rec]
        if missing:
            raise ValueError(f"camera {i} missing fields: {missing}")
        intr = CameraIntrinsics(
            fx=float(rec["fx"]),
            fy=float(rec["fy"]),
            cx=float(rec["cx"]),
            cy=float(rec["cy"]),
            width=int(rec["width"]),
            height=int(rec["height"]),
        )
        R = np.asarray(rec["R"], dtype=np.float64)
        if R.size != 9:
            raise ValueError(f"camera {i}: R must have 9 entries")
        pose = CameraPose(R.reshape(3, 3), np.asarray(rec["t"], dtype=np.float64))
        cameras.append(Camera(intr, pose))
    return cameras
