"""Synthetic ground truth: camera rigs (including the degenerate
configurations), azimuth-map rendering from analytic shapes, ambiguity
models, and dataset export/import.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import formats, geom
from .geom import AzimuthMap, Camera, CameraIntrinsics, SilhouetteMask, TWO_PI
from .shapes import AnalyticShape, RoundedBox, Sphere, Torus, ray_intersect


class RigSpecError(ValueError):
    pass


class RenderError(ValueError):
    pass


class DatasetError(ValueError):
    pass


class RigKind(Enum):
    GENERIC_RING = "generic-ring"
    TWO_VIEW = "two-view"
    PARALLEL_AXES = "parallel-axes"
    COPLANAR_AXES = "coplanar-axes"


@dataclass(frozen=True)
class RigSpec:
    """Camera rig description.

    ``elevations_deg`` is cycled over the cameras.  The coplanar kind
    forces elevation 0 so every optical axis lies in the horizontal
    plane through the target; the parallel kind shares one rotation and
    spreads the camera centers laterally.
    """

    kind: RigKind = RigKind.GENERIC_RING
    count: int = 12
    radius: float = 2.0
    elevations_deg: tuple = (30.0,)
    look_at: tuple = (0.0, 0.0, 0.0)
    azimuth_offset_deg: float = 0.0
    two_view_separation_deg: float = 60.0

    def __post_init__(self):
        if self.count < 1:
            raise RigSpecError("need at least one camera")
        if self.kind is RigKind.TWO_VIEW and self.count != 2:
            raise RigSpecError("two-view rig requires exactly 2 cameras")
        if self.radius <= 0:
            raise RigSpecError("rig radius must be positive")
        if not self.elevations_deg:
            raise RigSpecError("need at least one elevation")


def fit_intrinsics(width: int, height: int, distance: float, fit_radius: float,
                   fill: float = 0.9) -> CameraIntrinsics:
    """Intrinsics whose field of view covers a ball of ``fit_radius`` at
    ``distance`` using ``fill`` of the smaller image extent."""
    if not 0 < fit_radius < distance:
        raise ValueError("need 0 < fit_radius < distance")
    angular = np.arcsin(fit_radius / distance)
    f = fill * (min(width, height) / 2.0) / np.tan(angular)
    return CameraIntrinsics(fx=f, fy=f, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                            width=width, height=height)


def make_rig(spec: RigSpec, intrinsics: CameraIntrinsics | None = None) -> list[Camera]:
    """Cameras positioned per the rig kind, sharing one set of intrinsics."""
    if intrinsics is None:
        intrinsics = fit_intrinsics(64, 64, spec.radius, min(1.0, 0.5 * spec.radius))
    target = np.asarray(spec.look_at, dtype=np.float64)
    offset = np.deg2rad(spec.azimuth_offset_deg)
    if spec.kind is RigKind.TWO_VIEW:
        azimuths = offset + np.deg2rad(np.array([0.0, spec.two_view_separation_deg]))
    else:
        azimuths = offset + TWO_PI * np.arange(spec.count) / spec.count
    elevations = np.deg2rad(
        np.array([spec.elevations_deg[i % len(spec.elevations_deg)] for i in range(spec.count)])
    )
    if spec.kind is RigKind.COPLANAR_AXES:
        elevations = np.zeros(spec.count)
    cameras = []
    if spec.kind is RigKind.PARALLEL_AXES:
        base_dir = _ring_direction(azimuths[0], elevations[0])
        base_center = target + spec.radius * base_dir
        pose0 = geom.look_at_pose(base_center, target)
        lateral = 0.25 * spec.radius
        for i in range(spec.count):
            ang = TWO_PI * i / spec.count
            shift = lateral * (np.cos(ang) * pose0.r1 + np.sin(ang) * pose0.r2)
            center = base_center + shift
            cameras.append(Camera(intrinsics, geom.CameraPose(pose0.R, -pose0.R @ center)))
        return cameras
    for i in range(spec.count):
        center = target + spec.radius * _ring_direction(azimuths[i], elevations[i])
        cameras.append(Camera(intrinsics, geom.look_at_pose(center, target)))
    return cameras


def _ring_direction(azimuth, elevation):
    return np.array(
        [
            np.cos(azimuth) * np.cos(elevation),
            np.sin(azimuth) * np.cos(elevation),
            np.sin(elevation),
        ]
    )


class AmbiguityKind(Enum):
    EXACT = "exact"
    PI_RANDOM = "pi-random"
    HALF_PI_RANDOM = "half-pi-random"


@dataclass(frozen=True)
class AmbiguityMode:
    """Azimuth corruption model.

    PI_RANDOM offsets each valid pixel by pi with probability 1/2;
    HALF_PI_RANDOM offsets by +pi/2 with probability ``prob`` (a
    per-pixel Bernoulli simplification of spatially structured
    specular/diffuse domination).  ``noise_sigma`` adds optional
    zero-mean Gaussian angle noise after the ambiguity.
    """

    kind: AmbiguityKind = AmbiguityKind.EXACT
    prob: float = 0.5
    seed: int = 0
    noise_sigma: float = 0.0

    @classmethod
    def exact(cls):
        return cls(AmbiguityKind.EXACT)

    @classmethod
    def pi_random(cls, seed: int = 0):
        return cls(AmbiguityKind.PI_RANDOM, seed=seed)

    @classmethod
    def half_pi_random(cls, prob: float = 0.5, seed: int = 0):
        return cls(AmbiguityKind.HALF_PI_RANDOM, prob=prob, seed=seed)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "prob": self.prob,
            "seed": self.seed,
            "noise_sigma": self.noise_sigma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AmbiguityMode":
        return cls(AmbiguityKind(d["kind"]), prob=d.get("prob", 0.5),
                   seed=d.get("seed", 0), noise_sigma=d.get("noise_sigma", 0.0))


@dataclass
class SyntheticView:
    """One rendered view: observations plus ground truth."""

    camera: Camera
    azimuth: AzimuthMap
    mask: SilhouetteMask
    gt_normals: np.ndarray  # (H, W, 3), NaN triplets outside the mask
    gt_depth: np.ndarray  # (H, W) ray parameter, NaN where missed


def pixel_rays(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """World-space origin and unit direction for every pixel center.

    Returns (origin (3,), dirs (H, W, 3)).
    """
    k = camera.intrinsics
    cols, rows = np.meshgrid(np.arange(k.width), np.arange(k.height))
    d_cam = np.stack(
        [(cols - k.cx) / k.fx, (rows - k.cy) / k.fy, np.ones_like(cols, dtype=np.float64)],
        axis=-1,
    )
    d_cam /= np.linalg.norm(d_cam, axis=-1, keepdims=True)
    dirs = d_cam @ camera.pose.R  # row-vector form of R^T @ d
    return camera.pose.center, dirs


def render_view(shape: AnalyticShape, camera: Camera, mode: AmbiguityMode = AmbiguityMode.exact(),
                view_key: int = 0) -> SyntheticView:
    """Render one view of an analytic shape.

    Per pixel: first ray intersection, ground-truth normal from the
    exact gradient, azimuth of that normal (NaN where the normal is
    parallel to the optical axis, such pixels stay inside the mask),
    then the ambiguity model applied with a per-view substream.
    """
    origin, dirs = pixel_rays(camera)
    if shape.sdf(origin[None])[0] <= 0.0:
        raise RenderError("camera center is inside the shape")
    h, w = dirs.shape[:2]
    flat_dirs = dirs.reshape(-1, 3)
    hit, t = ray_intersect(shape, np.broadcast_to(origin, flat_dirs.shape), flat_dirs, t_min=1e-9)
    depth = np.where(hit, t, np.nan)
    normals = np.full((h * w, 3), np.nan)
    az = np.full(h * w, np.nan)
    if hit.any():
        pts = origin + t[hit, None] * flat_dirs[hit]
        g, _ = shape.gradient(pts)
        normals[hit] = g
        phi, valid = geom.azimuth_of_normals(camera.pose, g)
        az_hit = np.full(hit.sum(), np.nan)
        az_hit[valid] = phi[valid]
        az[hit] = az_hit
    az = _apply_ambiguity(az.reshape(h, w), mode, view_key)
    return SyntheticView(
        camera=camera,
        azimuth=AzimuthMap(az),
        mask=SilhouetteMask(hit.reshape(h, w)),
        gt_normals=normals.reshape(h, w, 3),
        gt_depth=depth.reshape(h, w),
    )


def _apply_ambiguity(az: np.ndarray, mode: AmbiguityMode, view_key: int) -> np.ndarray:
    valid = np.isfinite(az)
    if mode.kind is AmbiguityKind.EXACT and mode.noise_sigma == 0.0:
        return az
    rng = np.random.default_rng([int(mode.seed), int(view_key)])
    out = az.copy()
    if mode.kind is AmbiguityKind.PI_RANDOM:
        flips = rng.random(az.shape) < 0.5
        sel = valid & flips
        out[sel] = _wrap(out[sel] + np.pi)
    elif mode.kind is AmbiguityKind.HALF_PI_RANDOM:
        flips = rng.random(az.shape) < mode.prob
        sel = valid & flips
        out[sel] = _wrap(out[sel] + np.pi / 2.0)
    if mode.noise_sigma > 0.0:
        noise = rng.normal(0.0, mode.noise_sigma, az.shape)
        out[valid] = _wrap(out[valid] + noise[valid])
    return out


def _wrap(phi):
    w = np.mod(phi, TWO_PI)
    return np.where(w >= TWO_PI, 0.0, w)


def render_dataset(shape: AnalyticShape, cameras, mode: AmbiguityMode = AmbiguityMode.exact()) -> list[SyntheticView]:
    return [render_view(shape, cam, mode, view_key=i) for i, cam in enumerate(cameras)]


@dataclass
class DatasetManifest:
    """Layout record written next to the per-view files."""

    cameras: str = "cameras.json"
    views: list = field(default_factory=list)
    seed: int = 0
    ambiguity: dict | None = None
    shape: dict | None = None
    normalization: dict | None = None

    def to_dict(self) -> dict:
        return {
            "format": "azstereo-dataset",
            "version": 1,
            "cameras": self.cameras,
            "views": self.views,
            "seed": self.seed,
            "ambiguity": self.ambiguity,
            "shape": self.shape,
            "normalization": self.normalization,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        if d.get("format") != "azstereo-dataset":
            raise DatasetError("not a dataset manifest")
        return cls(
            cameras=d["cameras"],
            views=d["views"],
            seed=d.get("seed", 0),
            ambiguity=d.get("ambiguity"),
            shape=d.get("shape"),
            normalization=d.get("normalization"),
        )


def shape_to_dict(shape: AnalyticShape) -> dict:
    rec = dataclasses.asdict(shape)
    rec["kind"] = type(shape).__name__.lower()
    return rec


def shape_from_dict(rec: dict) -> AnalyticShape:
    kinds = {"sphere": Sphere, "torus": Torus, "roundedbox": RoundedBox}
    kind = rec.get("kind")
    if kind not in kinds:
        raise DatasetError(f"unknown shape kind {kind!r}")
    kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in rec.items() if k != "kind"}
    return kinds[kind](**kwargs)


def export_dataset(views, directory, seed: int = 0, ambiguity: AmbiguityMode | None = None,
                   shape: AnalyticShape | None = None, normalization: dict | None = None) -> DatasetManifest:
    """Write cameras.json, the per-view map files, and manifest.json.

    Azimuth values are quantized to float32 on disk; the quantization
    keeps values inside [0, 2*pi) so export/import round-trips are
    byte-identical.
    """
    views = list(views)
    if not views:
        raise DatasetError("no views to export")
    shapes_set = {(v.azimuth.height, v.azimuth.width) for v in views}
    if len(shapes_set) != 1:
        raise DatasetError("views have inconsistent resolutions")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    geom.cameras_to_json([v.camera for v in views], directory / "cameras.json")
    records = []
    for i, view in enumerate(views):
        stem = f"view_{i:03d}"
        az32 = view.azimuth.values.astype(np.float32)
        az32[az32 >= TWO_PI] = 0.0
        formats.write_azimuth(directory / f"{stem}.azm", az32.astype(np.float64))
        formats.write_mask(directory / f"{stem}.msk", view.mask.values)
        formats.write_normals(directory / f"{stem}.nrm", view.gt_normals)
        formats.write_depth(directory / f"{stem}.dpt", view.gt_depth)
        records.append(
            {
                "azimuth": f"{stem}.azm",
                "mask": f"{stem}.msk",
                "normals": f"{stem}.nrm",
                "depth": f"{stem}.dpt",
            }
        )
    manifest = DatasetManifest(
        cameras="cameras.json",
        views=records,
        seed=seed,
        ambiguity=None if ambiguity is None else ambiguity.to_dict(),
        shape=None if shape is None else shape_to_dict(shape),
        normalization=normalization,
    )
    formats.write_json(directory / "manifest.json", manifest.to_dict())
    return manifest


def load_dataset(directory) -> tuple[list[SyntheticView], DatasetManifest]:
    """Read a dataset directory back into views plus its manifest."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError(f"no manifest.json in {directory}")
    manifest = DatasetManifest.from_dict(formats.read_json(manifest_path))
    cameras = geom.cameras_from_json(directory / manifest.cameras)
    if len(cameras) != len(manifest.views):
        raise DatasetError("camera count does not match view records")
    views = []
    for cam, rec in zip(cameras, manifest.views):
        az = formats.read_azimuth(directory / rec["azimuth"])
        mask = formats.read_mask(directory / rec["mask"])
        normals = formats.read_normals(directory / rec["normals"])
        depth = formats.read_depth(directory / rec["depth"])
        if mask.shape != az.shape or normals.shape[:2] != az.shape or depth.shape != az.shape:
            raise DatasetError(f"inconsistent shapes for {rec['azimuth']}")
        views.append(
            SyntheticView(
                camera=cam,
                azimuth=AzimuthMap(az),
                mask=SilhouetteMask(mask),
                gt_normals=normals,
                gt_depth=depth,
            )
        )
    return views, manifest
