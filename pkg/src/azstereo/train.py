"""Loss assembly and optimization of the neural SDF from azimuth maps.

Per iteration: sample pixels from the dilated silhouette union, sphere
trace their rays, split the batch into surface hits inside the
silhouette (tangent-consistency term) and the rest (silhouette term),
add the eikonal regularizer, and take one Adam step.  The learning rate
and the silhouette sharpness alpha are halved every ten epochs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage

from . import formats, tracing
from .field import NetworkSpec, SDFNetwork, NumericFailureError, parameter_gradients, save_checkpoint
from .synth import DatasetError


class TscMode(Enum):
    MULTI_VIEW = "multiview"
    HALF_PI = "halfpi"
    SINGLE_VIEW = "singleview"


class IntersectionMode(Enum):
    DETACHED = "detached"
    DIFFERENTIABLE = "differentiable"


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters; JSON config files mirror these names."""

    lambda_silhouette: float = 100.0
    lambda_eikonal: float = 0.1
    lr: float = 1e-4
    epochs: int = 50
    batch_size: int = 4096
    alpha0: float = 50.0
    alpha_schedule: str = "halve"  # "halve" follows the schedule, "fixed" keeps alpha0
    dilation: int = 30
    eikonal_samples: int = 1024
    tsc_mode: TscMode = TscMode.MULTI_VIEW
    intersection_mode: IntersectionMode = IntersectionMode.DETACHED
    seed: int = 0
    hidden_width: int = 256
    n_layers: int = 8
    skip_layer: int | None = 4
    encoding_frequencies: int = 10
    softplus_beta: float = 100.0
    sphere_radius: float = 0.6
    scale_ratio: float = 3.0
    bound_radius: float = 1.2
    trace_eps: float = 1e-5
    trace_max_steps: int = 64
    visibility_push: float = 1e-3
    visibility_max_steps: int = 64
    min_sdf_samples: int = 64
    min_sdf_refine: int = 8
    lr_halve_every: int = 10
    alpha_halve_every: int = 10

    def __post_init__(self):
        if self.lambda_silhouette < 0 or self.lambda_eikonal < 0:
            raise ValueError("loss weights must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be at least 1")
        if self.alpha_schedule not in ("halve", "fixed"):
            raise ValueError("alpha_schedule must be 'halve' or 'fixed'")

    @property
    def network_spec(self) -> NetworkSpec:
        return NetworkSpec(
            hidden_width=self.hidden_width,
            n_layers=self.n_layers,
            skip_layer=self.skip_layer,
            encoding_frequencies=self.encoding_frequencies,
            softplus_beta=self.softplus_beta,
            sphere_radius=self.sphere_radius,
        )

    def to_dict(self) -> dict:
        d = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            d[name] = value.value if isinstance(value, Enum) else value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "tsc_mode" in kwargs:
            kwargs["tsc_mode"] = TscMode(kwargs["tsc_mode"])
        if "intersection_mode" in kwargs:
            kwargs["intersection_mode"] = IntersectionMode(kwargs["intersection_mode"])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(formats.read_json(path))

    def with_overrides(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)


@dataclass
class LossBreakdown:
    iteration: int
    epoch: int
    tsc: float
    silhouette: float
    eikonal: float
    total: float
    lr: float
    alpha: float


LOSS_LOG_COLUMNS = ["iteration", "epoch", "tsc", "silhouette", "eikonal", "total", "lr", "alpha"]


def write_loss_log(path, log):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_LOG_COLUMNS)
        for entry in log:
            writer.writerow([getattr(entry, c) for c in LOSS_LOG_COLUMNS])


class TrainingData:
    """Array-of-views bundle with the dilated sampling pool.

    Expects all views at one resolution with cameras already normalized
    so the surface fits the unit ball.
    """

    def __init__(self, views, dilation: int):
        if not views:
            raise DatasetError("no views")
        h, w = views[0].azimuth.values.shape
        for v in views:
            if v.azimuth.values.shape != (h, w):
                raise DatasetError("views have inconsistent resolutions")
        self.views = list(views)
        self.height, self.width = h, w
        self.azimuth = np.stack([v.azimuth.values for v in views])
        self.mask = np.stack([v.mask.values for v in views])
        dilated = []
        for m in self.mask:
            dilated.append(ndimage.binary_dilation(m, iterations=dilation) if dilation > 0 else m)
        self.dilated = np.stack(dilated)
        pool = np.argwhere(self.dilated)  # rows of (view, row, col)
        if pool.shape[0] == 0:
            raise DatasetError("dilated silhouette union is empty")
        self.pool = pool
        self.R = np.stack([v.camera.pose.R for v in views])
        self.r1 = self.R[:, 0, :]
        self.r2 = self.R[:, 1, :]
        self.tvec = np.stack([v.camera.pose.t for v in views])
        self.centers = np.stack([v.camera.pose.center for v in views])
        self.fx = np.array([v.camera.intrinsics.fx for v in views])
        self.fy = np.array([v.camera.intrinsics.fy for v in views])
        self.cx = np.array([v.camera.intrinsics.cx for v in views])
        self.cy = np.array([v.camera.intrinsics.cy for v in views])

    @property
    def n_views(self) -> int:
        return len(self.views)

    def rays_for_pixels(self, view_idx, rows, cols):
        """World origins and unit directions through pixel centers."""
        d_cam = np.stack(
            [
                (cols - self.cx[view_idx]) / self.fx[view_idx],
                (rows - self.cy[view_idx]) / self.fy[view_idx],
                np.ones(len(view_idx)),
            ],
            axis=1,
        )
        d_cam /= np.linalg.norm(d_cam, axis=1, keepdims=True)
        dirs = np.einsum("ncd,nc->nd", self.R[view_idx], d_cam)
        return self.centers[view_idx], dirs


@dataclass
class PixelBatch:
    """Sampled pixels with rays; trace results fill the partition."""

    view_idx: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    origins: np.ndarray
    dirs: np.ndarray
    t_min: np.ndarray
    t_max: np.ndarray
    labels: np.ndarray  # true silhouette values at the pixels
    hit: np.ndarray | None = None
    hit_t: np.ndarray | None = None
    x_idx: np.ndarray | None = None
    xt_idx: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.view_idx)


def sample_pixels(data: TrainingData, batch_size: int, seed: int, epoch: int, iteration: int) -> PixelBatch:
    """Uniform pixels from the dilated union; deterministic per
    (seed, epoch, iteration)."""
    if batch_size < 1:
        raise ValueError("batch size must be at least 1")
    rng = np.random.default_rng([int(seed), int(epoch), int(iteration)])
    pick = rng.integers(0, data.pool.shape[0], size=batch_size)
    view_idx, rows, cols = data.pool[pick].T
    origins, dirs = data.rays_for_pixels(view_idx, rows, cols)
    t_min, t_max = _ray_interval(origins, dirs, radius=_bound_radius_of(data))
    labels = data.mask[view_idx, rows, cols]
    return PixelBatch(
        view_idx=view_idx,
        rows=rows,
        cols=cols,
        origins=origins,
        dirs=dirs,
        t_min=t_min,
        t_max=t_max,
        labels=labels,
    )


def _bound_radius_of(data):
    return getattr(data, "bound_radius", 1.2)


def _ray_interval(origins, dirs, radius):
    """Clip rays to the bounding sphere; rays that miss it get a window
    around their closest approach to the origin."""
    b = np.einsum("ij,ij->i", origins, dirs)
    c = np.einsum("ij,ij->i", origins, origins) - radius * radius
    disc = b * b - c
    root = np.sqrt(np.maximum(disc, 0.0))
    t0 = np.where(disc > 0, -b - root, -b - radius)
    t1 = np.where(disc > 0, -b + root, -b + radius)
    t0 = np.maximum(t0, 1e-6)
    t1 = np.maximum(t1, t0 + 1e-6)
    return t0, t1


def trace_batch(network, batch: PixelBatch, cfg: TrainConfig) -> PixelBatch:
    """Sphere trace the batch rays and partition the pixels.

    Surface hits inside the silhouette feed the consistency term;
    everything else feeds the silhouette term.  Rays that start inside
    the current surface count as non-hits.
    """
    hit, t, _, invalid = tracing.sphere_trace_batch(
        network.sdf, batch.origins, batch.dirs, batch.t_min, batch.t_max,
        eps=cfg.trace_eps, max_steps=cfg.trace_max_steps,
    )
    hit = hit & ~invalid
    batch.hit = hit
    batch.hit_t = t
    in_x = hit & batch.labels
    batch.x_idx = np.flatnonzero(in_x)
    batch.xt_idx = np.flatnonzero(~in_x)
    return batch


def build_tangent_pairs(network, x_points, data: TrainingData, cfg: TrainConfig,
                        check_visibility: bool = True):
    """Visible-view tangents for each surface point.

    A view contributes when the projection has positive depth, lands in
    bounds on a silhouette pixel with a defined azimuth, and the reverse
    march toward that camera reports the point visible.  Returns
    (point_index (K,), tangents (K, 3), quarter_turn_tangents (K, 3),
    counts (N,)).
    """
    n = x_points.shape[0]
    c = data.n_views
    if n == 0:
        empty = np.zeros((0,), dtype=np.int64)
        return empty, np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0,), dtype=np.int64)
    xc = np.einsum("cij,nj->nci", data.R, x_points) + data.tvec[None, :, :]
    depth = xc[..., 2]
    safe = np.where(depth > 0, depth, 1.0)
    u = data.fx[None, :] * xc[..., 0] / safe + data.cx[None, :]
    v = data.fy[None, :] * xc[..., 1] / safe + data.cy[None, :]
    cols = np.rint(u).astype(np.int64)
    rows = np.rint(v).astype(np.int64)
    in_bounds = (depth > 0) & (cols >= 0) & (cols < data.width) & (rows >= 0) & (rows < data.height)
    cols_c = np.clip(cols, 0, data.width - 1)
    rows_c = np.clip(rows, 0, data.height - 1)
    view_grid = np.broadcast_to(np.arange(c)[None, :], (n, c))
    phi = data.azimuth[view_grid, rows_c, cols_c]
    cand = in_bounds & data.mask[view_grid, rows_c, cols_c] & np.isfinite(phi)
    pt_idx, view_idx = np.nonzero(cand)
    if check_visibility and pt_idx.size:
        codes, _ = tracing.visibility_batch(
            network.sdf,
            x_points[pt_idx],
            data.centers[view_idx],
            push=cfg.visibility_push,
            eps=cfg.trace_eps,
            max_steps=cfg.visibility_max_steps,
        )
        keep = codes == 0
        pt_idx, view_idx = pt_idx[keep], view_idx[keep]
    phi_sel = phi[pt_idx, view_idx]
    s, co = np.sin(phi_sel), np.cos(phi_sel)
    r1 = data.r1[view_idx]
    r2 = data.r2[view_idx]
    tangents = s[:, None] * r1 - co[:, None] * r2
    tangents_q = -co[:, None] * r1 - s[:, None] * r2
    counts = np.bincount(pt_idx, minlength=n)
    return pt_idx, tangents, tangents_q, counts


@dataclass
class PreparedBatch:
    """Everything an iteration's losses need, frozen so the loss is a
    pure function of the network parameters."""

    batch_size: int
    x_points: np.ndarray
    x_dirs: np.ndarray
    pair_pt: np.ndarray
    pair_tangent: np.ndarray
    pair_tangent_q: np.ndarray
    counts: np.ndarray
    single_tangent: np.ndarray
    single_valid: np.ndarray
    xt_origins: np.ndarray
    xt_dirs: np.ndarray
    xt_tstar: np.ndarray
    xt_labels: np.ndarray
    eik_points: np.ndarray


def prepare_batch(network, data: TrainingData, cfg: TrainConfig, epoch: int, iteration: int) -> PreparedBatch:
    batch = sample_pixels(data, cfg.batch_size, cfg.seed, epoch, iteration)
    trace_batch(network, batch, cfg)
    xi = batch.x_idx
    x_points = batch.origins[xi] + batch.hit_t[xi, None] * batch.dirs[xi]
    if cfg.tsc_mode is TscMode.SINGLE_VIEW:
        pair_pt = np.zeros((0,), dtype=np.int64)
        pair_t = np.zeros((0, 3))
        pair_tq = np.zeros((0, 3))
        counts = np.zeros((len(xi),), dtype=np.int64)
    else:
        pair_pt, pair_t, pair_tq, counts = build_tangent_pairs(network, x_points, data, cfg)
    phi0 = data.azimuth[batch.view_idx[xi], batch.rows[xi], batch.cols[xi]]
    single_valid = np.isfinite(phi0)
    phi0f = np.where(single_valid, phi0, 0.0)
    r1 = data.r1[batch.view_idx[xi]]
    r2 = data.r2[batch.view_idx[xi]]
    single_t = np.sin(phi0f)[:, None] * r1 - np.cos(phi0f)[:, None] * r2
    ti = batch.xt_idx
    extra = batch.hit_t[ti, None]
    fstar, tstar = tracing.min_sdf_batch(
        network.sdf,
        batch.origins[ti],
        batch.dirs[ti],
        batch.t_min[ti],
        batch.t_max[ti],
        samples=cfg.min_sdf_samples,
        refine=cfg.min_sdf_refine,
        extra_t=extra,
    )
    rng = np.random.default_rng([int(cfg.seed), int(epoch), int(iteration), 1])
    eik = rng.uniform(-cfg.bound_radius, cfg.bound_radius, size=(cfg.eikonal_samples, 3))
    return PreparedBatch(
        batch_size=len(batch),
        x_points=x_points,
        x_dirs=batch.dirs[xi],
        pair_pt=pair_pt,
        pair_tangent=pair_t,
        pair_tangent_q=pair_tq,
        counts=counts,
        single_tangent=single_t,
        single_valid=single_valid,
        xt_origins=batch.origins[ti],
        xt_dirs=batch.dirs[ti],
        xt_tstar=tstar,
        xt_labels=batch.labels[ti].astype(np.float64),
        eik_points=eik,
    )


def _surface_normals(network, prep: PreparedBatch, cfg: TrainConfig) -> torch.Tensor:
    """Field gradients at the batch surface points, differentiable in
    the parameters; optionally through the moving intersection."""
    x = torch.from_numpy(prep.x_points)
    if cfg.intersection_mode is IntersectionMode.DETACHED or len(prep.x_points) == 0:
        _, n = network.gradient(x, create_graph=True)
        return n
    d = torch.from_numpy(prep.x_dirs)
    _, g0 = network.gradient(x, create_graph=False)
    denom = (g0.detach() * d).sum(dim=1)
    stable = denom.abs() > 1e-6
    denom = torch.where(stable, denom, torch.ones_like(denom))
    f0 = network.forward(x)
    x_theta = x - d * (f0 / denom).unsqueeze(1)
    f_theta = network.forward(x_theta)
    (n,) = torch.autograd.grad(f_theta.sum(), x_theta, create_graph=True)
    # Grazing rays are dropped from the consistency term.
    return torch.where(stable.unsqueeze(1), n, torch.zeros_like(n))


def tsc_quadratic(normals: torch.Tensor, prep: PreparedBatch, mode: TscMode) -> torch.Tensor:
    """Batch-mean tangent-consistency penalty given surface normals."""
    n_pts = normals.shape[0]
    dtype = normals.dtype if n_pts else torch.float64
    total = torch.zeros((), dtype=dtype)
    if n_pts == 0:
        return total
    if mode is TscMode.SINGLE_VIEW:
        valid = torch.from_numpy(prep.single_valid)
        t = torch.from_numpy(prep.single_tangent)
        dots = (normals * t).sum(dim=1)
        dots = torch.where(valid, dots, torch.zeros_like(dots))
        return (dots**2).sum() / prep.batch_size
    if prep.pair_pt.size == 0:
        return total
    idx = torch.from_numpy(prep.pair_pt)
    t = torch.from_numpy(prep.pair_tangent)
    dots = (normals[idx] * t).sum(dim=1)
    per_pair = dots**2
    if mode is TscMode.HALF_PI:
        tq = torch.from_numpy(prep.pair_tangent_q)
        per_pair = per_pair * (normals[idx] * tq).sum(dim=1) ** 2
    sums = torch.zeros(n_pts, dtype=per_pair.dtype)
    sums.index_add_(0, idx, per_pair)
    counts = torch.from_numpy(np.maximum(prep.counts, 1).astype(np.float64))
    return (sums / counts).sum() / prep.batch_size


def tsc_loss(network, x_points: np.ndarray, data: TrainingData, mode: TscMode,
             batch_size: int | None = None, cfg: TrainConfig | None = None,
             origin_view=None, origin_rows=None, origin_cols=None) -> torch.Tensor:
    """Tangent-consistency loss for surface points (multi-view/quarter-
    turn/single-view variants).

    ``x_points`` must lie on the current zero level set.  For the
    single-view variant the originating pixels must be supplied.
    """
    cfg = cfg or TrainConfig(batch_size=max(1, len(x_points)))
    P = batch_size if batch_size is not None else max(1, len(x_points))
    x_points = np.asarray(x_points, dtype=np.float64).reshape(-1, 3)
    if mode is TscMode.SINGLE_VIEW:
        if origin_view is None:
            raise ValueError("single-view mode needs the originating pixels")
        phi0 = data.azimuth[origin_view, origin_rows, origin_cols]
        valid = np.isfinite(phi0)
        phi0f = np.where(valid, phi0, 0.0)
        r1 = data.r1[origin_view]
        r2 = data.r2[origin_view]
        single_t = np.sin(phi0f)[:, None] * r1 - np.cos(phi0f)[:, None] * r2
        prep = _tsc_only_prep(P, x_points, single_tangent=single_t, single_valid=valid)
    else:
        pair_pt, pair_t, pair_tq, counts = build_tangent_pairs(network, x_points, data, cfg)
        prep = _tsc_only_prep(P, x_points, pair_pt=pair_pt, pair_tangent=pair_t,
                              pair_tangent_q=pair_tq, counts=counts)
    normals = _surface_normals(network, prep, cfg)
    return tsc_quadratic(normals, prep, mode)


def _tsc_only_prep(P, x_points, pair_pt=None, pair_tangent=None, pair_tangent_q=None,
                   counts=None, single_tangent=None, single_valid=None) -> PreparedBatch:
    n = len(x_points)
    return PreparedBatch(
        batch_size=P,
        x_points=x_points,
        x_dirs=np.zeros((n, 3)),
        pair_pt=pair_pt if pair_pt is not None else np.zeros((0,), dtype=np.int64),
        pair_tangent=pair_tangent if pair_tangent is not None else np.zeros((0, 3)),
        pair_tangent_q=pair_tangent_q if pair_tangent_q is not None else np.zeros((0, 3)),
        counts=counts if counts is not None else np.zeros((n,), dtype=np.int64),
        single_tangent=single_tangent if single_tangent is not None else np.zeros((n, 3)),
        single_valid=single_valid if single_valid is not None else np.zeros((n,), dtype=bool),
        xt_origins=np.zeros((0, 3)),
        xt_dirs=np.zeros((0, 3)),
        xt_tstar=np.zeros((0,)),
        xt_labels=np.zeros((0,)),
        eik_points=np.zeros((0, 3)),
    )


_LOG_CLAMP = math.log(1e-12)


def silhouette_loss(network, origins, dirs, t_star, labels, alpha: float,
                    batch_size: int) -> torch.Tensor:
    """Cross entropy between silhouette labels and the soft occupancy
    sigmoid(-alpha * f_star), averaged with the 1/(alpha P) factor.

    Log-probabilities are clamped at log(1e-12); the stable softplus
    form keeps gradients alive outside the clamp.
    """
    if len(labels) == 0:
        return torch.zeros(())
    pts = torch.from_numpy(origins + t_star[:, None] * dirs)
    f_star = network.forward(pts)
    z = alpha * f_star
    log_q = torch.clamp(-torch.nn.functional.softplus(z), min=_LOG_CLAMP)  # log sigmoid(-z)
    log_1mq = torch.clamp(-torch.nn.functional.softplus(-z), min=_LOG_CLAMP)
    lbl = torch.from_numpy(np.asarray(labels, dtype=np.float64))
    ce = -(lbl * log_q + (1.0 - lbl) * log_1mq)
    return ce.sum() / (alpha * batch_size)


def eikonal_loss(network, bbox, count: int, seed) -> torch.Tensor:
    """Mean squared deviation of the gradient norm from one over uniform
    box samples."""
    if count < 1:
        raise ValueError("need at least one sample")
    lo, hi = bbox
    rng = np.random.default_rng(seed)
    pts = rng.uniform(np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64),
                      size=(count, 3))
    return eikonal_from_points(network, pts)


def eikonal_from_points(network, pts: np.ndarray) -> torch.Tensor:
    if len(pts) == 0:
        return torch.zeros(())
    _, g = network.gradient(torch.from_numpy(np.asarray(pts, dtype=np.float64)), create_graph=True)
    norms = torch.linalg.norm(g, dim=1)
    return ((norms - 1.0) ** 2).mean()


def compute_losses(network, prep: PreparedBatch, cfg: TrainConfig, alpha: float):
    """All loss terms for a prepared batch; pure in the parameters.

    Returns (total tensor, term dict of floats).
    """
    normals = _surface_normals(network, prep, cfg)
    l_tsc = tsc_quadratic(normals, prep, cfg.tsc_mode)
    l_sil = silhouette_loss(network, prep.xt_origins, prep.xt_dirs, prep.xt_tstar,
                            prep.xt_labels, alpha, prep.batch_size)
    l_eik = eikonal_from_points(network, prep.eik_points)
    total = l_tsc + cfg.lambda_silhouette * l_sil + cfg.lambda_eikonal * l_eik
    t, s, e = (float(v.detach()) for v in (l_tsc, l_sil, l_eik))
    terms = {
        "tsc": t,
        "silhouette": s,
        "eikonal": e,
        "total": t + cfg.lambda_silhouette * s + cfg.lambda_eikonal * e,
    }
    return total, terms


@dataclass
class AdamState:
    """First/second moment estimates shaped like the parameters."""

    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params) -> "AdamState":
        return cls(m=[torch.zeros_like(p) for p in params],
                   v=[torch.zeros_like(p) for p in params])


def adam_step(state: AdamState, params, grads, lr: float):
    """One bias-corrected Adam update, in place and deterministic."""
    for g in grads:
        if not torch.isfinite(g).all():
            raise NumericFailureError("non-finite gradient in optimizer step")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            p.addcdiv_(m / bc1, (v / bc2).sqrt().add_(state.eps), value=-lr)


def schedule_value(base: float, epoch: int, every: int) -> float:
    return base / (2.0 ** (epoch // every))


def train(config: TrainConfig, views, checkpoint_dir=None, log_path=None, progress=None):
    """Optimize a sphere-initialized network on normalized views.

    Returns (network, loss log).  A checkpoint is written per epoch when
    ``checkpoint_dir`` is given; on numeric failure the last epoch's
    checkpoint stays on disk and NumericFailureError propagates with the
    partial log attached.
    """
    data = TrainingData(views, config.dilation)
    data.bound_radius = config.bound_radius
    network = SDFNetwork.init_sphere(config.seed, config.network_spec)
    params = network.parameters()
    state = AdamState.init(params)
    iters_per_epoch = max(1, math.ceil(data.pool.shape[0] / config.batch_size))
    log = []
    ckpt_dir = None
    if checkpoint_dir is not None:
        ckpt_dir = Path(checkpoint_dir)
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    iteration = 0
    try:
        for epoch in range(config.epochs):
            lr = schedule_value(config.lr, epoch, config.lr_halve_every)
            alpha = config.alpha0 if config.alpha_schedule == "fixed" else schedule_value(
                config.alpha0, epoch, config.alpha_halve_every)
            for it in range(iters_per_epoch):
                prep = prepare_batch(network, data, config, epoch, it)
                total, terms = compute_losses(network, prep, config, alpha)
                grads = parameter_gradients(total, params)
                adam_step(state, params, grads, lr)
                entry = LossBreakdown(
                    iteration=iteration, epoch=epoch, tsc=terms["tsc"],
                    silhouette=terms["silhouette"], eikonal=terms["eikonal"],
                    total=terms["total"], lr=lr, alpha=alpha,
                )
                log.append(entry)
                iteration += 1
                if progress is not None:
                    progress(entry)
            if ckpt_dir is not None:
                save_checkpoint(network, ckpt_dir / f"epoch_{epoch:04d}.ckpt")
                save_checkpoint(network, ckpt_dir / "latest.ckpt")
    except NumericFailureError as err:
        err.log = log
        if log_path is not None:
            write_loss_log(log_path, log)
        raise
    if log_path is not None:
        write_loss_log(log_path, log)
    return network, log
