"""Estimator-style front end so reconstructions compose with sklearn
tooling (get_params/set_params, clone, pipelines).

``fit`` consumes a list of rendered views (or a dataset directory) and
optimizes the signed-distance field; prediction methods render normal
maps or extract a mesh in original world units.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from . import evaluation, geom, synth
from .train import IntersectionMode, TrainConfig, TscMode, train


def check_views(views):
    """Validate a view list: paired resolutions and cameras present."""
    if isinstance(views, (str, Path)):
        views, _ = synth.load_dataset(views)
    views = list(views)
    if not views:
        raise ValueError("need at least one view")
    shape = None
    for i, v in enumerate(views):
        for attr in ("camera", "azimuth", "mask"):
            if not hasattr(v, attr):
                raise ValueError(f"view {i} lacks {attr!r}")
        hw = v.azimuth.values.shape
        if v.mask.values.shape != hw:
            raise ValueError(f"view {i}: mask and azimuth dimensions differ")
        if shape is None:
            shape = hw
        elif hw != shape:
            raise ValueError("views have inconsistent resolutions")
    return views


class AzimuthStereoReconstructor(BaseEstimator):
    """Fits a neural signed-distance field to multi-view azimuth maps.

    Parameters mirror the training configuration; see ``TrainConfig``.
    After ``fit`` the estimator exposes ``network_`` (the optimized
    field), ``normalization_`` (offset/scale applied to the cameras),
    and ``loss_log_``.
    """

    def __init__(self, epochs=50, batch_size=4096, lr=1e-4, lambda_silhouette=100.0,
                 lambda_eikonal=0.1, alpha0=50.0, dilation=30, eikonal_samples=1024,
                 tsc_mode="multiview", intersection_mode="detached", hidden_width=256,
                 encoding_frequencies=10, softplus_beta=100.0, scale_ratio=3.0,
                 seed=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lambda_silhouette = lambda_silhouette
        self.lambda_eikonal = lambda_eikonal
        self.alpha0 = alpha0
        self.dilation = dilation
        self.eikonal_samples = eikonal_samples
        self.tsc_mode = tsc_mode
        self.intersection_mode = intersection_mode
        self.hidden_width = hidden_width
        self.encoding_frequencies = encoding_frequencies
        self.softplus_beta = softplus_beta
        self.scale_ratio = scale_ratio
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            lambda_silhouette=self.lambda_silhouette,
            lambda_eikonal=self.lambda_eikonal,
            alpha0=self.alpha0,
            dilation=self.dilation,
            eikonal_samples=self.eikonal_samples,
            tsc_mode=TscMode(self.tsc_mode),
            intersection_mode=IntersectionMode(self.intersection_mode),
            hidden_width=self.hidden_width,
            encoding_frequencies=self.encoding_frequencies,
            softplus_beta=self.softplus_beta,
            scale_ratio=self.scale_ratio,
            seed=self.seed,
        )

    def fit(self, views, y=None):
        views = check_views(views)
        cfg = self._config()
        x_o, s, cameras = geom.normalize_cameras([v.camera for v in views], cfg.scale_ratio)
        fitted = []
        for view, cam in zip(views, cameras):
            fitted.append(synth.SyntheticView(cam, view.azimuth, view.mask,
                                              getattr(view, "gt_normals", None),
                                              getattr(view, "gt_depth", None)))
        self.normalization_ = {"x_o": x_o, "s": s, "s_r": cfg.scale_ratio}
        self.network_, self.loss_log_ = train(cfg, fitted)
        return self

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise RuntimeError("estimator is not fitted")

    def _normalized_camera(self, camera):
        x_o, s = self.normalization_["x_o"], self.normalization_["s"]
        center = (camera.pose.center - x_o) / s
        pose = geom.CameraPose(camera.pose.R, -camera.pose.R @ center)
        return geom.Camera(camera.intrinsics, pose)

    def predict_normal_map(self, camera):
        """Render the camera-facing normal map seen by a world-frame camera.

        Returns (normals (H, W, 3) with NaN on misses, mask).
        """
        self._check_fitted()
        cam = self._normalized_camera(camera)
        return evaluation.render_normal_map(self.network_, cam,
                                            t_max=4.0 * self.normalization_["s_r"])

    def extract_mesh(self, grid=128) -> evaluation.Mesh:
        """Marching-cubes mesh of the fitted surface in world units."""
        self._check_fitted()
        r = 1.05
        mesh = evaluation.marching_cubes(self.network_, ((-r, -r, -r), (r, r, r)), grid)
        verts = geom.denormalize_points(mesh.vertices, self.normalization_["x_o"],
                                        self.normalization_["s"])
        return evaluation.Mesh(verts, mesh.triangles)

    def score(self, views, y=None) -> float:
        """Negative mean angular error in degrees against view ground
        truth normals (higher is better)."""
        self._check_fitted()
        views = check_views(views)
        errors = []
        for view in views:
            if getattr(view, "gt_normals", None) is None:
                raise ValueError("scoring needs views with ground-truth normals")
            normals, _ = self.predict_normal_map(view.camera)
            errors.append(evaluation.normal_mae(normals, view.gt_normals))
        return -float(np.mean(errors))
