"""Estimator front end: sklearn protocol and a fitting smoke test."""

import numpy as np
import pytest
from sklearn.base import clone

from azstereo.estimator import AzimuthStereoReconstructor, check_views
from azstereo.shapes import Sphere
from azstereo.synth import RigSpec, export_dataset, fit_intrinsics, make_rig, render_dataset

SMOKE = dict(
    epochs=2,
    batch_size=128,
    hidden_width=32,
    encoding_frequencies=4,
    dilation=3,
    eikonal_samples=64,
    scale_ratio=3.0,
    seed=0,
)


@pytest.fixture(scope="module")
def views():
    cams = make_rig(RigSpec(count=4, radius=2.0, elevations_deg=(20.0, 40.0)),
                    fit_intrinsics(24, 24, 2.0, 0.7))
    return render_dataset(Sphere(radius=0.5), cams)


class TestSklearnProtocol:
    def test_get_set_params(self):
        est = AzimuthStereoReconstructor(epochs=3, hidden_width=64)
        params = est.get_params()
        assert params["epochs"] == 3 and params["hidden_width"] == 64
        est.set_params(epochs=7)
        assert est.epochs == 7

    def test_clone(self):
        est = AzimuthStereoReconstructor(epochs=5, tsc_mode="halfpi")
        twin = clone(est)
        assert twin.get_params() == est.get_params()

    def test_unfitted_predict_raises(self, views):
        est = AzimuthStereoReconstructor(**SMOKE)
        with pytest.raises(RuntimeError):
            est.extract_mesh()


class TestCheckViews:
    def test_accepts_views(self, views):
        assert len(check_views(views)) == 4

    def test_accepts_dataset_dir(self, views, tmp_path):
        export_dataset(views, tmp_path)
        assert len(check_views(tmp_path)) == 4

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            check_views([])

    def test_rejects_mismatched_mask(self, views):
        import copy

        from azstereo.geom import SilhouetteMask

        bad = copy.copy(views[0])
        bad.mask = SilhouetteMask(np.zeros((3, 3), dtype=bool))
        with pytest.raises(ValueError):
            check_views([bad])


class TestFit:
    def test_fit_predict_cycle(self, views):
        est = AzimuthStereoReconstructor(**SMOKE).fit(views)
        assert hasattr(est, "network_")
        assert est.normalization_["s"] == pytest.approx(2.0 / 3.0)
        normals, mask = est.predict_normal_map(views[0].camera)
        assert normals.shape == (24, 24, 3)
        assert mask.any()
        mesh = est.extract_mesh(grid=24)
        assert len(mesh.vertices) > 0
        # vertices come back in world units, near the 0.5 sphere
        radii = np.linalg.norm(mesh.vertices, axis=1)
        assert 0.2 < np.median(radii) < 0.9
        score = est.score(views)
        assert np.isfinite(score) and score < 0
