"""Analytic shapes: SDF values, gradients, and ray intersections."""

import numpy as np
import pytest

from azstereo.shapes import RoundedBox, Sphere, Torus, analytic_sdf, ray_intersect


class TestSphere:
    def test_center_value_and_flag(self):
        ev = analytic_sdf(Sphere(radius=0.6), (0, 0, 0))
        assert ev.value == pytest.approx(-0.6)
        assert not ev.gradient_defined
        assert np.linalg.norm(ev.gradient) == pytest.approx(1.0)

    def test_outside(self):
        ev = analytic_sdf(Sphere(radius=0.6), (1, 0, 0))
        assert ev.value == pytest.approx(0.4)
        assert np.allclose(ev.gradient, [1, 0, 0])

    def test_offset_center(self):
        ev = analytic_sdf(Sphere(center=(1, 0, 0), radius=0.5), (2, 0, 0))
        assert ev.value == pytest.approx(0.5)


class TestTorus:
    def test_top_of_tube(self):
        ev = analytic_sdf(Torus(major_radius=0.5, minor_radius=0.2), (0.5, 0, 0.2))
        assert ev.value == pytest.approx(0.0, abs=1e-15)
        assert np.allclose(ev.gradient, [0, 0, 1])

    def test_outer_equator(self):
        ev = analytic_sdf(Torus(major_radius=0.5, minor_radius=0.2), (1.0, 0, 0))
        assert ev.value == pytest.approx(0.3)
        assert np.allclose(ev.gradient, [1, 0, 0])

    def test_tilted_axis(self):
        t = Torus(major_radius=0.5, minor_radius=0.2, axis=(1.0, 0.0, 0.0))
        assert t.sdf(np.array([0.2, 0.5, 0.0])) == pytest.approx(-0.2 + abs(0.2))

    def test_medial_axis_flagged(self):
        ev = analytic_sdf(Torus(major_radius=0.5, minor_radius=0.2), (0, 0, 0.3))
        assert not ev.gradient_defined


class TestRoundedBox:
    def test_face_distance(self):
        box = RoundedBox(half_extents=(0.4, 0.3, 0.2), corner_radius=0.05)
        assert box.sdf(np.array([1.0, 0, 0])) == pytest.approx(0.55)

    def test_inside(self):
        box = RoundedBox(half_extents=(0.4, 0.3, 0.2), corner_radius=0.05)
        ev = analytic_sdf(box, (0, 0, 0))
        assert ev.value == pytest.approx(-0.25)
        assert np.allclose(np.linalg.norm(ev.gradient), 1.0)

    def test_corner_gradient(self):
        box = RoundedBox(half_extents=(0.4, 0.3, 0.2), corner_radius=0.05)
        p = np.array([0.6, 0.5, 0.4])
        ev = analytic_sdf(box, p)
        expect = (p - [0.4, 0.3, 0.2]) / np.linalg.norm(p - [0.4, 0.3, 0.2])
        assert np.allclose(ev.gradient, expect)


@pytest.mark.parametrize(
    "shape",
    [
        Sphere(radius=0.5),
        Sphere(center=(0.2, -0.1, 0.3), radius=0.4),
        Torus(major_radius=0.5, minor_radius=0.2),
        Torus(major_radius=0.6, minor_radius=0.25, axis=(1.0, 1.0, 0.5)),
        RoundedBox(half_extents=(0.4, 0.3, 0.2), corner_radius=0.05),
    ],
    ids=["sphere", "offset-sphere", "torus", "tilted-torus", "roundedbox"],
)
class TestEikonalProperty:
    def test_unit_gradient(self, shape):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1.2, 1.2, size=(4000, 3))
        g, defined = shape.gradient(pts)
        norms = np.linalg.norm(g[defined], axis=1)
        assert np.abs(norms - 1.0).max() < 1e-12

    def test_gradient_matches_finite_differences(self, shape):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-1.0, 1.0, size=(300, 3))
        g, defined = shape.gradient(pts)
        h = 1e-7
        fd = np.zeros_like(g)
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            fd[:, k] = (shape.sdf(pts + e) - shape.sdf(pts - e)) / (2 * h)
        # keep clear of face/corner creases where the FD straddles regions
        err = np.abs(g - fd).max(axis=1)
        ok = defined & (err < np.inf)
        assert np.median(err[ok]) < 1e-6
        assert (err[ok] < 1e-5).mean() > 0.95


class TestRayIntersect:
    def test_sphere_head_on(self):
        hit, t = ray_intersect(Sphere(radius=0.5), [(0, 0, 2)], [(0, 0, -1)])
        assert hit[0] and t[0] == pytest.approx(1.5)

    def test_sphere_miss(self):
        hit, _ = ray_intersect(Sphere(radius=0.5), [(0, 2, 2)], [(0, 0, -1)])
        assert not hit[0]

    def test_sphere_from_inside_exits(self):
        hit, t = ray_intersect(Sphere(radius=0.5), [(0, 0, 0)], [(0, 0, 1)])
        assert hit[0] and t[0] == pytest.approx(0.5)

    def test_torus_against_dense_bisection(self):
        torus = Torus(major_radius=0.5, minor_radius=0.2)
        rng = np.random.default_rng(3)
        origins = rng.normal(size=(200, 3))
        origins = 2.0 * origins / np.linalg.norm(origins, axis=1, keepdims=True)
        targets = rng.normal(size=(200, 3)) * 0.35
        dirs = targets - origins
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        hit, t = ray_intersect(torus, origins, dirs)
        for i in range(200):
            t_ref = _bisect_first_root(torus, origins[i], dirs[i], 0.0, 4.0)
            if t_ref is None:
                assert not hit[i]
            else:
                assert hit[i]
                assert t[i] == pytest.approx(t_ref, abs=1e-6)

    def test_torus_surface_residual(self):
        torus = Torus(major_radius=0.5, minor_radius=0.2)
        rng = np.random.default_rng(5)
        origins = np.tile([0.0, 0.0, 2.0], (500, 1))
        pts = rng.normal(size=(500, 3)) * np.array([0.8, 0.8, 0.3])
        dirs = pts - origins
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        hit, t = ray_intersect(torus, origins, dirs)
        p = origins[hit] + t[hit, None] * dirs[hit]
        assert np.abs(torus.sdf(p)).max() < 1e-9

    def test_roundedbox_face(self):
        box = RoundedBox(half_extents=(0.4, 0.3, 0.2), corner_radius=0.05)
        hit, t = ray_intersect(box, [(2, 0, 0)], [(-1, 0, 0)])
        assert hit[0] and t[0] == pytest.approx(2 - 0.45, abs=1e-6)


def _bisect_first_root(shape, origin, direction, t0, t1, samples=4000):
    ts = np.linspace(t0, t1, samples)
    f = shape.sdf(origin[None] + ts[:, None] * direction[None])
    sign_change = np.nonzero((f[:-1] > 0) & (f[1:] <= 0))[0]
    if len(sign_change) == 0:
        return None
    lo, hi = ts[sign_change[0]], ts[sign_change[0] + 1]
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if shape.sdf(origin[None] + mid * direction[None])[0] > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
