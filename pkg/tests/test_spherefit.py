import numpy as np
import pytest

from ocureg.imaging import LABEL_CORNEA, LABEL_SCLERA, SegMap
from ocureg.spherefit import (
    DegenerateGeometryError,
    InsufficientDataError,
    SphereParams,
    fit_sphere,
    region_cloud,
    region_presence,
)

from oracles import _geometric_sphere_fit


def sphere_samples(rng, center, radius, n):
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return np.asarray(center) + radius * d


class TestFitSphere:
    def test_axis_points_give_unit_sphere(self):
        pts = np.array(
            [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
            dtype=float,
        )
        p = fit_sphere(pts)
        assert (p.x0, p.y0, p.z0) == pytest.approx((0, 0, 0), abs=1e-12)
        assert p.r == pytest.approx(1.0, abs=1e-12)
        assert p.rms_residual < 1e-12

    def test_exact_recovery_on_200_points(self):
        rng = np.random.default_rng(0)
        pts = sphere_samples(rng, (1.0, 2.0, 3.0), 5.0, 200)
        p = fit_sphere(pts)
        assert np.allclose([p.x0, p.y0, p.z0], [1, 2, 3], rtol=1e-9, atol=1e-9)
        assert p.r == pytest.approx(5.0, rel=1e-9)
        assert p.rms_residual < 1e-9

    def test_matches_independent_nonlinear_fit(self):
        rng = np.random.default_rng(1)
        pts = sphere_samples(rng, (-4.0, 0.5, 22.0), 7.3, 400)
        pts += rng.normal(scale=0.05, size=pts.shape)
        linear = fit_sphere(pts)
        center, radius = _geometric_sphere_fit(pts)
        assert np.linalg.norm(linear.center() - center) < 0.02
        assert abs(linear.r - radius) < 0.02

    def test_far_from_origin_cloud_is_fit_stably(self):
        # shallow cap at slit-lamp-like distances: the conditioning case
        rng = np.random.default_rng(2)
        d = rng.normal(size=(500, 3))
        d[:, 2] = -np.abs(d[:, 2]) - 4.0  # shallow cap facing the camera
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        pts = np.array([0.0, 0.0, 52.0]) + 12.0 * d
        p = fit_sphere(pts)
        assert np.allclose([p.x0, p.y0, p.z0], [0, 0, 52.0], atol=1e-7)
        assert p.r == pytest.approx(12.0, abs=1e-7)

    def test_insufficient_points(self):
        with pytest.raises(InsufficientDataError):
            fit_sphere(np.zeros((3, 3)))

    def test_coplanar_points_are_degenerate(self):
        pts = np.array([[0, 0, 1], [1, 0, 1], [0, 1, 1], [1, 1, 1], [0.3, 0.7, 1]], dtype=float)
        with pytest.raises(DegenerateGeometryError):
            fit_sphere(pts)

    def test_collinear_points_are_degenerate(self):
        pts = np.outer(np.arange(6, dtype=float), np.array([1.0, 1.0, 1.0]))
        with pytest.raises(DegenerateGeometryError):
            fit_sphere(pts)

    def test_translation_equivariance(self):
        rng = np.random.default_rng(3)
        pts = sphere_samples(rng, (0.5, -1.0, 9.0), 4.0, 300)
        shift = np.array([13.0, -7.0, 2.5])
        a = fit_sphere(pts)
        b = fit_sphere(pts + shift)
        assert np.allclose(b.center(), a.center() + shift, atol=1e-9)
        assert b.r == pytest.approx(a.r, abs=1e-9)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(4)
        pts = sphere_samples(rng, (2.0, 1.0, 6.0), 3.0, 300)
        a = fit_sphere(pts)
        b = fit_sphere(pts * 2.5)
        assert np.allclose(b.center(), a.center() * 2.5, rtol=1e-9)
        assert b.r == pytest.approx(a.r * 2.5, rel=1e-9)

    def test_radius_error_shrinks_with_noise_averaging(self):
        sigma = 0.2
        rng = np.random.default_rng(5)
        d = rng.normal(size=(10_000, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        radii = 9.0 + rng.normal(scale=sigma, size=10_000)
        pts = np.array([1.0, 2.0, 30.0]) + radii[:, None] * d
        p = fit_sphere(pts)
        assert abs(p.r - 9.0) < sigma / 5

    def test_runtime_under_10ms(self):
        import time

        rng = np.random.default_rng(6)
        pts = sphere_samples(rng, (0, 0, 40.0), 12.0, 200)
        fit_sphere(pts)  # warm caches
        t0 = time.perf_counter()
        fit_sphere(pts)
        assert time.perf_counter() - t0 < 0.010

    def test_params_validation(self):
        with pytest.raises(ValueError):
            SphereParams(0, 0, 0, -1.0, 0.0)


class TestRegionOps:
    def test_all_cornea_cloud_covers_frame(self, synth_k):
        seg = SegMap(np.full((64, 64), LABEL_CORNEA, dtype=np.uint8))
        from ocureg.imaging import DepthMap

        depth = DepthMap(np.full((64, 64), 30.0))
        cloud = region_cloud(depth, seg, synth_k, LABEL_CORNEA)
        assert len(cloud) == 64 * 64

    def test_absent_label_gives_empty_cloud(self, synth_k):
        from ocureg.imaging import DepthMap

        seg = SegMap(np.full((8, 8), LABEL_SCLERA, dtype=np.uint8))
        cloud = region_cloud(DepthMap(np.full((8, 8), 30.0)), seg, synth_k, LABEL_CORNEA)
        assert len(cloud) == 0

    def test_rendered_region_cloud_on_generating_sphere(self, base_sample, eye_model, synth_k):
        cloud = region_cloud(base_sample.depth, base_sample.seg, synth_k, LABEL_CORNEA)
        center_cam = np.asarray(eye_model.cornea_center) + np.array([0.0, 0.0, 40.0])
        dist = np.linalg.norm(cloud.points - center_cam, axis=1)
        assert np.abs(dist - eye_model.cornea_radius).max() < 1e-6
        fitted = fit_sphere(cloud)
        assert np.allclose(fitted.center(), center_cam, atol=1e-6)
        assert fitted.r == pytest.approx(eye_model.cornea_radius, abs=1e-6)

    def test_presence_full(self):
        seg = SegMap(np.full((10, 10), LABEL_SCLERA, dtype=np.uint8))
        assert region_presence(seg, LABEL_SCLERA) == 1.0

    def test_presence_half(self):
        seg = np.full((10, 10), LABEL_SCLERA, dtype=np.uint8)
        seg[:5] = LABEL_CORNEA
        assert region_presence(SegMap(seg), LABEL_CORNEA) == 0.5

    def test_presence_empty(self):
        seg = SegMap(np.full((10, 10), LABEL_SCLERA, dtype=np.uint8))
        assert region_presence(seg, LABEL_CORNEA) == 0.0
