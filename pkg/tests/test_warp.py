import math

import numpy as np
import pytest

from ocureg import _kernels
from ocureg._kernels import fallback
from ocureg.camera import Intrinsics, Pose6DoF, compose, invert
from ocureg.imaging import DepthMap, Frame, PixelMask, SegMap, eyelid_mask
from ocureg.synth import project_surface_point, relative_pose
from ocureg.warp import inverse_warp, track_points


@pytest.fixture(scope="module")
def plane_k():
    return Intrinsics(fx=120.0, fy=120.0, cx=31.5, cy=31.5, width=64, height=64)


class TestInverseWarpIdentity:
    def test_identity_pose_reproduces_source(self, base_sample, synth_k):
        wr = inverse_warp(base_sample.frame, base_sample.depth, Pose6DoF(), synth_k)
        valid = wr.valid.data
        assert valid.sum() > 3000
        diff = np.abs(wr.warped - base_sample.frame.data)[valid]
        assert diff.max() < 1e-9

    def test_identity_pose_with_constant_depth(self, plane_k):
        rng = np.random.default_rng(0)
        frame = Frame(rng.random((64, 64, 3)))
        depth = DepthMap(np.full((64, 64), 25.0))
        wr = inverse_warp(frame, depth, Pose6DoF(), plane_k)
        assert np.abs(wr.warped - frame.data)[wr.valid.data].max() < 1e-9

    def test_segmap_source_is_warped_as_onehot(self, base_sample, synth_k):
        wr = inverse_warp(base_sample.seg, base_sample.depth, Pose6DoF(), synth_k)
        assert wr.warped.shape == (64, 64, 3)
        valid = wr.valid.data
        assert np.abs(wr.warped[valid] - base_sample.seg.onehot()[valid]).max() < 1e-9


class TestClosedFormTranslation:
    def test_axial_translation_matches_similar_triangles(self, plane_k):
        # camera advances toward a fronto-parallel plane: a pixel at lateral
        # offset delta scales by d / (d - tz)
        d, tz = 30.0, 2.0
        depth = DepthMap(np.full((64, 64), d))
        pose = Pose6DoF(tz=-tz)  # target cam -> source cam: source is tz closer
        for delta in (2.0, 7.0, 13.0, -9.0):
            pts, valid = track_points([(plane_k.cx + delta, plane_k.cy)], depth, pose, plane_k)
            assert valid[0]
            expected_u = plane_k.cx + delta * d / (d - tz)
            assert pts[0, 0] == pytest.approx(expected_u, abs=0.01)
            assert pts[0, 1] == pytest.approx(plane_k.cy, abs=0.01)

    def test_lateral_translation_of_distant_plane_shifts_uniformly(self, plane_k):
        d, tx = 5000.0, 10.0
        depth = DepthMap(np.full((64, 64), d))
        pose = Pose6DoF(tx=tx)
        pts_in = [(10.0, 20.0), (40.0, 50.0), (31.5, 31.5)]
        pts, valid = track_points(pts_in, depth, pose, plane_k)
        assert valid.all()
        shift = plane_k.fx * tx / d  # projected shift of a fronto-parallel plane
        for (u, v), (mu, mv) in zip(pts_in, pts):
            assert mu == pytest.approx(u + shift, abs=1e-6)
            assert mv == pytest.approx(v, abs=1e-6)


class TestWarpOnRenderedPair:
    def test_ground_truth_warp_matches_target(self, scene_pair, synth_k):
        source, target, gt_pose = scene_pair
        mask = eyelid_mask(target.seg)
        wr = inverse_warp(source.frame, target.depth, gt_pose, synth_k, mask)
        valid = wr.valid.data
        assert valid.sum() > 2000
        diff = np.abs(wr.warped - target.frame.data).mean(axis=2)[valid]
        assert diff.mean() < 0.02

    def test_masked_pixels_are_invalid_and_zero(self, scene_pair, synth_k):
        source, target, gt_pose = scene_pair
        mask = eyelid_mask(target.seg)
        wr = inverse_warp(source.frame, target.depth, gt_pose, synth_k, mask)
        lid = ~mask.data
        assert not wr.valid.data[lid].any()
        assert not wr.warped[lid].any()

    def test_behind_camera_pixels_flagged_invalid(self, plane_k):
        rng = np.random.default_rng(1)
        frame = Frame(rng.random((64, 64, 3)))
        depth = DepthMap(np.full((64, 64), 10.0))
        wr = inverse_warp(frame, depth, Pose6DoF(tz=-20.0), plane_k)
        assert not wr.valid.data.any()

    def test_nonpositive_depth_pixels_flagged_invalid(self, plane_k):
        rng = np.random.default_rng(2)
        frame = Frame(rng.random((64, 64, 3)))
        d = np.full((64, 64), 10.0)
        d[5, 7] = 0.0
        wr = inverse_warp(frame, DepthMap(d), Pose6DoF(), plane_k)
        assert not wr.valid.data[5, 7]
        assert wr.valid.data[5, 8]

    def test_composition_consistency(self, eye_model, synth_k):
        from ocureg import synth

        pose_a = synth.default_pose()
        pose_b = compose(Pose6DoF(tx=0.4, ry=math.radians(0.8)), pose_a)
        pose_c = compose(Pose6DoF(ty=-0.3, rx=math.radians(-0.7)), pose_b)
        a = synth.render(eye_model, pose_a, synth_k)
        b = synth.render(eye_model, pose_b, synth_k)
        c = synth.render(eye_model, pose_c, synth_k)

        t_b_to_c = relative_pose(c, b)
        t_a_to_b = relative_pose(b, a)
        step1 = inverse_warp(c.frame, b.depth, t_b_to_c, synth_k)
        step2 = inverse_warp(step1.warped, a.depth, t_a_to_b, synth_k)
        direct = inverse_warp(c.frame, a.depth, compose(t_b_to_c, t_a_to_b), synth_k)
        both = step2.valid.data & direct.valid.data
        assert both.sum() > 2000
        diff = np.abs(step2.warped - direct.warped).mean(axis=2)[both]
        assert diff.mean() < 0.02


class TestTrackPoints:
    def test_identity_pose_keeps_points(self, base_sample, synth_k):
        pts_in = [(12.0, 40.0), (33.0, 20.0), (50.5, 44.25)]
        pts, valid = track_points(pts_in, base_sample.depth, Pose6DoF(), synth_k)
        assert valid.all()
        assert np.abs(pts - np.asarray(pts_in)).max() < 1e-9

    def test_nonpositive_depth_flags_point(self, plane_k):
        d = np.full((64, 64), 5.0)
        d[10, 10] = -1.0
        pts, valid = track_points([(10.0, 10.0), (20.0, 20.0)], DepthMap(d), Pose6DoF(), plane_k)
        assert not valid[0]
        assert valid[1]

    def test_ground_truth_correspondences_within_half_pixel(self, scene_pair, synth_k):
        source, target, gt_pose = scene_pair
        # pick non-grazing target pixels on the ocular surface and look up
        # where the renderer says their surface points appear in the source
        rng = np.random.default_rng(3)
        gx = np.abs(np.diff(target.depth.data, axis=1, append=0.0))
        gy = np.abs(np.diff(target.depth.data, axis=0, append=0.0))
        frontal = (gx < 0.3) & (gy < 0.3)
        candidates = np.argwhere((target.seg.data != 0) & frontal)
        chosen = candidates[rng.choice(len(candidates), size=40, replace=False)]
        pts_t = [(float(u), float(v)) for v, u in chosen]
        mapped, valid = track_points(pts_t, target.depth, gt_pose, synth_k)
        checked = 0
        for (u_t, v_t), (u_m, v_m), ok in zip(pts_t, mapped, valid):
            if not ok:
                continue
            surf = target.surface_points[int(v_t), int(u_t)]
            u_s, v_s, visible = project_surface_point(source, surf, synth_k)
            if not visible:
                continue
            assert math.hypot(u_m - u_s, v_m - v_s) < 0.5
            checked += 1
        assert checked >= 30


class TestKernelBackends:
    def test_fallback_matches_active_backend(self, scene_pair, synth_k):
        source, target, gt_pose = scene_pair
        src = np.ascontiguousarray(source.frame.data)
        depth = np.ascontiguousarray(target.depth.data)
        mask = np.ascontiguousarray((target.seg.data != 0).astype(np.uint8))
        m = np.ascontiguousarray(gt_pose.to_matrix()[:3, :])
        args = (src, depth, mask, m, synth_k.fx, synth_k.fy, synth_k.cx, synth_k.cy)
        w_active, v_active = _kernels.warp_raster(*args)
        w_fb, v_fb = fallback.warp_raster(*args)
        assert np.array_equal(v_active, v_fb)
        assert np.abs(w_active - w_fb).max() < 1e-12

    def test_compiled_backend_is_active(self):
        # the build compiles the extension in this environment; if this
        # fails the numpy fallback silently took over
        assert _kernels.backend() == "compiled"
