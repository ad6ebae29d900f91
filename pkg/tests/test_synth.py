import math

import numpy as np
import pytest

from ocureg import synth
from ocureg.camera import GeometryError, Pose6DoF, compose, depth_to_cloud
from ocureg.imaging import LABEL_CORNEA, LABEL_EYELID, LABEL_SCLERA
from ocureg.warp import track_points


class TestEyeModel:
    def test_cornea_must_be_smaller(self):
        with pytest.raises(ValueError, match="smaller"):
            synth.EyeModel(sclera_radius=7.0, cornea_radius=8.0)

    def test_spheres_must_intersect(self):
        with pytest.raises(ValueError, match="intersect"):
            synth.EyeModel(cornea_center=(0.0, 0.0, -30.0))

    def test_default_dots_live_on_their_spheres(self):
        model = synth.default_eye_model(seed=3)
        assert len(model.punctate_dots) == 10
        for p, _ in model.punctate_dots:
            d_sclera = abs(np.linalg.norm(np.subtract(p, model.sclera_center)) - model.sclera_radius)
            d_cornea = abs(np.linalg.norm(np.subtract(p, model.cornea_center)) - model.cornea_radius)
            assert min(d_sclera, d_cornea) < 1e-9


class TestRender:
    def test_segmap_structure(self, base_sample):
        seg = base_sample.seg.data
        h, w = seg.shape
        # cornea centered, surrounded by sclera; eyelid band on top
        assert seg[h // 2, w // 2] == LABEL_CORNEA
        assert seg[h // 2, 3] == LABEL_SCLERA
        assert seg[h // 2, w - 4] == LABEL_SCLERA
        assert seg[1, w // 2] == LABEL_EYELID
        assert (seg == LABEL_CORNEA).sum() > 100

    def test_corneal_apex_depth(self, eye_model, synth_k):
        # apex on the optical axis: depth = distance to cornea center minus radius
        k = synth.default_intrinsics(65)  # odd size puts a pixel exactly on the axis
        sample = synth.render(eye_model, synth.default_pose(), k)
        apex_expected = (40.0 - 5.0) - eye_model.cornea_radius
        assert sample.depth.data[32, 32] == pytest.approx(apex_expected, abs=1e-9)

    def test_every_surface_pixel_on_its_sphere(self, base_sample, eye_model, synth_k):
        cam_offset = np.array([0.0, 0.0, 40.0])
        for label, center, radius in (
            (LABEL_SCLERA, eye_model.sclera_center, eye_model.sclera_radius),
            (LABEL_CORNEA, eye_model.cornea_center, eye_model.cornea_radius),
        ):
            cloud = depth_to_cloud(base_sample.depth, synth_k, base_sample.seg.data == label)
            dist = np.linalg.norm(cloud.points - (np.asarray(center) + cam_offset), axis=1)
            assert np.abs(dist - radius).max() < 1e-6

    def test_depth_positive_everywhere(self, base_sample):
        assert base_sample.depth.data.min() > 0

    def test_camera_inside_sphere_rejected(self, eye_model, synth_k):
        with pytest.raises(GeometryError, match="inside"):
            synth.render(eye_model, Pose6DoF(tz=5.0), synth_k)

    def test_eye_behind_camera_rejected(self, eye_model, synth_k):
        with pytest.raises(GeometryError, match="front"):
            synth.render(eye_model, Pose6DoF(tz=-40.0), synth_k)

    def test_same_seed_and_pose_bit_identical(self, eye_model, synth_k):
        a = synth.render(eye_model, synth.default_pose(), synth_k)
        b = synth.render(eye_model, synth.default_pose(), synth_k)
        assert np.array_equal(a.frame.data, b.frame.data)
        assert np.array_equal(a.depth.data, b.depth.data)
        assert np.array_equal(a.seg.data, b.seg.data)

    def test_different_seed_changes_texture_not_geometry(self, synth_k):
        m1 = synth.default_eye_model(seed=1)
        m2 = synth.EyeModel(texture_seed=99, punctate_dots=m1.punctate_dots)
        a = synth.render(m1, synth.default_pose(), synth_k)
        b = synth.render(m2, synth.default_pose(), synth_k)
        assert not np.array_equal(a.frame.data, b.frame.data)
        assert np.array_equal(a.depth.data, b.depth.data)
        assert np.array_equal(a.seg.data, b.seg.data)


class TestCorrespondences:
    def test_reprojection_consistency_between_views(self, eye_model, synth_k):
        pose_a = synth.default_pose()
        pose_b = compose(Pose6DoF(tx=0.8, ry=math.radians(1.2)), pose_a)
        a = synth.render(eye_model, pose_a, synth_k)
        b = synth.render(eye_model, pose_b, synth_k)
        rel = synth.relative_pose(b, a)  # a-camera -> b-camera

        gx = np.abs(np.diff(a.depth.data, axis=1, append=0.0))
        frontal = (gx < 0.3) & (a.seg.data != LABEL_EYELID)
        vs, us = np.nonzero(frontal)
        rng = np.random.default_rng(0)
        pick = rng.choice(len(us), size=30, replace=False)
        pts = [(float(us[i]), float(vs[i])) for i in pick]
        mapped, valid = track_points(pts, a.depth, rel, synth_k)
        count = 0
        for (u, v), (mu, mv), ok in zip(pts, mapped, valid):
            if not ok:
                continue
            surf = a.surface_points[int(v), int(u)]
            u_b, v_b, visible = synth.project_surface_point(b, surf, synth_k)
            if not visible:
                continue
            assert math.hypot(mu - u_b, mv - v_b) < 0.5
            count += 1
        assert count >= 20

    def test_shading_changes_at_corresponding_points(self, eye_model, synth_k):
        # light rides with the camera: the same surface point changes
        # brightness as the camera moves, and more so with a larger move
        pose_a = synth.default_pose()
        a = synth.render(eye_model, pose_a, synth_k)
        baselines = (0.6, 1.8, 3.6)
        diffs = []
        for baseline in baselines:
            pose_b = compose(Pose6DoF(tx=baseline, rz=math.radians(baseline)), pose_a)
            b = synth.render(eye_model, pose_b, synth_k)
            vals = []
            for v in range(8, 56, 4):
                for u in range(8, 56, 4):
                    if a.seg.data[v, u] == LABEL_EYELID:
                        continue
                    surf = a.surface_points[v, u]
                    u_b, v_b, visible = synth.project_surface_point(b, surf, synth_k)
                    if not visible:
                        continue
                    from ocureg.imaging import bilinear_sample

                    col_b, _ = bilinear_sample(b.frame, u_b, v_b)
                    vals.append(np.abs(col_b - a.frame.data[v, u]).mean())
            diffs.append(np.mean(vals))
        assert diffs[0] > 1e-4  # nonzero even for a small move
        assert diffs[0] < diffs[1] < diffs[2]  # grows with baseline


class TestSequences:
    def test_sequence_needs_two_poses(self, eye_model, synth_k):
        with pytest.raises(ValueError):
            synth.make_sequence(eye_model, [synth.default_pose()], synth_k)

    def test_constant_trajectory_gives_identical_frames(self, eye_model, synth_k):
        poses = [synth.default_pose()] * 3
        samples = synth.make_sequence(eye_model, poses, synth_k)
        assert np.array_equal(samples[0].frame.data, samples[2].frame.data)

    def test_relative_pose_roundtrip(self, eye_model, synth_k):
        poses = synth.jitter_trajectory(synth.default_pose(), 3, seed=5)
        samples = synth.make_sequence(eye_model, poses, synth_k)
        rel = synth.relative_pose(samples[1], samples[0])
        recovered = compose(rel, samples[0].pose)  # world -> cam1
        assert np.abs(recovered.to_matrix() - samples[1].pose.to_matrix()).max() < 1e-9

    def test_fifteen_pose_trajectory(self, eye_model):
        k = synth.default_intrinsics(32)
        poses = synth.jitter_trajectory(synth.default_pose(), 15, seed=2)
        samples = synth.make_sequence(eye_model, poses, k)
        assert len(samples) == 15
        for s in samples:
            assert s.depth.data.min() > 0
