import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocureg.camera import (
    BehindCameraError,
    GeometryError,
    Intrinsics,
    PointCloud,
    Pose6DoF,
    backproject,
    compose,
    depth_to_cloud,
    intrinsics_from_config,
    invert,
    matrix_to_pose,
    pose_to_matrix,
    project,
    read_intrinsics,
)

finite_angles = st.floats(min_value=-math.pi + 1e-6, max_value=math.pi - 1e-6)
translations = st.floats(min_value=-50, max_value=50)


def random_pose(rng) -> Pose6DoF:
    t = rng.uniform(-20, 20, size=3)
    r = rng.uniform(-1.2, 1.2, size=3)
    return Pose6DoF(t[0], t[1], t[2], r[0], r[1], r[2])


class TestIntrinsics:
    def test_rejects_nonpositive_focal(self):
        with pytest.raises(ValueError, match="focal"):
            Intrinsics(fx=-1, fy=1, cx=0, cy=0, width=10, height=10)

    def test_warns_on_outside_principal_point(self):
        with pytest.warns(UserWarning, match="principal point"):
            Intrinsics(fx=100, fy=100, cx=-5.0, cy=4.0, width=10, height=10)

    def test_matrix_times_inverse_is_identity(self, paper_k):
        assert np.allclose(paper_k.matrix() @ paper_k.inverse_matrix(), np.eye(3), atol=1e-12)

    def test_read_from_config_file(self, tmp_path):
        p = tmp_path / "cam.cfg"
        p.write_text("fx = 3758.9\nfy = 3758.9\ncx = 138.8\ncy = 85.4\nwidth = 1600\nheight = 1200\n")
        k = read_intrinsics(p)
        assert k.fx == 3758.9 and k.cy == 85.4 and k.width == 1600

    def test_missing_key_is_reported(self):
        with pytest.raises(KeyError, match="cy"):
            intrinsics_from_config({"fx": "1", "fy": "1", "cx": "0", "width": "4", "height": "4"})


class TestBackproject:
    def test_principal_point_lands_on_axis(self, paper_k):
        assert backproject((paper_k.cx, paper_k.cy), 2.0, paper_k) == (0.0, 0.0, 2.0)

    def test_one_focal_length_off_axis(self, paper_k):
        x, y, z = backproject((paper_k.cx + paper_k.fx, paper_k.cy), 1.0, paper_k)
        assert (x, y, z) == pytest.approx((1.0, 0.0, 1.0), abs=1e-12)

    def test_matches_scalar_arithmetic(self, paper_k):
        # independent hand evaluation of the pinhole equations
        expected = ((200 - 138.8) * 3.0 / 3758.9, (100 - 85.4) * 3.0 / 3758.9, 3.0)
        assert backproject((200, 100), 3.0, paper_k) == pytest.approx(expected, abs=1e-15)

    def test_rejects_nonpositive_depth(self, paper_k):
        with pytest.raises(GeometryError):
            backproject((10, 10), 0.0, paper_k)


class TestProject:
    def test_axis_point_hits_principal_point(self, paper_k):
        assert project((0, 0, 5.0), paper_k) == (paper_k.cx, paper_k.cy)

    def test_unit_offset_at_unit_depth(self, paper_k):
        u, v = project((1.0, 0.0, 1.0), paper_k)
        assert u == pytest.approx(3897.7, abs=1e-9)
        assert v == pytest.approx(85.4, abs=1e-9)

    def test_behind_camera_raises(self, paper_k):
        with pytest.raises(BehindCameraError):
            project((0, 0, -1.0), paper_k)

    def test_roundtrip_1000_random_pixels(self, paper_k):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            pixel = (rng.uniform(0, 1599), rng.uniform(0, 1199))
            depth = rng.uniform(0.1, 100.0)
            back = project(backproject(pixel, depth, paper_k), paper_k)
            assert abs(back[0] - pixel[0]) < 1e-9
            assert abs(back[1] - pixel[1]) < 1e-9


class TestPoseMatrix:
    def test_zero_pose_is_identity(self):
        assert np.array_equal(pose_to_matrix(Pose6DoF()), np.eye(4))

    def test_quarter_turn_about_z(self):
        m = pose_to_matrix(Pose6DoF(rz=math.pi / 2))
        rotated = m[:3, :3] @ np.array([1.0, 0.0, 0.0])
        assert np.allclose(rotated, [0.0, 1.0, 0.0], atol=1e-12)

    def test_translation_column(self):
        m = pose_to_matrix(Pose6DoF(tx=1, ty=2, tz=3))
        assert np.array_equal(m[:3, 3], [1, 2, 3])

    def test_invert_matches_matrix_inverse(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            p = random_pose(rng)
            diff = pose_to_matrix(invert(p)) - np.linalg.inv(pose_to_matrix(p))
            assert np.abs(diff).max() < 1e-9

    @given(rx=finite_angles, ry=finite_angles, rz=finite_angles)
    @settings(max_examples=100, deadline=None)
    def test_rotation_block_is_special_orthogonal(self, rx, ry, rz):
        r = Pose6DoF(rx=rx, ry=ry, rz=rz).rotation_matrix()
        assert np.abs(r @ r.T - np.eye(3)).max() < 1e-12
        assert abs(np.linalg.det(r) - 1.0) < 1e-9

    @given(
        rx=finite_angles,
        ry=st.floats(min_value=-math.pi / 2 + 0.01, max_value=math.pi / 2 - 0.01),
        rz=finite_angles,
        tx=translations,
    )
    @settings(max_examples=100, deadline=None)
    def test_euler_roundtrip_away_from_gimbal_lock(self, rx, ry, rz, tx):
        m = pose_to_matrix(Pose6DoF(tx=tx, rx=rx, ry=ry, rz=rz))
        again = pose_to_matrix(matrix_to_pose(m))
        assert np.abs(again - m).max() < 1e-9


class TestComposeInvert:
    def test_identity_is_neutral(self):
        p = Pose6DoF(1, 2, 3, 0.1, 0.2, 0.3)
        assert np.abs(compose(Pose6DoF(), p).to_matrix() - p.to_matrix()).max() < 1e-12

    def test_invert_identity(self):
        assert invert(Pose6DoF()) == Pose6DoF()

    def test_compose_matches_matrix_product(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a, b = random_pose(rng), random_pose(rng)
            expected = pose_to_matrix(a) @ pose_to_matrix(b)
            assert np.abs(compose(a, b).to_matrix() - expected).max() < 1e-9

    def test_compose_with_inverse_is_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            p = random_pose(rng)
            m = compose(p, invert(p)).to_matrix()
            assert np.abs(m - np.eye(4)).max() < 1e-9


class TestDepthToCloud:
    def test_constant_depth_full_mask(self, synth_k):
        d = np.full((synth_k.height, synth_k.width), 1.0)
        cloud = depth_to_cloud(d, synth_k)
        assert len(cloud) == synth_k.width * synth_k.height
        assert np.all(cloud.points[:, 2] == 1.0)

    def test_single_pixel_mask(self, synth_k):
        d = np.full((64, 64), 7.0)
        mask = np.zeros((64, 64), dtype=bool)
        # principal point is between pixels for the 64px camera; use an exact-center variant
        k = Intrinsics(fx=synth_k.fx, fy=synth_k.fy, cx=32.0, cy=32.0, width=64, height=64)
        mask[32, 32] = True
        cloud = depth_to_cloud(d, k, mask)
        assert len(cloud) == 1
        assert cloud.points[0] == pytest.approx([0.0, 0.0, 7.0])
        assert cloud.source_pixels[0] == pytest.approx([32.0, 32.0])

    def test_empty_mask_gives_empty_cloud(self, synth_k):
        d = np.full((64, 64), 1.0)
        cloud = depth_to_cloud(d, synth_k, np.zeros((64, 64), dtype=bool))
        assert len(cloud) == 0

    def test_nonpositive_masked_depth_raises(self, synth_k):
        d = np.zeros((64, 64))
        with pytest.raises(GeometryError):
            depth_to_cloud(d, synth_k)

    def test_rendered_sphere_cloud_lies_on_sphere(self, base_sample, eye_model, synth_k):
        cloud = depth_to_cloud(base_sample.depth, synth_k, base_sample.seg.data == 1)
        center_cam = np.asarray(eye_model.sclera_center) + np.array([0, 0, 40.0])
        dist = np.linalg.norm(cloud.points - center_cam, axis=1)
        assert np.abs(dist - eye_model.sclera_radius).max() < 1e-6


class TestPointCloud:
    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((3, 3)), np.zeros((2, 2)))

    def test_points_behind_camera_rejected(self):
        pts = np.array([[0.0, 0.0, -1.0]])
        with pytest.raises(GeometryError):
            PointCloud(pts, np.zeros((1, 2)))
