"""Pinhole camera geometry and 6-DOF pose algebra.

Coordinate conventions (OpenCV-style, fixed for the whole package):

* Camera frame: X right, Y down, Z forward; the camera looks along +Z,
  so visible points have z > 0.
* Image frame: u grows right, v grows down, origin at the top-left pixel
  center.  Projection is ``u = fx*x/z + cx``, ``v = fy*y/z + cy``.
* Rigid transforms act on column-vector points: ``p' = R @ p + t``.
* Euler angles (rx, ry, rz) build the rotation as ``R = Rz @ Ry @ Rx``
  (intrinsic rotation about X, then Y, then Z).  Ground-truth generators
  and pose files must use the same order.

Scene units are millimeters throughout.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    """Input violates a geometric precondition (bad depth, behind camera...)."""


class BehindCameraError(GeometryError):
    """A point with z <= 0 was projected."""


@dataclass(frozen=True)
class Intrinsics:
    """Calibrated pinhole parameters (no lens distortion).

    The principal point is allowed outside the nominal sensor center:
    cropped regions of interest produce exactly that, so an off-center
    (cx, cy) only triggers a warning, never a rejection.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            warnings.warn(
                f"principal point ({self.cx}, {self.cy}) lies outside the "
                f"{self.width}x{self.height} image; treating intrinsics as given "
                "(frames may come from a cropped ROI)",
                stacklevel=2,
            )

    def matrix(self) -> np.ndarray:
        """3x3 intrinsic matrix K."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def inverse_matrix(self) -> np.ndarray:
        """Closed-form K^-1."""
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )


@dataclass(frozen=True)
class Pose6DoF:
    """Rigid transform parametrized as (tx, ty, tz, rx, ry, rz).

    Translation in millimeters, rotation in radians.  ``to_matrix`` yields
    the 4x4 homogeneous transform with ``R = Rz @ Ry @ Rx``.
    """

    tx: float = 0.0
    ty: float = 0.0
    tz: float = 0.0
    rx: float = 0.0
    ry: float = 0.0
    rz: float = 0.0

    @classmethod
    def identity(cls) -> "Pose6DoF":
        return cls()

    @classmethod
    def from_vector(cls, v) -> "Pose6DoF":
        tx, ty, tz, rx, ry, rz = (float(x) for x in v)
        return cls(tx, ty, tz, rx, ry, rz)

    def to_vector(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tz, self.rx, self.ry, self.rz])

    def to_matrix(self) -> np.ndarray:
        return pose_to_matrix(self)

    def rotation_matrix(self) -> np.ndarray:
        return _euler_to_rotation(self.rx, self.ry, self.rz)

    def translation(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tz])


@dataclass(frozen=True)
class PointCloud:
    """3-D points with the pixel each one came from.

    ``points`` is (N, 3) camera-frame coordinates, ``source_pixels`` the
    matching (N, 2) array of (u, v) locations.  All points lie in front of
    the camera (z > 0).
    """

    points: np.ndarray
    source_pixels: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        pix = np.asarray(self.source_pixels, dtype=np.float64).reshape(-1, 2)
        if len(pts) != len(pix):
            raise ValueError(f"points ({len(pts)}) and source_pixels ({len(pix)}) differ in length")
        if len(pts) and np.any(pts[:, 2] <= 0):
            raise GeometryError("point cloud contains points with z <= 0")
        pts.flags.writeable = False
        pix.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "source_pixels", pix)

    def __len__(self) -> int:
        return len(self.points)


def _euler_to_rotation(rx: float, ry: float, rz: float) -> np.ndarray:
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    # R = Rz @ Ry @ Rx, expanded
    return np.array(
        [
            [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
            [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
            [-sy, cy * sx, cy * cx],
        ]
    )


def _rotation_to_euler(r: np.ndarray) -> tuple[float, float, float]:
    """Extract (rx, ry, rz) with R = Rz @ Ry @ Rx.

    Valid away from gimbal lock (|ry| = pi/2); at lock rz is set to 0 and
    the remaining freedom folded into rx.
    """
    sy = -r[2, 0]
    sy = min(1.0, max(-1.0, sy))
    ry = math.asin(sy)
    if abs(sy) < 1.0 - 1e-12:
        rx = math.atan2(r[2, 1], r[2, 2])
        rz = math.atan2(r[1, 0], r[0, 0])
    else:
        rx = math.atan2(-sy * r[0, 1], r[1, 1])
        rz = 0.0
    return rx, ry, rz


def pose_to_matrix(p: Pose6DoF) -> np.ndarray:
    """4x4 homogeneous transform of a pose."""
    m = np.eye(4)
    m[:3, :3] = _euler_to_rotation(p.rx, p.ry, p.rz)
    m[:3, 3] = (p.tx, p.ty, p.tz)
    return m


def matrix_to_pose(m: np.ndarray) -> Pose6DoF:
    """Inverse of :func:`pose_to_matrix` (away from gimbal lock)."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (4, 4):
        raise ValueError(f"expected 4x4 matrix, got {m.shape}")
    rx, ry, rz = _rotation_to_euler(m[:3, :3])
    return Pose6DoF(m[0, 3], m[1, 3], m[2, 3], rx, ry, rz)


def compose(a: Pose6DoF, b: Pose6DoF) -> Pose6DoF:
    """Pose whose matrix is matrix(a) @ matrix(b) (apply b first, then a)."""
    ra = a.rotation_matrix()
    rb = b.rotation_matrix()
    m = np.eye(4)
    m[:3, :3] = ra @ rb
    m[:3, 3] = ra @ b.translation() + a.translation()
    return matrix_to_pose(m)


def invert(p: Pose6DoF) -> Pose6DoF:
    """Pose of the inverse rigid transform."""
    r = p.rotation_matrix()
    m = np.eye(4)
    m[:3, :3] = r.T
    m[:3, 3] = -r.T @ p.translation()
    return matrix_to_pose(m)


def backproject(pixel, depth: float, k: Intrinsics) -> tuple[float, float, float]:
    """Lift a pixel to the camera-frame 3-D point at the given depth.

    Returns ((u-cx)*depth/fx, (v-cy)*depth/fy, depth).
    """
    if depth <= 0:
        raise GeometryError(f"depth must be positive, got {depth}")
    u, v = pixel
    return (
        (u - k.cx) * depth / k.fx,
        (v - k.cy) * depth / k.fy,
        float(depth),
    )


def project(point, k: Intrinsics) -> tuple[float, float]:
    """Project a camera-frame point to pixel coordinates.

    Raises :class:`BehindCameraError` for z <= 0.
    """
    x, y, z = point
    if z <= 0:
        raise BehindCameraError(f"cannot project point with z={z}")
    return (k.fx * x / z + k.cx, k.fy * y / z + k.cy)


def depth_to_cloud(depth, k: Intrinsics, mask=None) -> PointCloud:
    """Backproject every masked-in pixel of a depth raster.

    ``depth`` is an (H, W) array or a container with a ``.data`` array;
    ``mask`` an optional (H, W) boolean array (default: all pixels).
    An empty mask yields an empty cloud.
    """
    d = np.asarray(getattr(depth, "data", depth), dtype=np.float64)
    if d.ndim != 2:
        raise ValueError(f"depth must be 2-D, got shape {d.shape}")
    h, w = d.shape
    if mask is None:
        sel = np.ones((h, w), dtype=bool)
    else:
        sel = np.asarray(getattr(mask, "data", mask), dtype=bool)
        if sel.shape != (h, w):
            raise ValueError(f"mask shape {sel.shape} does not match depth {d.shape}")
    vs, us = np.nonzero(sel)
    if len(us) == 0:
        return PointCloud(np.empty((0, 3)), np.empty((0, 2)))
    z = d[vs, us]
    if np.any(z <= 0):
        raise GeometryError("masked-in pixels must have positive depth")
    x = (us - k.cx) * z / k.fx
    y = (vs - k.cy) * z / k.fy
    pts = np.column_stack([x, y, z])
    pix = np.column_stack([us, vs]).astype(np.float64)
    return PointCloud(pts, pix)


def transform_points(pose: Pose6DoF, points: np.ndarray) -> np.ndarray:
    """Apply ``p' = R @ p + t`` to an (N, 3) array."""
    pts = np.asarray(points, dtype=np.float64)
    return pts @ pose.rotation_matrix().T + pose.translation()


def read_intrinsics(path) -> Intrinsics:
    """Read intrinsics from a plain-text key-value file.

    Expected keys: fx, fy, cx, cy, width, height (see :mod:`ocureg.config`
    for the file syntax)."""
    from . import config

    kv = config.read_config(path)
    return intrinsics_from_config(kv)


def intrinsics_from_config(kv: dict) -> Intrinsics:
    try:
        return Intrinsics(
            fx=float(kv["fx"]),
            fy=float(kv["fy"]),
            cx=float(kv["cx"]),
            cy=float(kv["cy"]),
            width=int(kv["width"]),
            height=int(kv["height"]),
        )
    except KeyError as e:
        raise KeyError(f"intrinsics config missing key {e.args[0]!r}") from None
