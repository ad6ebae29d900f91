"""Differentiable inverse warping.

Reconstructs a target-side raster by, for every target pixel: lifting it
to 3-D with the target depth, moving it through the relative pose
(target camera -> source camera), projecting into the source image and
bilinearly sampling there.  Target-centric (inverse) warping only; there
is no forward splatting, so no holes to fill.

Per-pixel failures never raise: a pixel that is masked out, has
non-positive depth, lands behind the source camera, or samples outside
the source image is simply marked invalid.  Losses must only be summed
over the valid mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .camera import Intrinsics, Pose6DoF
from .imaging import DepthMap, Frame, PixelMask, SegMap


@dataclass(frozen=True)
class WarpResult:
    """Warped raster plus the per-pixel validity mask.

    ``warped`` is (H, W, C) float64; values at invalid pixels are 0 and
    carry no meaning.
    """

    warped: np.ndarray
    valid: PixelMask


def _source_array(source) -> np.ndarray:
    if isinstance(source, SegMap):
        return source.onehot()
    if isinstance(source, Frame):
        return np.asarray(source.data)
    a = np.asarray(source, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    return a


def inverse_warp(
    source,
    target_depth: DepthMap,
    pose: Pose6DoF,
    k: Intrinsics,
    mask: PixelMask | None = None,
) -> WarpResult:
    """Warp a source raster into the target geometry.

    source : Frame, SegMap (warped as its soft one-hot encoding), or a
        raw (H, W) / (H, W, C) array.
    target_depth : depth of the *target* frame.
    pose : transform taking target-camera points to source-camera points.
    mask : participation mask on the target side (commonly
        ``eyelid_mask(target_seg)``); None means all pixels.
    """
    src = np.ascontiguousarray(_source_array(source), dtype=np.float64)
    d = np.ascontiguousarray(target_depth.data, dtype=np.float64)
    h, w = d.shape
    if src.shape[:2] != (h, w):
        raise ValueError(f"source raster {src.shape[:2]} does not match depth {d.shape}")
    if mask is None:
        sel = np.ones((h, w), dtype=np.uint8)
    else:
        if mask.data.shape != (h, w):
            raise ValueError(f"mask shape {mask.data.shape} does not match depth {d.shape}")
        sel = np.ascontiguousarray(mask.data, dtype=np.uint8)
    m = np.ascontiguousarray(pose.to_matrix()[:3, :])
    warped, valid = _kernels.warp_raster(src, d, sel, m, k.fx, k.fy, k.cx, k.cy)
    return WarpResult(warped=warped, valid=PixelMask(valid.astype(bool)))


def track_points(points, target_depth: DepthMap, pose: Pose6DoF, k: Intrinsics):
    """Map target-frame pixels into the source frame.

    Applies the same backproject / transform / project chain as
    :func:`inverse_warp` to the given (N, 2) points, reading each point's
    depth from ``target_depth`` by bilinear interpolation.

    Returns ``(mapped, valid)``: (N, 2) source-frame coordinates and a
    boolean flag per point.  Points with non-positive interpolated depth
    or a behind-camera transform are flagged invalid; points mapping
    outside the source image stay valid (the caller decides whether an
    off-image landing counts).
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    d = target_depth.data
    h, w = d.shape
    inside = (
        (pts[:, 0] >= 0.0)
        & (pts[:, 0] <= w - 1.0)
        & (pts[:, 1] >= 0.0)
        & (pts[:, 1] <= h - 1.0)
    )
    depths = np.zeros(len(pts))
    if inside.any():
        depths[inside] = _bilinear_many(d, pts[inside, 0], pts[inside, 1])
    m = pose.to_matrix()[:3, :]
    mapped, valid = _kernels.warp_points(pts, depths, m, k.fx, k.fy, k.cx, k.cy)
    return mapped, valid & inside


def _bilinear_many(a: np.ndarray, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    h, w = a.shape
    u0 = np.clip(np.floor(us).astype(np.intp), 0, max(w - 2, 0))
    v0 = np.clip(np.floor(vs).astype(np.intp), 0, max(h - 2, 0))
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = us - u0
    fv = vs - v0
    return (
        a[v0, u0] * (1 - fu) * (1 - fv)
        + a[v0, u1] * fu * (1 - fv)
        + a[v1, u0] * (1 - fu) * fv
        + a[v1, u1] * fu * fv
    )
