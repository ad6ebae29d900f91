"""Pure-numpy warp kernel, the fallback when the compiled core is absent.

Mirrors the arithmetic of ``_warpcore.pyx`` expression for expression so
both backends produce bit-comparable results; keep the two in sync when
touching either.
"""

from __future__ import annotations

import numpy as np


def warp_raster(source, depth, mask, m, fx, fy, cx, cy):
    """Inverse-warp ``source`` into the geometry of ``depth``.

    source : (H, W, C) float64, the raster sampled on the source side
    depth  : (H, W) float64, target-side depth
    mask   : (H, W) uint8, 1 where the target pixel participates
    m      : (3, 4) float64 rigid transform [R | t], target cam -> source cam
    fx, fy, cx, cy : shared pinhole intrinsics

    Returns ``(warped, valid)``: (H, W, C) float64 with zeros at invalid
    pixels, and (H, W) uint8.  A pixel is valid when it participates, has
    positive target depth, lands in front of the source camera, and its
    sample point falls inside [0, W-1] x [0, H-1].
    """
    h, w = depth.shape
    us, vs, valid = _sample_coords(depth, mask, m, fx, fy, cx, cy)

    warped = np.zeros_like(source)
    if not valid.any():
        return warped, valid.astype(np.uint8)

    uq = np.where(valid, us, 0.0)
    vq = np.where(valid, vs, 0.0)
    u0 = np.minimum(np.floor(uq).astype(np.intp), w - 2) if w > 1 else np.zeros_like(uq, dtype=np.intp)
    v0 = np.minimum(np.floor(vq).astype(np.intp), h - 2) if h > 1 else np.zeros_like(vq, dtype=np.intp)
    u0 = np.maximum(u0, 0)
    v0 = np.maximum(v0, 0)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = uq - u0
    fv = vq - v0

    w00 = (1.0 - fu) * (1.0 - fv)
    w10 = fu * (1.0 - fv)
    w01 = (1.0 - fu) * fv
    w11 = fu * fv
    acc = (
        source[v0, u0] * w00[..., None]
        + source[v0, u1] * w10[..., None]
        + source[v1, u0] * w01[..., None]
        + source[v1, u1] * w11[..., None]
    )
    warped[valid] = acc[valid]
    return warped, valid.astype(np.uint8)


def _sample_coords(depth, mask, m, fx, fy, cx, cy):
    """Source-side sample location for every target pixel.

    Returns (us, vs, valid_bool); us/vs are meaningful only where valid.
    """
    h, w = depth.shape
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    participate = (mask != 0) & (depth > 0.0)

    x = (uu - cx) * depth / fx
    y = (vv - cy) * depth / fy
    z = depth
    xp = m[0, 0] * x + m[0, 1] * y + m[0, 2] * z + m[0, 3]
    yp = m[1, 0] * x + m[1, 1] * y + m[1, 2] * z + m[1, 3]
    zp = m[2, 0] * x + m[2, 1] * y + m[2, 2] * z + m[2, 3]

    front = zp > 0.0
    safe_z = np.where(front, zp, 1.0)
    us = fx * xp / safe_z + cx
    vs = fy * yp / safe_z + cy
    inb = (us >= 0.0) & (us <= w - 1.0) & (vs >= 0.0) & (vs <= h - 1.0)
    valid = participate & front & inb
    return us, vs, valid


def warp_points(points, depths, m, fx, fy, cx, cy):
    """Map (N, 2) target pixels with per-point depth into the source image.

    Returns ``(mapped, valid)``; mapped rows are (u, v) in the source (set
    to 0 where invalid).  Out-of-image sample points are still reported
    (callers evaluating tracking want the raw location), so valid here only
    requires positive depth and a positive transformed z.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    d = np.asarray(depths, dtype=np.float64).reshape(-1)
    x = (pts[:, 0] - cx) * d / fx
    y = (pts[:, 1] - cy) * d / fy
    z = d
    xp = m[0, 0] * x + m[0, 1] * y + m[0, 2] * z + m[0, 3]
    yp = m[1, 0] * x + m[1, 1] * y + m[1, 2] * z + m[1, 3]
    zp = m[2, 0] * x + m[2, 1] * y + m[2, 2] * z + m[2, 3]
    valid = (d > 0.0) & (zp > 0.0)
    safe_z = np.where(valid, zp, 1.0)
    us = fx * xp / safe_z + cx
    vs = fy * yp / safe_z + cy
    mapped = np.column_stack([np.where(valid, us, 0.0), np.where(valid, vs, 0.0)])
    return mapped, valid
