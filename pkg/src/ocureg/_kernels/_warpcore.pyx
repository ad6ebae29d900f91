# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled warp kernel: fused backproject / transform / project / sample.

Semantics must stay identical to ``fallback.warp_raster``; the agreement
test pins both backends together.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def warp_raster(const cnp.float64_t[:, :, ::1] source,
                const cnp.float64_t[:, ::1] depth,
                const cnp.uint8_t[:, ::1] mask,
                const cnp.float64_t[:, ::1] m,
                double fx, double fy, double cx, double cy):
    cdef Py_ssize_t h = depth.shape[0]
    cdef Py_ssize_t w = depth.shape[1]
    cdef Py_ssize_t nch = source.shape[2]

    warped_arr = np.zeros((h, w, nch), dtype=np.float64)
    valid_arr = np.zeros((h, w), dtype=np.uint8)
    cdef cnp.float64_t[:, :, ::1] warped = warped_arr
    cdef cnp.uint8_t[:, ::1] valid = valid_arr

    cdef double m00 = m[0, 0], m01 = m[0, 1], m02 = m[0, 2], m03 = m[0, 3]
    cdef double m10 = m[1, 0], m11 = m[1, 1], m12 = m[1, 2], m13 = m[1, 3]
    cdef double m20 = m[2, 0], m21 = m[2, 1], m22 = m[2, 2], m23 = m[2, 3]

    cdef Py_ssize_t u, v, c, u0, v0, u1, v1
    cdef double d, x, y, z, xp, yp, zp, us, vs, fu, fv
    cdef double w00, w10, w01, w11

    for v in range(h):
        for u in range(w):
            if mask[v, u] == 0:
                continue
            d = depth[v, u]
            if d <= 0.0:
                continue
            x = (u - cx) * d / fx
            y = (v - cy) * d / fy
            z = d
            xp = m00 * x + m01 * y + m02 * z + m03
            yp = m10 * x + m11 * y + m12 * z + m13
            zp = m20 * x + m21 * y + m22 * z + m23
            if zp <= 0.0:
                continue
            us = fx * xp / zp + cx
            vs = fy * yp / zp + cy
            if us < 0.0 or us > w - 1.0 or vs < 0.0 or vs > h - 1.0:
                continue
            u0 = <Py_ssize_t>us
            if u0 > w - 2:
                u0 = w - 2
            if u0 < 0:
                u0 = 0
            v0 = <Py_ssize_t>vs
            if v0 > h - 2:
                v0 = h - 2
            if v0 < 0:
                v0 = 0
            u1 = u0 + 1
            if u1 > w - 1:
                u1 = w - 1
            v1 = v0 + 1
            if v1 > h - 1:
                v1 = h - 1
            fu = us - u0
            fv = vs - v0
            w00 = (1.0 - fu) * (1.0 - fv)
            w10 = fu * (1.0 - fv)
            w01 = (1.0 - fu) * fv
            w11 = fu * fv
            for c in range(nch):
                warped[v, u, c] = (source[v0, u0, c] * w00
                                   + source[v0, u1, c] * w10
                                   + source[v1, u0, c] * w01
                                   + source[v1, u1, c] * w11)
            valid[v, u] = 1

    return warped_arr, valid_arr
