"""Linear least-squares sphere fitting and region extraction.

The fit solves the rearranged sphere equation as a tall linear system:
rows ``(2x, 2y, 2z, 1)`` against ``x^2 + y^2 + z^2``, whose solution
vector packs the center and ``r^2 - |center|^2``.  Points are centered on
their mean before solving: slit-lamp clouds sit tens of millimeters from
the origin and shallow corneal caps are nearly planar, so conditioning
matters.  The normal equations are used on the happy path with a fallback
to an SVD solve when they are ill-conditioned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera import Intrinsics, PointCloud, depth_to_cloud
from .imaging import DepthMap, SegMap

_COND_LIMIT = 1e12


class InsufficientDataError(ValueError):
    """Fewer than 4 points were supplied."""


class DegenerateGeometryError(ValueError):
    """The points do not determine a sphere (coplanar, collinear...)."""


@dataclass(frozen=True)
class SphereParams:
    """Fitted sphere: center (x0, y0, z0), radius r, rms residual.

    ``rms_residual`` is the root mean square of ``|p - center| - r`` over
    the fitted points.
    """

    x0: float
    y0: float
    z0: float
    r: float
    rms_residual: float

    def center(self) -> np.ndarray:
        return np.array([self.x0, self.y0, self.z0])

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError(f"radius must be positive, got {self.r}")
        if self.rms_residual < 0:
            raise ValueError("rms_residual must be non-negative")


def fit_sphere(cloud) -> SphereParams:
    """Least-squares sphere through a point cloud.

    Accepts a :class:`PointCloud` or a raw (N, 3) array.  Raises
    :class:`InsufficientDataError` below 4 points and
    :class:`DegenerateGeometryError` when the system is rank deficient or
    yields a non-positive squared radius.
    """
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n < 4:
        raise InsufficientDataError(f"sphere fit needs at least 4 points, got {n}")

    mean = pts.mean(axis=0)
    q = pts - mean

    a = np.empty((n, 4))
    a[:, :3] = 2.0 * q
    a[:, 3] = 1.0
    f = np.einsum("ij,ij->i", q, q)

    ata = a.T @ a
    atf = a.T @ f
    c = None
    if np.linalg.cond(ata) < _COND_LIMIT:
        try:
            c = np.linalg.solve(ata, atf)
        except np.linalg.LinAlgError:
            c = None
    if c is None:
        c, _, rank, _ = np.linalg.lstsq(a, f, rcond=None)
        if rank < 4:
            raise DegenerateGeometryError(
                f"points span a rank-{rank} system; a sphere needs rank 4 "
                "(coplanar or collinear input?)"
            )

    center_local = c[:3]
    r_sq = c[3] + float(center_local @ center_local)
    if r_sq <= 0:
        raise DegenerateGeometryError(f"fit produced non-positive squared radius {r_sq}")
    r = math.sqrt(r_sq)
    center = center_local + mean

    dist = np.linalg.norm(pts - center, axis=1)
    rms = float(np.sqrt(np.mean((dist - r) ** 2)))
    return SphereParams(float(center[0]), float(center[1]), float(center[2]), r, rms)


def region_cloud(depth: DepthMap, seg: SegMap, k: Intrinsics, label: int) -> PointCloud:
    """Backprojected cloud of the pixels carrying ``label``.

    May be empty when the label does not occur.
    """
    return depth_to_cloud(depth, k, mask=seg.data == label)


def region_presence(seg: SegMap, label: int) -> float:
    """Fraction of frame pixels carrying ``label``, in [0, 1]."""
    total = seg.data.size
    return float(np.count_nonzero(seg.data == label)) / total


def format_params(p: SphereParams) -> str:
    """Plain-text key-value rendering used by the CLI."""
    return (
        f"x0 = {p.x0!r}\n"
        f"y0 = {p.y0!r}\n"
        f"z0 = {p.z0!r}\n"
        f"r = {p.r!r}\n"
        f"rms_residual = {p.rms_residual!r}\n"
    )
