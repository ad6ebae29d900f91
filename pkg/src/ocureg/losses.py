"""Registration losses and their weighted total.

Five terms drive the registration:

* semantic reconstruction (SRL): squared L2 between the warped soft
  one-hot segmentation and the target one-hot, per valid pixel.  The main
  signal; label agreement survives the illumination changes that a
  camera-attached light inflicts on raw intensities.
* photometric (recon): per-channel L1 between warped and target frames.
* structural similarity (SSIM): 1 - mean local SSIM, 3x3 uniform windows,
  stride 1, stabilizers l1 = (0.01 * L)^2, l2 = (0.03 * L)^2 with L = 1
  because frames are normalized.
* depth smoothness (DS): |grad D| attenuated where the image itself has
  edges, mean over valid pixels.
* sphere fitting (SFL): squared radial residual of each region's
  backprojected cloud against its own least-squares sphere, one term for
  the cornea and one for the sclera, each active only when the region
  covers enough of the frame.

Every term is masked: pixels excluded by the eyelid mask or invalidated
by the warp never contribute.  An empty mask yields loss 0 and an
:class:`EmptyMaskWarning`.

When a target has several source frames (a 3-frame sequence gives two),
SRL and recon take the per-pixel minimum of the per-source cost over the
sources valid at that pixel; with one source this reduces to the plain
masked mean.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .camera import Intrinsics
from .imaging import (
    LABEL_CORNEA,
    LABEL_SCLERA,
    DepthMap,
    Frame,
    PixelMask,
    SegMap,
    eyelid_mask,
    gradients,
)
from .spherefit import (
    DegenerateGeometryError,
    InsufficientDataError,
    fit_sphere,
    region_cloud,
    region_presence,
)
from .warp import WarpResult, inverse_warp

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_DYNAMIC_RANGE = 1.0
SSIM_WINDOW = 3

DEFAULT_SFL_THRESHOLD = 0.5

# Highest attainable SRL: squared L2 between two distinct hard one-hot vectors.
SRL_MAX = 2.0


class EmptyMaskWarning(UserWarning):
    """A loss was evaluated over an empty validity mask."""


@dataclass(frozen=True)
class LossWeights:
    """Non-negative weights of the five loss terms."""

    alpha_srl: float = 0.0
    alpha_recon: float = 0.0
    alpha_ssim: float = 0.0
    alpha_ds: float = 0.0
    alpha_sfl: float = 0.0

    def __post_init__(self):
        vals = (self.alpha_srl, self.alpha_recon, self.alpha_ssim, self.alpha_ds, self.alpha_sfl)
        if any(v < 0 for v in vals):
            raise ValueError(f"loss weights must be non-negative, got {vals}")
        if all(v == 0 for v in vals):
            raise ValueError("at least one loss weight must be positive")


# Weight profile used on the clinical slit-lamp rig: L2 semantic term 0.85,
# L1 photometric 0.15, SSIM 0.15, depth smoothness 0.04, sphere fitting 1e4
# (radial residuals are fractions of a millimeter, hence the large weight).
CLINICAL_WEIGHTS = LossWeights(
    alpha_srl=0.85, alpha_recon=0.15, alpha_ssim=0.15, alpha_ds=0.04, alpha_sfl=10000.0
)

# Profile tuned for pose recovery on the synthetic renderer.  SSIM
# dominates deliberately: its normalized luminance/contrast terms are
# nearly immune to the camera-attached light, whereas raw L1 drags the
# minimum toward brightness alignment, and the semantic term is lumpy at
# pixel scale (soft-warped versus hard boundaries).  No sphere term:
# synthetic recovery runs against ground-truth depth, where it is constant.
SYNTHETIC_WEIGHTS = LossWeights(alpha_ssim=1.0, alpha_ds=0.04)

WEIGHT_PROFILES = {"clinical": CLINICAL_WEIGHTS, "synthetic": SYNTHETIC_WEIGHTS}


@dataclass(frozen=True)
class LossReport:
    """Every component of one total-loss evaluation."""

    srl: float
    recon: float
    ssim: float
    ds: float
    sfl_cornea: float
    sfl_sclera: float
    total: float
    valid_pixel_count: int
    sfl_cornea_skipped: bool = field(default=False, compare=False)
    sfl_sclera_skipped: bool = field(default=False, compare=False)


def _masked_mean(cost: np.ndarray, valid: np.ndarray, what: str) -> float:
    n = int(valid.sum())
    if n == 0:
        warnings.warn(f"{what}: empty validity mask, loss defined as 0", EmptyMaskWarning, stacklevel=3)
        return 0.0
    return float(cost[valid].sum() / n)


def _as_mask(valid) -> np.ndarray:
    return np.asarray(getattr(valid, "data", valid), dtype=bool)


def srl_cost_map(warped_onehot: np.ndarray, target: SegMap) -> np.ndarray:
    """Per-pixel squared L2 distance between soft one-hot encodings."""
    diff = warped_onehot - target.onehot()
    return np.einsum("ijk,ijk->ij", diff, diff)


def loss_srl(warped_onehot: np.ndarray, target: SegMap, valid) -> float:
    """Semantic reconstruction loss over the valid mask."""
    return _masked_mean(srl_cost_map(warped_onehot, target), _as_mask(valid), "loss_srl")


def recon_cost_map(warped: np.ndarray, target: Frame) -> np.ndarray:
    """Per-pixel channel-mean absolute intensity difference."""
    w = np.asarray(getattr(warped, "data", warped), dtype=np.float64)
    return np.abs(w - target.data).mean(axis=2)


def loss_recon(warped, target: Frame, valid) -> float:
    """Photometric L1 loss over the valid mask."""
    return _masked_mean(recon_cost_map(warped, target), _as_mask(valid), "loss_recon")


def _minimum_cost(cost_maps: list[np.ndarray], valids: list[np.ndarray], what: str) -> float:
    """Masked mean of the per-pixel minimum cost over the sources valid there."""
    union = np.zeros_like(valids[0])
    best = np.full(cost_maps[0].shape, np.inf)
    for cost, valid in zip(cost_maps, valids):
        best = np.where(valid, np.minimum(best, cost), best)
        union |= valid
    return _masked_mean(np.where(union, best, 0.0), union, what)


def loss_srl_multi(warps: list[WarpResult], target: SegMap) -> float:
    """SRL with the per-pixel minimum over several warped sources."""
    return _minimum_cost(
        [srl_cost_map(w.warped, target) for w in warps],
        [w.valid.data for w in warps],
        "loss_srl_multi",
    )


def loss_recon_multi(warps: list[WarpResult], target: Frame) -> float:
    """Photometric loss with the per-pixel minimum over several warped sources."""
    return _minimum_cost(
        [recon_cost_map(w.warped, target) for w in warps],
        [w.valid.data for w in warps],
        "loss_recon_multi",
    )


def _window_sum3(a: np.ndarray) -> np.ndarray:
    """Sum over all 3x3 windows fully inside the raster."""
    h, w = a.shape[:2]
    out = np.zeros_like(a[1 : h - 1, 1 : w - 1])
    for dv in (-1, 0, 1):
        for du in (-1, 0, 1):
            out = out + a[1 + dv : h - 1 + dv, 1 + du : w - 1 + du]
    return out


def ssim_map(warped: np.ndarray, target: Frame, valid) -> tuple[np.ndarray, np.ndarray]:
    """Local SSIM over complete 3x3 windows.

    Returns ``(ssim, window_valid)`` on the interior grid (H-2, W-2);
    ``ssim`` has one channel per input channel, ``window_valid`` is True
    where all 9 window pixels are valid.
    """
    x = np.asarray(getattr(warped, "data", warped), dtype=np.float64)
    y = np.asarray(target.data, dtype=np.float64)
    v = _as_mask(valid)
    c1 = (SSIM_K1 * SSIM_DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_DYNAMIC_RANGE) ** 2
    n = float(SSIM_WINDOW * SSIM_WINDOW)

    window_valid = _window_sum3(v.astype(np.float64)) == n
    mu_x = _window_sum3(x) / n
    mu_y = _window_sum3(y) / n
    var_x = _window_sum3(x * x) / n - mu_x * mu_x
    var_y = _window_sum3(y * y) / n - mu_y * mu_y
    cov = _window_sum3(x * y) / n - mu_x * mu_y
    ssim = ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    return ssim, window_valid


def loss_ssim(warped, target: Frame, valid) -> float:
    """1 - mean local SSIM over valid windows (those with 9 valid pixels)."""
    if target.height < SSIM_WINDOW or target.width < SSIM_WINDOW:
        raise ValueError(
            f"frame {target.width}x{target.height} is smaller than the "
            f"{SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    ssim, window_valid = ssim_map(warped, target, valid)
    n = int(window_valid.sum())
    if n == 0:
        warnings.warn("loss_ssim: no fully-valid window, loss defined as 0", EmptyMaskWarning, stacklevel=2)
        return 0.0
    return float(1.0 - ssim[window_valid].sum() / (n * ssim.shape[2]))


def ds_cost_map(depth: DepthMap, image: Frame) -> np.ndarray:
    """Per-pixel edge-aware depth smoothness cost."""
    dx, dy = gradients(depth.data)
    ix, iy = gradients(image.data)
    ix_mag = np.abs(ix).mean(axis=2)
    iy_mag = np.abs(iy).mean(axis=2)
    return np.abs(dx) * np.exp(-ix_mag) + np.abs(dy) * np.exp(-iy_mag)


def loss_ds(depth: DepthMap, image: Frame, valid) -> float:
    """Edge-aware depth smoothness over the valid mask."""
    return _masked_mean(ds_cost_map(depth, image), _as_mask(valid), "loss_ds")


def loss_sfl(
    depth: DepthMap,
    seg: SegMap,
    k: Intrinsics,
    threshold: float = DEFAULT_SFL_THRESHOLD,
) -> tuple[float, float, bool, bool]:
    """Sphere-fitting loss of the cornea and sclera regions.

    For each region whose pixel fraction exceeds ``threshold``: backproject
    its pixels, fit a sphere, and return the mean squared radial residual
    (distance to fitted center minus fitted radius) over the region's
    points.  Regions below the threshold, with fewer than 4 points, or
    with degenerate geometry are skipped and contribute 0.

    Returns ``(sfl_cornea, sfl_sclera, cornea_skipped, sclera_skipped)``.
    """
    results: dict[int, tuple[float, bool]] = {}
    for label in (LABEL_CORNEA, LABEL_SCLERA):
        if region_presence(seg, label) <= threshold:
            results[label] = (0.0, True)
            continue
        cloud = region_cloud(depth, seg, k, label)
        try:
            sphere = fit_sphere(cloud)
        except (InsufficientDataError, DegenerateGeometryError):
            results[label] = (0.0, True)
            continue
        residual = np.linalg.norm(cloud.points - sphere.center(), axis=1) - sphere.r
        results[label] = (float(np.mean(residual**2)), False)
    (c_val, c_skip), (s_val, s_skip) = results[LABEL_CORNEA], results[LABEL_SCLERA]
    return c_val, s_val, c_skip, s_skip


def stack_source(source: Frame, source_seg: SegMap) -> np.ndarray:
    """Frame and soft one-hot segmentation as one 6-channel raster.

    Both get warped by the same geometry, so a single kernel pass covers
    them; channels 0..2 are RGB, 3..5 the one-hot labels.
    """
    return np.ascontiguousarray(np.concatenate([source.data, source_seg.onehot()], axis=2))


def warped_losses(
    stacked_source: np.ndarray,
    target: Frame,
    target_seg: SegMap,
    target_depth: DepthMap,
    pose,
    k: Intrinsics,
    mask: PixelMask,
) -> tuple[float, float, float, int]:
    """The pose-dependent terms: (srl, recon, ssim, valid_pixel_count)."""
    wr = inverse_warp(stacked_source, target_depth, pose, k, mask)
    valid = wr.valid.data
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyMaskWarning)
        srl = loss_srl(wr.warped[:, :, 3:], target_seg, valid)
        recon = loss_recon(wr.warped[:, :, :3], target, valid)
        ssim = loss_ssim(wr.warped[:, :, :3], target, valid)
    return srl, recon, ssim, int(valid.sum())


def total_loss(
    source: Frame,
    source_seg: SegMap,
    target: Frame,
    target_seg: SegMap,
    target_depth: DepthMap,
    pose,
    k: Intrinsics,
    weights: LossWeights,
    sfl_threshold: float = DEFAULT_SFL_THRESHOLD,
) -> LossReport:
    """Evaluate every loss term for one source/target pair.

    The target eyelid mask gates the warp; the warp validity mask gates
    SRL, recon and SSIM; DS runs over the eyelid mask; SFL sees the raw
    depth and segmentation.  SFL is only computed when its weight is
    nonzero (it needs positive depth on every ocular-surface pixel, which
    unconstrained depth estimates may violate).
    """
    mask = eyelid_mask(target_seg)
    srl, recon, ssim, valid_count = warped_losses(
        stack_source(source, source_seg), target, target_seg, target_depth, pose, k, mask
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyMaskWarning)
        ds = loss_ds(target_depth, target, mask)
        if weights.alpha_sfl > 0.0:
            sfl_c, sfl_s, skip_c, skip_s = loss_sfl(target_depth, target_seg, k, sfl_threshold)
        else:
            sfl_c, sfl_s, skip_c, skip_s = 0.0, 0.0, True, True

    total = (
        weights.alpha_srl * srl
        + weights.alpha_recon * recon
        + weights.alpha_ssim * ssim
        + weights.alpha_ds * ds
        + weights.alpha_sfl * (sfl_c + sfl_s)
    )
    return LossReport(
        srl=srl,
        recon=recon,
        ssim=ssim,
        ds=ds,
        sfl_cornea=sfl_c,
        sfl_sclera=sfl_s,
        total=total,
        valid_pixel_count=valid_count,
        sfl_cornea_skipped=skip_c,
        sfl_sclera_skipped=skip_s,
    )
