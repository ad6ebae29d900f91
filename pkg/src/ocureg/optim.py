"""Direct 6-DOF egomotion recovery and model-based depth refinement.

Replaces the usual learned depth/pose networks with explicit per-pair
numerical optimization: the same losses, the same warping geometry, but
gradients come from central finite differences and descent is plain
backtracking gradient descent with a fixed multi-start pattern.  Every
evaluation is deterministic, so identical inputs and config reproduce the
identical result.

A diverging optimization (non-finite loss at the current iterate) never
raises; it is reported through the ``diverged`` flag so batch runs over
many pairs survive individual failures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .camera import GeometryError, Intrinsics, Pose6DoF
from .imaging import DepthMap, Frame, SegMap, eyelid_mask
from .losses import (
    DEFAULT_SFL_THRESHOLD,
    LossReport,
    LossWeights,
    loss_ds,
    loss_sfl,
    stack_source,
    warped_losses,
)
from .spherefit import DegenerateGeometryError, InsufficientDataError

_POSE_PARAMS = ("tx", "ty", "tz", "rx", "ry", "rz")

# Deterministic multi-start pattern: axis-aligned rotation perturbations,
# scaled by OptimConfig.multi_start_rot_deg.  Entry 0 is the unperturbed
# init; further starts cycle through the table with growing scale.
_START_PATTERN = (
    (0, 0, 0),
    (1, 0, 0),
    (-1, 0, 0),
    (0, 1, 0),
    (0, -1, 0),
    (0, 0, 1),
    (0, 0, -1),
    (1, 1, 0),
    (-1, -1, 0),
    (1, 0, 1),
    (-1, 0, -1),
)


class GradientError(ValueError):
    """A finite-difference probe produced a non-finite loss."""


@dataclass(frozen=True)
class PairInputs:
    """Everything fixed about one source/target registration problem."""

    source: Frame
    source_seg: SegMap
    target: Frame
    target_seg: SegMap
    target_depth: DepthMap
    k: Intrinsics
    sfl_threshold: float = DEFAULT_SFL_THRESHOLD

    def with_target_depth(self, depth: DepthMap) -> "PairInputs":
        return replace(self, target_depth=depth)


def _block_mean(a: np.ndarray, f: int) -> np.ndarray:
    h, w = a.shape[:2]
    hc, wc = h // f, w // f
    a = a[: hc * f, : wc * f]
    if a.ndim == 3:
        return a.reshape(hc, f, wc, f, a.shape[2]).mean(axis=(1, 3))
    return a.reshape(hc, f, wc, f).mean(axis=(1, 3))


def downsample_pair(pair: PairInputs, factor: int) -> PairInputs:
    """Coarse copy of a pair for pyramid scheduling.

    Frames are block-averaged (band-limiting them); depth and labels are
    subsampled at block centers so surface geometry stays exact.  The
    intrinsics follow the pixel-grid change.
    """
    if factor == 1:
        return pair
    off = factor // 2
    take = (slice(off, (pair.target_depth.height // factor) * factor, factor),
            slice(off, (pair.target_depth.width // factor) * factor, factor))
    k = pair.k
    kc = Intrinsics(
        fx=k.fx / factor,
        fy=k.fy / factor,
        cx=(k.cx - off) / factor,
        cy=(k.cy - off) / factor,
        width=k.width // factor,
        height=k.height // factor,
    )
    return PairInputs(
        source=Frame(_block_mean(np.asarray(pair.source.data), factor)),
        source_seg=SegMap(pair.source_seg.data[take]),
        target=Frame(_block_mean(np.asarray(pair.target.data), factor)),
        target_seg=SegMap(pair.target_seg.data[take]),
        target_depth=DepthMap(pair.target_depth.data[take]),
        k=kc,
        sfl_threshold=pair.sfl_threshold,
    )


@dataclass(frozen=True)
class OptimConfig:
    max_iters: int = 120
    step_rule: str = "backtracking"  # "backtracking" | "fixed"
    init_pose: Pose6DoF = field(default_factory=Pose6DoF)
    convergence_tol: float = 1e-10
    fd_epsilon: float = 1e-5
    multi_start: int = 5
    multi_start_rot_deg: float = 2.0
    step_size: float = 0.05
    min_step: float = 1e-12
    # coarse-to-fine schedule: downsample factors, coarsest first; basins
    # widen at coarse scale, which is what lets descent travel several
    # degrees, and coarse evaluations are factor^2 cheaper
    pyramid_levels: tuple[int, ...] = (4, 2, 1)
    # depth-refinement knobs
    control_grid: int = 10
    max_offset: float = 1.5

    def __post_init__(self):
        if self.max_iters <= 0:
            raise ValueError("max_iters must be positive")
        if self.fd_epsilon <= 0:
            raise ValueError("fd_epsilon must be positive")
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")
        if self.step_rule not in ("backtracking", "fixed"):
            raise ValueError(f"unknown step_rule {self.step_rule!r}")


@dataclass(frozen=True)
class OptimResult:
    pose: Pose6DoF
    loss_trace: tuple[LossReport, ...]
    converged: bool
    diverged: bool
    iterations_used: int

    @property
    def final_total(self) -> float:
        return self.loss_trace[-1].total if self.loss_trace else math.inf


class Evaluator:
    """Cached total-loss evaluation for one pair.

    The stacked source raster and eyelid mask never change; the
    depth-only terms (DS, SFL) are cached per depth object, so a pose
    search recomputes only the warp-dependent losses.  Reports are
    identical to :func:`ocureg.losses.total_loss` on the same inputs.
    """

    def __init__(self, pair: PairInputs, weights: LossWeights):
        self.pair = pair
        self.weights = weights
        self._stacked = stack_source(pair.source, pair.source_seg)
        self._mask = eyelid_mask(pair.target_seg)
        self._static: dict[int, tuple] = {}

    def _static_terms(self, depth: DepthMap) -> tuple:
        key = id(depth)
        if key not in self._static:
            ds = loss_ds(depth, self.pair.target, self._mask)
            if self.weights.alpha_sfl > 0.0:
                sfl_c, sfl_s, skip_c, skip_s = loss_sfl(
                    depth, self.pair.target_seg, self.pair.k, self.pair.sfl_threshold
                )
            else:
                sfl_c, sfl_s, skip_c, skip_s = 0.0, 0.0, True, True
            if len(self._static) > 64:  # depth objects are transient during refinement
                self._static.clear()
            self._static[key] = (ds, sfl_c, sfl_s, skip_c, skip_s)
        return self._static[key]

    def report(self, pose: Pose6DoF, depth: DepthMap | None = None) -> LossReport | None:
        """Full loss report, or None when the evaluation is geometrically impossible."""
        d = self.pair.target_depth if depth is None else depth
        try:
            srl, recon, ssim, valid_count = warped_losses(
                self._stacked, self.pair.target, self.pair.target_seg, d, pose, self.pair.k, self._mask
            )
            ds, sfl_c, sfl_s, skip_c, skip_s = self._static_terms(d)
        except (GeometryError, InsufficientDataError, DegenerateGeometryError):
            return None
        w = self.weights
        total = (
            w.alpha_srl * srl
            + w.alpha_recon * recon
            + w.alpha_ssim * ssim
            + w.alpha_ds * ds
            + w.alpha_sfl * (sfl_c + sfl_s)
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

    def total(self, pose: Pose6DoF, depth: DepthMap | None = None) -> float:
        r = self.report(pose, depth)
        return r.total if r is not None and math.isfinite(r.total) else math.inf


def pose_gradient(
    pair: PairInputs,
    pose: Pose6DoF,
    weights: LossWeights,
    epsilon: float,
    _evaluator: Evaluator | None = None,
) -> np.ndarray:
    """Central finite-difference gradient of the total loss over the 6 pose parameters.

    Raises :class:`GradientError`, naming the parameter, when a probe
    point yields a non-finite loss.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    ev = _evaluator if _evaluator is not None else Evaluator(pair, weights)
    v = pose.to_vector()
    g = np.empty(6)
    for i, name in enumerate(_POSE_PARAMS):
        plus = v.copy()
        plus[i] += epsilon
        minus = v.copy()
        minus[i] -= epsilon
        lp = ev.total(Pose6DoF.from_vector(plus))
        lm = ev.total(Pose6DoF.from_vector(minus))
        if not (math.isfinite(lp) and math.isfinite(lm)):
            raise GradientError(f"non-finite loss probing parameter {name!r} at epsilon {epsilon}")
        g[i] = (lp - lm) / (2.0 * epsilon)
    return g


@dataclass
class _Descent:
    x: np.ndarray
    trace: list  # LossReport per accepted iterate, starting point included
    converged: bool
    diverged: bool
    iterations: int


def _descend(objective, x0: np.ndarray, gradient, config: OptimConfig) -> _Descent:
    """Gradient descent over a flat parameter vector.

    ``objective(x)`` returns a LossReport or None; ``gradient(x)`` a
    vector (may raise GradientError).  Backtracking accepts only strict
    decreases of the total, so the recorded trace is strictly decreasing;
    the fixed-step rule accepts unconditionally.
    """
    x = x0.copy()
    report = objective(x)
    if report is None or not math.isfinite(report.total):
        return _Descent(x, [report] if report else [], False, True, 0)
    f = report.total
    trace = [report]
    step = config.step_size
    converged = False
    diverged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        try:
            g = gradient(x)
        except GradientError:
            diverged = True
            break
        gnorm = float(np.linalg.norm(g))
        if gnorm == 0.0:
            converged = True
            break
        if not math.isfinite(gnorm):
            diverged = True
            break
        direction = -g / gnorm

        if config.step_rule == "fixed":
            x = x + config.step_size * direction
            report = objective(x)
            if report is None or not math.isfinite(report.total):
                diverged = True
                break
            f = report.total
            trace.append(report)
            continue

        alpha_max = config.step_size * 32
        alpha = min(max(step, config.min_step), alpha_max)
        best_alpha = 0.0
        best_report = None
        # shrink until a descent step is found
        while alpha >= config.min_step:
            cand_report = objective(x + alpha * direction)
            if cand_report is not None and math.isfinite(cand_report.total) and cand_report.total < f:
                best_alpha = alpha
                best_report = cand_report
                break
            alpha *= 0.5
        # greedy expansion: keep doubling while it still improves
        while best_report is not None and alpha * 2.0 <= alpha_max:
            cand_report = objective(x + alpha * 2.0 * direction)
            if (
                cand_report is not None
                and math.isfinite(cand_report.total)
                and cand_report.total < best_report.total
            ):
                alpha *= 2.0
                best_alpha = alpha
                best_report = cand_report
            else:
                break
        if best_report is None:
            converged = True
            break
        decrease = f - best_report.total
        x = x + best_alpha * direction
        f = best_report.total
        trace.append(best_report)
        step = best_alpha  # next search starts where this one ended
        if decrease < config.convergence_tol:
            converged = True
            break
    return _Descent(x, trace, converged, diverged, it)


_SQRT_HALF = math.sqrt(0.5)


def _polish_directions(n: int) -> np.ndarray:
    """Probe directions for the pattern search: axes plus, for poses, the
    near-degenerate translation/rotation coupling planes (ty-rx, tx-ry in
    depth-scaled coordinates), which axis probes alone cannot descend."""
    dirs = list(np.eye(n))
    if n == 6:
        for i, j in ((1, 3), (0, 4)):
            for sj in (1.0, -1.0):
                v = np.zeros(6)
                v[i] = _SQRT_HALF
                v[j] = sj * _SQRT_HALF
                dirs.append(v)
    return np.array(dirs)


def _compass_polish(objective, d: _Descent, config: OptimConfig, step0: float, min_step: float) -> _Descent:
    """Pattern search refining a stalled descent.

    Gradient descent crawls in the weakly-curved directions (roll above
    all) and stalls when the finite-difference direction goes noisy;
    probing a fixed direction set with a shrinking step is slower but
    immune to both, and every accepted move still strictly decreases the
    loss.
    """
    if d.diverged or not d.trace:
        return d
    x = d.x.copy()
    f = d.trace[-1].total
    trace = list(d.trace)
    step = step0
    directions = _polish_directions(len(x))
    budget = max(40, config.max_iters) * 4 * len(x)
    evals = 0
    while step >= min_step and evals < budget:
        improved = False
        for direction in directions:
            for sign in (1.0, -1.0):
                r = objective(x + sign * step * direction)
                evals += 1
                if r is not None and math.isfinite(r.total) and r.total < f:
                    x = x + sign * step * direction
                    f = r.total
                    trace.append(r)
                    improved = True
                    break
        if not improved:
            step *= 0.5
    return _Descent(x, trace, True, False, d.iterations)


def _start_poses(config: OptimConfig) -> list[Pose6DoF]:
    rot = math.radians(config.multi_start_rot_deg)
    starts = []
    base = config.init_pose.to_vector()
    for i in range(max(1, config.multi_start)):
        sx, sy, sz = _START_PATTERN[i % len(_START_PATTERN)]
        scale = 1.0 + i // len(_START_PATTERN)
        v = base.copy()
        v[3] += sx * rot * scale
        v[4] += sy * rot * scale
        v[5] += sz * rot * scale
        starts.append(Pose6DoF.from_vector(v))
    return starts


def _pose_scale(pair: PairInputs) -> np.ndarray:
    """Per-parameter scale equalizing image-space effect.

    A rotation of 1/D radians displaces pixels about as much as a 1 mm
    translation at scene depth D, so descent runs on (t, r * D): without
    this the rotation components dominate every gradient and steepest
    descent crawls along the rotation-translation valley.
    """
    d = float(np.median(pair.target_depth.data[pair.target_depth.data > 0]))
    return np.array([1.0, 1.0, 1.0, d, d, d])


def _estimate_single_level(
    pair: PairInputs, config: OptimConfig, weights: LossWeights, polish_floor: float | None = None
) -> OptimResult:
    if polish_floor is None:
        polish_floor = max(config.min_step, 1e-4)
    ev = Evaluator(pair, weights)
    scale = _pose_scale(pair)

    def objective(y):
        return ev.report(Pose6DoF.from_vector(y / scale))

    def gradient(y):
        g = pose_gradient(
            pair, Pose6DoF.from_vector(y / scale), weights, config.fd_epsilon, _evaluator=ev
        )
        return g / scale

    best: OptimResult | None = None
    for start in _start_poses(config):
        d = _descend(objective, start.to_vector() * scale, gradient, config)
        if not d.diverged and config.step_rule == "backtracking":
            d = _compass_polish(
                objective, d, config, step0=config.step_size * 0.5, min_step=polish_floor
            )
        result = OptimResult(
            pose=Pose6DoF.from_vector(d.x / scale),
            loss_trace=tuple(d.trace),
            converged=d.converged,
            diverged=d.diverged,
            iterations_used=d.iterations,
        )
        if best is None or _better(result, best):
            best = result
    return best


def estimate_pose(pair: PairInputs, config: OptimConfig, weights: LossWeights) -> OptimResult:
    """Recover the target-to-source transform by minimizing the total loss.

    Coarse-to-fine: preconditioned backtracking gradient descent runs at
    each ``config.pyramid_levels`` scale, each level starting from the
    previous level's pose.  Multi-start perturbations (``multi_start``
    deterministic copies) apply at the coarsest level, where evaluations
    are cheap and basins matter; ties break by lexicographic pose order,
    so reruns are bit-reproducible.  The reported trace and flags come
    from the full-resolution level.
    """
    init = config.init_pose
    result: OptimResult | None = None
    levels = config.pyramid_levels or (1,)
    for i, factor in enumerate(levels):
        level_pair = downsample_pair(pair, factor)
        level_config = replace(
            config,
            init_pose=init,
            multi_start=config.multi_start if i == 0 else 1,
        )
        # coarse levels only seed the next level: a shallow polish there
        # saves most of their cost
        floor = max(config.min_step, 1e-4) if factor == 1 else max(config.min_step, 2e-3)
        result = _estimate_single_level(level_pair, level_config, weights, polish_floor=floor)
        if result.diverged:
            return result
        init = result.pose
    return result


def _better(a: OptimResult, b: OptimResult) -> bool:
    if a.diverged != b.diverged:
        return not a.diverged
    if a.final_total != b.final_total:
        return a.final_total < b.final_total
    return tuple(a.pose.to_vector()) < tuple(b.pose.to_vector())


# ---------------------------------------------------------------------------
# depth refinement
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TwoSphereDepth:
    """Depth parametrized by two spheres in the target camera frame.

    Parameter vector: (sclera cx, cy, cz, r, cornea cx, cy, cz, r).
    Each labeled pixel takes the depth of its own sphere along the pixel
    ray; rays that miss their sphere fall back to the closest-approach
    depth, which keeps the induced depth continuous in the parameters.
    Eyelid pixels take the sclera depth (they are excluded from losses
    but the raster must stay positive).
    """

    params: np.ndarray

    @classmethod
    def from_spheres(cls, sclera, cornea) -> "TwoSphereDepth":
        return cls(
            np.array(
                [sclera.x0, sclera.y0, sclera.z0, sclera.r, cornea.x0, cornea.y0, cornea.z0, cornea.r]
            )
        )

    def depth_map(self, seg: SegMap, k: Intrinsics) -> DepthMap:
        h, w = seg.data.shape
        uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
        dirs = np.stack([(uu - k.cx) / k.fx, (vv - k.cy) / k.fy, np.ones_like(uu)], axis=-1)
        norms = np.linalg.norm(dirs, axis=-1)
        dirs = dirs / norms[..., None]

        z_sclera = self._sphere_depth(dirs, self.params[0:3], self.params[3])
        z_cornea = self._sphere_depth(dirs, self.params[4:7], self.params[7])
        from .imaging import LABEL_CORNEA  # local import to avoid a cycle at module load

        z = np.where(seg.data == LABEL_CORNEA, z_cornea, z_sclera)
        return DepthMap(np.maximum(z, 1e-6))

    @staticmethod
    def _sphere_depth(dirs: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
        b = dirs @ center
        disc = b * b - (center @ center - radius * radius)
        hit = disc > 0.0
        t = np.where(hit, b - np.sqrt(np.where(hit, disc, 0.0)), b)
        t = np.maximum(t, 1e-6)
        return t * dirs[..., 2]


def refine_depth(
    pair: PairInputs,
    pose: Pose6DoF,
    parametrization: str,
    config: OptimConfig,
    weights: LossWeights,
) -> DepthMap:
    """Refine the pair's target depth at a fixed pose.

    ``parametrization`` selects the model:

    * ``"two-sphere"``: 8 sphere parameters, initialized by fitting the
      current target depth per region; emits the implied depth.
    * ``"per-pixel-offset"``: bounded offsets from the current target
      depth on a bilinearly upsampled control grid
      (``config.control_grid`` per side, clipped to ``config.max_offset``
      millimeters).  The control grid keeps the finite-difference
      parameter count tractable while the applied offset field remains
      per-pixel.

    A refinement whose objective turns non-finite keeps the best iterate
    reached so far (mirrors the diverged flag of pose estimation).
    """
    if parametrization == "two-sphere":
        return _refine_two_sphere(pair, pose, config, weights)
    if parametrization == "per-pixel-offset":
        return _refine_offsets(pair, pose, config, weights)
    raise ValueError(f"unknown depth parametrization {parametrization!r}")


def _initial_spheres(pair: PairInputs):
    from .imaging import LABEL_CORNEA, LABEL_SCLERA
    from .spherefit import fit_sphere, region_cloud

    sclera = fit_sphere(region_cloud(pair.target_depth, pair.target_seg, pair.k, LABEL_SCLERA))
    cornea = fit_sphere(region_cloud(pair.target_depth, pair.target_seg, pair.k, LABEL_CORNEA))
    return sclera, cornea


def _refine_two_sphere(pair: PairInputs, pose: Pose6DoF, config: OptimConfig, weights: LossWeights) -> DepthMap:
    sclera, cornea = _initial_spheres(pair)
    model = TwoSphereDepth.from_spheres(sclera, cornea)
    ev = Evaluator(pair, weights)

    def objective(x):
        depth = TwoSphereDepth(x).depth_map(pair.target_seg, pair.k)
        return ev.report(pose, depth)

    def gradient(x):
        return _vector_gradient(objective, x, config.fd_epsilon)

    d = _descend(objective, model.params.copy(), gradient, config)
    return TwoSphereDepth(d.x).depth_map(pair.target_seg, pair.k)


def _refine_offsets(pair: PairInputs, pose: Pose6DoF, config: OptimConfig, weights: LossWeights) -> DepthMap:
    base = pair.target_depth.data
    h, w = base.shape
    n = config.control_grid
    ev = Evaluator(pair, weights)

    def apply(x):
        offsets = _upsample_grid(x.reshape(n, n), h, w)
        np.clip(offsets, -config.max_offset, config.max_offset, out=offsets)
        return DepthMap(np.maximum(base + offsets, 1e-6))

    def objective(x):
        return ev.report(pose, apply(x))

    def gradient(x):
        return _vector_gradient(objective, x, config.fd_epsilon)

    d = _descend(objective, np.zeros(n * n), gradient, config)
    return apply(d.x)


def _vector_gradient(objective, x: np.ndarray, epsilon: float) -> np.ndarray:
    g = np.empty(len(x))
    for i in range(len(x)):
        plus = x.copy()
        plus[i] += epsilon
        minus = x.copy()
        minus[i] -= epsilon
        rp = objective(plus)
        rm = objective(minus)
        if rp is None or rm is None or not (math.isfinite(rp.total) and math.isfinite(rm.total)):
            raise GradientError(f"non-finite loss probing parameter index {i} at epsilon {epsilon}")
        g[i] = (rp.total - rm.total) / (2.0 * epsilon)
    return g


def _upsample_grid(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinearly stretch an (n, n) control grid to (h, w)."""
    n = grid.shape[0]
    gv = np.linspace(0.0, n - 1.0, h)
    gu = np.linspace(0.0, n - 1.0, w)
    v0 = np.minimum(np.floor(gv).astype(int), n - 2)
    u0 = np.minimum(np.floor(gu).astype(int), n - 2)
    fv = (gv - v0)[:, None]
    fu = (gu - u0)[None, :]
    a = grid[np.ix_(v0, u0)]
    b = grid[np.ix_(v0, u0 + 1)]
    c = grid[np.ix_(v0 + 1, u0)]
    d = grid[np.ix_(v0 + 1, u0 + 1)]
    return a * (1 - fu) * (1 - fv) + b * fu * (1 - fv) + c * (1 - fu) * fv + d * fu * fv
