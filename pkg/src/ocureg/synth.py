"""Synthetic slit-lamp scene generator.

Renders an idealized eye, two intersecting spheres (large posterior
sclera, smaller anterior cornea), by per-pixel ray casting.  The renderer
exists to provide what recorded examinations cannot: exact depth, exact
segmentation, exact pose, and exact pixel-to-surface correspondences for
verifying the warp, the losses, and the pose optimizer.

Conventions:

* World frame = eye frame; the sclera center is normally at the origin
  and the camera looks at the eye from negative world z.
* ``pose`` is camera-from-world: ``X_cam = R @ X_world + t``.
* Texture and labels are functions of the world-space surface point, so
  they ride rigidly with the eye across views.
* The light source sits at the camera origin (as on a slit lamp), so a
  moving camera changes the shading of a fixed surface point.  Matched
  points therefore do NOT keep their color across frames; that violation
  is deliberate and is what the semantic loss is for.
* The eyelid is a world-fixed band (sinusoidal lower edge) painted over
  the top of the eye and labeled ``eyelid``; rays that miss the eye
  entirely also get the eyelid label (both are excluded classes).  Only
  cornea/sclera pixels carry the on-sphere depth guarantee.

Optional surface bumps (small spheres welded onto the sclera) perturb the
geometry away from a perfect sphere; they exist so depth refinement has
something non-spherical to recover and are off by default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .camera import GeometryError, Intrinsics, Pose6DoF, compose, invert, project, transform_points
from .imaging import LABEL_CORNEA, LABEL_EYELID, LABEL_SCLERA, DepthMap, Frame, SegMap

BACKGROUND_COLOR = (0.04, 0.045, 0.07)
EYELID_COLOR = (0.78, 0.58, 0.50)


@dataclass(frozen=True)
class LightConfig:
    """Point light co-located with the camera.

    ``reference_distance`` normalizes the inverse-square falloff so that a
    surface at that distance gets unit irradiance; ``ambient`` is the
    floor that keeps shadowed regions visible.  Defaults are balanced so
    the default scene never saturates: clipped highlights would erase the
    texture the photometric terms rely on.
    """

    ambient: float = 0.25
    intensity: float = 0.55
    reference_distance: float = 28.0


@dataclass(frozen=True)
class EyeModel:
    """Two intersecting spheres plus procedural surface detail.

    ``punctate_dots`` are (world surface point, radius) texture marks;
    ``bumps`` are (world surface point, radius, height) geometric bumps on
    the sclera.  All coordinates in millimeters, world/eye frame.
    """

    sclera_center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    sclera_radius: float = 12.0
    cornea_center: tuple[float, float, float] = (0.0, 0.0, -5.0)
    cornea_radius: float = 7.8
    texture_seed: int = 0
    punctate_dots: tuple = ()
    bumps: tuple = ()
    eyelid_edge_y: float = -7.6
    eyelid_wave_amp: float = 1.1
    eyelid_wave_freq: float = 0.7

    def __post_init__(self):
        if not self.cornea_radius < self.sclera_radius:
            raise ValueError(
                f"cornea radius {self.cornea_radius} must be smaller than "
                f"sclera radius {self.sclera_radius}"
            )
        gap = float(np.linalg.norm(np.subtract(self.cornea_center, self.sclera_center)))
        if not (abs(self.sclera_radius - self.cornea_radius) < gap < self.sclera_radius + self.cornea_radius):
            raise ValueError(
                f"spheres do not intersect: center distance {gap}, radii "
                f"{self.sclera_radius} and {self.cornea_radius}"
            )

    def is_eyelid(self, pts: np.ndarray) -> np.ndarray:
        """Eyelid-band membership of world surface points (y grows downward)."""
        p = np.asarray(pts, dtype=np.float64)
        return p[..., 1] < self.eyelid_edge_y + self.eyelid_wave_amp * np.sin(
            self.eyelid_wave_freq * p[..., 0]
        )


@dataclass(frozen=True)
class SceneSample:
    """One rendered view plus the ground truth behind it.

    ``surface_points`` is an (H, W, 3) table of world-space hit points,
    NaN where the ray missed all geometry; it is the correspondence oracle
    between views.
    """

    frame: Frame
    depth: DepthMap
    seg: SegMap
    pose: Pose6DoF
    surface_points: np.ndarray = field(repr=False)


def default_eye_model(seed: int = 0, n_dots: int = 10) -> EyeModel:
    """Anatomically plausible model with seeded punctate dots.

    Dots land on the camera-facing hemisphere, away from the eyelid band
    and clear of the limbus, split between sclera and cornea.
    """
    base = EyeModel(texture_seed=seed)
    rng = np.random.default_rng(seed)
    dots = []
    guard = 0
    while len(dots) < n_dots and guard < 1000:
        guard += 1
        on_cornea = len(dots) % 3 == 2
        d = rng.normal(size=3)
        d[2] = -abs(d[2]) - 0.8  # face the camera
        d /= np.linalg.norm(d)
        if on_cornea:
            p = np.asarray(base.cornea_center) + base.cornea_radius * d
            if np.linalg.norm(p - np.asarray(base.sclera_center)) <= base.sclera_radius + 0.4:
                continue  # inside or hugging the sclera sphere: not a visible cornea point
        else:
            p = np.asarray(base.sclera_center) + base.sclera_radius * d
            if np.linalg.norm(p - np.asarray(base.cornea_center)) <= base.cornea_radius + 0.4:
                continue
        if base.is_eyelid(p[None, :])[0]:
            continue
        dots.append((tuple(p), 0.8 if on_cornea else 1.1))
    return EyeModel(texture_seed=seed, punctate_dots=tuple(dots))


def default_intrinsics(size: int = 64, distance: float = 40.0) -> Intrinsics:
    """Intrinsics that frame the default eye to fill a square image."""
    # sclera subtends ~2*asin(12/40); leave a few percent of margin
    half_angle = math.asin(12.0 / distance) * 0.92
    f = (size / 2 - 0.5) / math.tan(half_angle)
    c = (size - 1) / 2.0
    return Intrinsics(fx=f, fy=f, cx=c, cy=c, width=size, height=size)


def default_pose(distance: float = 40.0) -> Pose6DoF:
    """Camera-from-world pose of a camera on the eye axis, ``distance`` away."""
    return Pose6DoF(tz=distance)


def _ray_sphere(dirs: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """Nearest positive hit distance per ray (origin 0), inf for misses.

    ``dirs`` is (N, 3) of unit directions.
    """
    b = dirs @ center
    disc = b * b - (center @ center - radius * radius)
    ok = disc >= 0.0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0 = b - sq
    t1 = b + sq
    t = np.where(t0 > 1e-9, t0, t1)
    return np.where(ok & (t > 1e-9), t, np.inf)


def _sphere_texture(model: EyeModel, pts: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Smooth albedo of world surface points.

    Built from low-frequency trig fields so bilinear resampling of a
    rendered frame stays accurate; every term is a function of the world
    point only.
    """
    rng = np.random.default_rng(model.texture_seed)
    phase = rng.uniform(0, 2 * math.pi, size=8)
    albedo = np.zeros((len(pts), 3))
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]

    sclera = labels == LABEL_SCLERA
    if sclera.any():
        xs, ys, zs = x[sclera], y[sclera], z[sclera]
        # ridge widths stay above the pixel footprint of the default
        # camera (~0.4 mm) so bilinear resampling keeps their contrast
        vein_field = (
            np.sin(0.55 * xs + 0.75 * ys + phase[0])
            + np.sin(0.65 * ys - 0.45 * zs + phase[1])
            + 0.6 * np.sin(0.85 * xs - 0.6 * zs + phase[2])
        )
        veins = np.exp(-(vein_field**2) / 0.55)
        base = np.stack(
            [
                0.93 - 0.05 * np.sin(0.5 * xs + phase[3]),
                0.88 - 0.28 * veins,
                0.85 - 0.30 * veins,
            ],
            axis=1,
        )
        albedo[sclera] = base

    cornea = labels == LABEL_CORNEA
    if cornea.any():
        pc = pts[cornea] - np.asarray(model.cornea_center)
        # iris: radial spokes around the cornea axis, dark pupil at the apex.
        # The albedo blends from the sclera color at the limbus inward over
        # ~2 mm: the label edge stays hard but the image stays band-limited,
        # which keeps subpixel resampling of the frame faithful.
        theta = np.arctan2(pc[:, 1], pc[:, 0])
        axial = -pc[:, 2] / model.cornea_radius  # 1 at the apex
        spokes = 0.5 + 0.5 * np.sin(7.0 * theta + phase[4] + 2.0 * axial)
        pupil = np.exp(-((axial - 1.0) ** 2) / 0.012)
        r_chan = 0.30 + 0.10 * spokes
        g_chan = 0.38 + 0.14 * spokes
        b_chan = 0.48 + 0.16 * spokes
        iris = np.stack([r_chan, g_chan, b_chan], axis=1) * (1.0 - 0.75 * pupil)[:, None]
        sclera_like = np.stack(
            [0.93 - 0.05 * np.sin(0.5 * pts[cornea, 0] + phase[3]), np.full(cornea.sum(), 0.88),
             np.full(cornea.sum(), 0.85)],
            axis=1,
        )
        # axial coordinate of the sphere-intersection (limbus) ring
        gap = float(np.linalg.norm(np.subtract(model.cornea_center, model.sclera_center)))
        axial_limbus = (model.sclera_radius**2 - model.cornea_radius**2 - gap**2) / (
            2.0 * gap * model.cornea_radius
        )
        ring = np.clip((axial - axial_limbus) / 0.35, 0.0, 1.0)[:, None]  # 0 at the limbus
        blend = ring * ring * (3.0 - 2.0 * ring)
        albedo[cornea] = sclera_like * (1.0 - blend) + iris * blend

    surface = sclera | cornea
    for dot_point, dot_radius in model.punctate_dots:
        dist2 = np.sum((pts - np.asarray(dot_point)) ** 2, axis=1)
        weight = np.exp(-dist2 / (2.0 * (dot_radius / 1.2) ** 2)) * surface
        albedo = albedo * (1 - weight[:, None]) + np.array([[0.10, 0.42, 0.16]]) * weight[:, None]

    lid = labels == LABEL_EYELID
    if lid.any():
        xl, yl = x[lid], y[lid]
        shade = 0.06 * np.sin(1.2 * xl + phase[5]) + 0.04 * np.sin(2.1 * yl + phase[6])
        lid_color = np.clip(np.array(EYELID_COLOR)[None, :] + shade[:, None], 0.0, 1.0)
        # same band-limiting at the lid edge: fade from the sclera color
        # over the first millimeter below the boundary
        edge = model.eyelid_edge_y + model.eyelid_wave_amp * np.sin(model.eyelid_wave_freq * xl)
        t = np.clip((edge - yl) / 1.0, 0.0, 1.0)[:, None]
        fade = t * t * (3.0 - 2.0 * t)
        sclera_like = np.stack(
            [0.93 - 0.05 * np.sin(0.5 * xl + phase[3]), np.full(lid.sum(), 0.88), np.full(lid.sum(), 0.85)],
            axis=1,
        )
        albedo[lid] = sclera_like * (1.0 - fade) + lid_color * fade

    return np.clip(albedo, 0.0, 1.0)


class _Caster:
    """Ray-casting and shading machinery shared by the render passes."""

    def __init__(self, model: EyeModel, pose: Pose6DoF, light: LightConfig):
        self.model = model
        self.pose = pose
        self.light = light
        r_wc = pose.rotation_matrix()
        t_wc = pose.translation()
        self.sclera_cam = r_wc @ np.asarray(model.sclera_center, dtype=np.float64) + t_wc
        cornea_cam = r_wc @ np.asarray(model.cornea_center, dtype=np.float64) + t_wc
        self.spheres = [
            (self.sclera_cam, model.sclera_radius, LABEL_SCLERA),
            (cornea_cam, model.cornea_radius, LABEL_CORNEA),
        ]
        sclera_c_world = np.asarray(model.sclera_center, dtype=np.float64)
        for bump_point, bump_radius, bump_height in model.bumps:
            bp = np.asarray(bump_point, dtype=np.float64)
            n = (bp - sclera_c_world) / np.linalg.norm(bp - sclera_c_world)
            b_center_world = bp + n * (bump_height - bump_radius)
            self.spheres.append((r_wc @ b_center_world + t_wc, bump_radius, LABEL_SCLERA))
        for name, (c, r, _) in zip(("sclera", "cornea"), self.spheres):
            if np.linalg.norm(c) <= r:
                raise GeometryError(f"camera origin lies inside the {name} sphere")
        if self.sclera_cam[2] <= 0:
            raise GeometryError("eye center is not in front of the camera")
        self.inverse_pose = invert(pose)

    def cast(self, dirs: np.ndarray):
        """Nearest hit per unit ray: (t, label, normal, world points, hit)."""
        t_best = np.full(len(dirs), np.inf)
        label = np.full(len(dirs), LABEL_EYELID, dtype=np.uint8)
        normal = np.zeros((len(dirs), 3))
        for c, r, lab in self.spheres:
            t_hit = _ray_sphere(dirs, c, r)
            closer = t_hit < t_best
            if closer.any():
                t_best = np.where(closer, t_hit, t_best)
                label[closer] = lab
                pts_hit = dirs[closer] * t_hit[closer, None]
                normal[closer] = (pts_hit - c) / r
        hit = np.isfinite(t_best)
        pts_cam = dirs * np.where(hit, t_best, 0.0)[:, None]
        pts_world = transform_points(self.inverse_pose, pts_cam)
        pts_world[~hit] = np.nan
        label[hit & self.model.is_eyelid(pts_world)] = LABEL_EYELID
        return t_best, label, normal, pts_world, hit

    def shade(self, dirs, t_best, label, normal, pts_world, hit) -> np.ndarray:
        """Lambertian RGB with the light at the camera origin."""
        albedo = np.empty((len(dirs), 3))
        albedo[~hit] = BACKGROUND_COLOR
        if hit.any():
            albedo[hit] = _sphere_texture(self.model, pts_world[hit], label[hit])
        shade = np.full(len(dirs), 1.0)
        if hit.any():
            to_light = -dirs[hit]
            lambert = np.maximum(0.0, np.einsum("ij,ij->i", normal[hit], to_light))
            falloff = (self.light.reference_distance / t_best[hit]) ** 2
            shade[hit] = self.light.ambient + self.light.intensity * lambert * falloff
        return np.clip(albedo * shade[:, None], 0.0, 1.0)


def _pixel_dirs(k: Intrinsics, du: float = 0.0, dv: float = 0.0) -> np.ndarray:
    uu, vv = np.meshgrid(
        np.arange(k.width, dtype=np.float64) + du, np.arange(k.height, dtype=np.float64) + dv
    )
    dirs = np.stack([(uu - k.cx) / k.fx, (vv - k.cy) / k.fy, np.ones_like(uu)], axis=-1).reshape(-1, 3)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def render(
    model: EyeModel,
    pose: Pose6DoF,
    k: Intrinsics,
    light: LightConfig | None = None,
    supersample: int = 3,
) -> SceneSample:
    """Ray-cast one view of the eye.

    Depth, labels and correspondences are point samples at pixel centers
    (keeping the on-sphere depth guarantee exact); the RGB frame averages
    ``supersample**2`` rays over each pixel footprint, approximating a
    real sensor and keeping the image band-limited enough for subpixel
    resampling.

    Raises :class:`~ocureg.camera.GeometryError` when the camera sits
    inside a sphere or the eye is not in front of the camera.
    """
    if light is None:
        light = LightConfig()
    if supersample < 1:
        raise ValueError("supersample must be at least 1")
    h, w = k.height, k.width
    caster = _Caster(model, pose, light)

    center_dirs = _pixel_dirs(k)
    t_best, label, normal, pts_world, hit = caster.cast(center_dirs)
    depth = np.where(hit, t_best * center_dirs[:, 2], caster.sclera_cam[2])

    if supersample == 1:
        rgb = caster.shade(center_dirs, t_best, label, normal, pts_world, hit)
    else:
        rgb = np.zeros((h * w, 3))
        offsets = (np.arange(supersample) + 0.5) / supersample - 0.5
        for dv in offsets:
            for du in offsets:
                dirs = _pixel_dirs(k, du, dv)
                rgb += caster.shade(dirs, *caster.cast(dirs))
        rgb /= supersample**2

    return SceneSample(
        frame=Frame(rgb.reshape(h, w, 3)),
        depth=DepthMap(depth.reshape(h, w)),
        seg=SegMap(label.reshape(h, w)),
        pose=pose,
        surface_points=pts_world.reshape(h, w, 3),
    )


def make_sequence(
    model: EyeModel,
    trajectory: list[Pose6DoF],
    k: Intrinsics,
    light: LightConfig | None = None,
) -> list[SceneSample]:
    """Render one sample per trajectory pose (at least 2)."""
    if len(trajectory) < 2:
        raise ValueError(f"a sequence needs at least 2 poses, got {len(trajectory)}")
    return [render(model, pose, k, light) for pose in trajectory]


def relative_pose(source: SceneSample, target: SceneSample) -> Pose6DoF:
    """Ground-truth transform taking target-camera points to source-camera points."""
    return compose(source.pose, invert(target.pose))


def project_surface_point(
    sample: SceneSample, point_world, k: Intrinsics, occlusion_tol: float = 0.25
):
    """Project a world surface point into a sample's image.

    Returns ``(u, v, visible)``; visibility requires landing inside the
    image and agreeing with the sample's own (bilinearly interpolated)
    depth along that ray within ``occlusion_tol`` millimeters, otherwise
    something sits in front.  Grazing-incidence regions have steep depth
    ramps, so visibility there is conservative.
    """
    from .imaging import bilinear_sample

    p_cam = transform_points(sample.pose, np.asarray(point_world, dtype=np.float64)[None, :])[0]
    if p_cam[2] <= 0:
        return 0.0, 0.0, False
    u, v = project(p_cam, k)
    h, w = sample.depth.data.shape
    if not (0 <= u <= w - 1 and 0 <= v <= h - 1):
        return u, v, False
    local_depth, _ = bilinear_sample(sample.depth.data, u, v)
    visible = abs(local_depth - p_cam[2]) < occlusion_tol
    return u, v, bool(visible)


def jitter_trajectory(
    base_pose: Pose6DoF,
    n: int,
    seed: int = 0,
    rot_scale_deg: float = 1.5,
    trans_scale: float = 0.8,
) -> list[Pose6DoF]:
    """Trajectory of small seeded perturbations around a base pose.

    Magnitudes default to the inter-frame motion seen when sampling a slow
    examination video every few frames.
    """
    rng = np.random.default_rng(seed)
    poses = [base_pose]
    for _ in range(n - 1):
        d_rot = np.deg2rad(rng.uniform(-rot_scale_deg, rot_scale_deg, size=3))
        d_t = rng.uniform(-trans_scale, trans_scale, size=3)
        delta = Pose6DoF(d_t[0], d_t[1], d_t[2], d_rot[0], d_rot[1], d_rot[2])
        poses.append(compose(delta, base_pose))
    return poses
