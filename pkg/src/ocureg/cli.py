"""Command-line interface.

Subcommands::

    ocureg synth       render a synthetic sequence with ground truth
    ocureg fit-sphere  fit a sphere to one region of a depth + segmap pair
    ocureg register    recover the 6-DOF transform of a frame pair
    ocureg eval        score tracked annotation points for a pair
    ocureg mosaic      composite a registered pair (SRL-filtered)

Every command reads an optional shared key-value config file; flags
override file values.  Runs are deterministic for a fixed seed.

Exit codes: 0 success (including a diverged optimization, which is
diagnosable from the output), 2 missing input file, 3 degenerate
geometry, 4 pair rejected by the SRL filter, 5 bad arguments or config.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import evalreg, imaging, losses, optim, spherefit, synth
from .camera import Intrinsics, Pose6DoF, intrinsics_from_config
from .imaging import LABEL_CORNEA, LABEL_SCLERA

EXIT_OK = 0
EXIT_MISSING_FILE = 2
EXIT_DEGENERATE = 3
EXIT_FILTERED = 4
EXIT_BAD_ARGS = 5

_REGIONS = {"sclera": LABEL_SCLERA, "cornea": LABEL_CORNEA}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = cfgmod.read_config(args.config) if args.config else {}
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except cfgmod.ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_ARGS
    try:
        return args.func(args, cfg)
    except FileNotFoundError as e:
        print(f"error: missing file: {e.filename or e}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except imaging.ParseError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_ARGS
    except spherefit.DegenerateGeometryError as e:
        print(f"error: degenerate geometry: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (cfgmod.ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_ARGS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ocureg",
        description="Self-supervised registration toolkit for ocular-surface mapping.",
    )
    parser.add_argument("--config", help="shared key-value config file")
    parser.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    parser.add_argument(
        "--weights-profile",
        choices=sorted(losses.WEIGHT_PROFILES),
        default=None,
        help="loss weight profile (default clinical)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic eye sequence with ground truth")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--frames", type=int, default=3, help="trajectory length (default 3)")
    p.add_argument("--size", type=int, default=64, help="square image size in px (default 64)")
    p.add_argument(
        "--frame-step",
        type=int,
        default=10,
        help="video frames skipped between samples; scales motion (default 10)",
    )
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit-sphere", help="least-squares sphere fit of one region")
    p.add_argument("--depth", required=True, help="depth raster file")
    p.add_argument("--segmap", required=True, help="segmentation map file")
    p.add_argument("--region", choices=sorted(_REGIONS), required=True)
    p.add_argument("--output", help="write parameters here instead of stdout")
    p.set_defaults(func=cmd_fit_sphere)

    p = sub.add_parser("register", help="estimate the 6-DOF transform of a pair")
    p.add_argument("--source", required=True, help="source frame image")
    p.add_argument("--source-seg", required=True)
    p.add_argument("--target", required=True, help="target frame image")
    p.add_argument("--target-seg", required=True)
    p.add_argument("--target-depth", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--sfl-threshold", type=float, default=None)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("eval", help="evaluate tracked points for a registered pair")
    p.add_argument("--annotations", required=True, help="CSV: frame_id,point_id,u,v,region")
    p.add_argument("--source-id", required=True)
    p.add_argument("--target-id", required=True)
    p.add_argument("--target-depth", required=True)
    p.add_argument("--pose-file", required=True, help="text file, 6 numbers per line")
    p.add_argument("--pose-line", type=int, default=0)
    p.add_argument("--output", help="per-point CSV report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mosaic", help="composite a registered pair into a mosaic")
    p.add_argument("--source", required=True)
    p.add_argument("--source-seg", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--target-seg", required=True)
    p.add_argument("--target-depth", required=True)
    p.add_argument("--pose-file", required=True)
    p.add_argument("--pose-line", type=int, default=0)
    p.add_argument("--srl-filter-percent", type=float, default=5.0)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_mosaic)

    return parser


def _seed(args, cfg) -> int:
    if args.seed is not None:
        return args.seed
    return cfgmod.get_int(cfg, "seed", 0)


def _weights(args, cfg) -> losses.LossWeights:
    profile = args.weights_profile or cfg.get("weights_profile", "clinical")
    if profile not in losses.WEIGHT_PROFILES:
        raise cfgmod.ConfigError(f"unknown weights profile {profile!r}")
    base = losses.WEIGHT_PROFILES[profile]
    return losses.LossWeights(
        alpha_srl=cfgmod.get_float(cfg, "alpha_srl", base.alpha_srl),
        alpha_recon=cfgmod.get_float(cfg, "alpha_recon", base.alpha_recon),
        alpha_ssim=cfgmod.get_float(cfg, "alpha_ssim", base.alpha_ssim),
        alpha_ds=cfgmod.get_float(cfg, "alpha_ds", base.alpha_ds),
        alpha_sfl=cfgmod.get_float(cfg, "alpha_sfl", base.alpha_sfl),
    )


def _optim_config(cfg, init_pose=None) -> optim.OptimConfig:
    kw = dict(
        max_iters=cfgmod.get_int(cfg, "max_iters", 120),
        step_rule=cfg.get("step_rule", "backtracking"),
        convergence_tol=cfgmod.get_float(cfg, "convergence_tol", 1e-10),
        fd_epsilon=cfgmod.get_float(cfg, "fd_epsilon", 1e-5),
        multi_start=cfgmod.get_int(cfg, "multi_start", 5),
        multi_start_rot_deg=cfgmod.get_float(cfg, "multi_start_rot_deg", 2.0),
        step_size=cfgmod.get_float(cfg, "step_size", 0.05),
    )
    if init_pose is not None:
        kw["init_pose"] = init_pose
    return optim.OptimConfig(**kw)


def _intrinsics(cfg, fallback: Intrinsics | None = None) -> Intrinsics:
    if all(k in cfg for k in ("fx", "fy", "cx", "cy", "width", "height")):
        return intrinsics_from_config(cfg)
    if fallback is not None:
        return fallback
    raise cfgmod.ConfigError(
        "intrinsics missing from config (keys fx, fy, cx, cy, width, height)"
    )


def read_pose_file(path, line: int = 0) -> Pose6DoF:
    rows = [r for r in Path(path).read_text().splitlines() if r.strip()]
    if line >= len(rows):
        raise ValueError(f"{path}: pose line {line} out of range ({len(rows)} lines)")
    vals = rows[line].split()
    if len(vals) != 6:
        raise ValueError(f"{path}:{line}: expected 6 numbers, got {len(vals)}")
    return Pose6DoF.from_vector([float(v) for v in vals])


def write_pose_file(path, poses) -> None:
    with open(path, "w") as f:
        for p in poses:
            f.write(" ".join(repr(x) for x in p.to_vector()) + "\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args, cfg) -> int:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = _seed(args, cfg)
    size = cfgmod.get_int(cfg, "size", args.size)
    distance = cfgmod.get_float(cfg, "camera_distance", 40.0)
    k = _intrinsics(cfg, fallback=synth.default_intrinsics(size, distance))
    model = synth.default_eye_model(seed=seed, n_dots=cfgmod.get_int(cfg, "n_dots", 10))
    # frame-step scales the per-sample motion: longer steps, larger motion
    step_scale = args.frame_step / 10.0
    trajectory = synth.jitter_trajectory(
        synth.default_pose(distance),
        args.frames,
        seed=seed,
        rot_scale_deg=1.5 * step_scale,
        trans_scale=0.8 * step_scale,
    )
    samples = synth.make_sequence(model, trajectory, k)

    for i, s in enumerate(samples):
        imaging.write_image(out / f"frame_{i:03d}.ppm", s.frame)
        imaging.write_depth(out / f"depth_{i:03d}.dpt", s.depth)
        imaging.write_segmap(out / f"seg_{i:03d}.pgm", s.seg)
    write_pose_file(out / "poses.txt", [s.pose for s in samples])

    points_by_frame = {}
    for i, s in enumerate(samples):
        pts = []
        for j, (dot_point, _) in enumerate(model.punctate_dots):
            u, v, visible = synth.project_surface_point(s, dot_point, k)
            if not visible:
                continue
            label = s.seg.data[int(round(v)), int(round(u))]
            region = "cornea" if label == LABEL_CORNEA else "sclera"
            if label == imaging.LABEL_EYELID:
                continue
            pts.append(evalreg.AnnotatedPoint(f"dot{j:02d}", u, v, region))
        points_by_frame[f"frame_{i:03d}"] = tuple(pts)
    evalreg.write_annotations(out / "annotations.csv", points_by_frame)

    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


def cmd_fit_sphere(args, cfg) -> int:
    depth = imaging.read_depth(args.depth)
    seg = imaging.read_segmap(args.segmap)
    k = _intrinsics(
        cfg, fallback=synth.default_intrinsics(depth.width) if depth.width == depth.height else None
    )
    cloud = spherefit.region_cloud(depth, seg, k, _REGIONS[args.region])
    try:
        params = spherefit.fit_sphere(cloud)
    except spherefit.InsufficientDataError as e:
        print(f"error: degenerate geometry: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    text = spherefit.format_params(params)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _load_pair(args, cfg) -> optim.PairInputs:
    source = imaging.read_image(args.source)
    source_seg = imaging.read_segmap(args.source_seg)
    target = imaging.read_image(args.target)
    target_seg = imaging.read_segmap(args.target_seg)
    depth = imaging.read_depth(args.target_depth)
    k = _intrinsics(
        cfg, fallback=synth.default_intrinsics(depth.width) if depth.width == depth.height else None
    )
    threshold = getattr(args, "sfl_threshold", None)
    if threshold is None:
        threshold = cfgmod.get_float(cfg, "sfl_threshold", losses.DEFAULT_SFL_THRESHOLD)
    return optim.PairInputs(
        source=source,
        source_seg=source_seg,
        target=target,
        target_seg=target_seg,
        target_depth=depth,
        k=k,
        sfl_threshold=threshold,
    )


def cmd_register(args, cfg) -> int:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    pair = _load_pair(args, cfg)
    weights = _weights(args, cfg)
    result = optim.estimate_pose(pair, _optim_config(cfg), weights)

    write_pose_file(out / "pose.txt", [result.pose])
    with open(out / "trace.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "srl", "recon", "ssim", "ds", "sfl", "total"])
        for i, r in enumerate(result.loss_trace):
            writer.writerow(
                [i, repr(r.srl), repr(r.recon), repr(r.ssim), repr(r.ds),
                 repr(r.sfl_cornea + r.sfl_sclera), repr(r.total)]
            )
    from .imaging import eyelid_mask
    from .warp import inverse_warp

    wr = inverse_warp(pair.source, pair.target_depth, result.pose, pair.k, eyelid_mask(pair.target_seg))
    imaging.write_image(out / "warped.ppm", imaging.Frame(np.clip(wr.warped, 0.0, 1.0)))
    status = "diverged" if result.diverged else ("converged" if result.converged else "max-iters")
    (out / "status.txt").write_text(
        f"status = {status}\nfinal_total = {result.final_total!r}\niterations = {result.iterations_used}\n"
    )
    print(f"{status}: total {result.final_total:.6g} after {result.iterations_used} iterations")
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    ann = evalreg.read_annotations(args.annotations, args.source_id, args.target_id)
    depth = imaging.read_depth(args.target_depth)
    pose = read_pose_file(args.pose_file, args.pose_line)
    k = _intrinsics(
        cfg, fallback=synth.default_intrinsics(depth.width) if depth.width == depth.height else None
    )
    report = evalreg.evaluate_tracking(ann, depth, pose, k)
    if args.output:
        evalreg.write_report(args.output, report)
    print(report.summary())
    return EXIT_OK


def cmd_mosaic(args, cfg) -> int:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    pair = _load_pair(args, cfg)
    pose = read_pose_file(args.pose_file, args.pose_line)

    from .imaging import eyelid_mask
    from .warp import inverse_warp

    mask = eyelid_mask(pair.target_seg)
    onehot_warp = inverse_warp(pair.source_seg, pair.target_depth, pose, pair.k, mask)
    srl = losses.loss_srl(onehot_warp.warped, pair.target_seg, onehot_warp.valid)
    percent = evalreg.srl_percent(srl)
    if percent >= args.srl_filter_percent:
        print(
            f"pair rejected: SRL {percent:.2f}% >= filter threshold {args.srl_filter_percent:.2f}%",
            file=sys.stderr,
        )
        return EXIT_FILTERED

    mosaic, coverage = evalreg.mosaic_from_segmaps(
        pair.source, pair.source_seg, pair.target, pair.target_seg, pair.target_depth, pose, pair.k
    )
    imaging.write_image(out / "mosaic.ppm", mosaic)
    imaging.write_segmap(out / "coverage.pgm", imaging.SegMap(coverage))
    print(f"mosaic written (SRL {percent:.2f}%)")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
