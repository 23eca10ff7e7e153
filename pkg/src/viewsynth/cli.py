"""Command-line entry point.

CSV goes to standard output (or ``--out``), a human summary to standard
error. Exit status: 0 success, 2 bad arguments, 1 runtime failure. The
``VIEWSYNTH_THREADS`` environment variable caps BLAS/OpenMP threads.
"""

from __future__ import annotations

import os

_THREADS = os.environ.get("VIEWSYNTH_THREADS")
if _THREADS:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS)

import argparse
import sys
from pathlib import Path

import numpy as np

from . import augment, formats, metrics, refine, synthdata
from .errors import DivergedError, InvalidArgumentError, ParseError
from .geometry import Intrinsics, Pose, compose, euler_xyz, invert, log_pose, pose_errors
from .losses import LossConfig

CALIB = "calib.txt"
POSES = "poses.txt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w < 2 or h < 2:
        raise argparse.ArgumentTypeError("width and height must be >= 2")
    return w, h


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def frame_name(i: int) -> str:
    return f"frame_{i:06d}.ppm"


def depth_name(i: int) -> str:
    return f"depth_{i:06d}.pfm"


def write_calib(path: Path, K: Intrinsics) -> None:
    path.write_text(f"{K.fx!r} {K.fy!r} {K.cx!r} {K.cy!r} {K.width} {K.height}\n")


def read_calib(path: Path) -> Intrinsics:
    tokens = path.read_text().split()
    if len(tokens) != 6:
        raise ParseError(f"{path}: expected 'fx fy cx cy width height'", line=1)
    try:
        fx, fy, cx, cy = (float(t) for t in tokens[:4])
        w, h = int(tokens[4]), int(tokens[5])
    except ValueError as e:
        raise ParseError(f"{path}: {e}", line=1) from None
    return Intrinsics(fx, fy, cx, cy, w, h)


def synth_trajectory(seed: int, frames: int) -> list[Pose]:
    """Forward drive with gentle random yaw, pitch and lateral drift."""
    rng = np.random.default_rng([seed, 1])
    poses = [Pose.identity()]
    for _ in range(frames - 1):
        r = np.radians(rng.uniform(-1.0, 1.0, 3) * np.array([0.5, 1.5, 0.3]))
        t = np.array([rng.uniform(-0.05, 0.05), rng.uniform(-0.02, 0.02), rng.uniform(0.3, 0.6)])
        poses.append(compose(poses[-1], Pose(euler_xyz(*r), t)))
    return poses


# subcommands ---------------------------------------------------------------------


def cmd_synth(a) -> int:
    W, H = a.size
    K = synthdata.default_intrinsics(W, H)
    scene = synthdata.random_scene(a.scene_seed, focal=K.fx)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    poses = synth_trajectory(a.scene_seed, a.frames)
    rows = []
    for i, P in enumerate(poses):
        img, depth = synthdata.render(scene, P, K)
        formats.write_ppm(out / frame_name(i), img)
        formats.write_pfm(out / depth_name(i), np.minimum(depth, synthdata.MAX_DEPTH).astype(np.float32))
        rows.append((i, frame_name(i), depth_name(i), *P.translation.tolist()))
    metrics.write_poses(out / POSES, poses)
    write_calib(out / CALIB, K)
    formats.write_csv(a.csv, rows, ("frame", "image", "depth", "x", "y", "z"))
    _say(f"wrote {a.frames} frames of {W}x{H} to {out}")
    return 0


def _load_frame(d: Path, i: int):
    img = formats.read_ppm(d / frame_name(i))
    depth = formats.read_pfm(d / depth_name(i)).astype(np.float64)
    return img, depth


def cmd_refine(a) -> int:
    d = Path(a.pair)
    K = read_calib(d / CALIB)
    img_t, d_t = _load_frame(d, a.index)
    img_t1, d_t1 = _load_frame(d, a.index + 1)
    gt = None
    if (d / POSES).exists():
        cams = metrics.read_poses(d / POSES)
        gt = compose(invert(cams[a.index]), cams[a.index + 1])
    pyr_t = synthdata.depth_pyramid(d_t, a.scales)
    pyr_t1 = synthdata.depth_pyramid(d_t1, a.scales)
    res = refine.hierarchical_refine(img_t, img_t1, pyr_t, pyr_t1, K, a.levels)

    def errors(T):
        return pose_errors(T, gt) if gt is not None else (float("nan"), float("nan"))

    rows = []
    for row, T in zip(res.rows(), res.poses):
        rows.append(("hierarchical", *row, *errors(T)))
    if a.joint_steps > 0:
        state = refine.JointState(pyr_t, pyr_t1, res.poses[0], res.residuals)
        cfg = refine.JointConfig(loss=LossConfig(association_mode=a.mode))
        bundle = None
        for _ in range(a.joint_steps):
            state, bundle = refine.joint_refine_step(state, img_t, img_t1, K, cfg)
        total = float(bundle.total.value)
        for m, T in enumerate(state.poses, start=1):
            rows.append(("joint", m, total, *log_pose(T).tolist(), float("nan"), *errors(T)))
    formats.write_csv(a.out, rows, ("stage", *refine.RefinementResult.HEADER, "rot_err_deg", "trans_err_rel"))
    last = res.poses[-1]
    msg = f"refined {a.levels} level(s); final loss {res.level_losses[-1]:.6f}"
    if gt is not None:
        r, t = pose_errors(last, gt)
        msg += f"; rotation error {r:.4f} deg, translation error {100 * t:.2f}%"
    _say(msg)
    return 0


def cmd_augment(a) -> int:
    img = formats.read_ppm(a.image)
    depth = formats.read_pfm(a.depth).astype(np.float64)
    if a.calib:
        K = read_calib(Path(a.calib))
    elif (Path(a.image).parent / CALIB).exists():
        K = read_calib(Path(a.image).parent / CALIB)
    else:
        K = synthdata.default_intrinsics(img.shape[1], img.shape[0])
    sampler = augment.PoseSampler(np.radians(a.max_rot_deg), a.max_trans, a.seed)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, labels = [], []
    for i, s in enumerate(augment.augmented_suite(img, depth, K, sampler, a.count)):
        stem = f"sample_{i:06d}"
        formats.write_ppm(out / f"{stem}_original.ppm", s.original)
        formats.write_ppm(out / f"{stem}_augmented.ppm", s.augmented)
        for name, m in (("hprime", s.h_prime), ("h2", s.h2), ("h3", s.h3)):
            formats.write_pgm(out / f"{stem}_mask_{name}.pgm", m)
        metrics.write_poses(out / f"{stem}_label.txt", [s.label])
        labels.append(s.label)
        rows.append((i, float(1.0 - s.h_prime.mean()), float(s.h3.mean()), *log_pose(s.label).tolist()))
    metrics.write_poses(out / "labels.txt", labels)
    formats.write_csv(a.csv, rows, ("sample", "hole_fraction", "inpainted_fraction", "rho_x", "rho_y", "rho_z", "phi_x", "phi_y", "phi_z"))
    _say(f"wrote {a.count} augmented sample(s) to {out}")
    return 0


def _depth_files(d: Path) -> dict[str, Path]:
    return {p.name: p for p in sorted(d.iterdir()) if p.suffix in (".pfm", ".pgm")}


def _read_depth(p: Path) -> np.ndarray:
    return (formats.read_pfm(p) if p.suffix == ".pfm" else formats.read_pgm(p)).astype(np.float64)


def cmd_eval_depth(a) -> int:
    pred, gt = _depth_files(Path(a.pred)), _depth_files(Path(a.gt))
    names = sorted(set(pred) & set(gt))
    if not names:
        raise InvalidArgumentError("no depth files with matching names")
    rows, all_m = [], []
    for n in names:
        g = _read_depth(gt[n])
        valid = np.isfinite(g) & (g > 0) & (g <= a.cap)
        m = metrics.depth_metrics(_read_depth(pred[n]), g, valid, a.scaling, a.cap)
        all_m.append(m.as_tuple())
        rows.append((n, *m.as_tuple()))
    mean = np.mean(all_m, axis=0)
    rows.append(("mean", *mean.tolist()))
    formats.write_csv(a.out, rows, ("file", *metrics.DepthMetrics.names()))
    _say(f"{len(names)} file(s): AbsRel {mean[0]:.4f}, RMSE {mean[2]:.4f}, delta<1.25 {mean[4]:.4f}")
    return 0


def cmd_eval_odom(a) -> int:
    m = metrics.odom_metrics(metrics.read_poses(a.pred), metrics.read_poses(a.gt), a.scale_correction)
    formats.write_csv(a.out, [m.as_row()], metrics.OdomMetrics.HEADER)
    if m.length_ok:
        _say(f"t_rel {m.t_rel:.4f}%  r_rel {m.r_rel:.4f} deg/100m  ATE {m.ate:.4f} m over {m.segments} segments")
    else:
        _say(f"trajectory shorter than 100 m: ATE {m.ate:.4f} m only")
    return 0


def cmd_gradcheck(a) -> int:
    W, H = a.size
    rep = refine.pipeline_gradcheck(a.seed, W, H, levels=a.levels, scales=a.scales)
    rows = [(k, rep.checked[k], rep.skipped[k], rep.max_rel_error[k]) for k in rep.max_rel_error]
    formats.write_csv(a.out, rows, ("leaf", "checked", "skipped", "max_rel_error"))
    _say(f"max relative error {rep.worst:.3e} over {sum(rep.checked.values())} probes")
    return 0 if rep.worst < a.tol else 1


# parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="viewsynth", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="render a synthetic sequence")
    s.add_argument("--scene-seed", type=int, required=True)
    s.add_argument("--frames", type=_positive, required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--size", type=_size, default=(832, 256), help="WxH (default 832x256)")
    s.add_argument("--csv", default="-", help="frame listing (default: stdout)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("refine", help="hierarchical pose refinement on a frame pair")
    s.add_argument("--pair", required=True, help="directory written by 'synth'")
    s.add_argument("--levels", type=_positive, default=2)
    s.add_argument("--mode", choices=("all", "stop"), default="stop")
    s.add_argument("--index", type=int, default=0, help="first frame of the pair")
    s.add_argument("--scales", type=_positive, default=4)
    s.add_argument("--joint-steps", type=int, default=0)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("augment", help="forward-warp pose augmentation")
    s.add_argument("--image", required=True)
    s.add_argument("--depth", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--count", type=_positive, required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--calib")
    s.add_argument("--max-rot-deg", type=float, default=5.0)
    s.add_argument("--max-trans", type=float, default=0.3)
    s.add_argument("--csv", default="-")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("eval-depth", help="depth error metrics")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--scaling", choices=("median", "none"), default="median")
    s.add_argument("--cap", type=float, default=80.0)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_eval_depth)

    s = sub.add_parser("eval-odom", help="odometry error metrics")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--scale-correction", action="store_true", help="rescale by the path-length ratio first")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_eval_odom)

    s = sub.add_parser("gradcheck", help="finite-difference check of the full objective")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--size", type=_size, required=True)
    s.add_argument("--levels", type=_positive, default=2)
    s.add_argument("--scales", type=_positive, default=2)
    s.add_argument("--tol", type=float, default=1e-3)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        _say(f"viewsynth: error: {e}")
        return 2
    try:
        return args.func(args)
    except (InvalidArgumentError, ParseError, DivergedError, OSError, ValueError) as e:
        _say(f"viewsynth {args.command}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
