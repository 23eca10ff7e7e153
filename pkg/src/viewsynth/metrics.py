"""Depth and odometry evaluation metrics and KITTI pose files."""

from __future__ import annotations

import io
from dataclasses import astuple, dataclass, fields

import numpy as np

from .errors import InvalidArgumentError, ParseError
from .geometry import Pose, compose, invert, orthonormalize, rotation_angle

MIN_DEPTH = 1e-3
SEGMENT_LENGTHS = tuple(range(100, 801, 100))


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    a1: float
    a2: float
    a3: float

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def as_tuple(self) -> tuple[float, ...]:
        return astuple(self)


def depth_metrics(pred, gt, valid=None, scaling: str = "median", cap: float = 80.0) -> DepthMetrics:
    """Standard error and accuracy measures over the valid pixels."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InvalidArgumentError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if valid is None:
        valid = np.isfinite(gt) & (gt > 0)
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise InvalidArgumentError("no valid pixels")
    p, g = pred[valid], gt[valid]
    if np.any(g <= 0):
        raise InvalidArgumentError("ground truth must be positive on valid pixels")
    if scaling == "median":
        p = p * (np.median(g) / np.median(p))
    elif scaling != "none":
        raise InvalidArgumentError(f"unknown scaling {scaling!r}")
    p = np.clip(p, MIN_DEPTH, cap)
    g = np.clip(g, MIN_DEPTH, cap)
    ratio = np.maximum(p / g, g / p)
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(p - g) / g)),
        sq_rel=float(np.mean((p - g) ** 2 / g)),
        rmse=float(np.sqrt(np.mean((p - g) ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        a1=float(np.mean(ratio < 1.25)),
        a2=float(np.mean(ratio < 1.25**2)),
        a3=float(np.mean(ratio < 1.25**3)),
    )


# odometry -----------------------------------------------------------------------


@dataclass(frozen=True)
class OdomMetrics:
    t_rel: float  # percent
    r_rel: float  # degrees per 100 m
    ate: float  # metres, after similarity alignment
    segments: int
    length_ok: bool

    def as_row(self) -> tuple:
        return (self.t_rel, self.r_rel, self.ate, self.segments, int(self.length_ok))

    HEADER = ("t_rel_pct", "r_rel_deg_per_100m", "ate_m", "segments", "length_ok")


def path_distances(poses: list[Pose]) -> np.ndarray:
    pos = np.array([P.translation for P in poses])
    steps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def umeyama(src: np.ndarray, dst: np.ndarray, with_scale: bool = True):
    """Similarity ``(s, R, t)`` minimizing ``sum |dst - (s R src + t)|^2``."""
    n = len(src)
    mu_s, mu_d = src.mean(0), dst.mean(0)
    a, b = src - mu_s, dst - mu_d
    cov = b.T @ a / n
    U, S, Vt = np.linalg.svd(cov)
    E = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        E[2, 2] = -1
    R = U @ E @ Vt
    var = float((a * a).sum() / n)
    s = float(np.trace(np.diag(S) @ E) / var) if with_scale and var > 0 else 1.0
    return s, R, mu_d - s * R @ mu_s


def absolute_trajectory_error(pred: list[Pose], gt: list[Pose]) -> float:
    P = np.array([T.translation for T in pred])
    G = np.array([T.translation for T in gt])
    if len(P) < 3:
        d = G - P + (P.mean(0) - G.mean(0))
        return float(np.sqrt(np.mean((d * d).sum(1))))
    s, R, t = umeyama(P, G)
    d = G - (s * P @ R.T + t)
    return float(np.sqrt(np.mean((d * d).sum(1))))


def odom_metrics(pred: list[Pose], gt: list[Pose], scale_correction: bool = False) -> OdomMetrics:
    """Relative errors over ground-truth subsequences of 100..800 m, plus ATE.

    A segment starting at frame ``i`` with length ``L`` ends at the first
    frame whose ground-truth arc length from ``i`` reaches ``L``. With
    ``scale_correction`` the predicted translations are first rescaled by the
    ratio of total path lengths.
    """
    if len(pred) != len(gt):
        raise InvalidArgumentError(f"trajectory lengths differ: {len(pred)} vs {len(gt)}")
    if len(gt) < 2:
        raise InvalidArgumentError("need at least two poses")
    ate = absolute_trajectory_error(pred, gt)
    dist = path_distances(gt)
    if dist[-1] < SEGMENT_LENGTHS[0]:
        return OdomMetrics(0.0, 0.0, ate, 0, False)
    if scale_correction:
        pd = path_distances(pred)[-1]
        k = dist[-1] / pd if pd > 0 else 1.0
        pred = [Pose(P.rotation, P.translation * k) for P in pred]
    t_err, r_err = [], []
    for i in range(len(gt)):
        for L in SEGMENT_LENGTHS:
            ends = np.flatnonzero(dist[i:] - dist[i] >= L - 1e-9)
            if len(ends) == 0:
                break
            j = i + ends[0]
            dg = compose(invert(gt[i]), gt[j])
            dp = compose(invert(pred[i]), pred[j])
            e = compose(invert(dp), dg)
            t_err.append(np.linalg.norm(e.translation) / L)
            r_err.append(rotation_angle(e.rotation) / L)
    if not t_err:
        return OdomMetrics(0.0, 0.0, ate, 0, False)
    return OdomMetrics(
        t_rel=100.0 * float(np.mean(t_err)),
        r_rel=100.0 * float(np.degrees(np.mean(r_err))),
        ate=ate,
        segments=len(t_err),
        length_ok=True,
    )


# KITTI pose files ---------------------------------------------------------------


def format_pose(P: Pose) -> str:
    return " ".join(_fmt(x) for x in P.matrix[:3].reshape(-1))


def _fmt(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def write_poses(path_or_file, poses: list[Pose]) -> None:
    text = "".join(format_pose(P) + "\n" for P in poses)
    if isinstance(path_or_file, io.TextIOBase):
        path_or_file.write(text)
    else:
        with open(path_or_file, "w") as f:
            f.write(text)


def parse_poses(text: str) -> list[Pose]:
    poses = []
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        tokens = line.split()
        if len(tokens) != 12:
            raise ParseError(f"expected 12 values, got {len(tokens)}", line=n)
        try:
            M = np.array([float(t) for t in tokens]).reshape(3, 4)
        except ValueError as e:
            raise ParseError(f"bad number: {e}", line=n) from None
        if not np.all(np.isfinite(M)):
            raise ParseError("non-finite value", line=n)
        R = M[:, :3]
        if np.linalg.norm(R.T @ R - np.eye(3)) > 1e-6:
            # tolerate rounding in files written with few digits
            R = orthonormalize(R)
        poses.append(Pose(R, M[:, 3]))
    return poses


def read_poses(path) -> list[Pose]:
    with open(path) as f:
        return parse_poses(f.read())
