"""Hierarchical pose refinement by intermediate-view synthesis, a direct
photometric pose estimator, and a joint depth + pose gradient step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy import ndimage

from . import autodiff as ad
from . import imagebuf
from .autodiff import Tape
from .errors import DivergedError, InvalidArgumentError
from .geometry import EPS_Z, Intrinsics, Pose, compose, exp_twist, invert, log_pose, pixel_rays, rotation_to_quaternion
from .losses import (
    AssociationMode,
    LossConfig,
    PairLossBundle,
    aug_pose_loss_var,
    depth_diff,
    pair_losses,
    photometric_var,
    quaternion_var,
    total_loss,
)
from .warp import PoseVar, inverse_warp, inverse_warp_var, twist_pose


class PoseEstimator(Protocol):
    """Anything mapping ``(A, B, depth of B, K, initial twist)`` to the pose
    that carries B-camera points into the A camera."""

    def __call__(self, A, B, depth_b, K: Intrinsics, init=None) -> Pose: ...


@dataclass(frozen=True)
class DirectConfig:
    iterations: int = 100
    # length of the first step, in radians of rotation-equivalent motion
    initial_step: float = 0.01
    growth: float = 1.5
    min_step: float = 1e-12
    pyramid_levels: int = 3
    lambda_rho: float = 0.15
    # Gaussian blur (pixels) of the images at every level but the finest;
    # it widens the basin when the motion exceeds the texture scale
    coarse_blur: float = 1.0


LEVEL_ONE = DirectConfig()
# resampled views lose local contrast, which SSIM scores as misalignment;
# residual levels therefore compare intensities only
RESIDUAL = DirectConfig(iterations=40, initial_step=0.005, lambda_rho=1.0)
# splatted views: intensities only (see RESIDUAL) and a deeper pyramid, since
# a sampled pose can shift the image by more than the texture scale
AUGMENTED = DirectConfig(pyramid_levels=5, lambda_rho=1.0)
# relative depth disagreement beyond which a pixel counts as hidden
OCCLUSION_THRESHOLD = 0.05


@dataclass
class EstimateInfo:
    pose: Pose
    twist: np.ndarray  # the optimized left perturbation of exp(init)
    initial_loss: float
    final_loss: float
    iterations: int


def masked_photometric(A, B, depth_b, T: Pose, K: Intrinsics, mask=None, lambda_rho: float = 0.15) -> float:
    """Mean photometric error of ``inverse_warp(A, depth_b, T)`` against B
    over valid (and optionally masked) target pixels."""
    tape = Tape(record=False)
    return float(_objective(tape, tape.const(np.zeros(6)), A, B, depth_b, K, T, mask, lambda_rho).value)


def _objective(tape, xi, A, B, depth_b, K, base, mask, lambda_rho):
    T = twist_pose(xi, base)
    w = inverse_warp_var(tape.lift(A), tape.lift(depth_b), T, K)
    sigma = photometric_var(w.warped, tape.lift(B), lambda_rho)
    # zero-filled invalid pixels leak into the SSIM window of their neighbors
    m = scored_pixels(w.valid)
    if mask is not None:
        m = m * mask
    return (sigma * m).sum() / max(float(m.sum()), 1.0)


def scored_pixels(valid, radius: int = 1) -> np.ndarray:
    """Valid pixels whose whole SSIM window is valid."""
    return 1.0 - imagebuf.dilate(1.0 - np.asarray(valid, dtype=np.float64), radius, 1)


def _loss_and_grad(xi, A, B, depth_b, K, base, mask, lambda_rho):
    tape = Tape()
    x = tape.var(xi)
    L = _objective(tape, x, A, B, depth_b, K, base, mask, lambda_rho)
    tape.backward(L, [x])
    return float(L.value), x.grad


def _pyramid(A, B, depth_b, K: Intrinsics, mask, levels: int, blur: float = 0.0):
    """Coarse-to-fine list of ``(A, B, depth_b, K, mask)``; every level but
    the finest has its images blurred by ``blur`` pixels."""
    out = [(A, B, depth_b, K, mask)]
    for _ in range(levels - 1):
        A, B, depth_b, K0, mask = out[-1]
        H, W = depth_b.shape
        if min(H, W) < 16:
            break
        h, w = H // 2, W // 2
        # drop an odd trailing row/column so the block grid matches K.scaled
        Ks = K0.scaled(0.5, w, h)
        out.append(
            (
                imagebuf.downsample2(A),
                imagebuf.downsample2(B),
                imagebuf.downsample2(depth_b),
                Ks,
                None if mask is None else (imagebuf.downsample2(mask) > 0.99).astype(np.float64),
            )
        )
    if blur > 0:
        sigma = (blur, blur, 0)
        out[1:] = [(ndimage.gaussian_filter(a, sigma, mode="nearest"), ndimage.gaussian_filter(b, sigma, mode="nearest"), *rest) for a, b, *rest in out[1:]]
    return out[::-1]


def gauss_newton_metric(xi, base: Pose, A, depth_b, K: Intrinsics, mask=None, damping: float = 1e-4) -> np.ndarray:
    """Approximate Hessian of the warp error with respect to a left twist.

    Built from the source-image gradient at each warped pixel times the
    derivative of the projection, averaged over valid (masked) pixels. Used
    only to precondition the descent direction.
    """
    T = compose(exp_twist(xi), base)
    H, W = depth_b.shape
    P = pixel_rays(K).reshape(3, -1) * depth_b.reshape(1, -1)
    Q = T.rotation @ P + T.translation[:, None]
    X, Y, Z = Q
    front = Z > EPS_Z
    Zs = np.where(front, Z, 1.0)
    u = K.fx * X / Zs + K.cx
    v = K.fy * Y / Zs + K.cy
    g = imagebuf.channel_mean(A)
    gy, gx = np.gradient(g)
    Iu, ok = imagebuf.bilinear_sample(gx, u, v)
    Iv, _ = imagebuf.bilinear_sample(gy, u, v)
    w = (ok & front).astype(np.float64)
    if mask is not None:
        w = w * np.asarray(mask, dtype=np.float64).reshape(-1)
    a = Iu * K.fx / Zs
    b = Iv * K.fy / Zs
    c = -(a * X + b * Y) / Zs
    # r . (phi x Q) = phi . (Q x r) with r = d(intensity)/dQ
    J = np.stack([a, b, c, Y * c - Z * b, Z * a - X * c, X * b - Y * a], axis=1)
    M = (J * w[:, None]).T @ J / max(float(w.sum()), 1.0)
    return M + damping * (np.trace(M) / 6.0 + 1e-12) * np.eye(6)


def _descend(xi, base, A, B, depth_b, K, mask, cfg: DirectConfig, iterations: int):
    """Preconditioned gradient descent with step halving on loss increase."""
    L, g = _loss_and_grad(xi, A, B, depth_b, K, base, mask, cfg.lambda_rho)
    if not math.isfinite(L) or not np.all(np.isfinite(g)):
        raise DivergedError("non-finite loss", last_iterate=xi)
    step = None
    used = 0
    d = np.linalg.solve(gauss_newton_metric(xi, base, A, depth_b, K, mask), g)
    for _ in range(iterations):
        norm = float(np.linalg.norm(d[3:]) + np.linalg.norm(d[:3]) / max(float(np.median(depth_b)), 1e-6))
        if norm == 0.0 or not math.isfinite(norm):
            break
        if step is None:
            step = min(1.0, cfg.initial_step / norm)
        cand = xi - step * d
        Lc, gc = _loss_and_grad(cand, A, B, depth_b, K, base, mask, cfg.lambda_rho)
        used += 1
        if math.isfinite(Lc) and Lc <= L and np.all(np.isfinite(gc)):
            xi, L, g = cand, Lc, gc
            step = min(step * cfg.growth, 1.0)
            d = np.linalg.solve(gauss_newton_metric(xi, base, A, depth_b, K, mask), g)
        else:
            step *= 0.5
            if step * norm < cfg.min_step:
                break
    return xi, L, used


def direct_estimate_info(A, B, depth_b, K: Intrinsics, init=None, cfg: DirectConfig = LEVEL_ONE, mask=None) -> EstimateInfo:
    A = imagebuf.as_image(A)
    B = imagebuf.as_image(B)
    depth_b = np.asarray(depth_b, dtype=np.float64)
    if A.shape != B.shape or A.shape[:2] != depth_b.shape:
        raise InvalidArgumentError("A, B and depth_b must share a size")
    if np.any(depth_b <= 0):
        raise InvalidArgumentError("depth must be positive")
    base = exp_twist(np.zeros(6) if init is None else np.asarray(init, dtype=np.float64))
    levels = _pyramid(A, B, depth_b, K, mask, cfg.pyramid_levels, cfg.coarse_blur)
    initial = masked_photometric(A, B, depth_b, base, K, mask, cfg.lambda_rho)
    if not math.isfinite(initial):
        raise DivergedError("non-finite initial loss", last_iterate=np.zeros(6))
    xi = np.zeros(6)
    per_level = [cfg.iterations // len(levels)] * len(levels)
    per_level[-1] += cfg.iterations - sum(per_level)
    used = 0
    for (a, b, d, k, m), n in zip(levels, per_level):
        xi, L, u = _descend(xi, base, a, b, d, k, m, cfg, n)
        used += u
    final = L
    if final > initial:
        # coarse levels may land somewhere worse at full resolution
        xi, final = np.zeros(6), initial
    pose = compose(exp_twist(xi), base)
    return EstimateInfo(pose, xi, initial, final, used)


def direct_estimate(A, B, depth_b, K: Intrinsics, init=None, cfg: DirectConfig = LEVEL_ONE, mask=None) -> Pose:
    """Pose carrying B-camera points into the A camera, found by gradient
    descent on the masked photometric error of warping A onto B.

    ``init`` is a twist; the result is ``exp(xi*) * exp(init)``. ``mask``
    optionally restricts the target pixels of B that are scored.
    """
    return direct_estimate_info(A, B, depth_b, K, init, cfg, mask).pose


@dataclass
class DirectEstimator:
    """:class:`PoseEstimator` backed by :func:`direct_estimate`."""

    cfg: DirectConfig = LEVEL_ONE
    mask: np.ndarray | None = None

    def __call__(self, A, B, depth_b, K, init=None) -> Pose:
        return direct_estimate(A, B, depth_b, K, init, self.cfg, self.mask)


# hierarchical refinement --------------------------------------------------------


@dataclass
class RefinementResult:
    poses: list[Pose]  # T_1 .. T_M
    residuals: list[Pose]  # T^r_1 .. T^r_{M-1}
    intermediate_views: list[np.ndarray]  # X^warp_1 .. X^warp_{M-1}
    level_losses: list[float]  # photometric loss of T_m on the raw pair
    residual_twists: list[np.ndarray] = field(default_factory=list)

    def rows(self) -> list[tuple]:
        """Per-level diagnostics: level, loss, twist of T_m, residual norm."""
        out = []
        for m, (T, L) in enumerate(zip(self.poses, self.level_losses), start=1):
            xi = log_pose(T)
            rn = float(np.linalg.norm(self.residual_twists[m - 2])) if m > 1 else 0.0
            out.append((m, L, *xi.tolist(), rn))
        return out

    HEADER = ("level", "loss", "rho_x", "rho_y", "rho_z", "phi_x", "phi_y", "phi_z", "residual_norm")


def coarse_pose_mask(image_t, depth_t1, T: Pose, K: Intrinsics, depth_t=None, threshold: float = OCCLUSION_THRESHOLD):
    """Target pixels worth scoring once a pose estimate exists.

    Keeps pixels whose SSIM window lands inside frame t and, given the depth
    of frame t, drops pixels (and their neighbors) whose projected depth
    disagrees with the depth found there by more than ``threshold``, i.e.
    pixels hidden from frame t.
    """
    w = inverse_warp(image_t, depth_t1, T, K, source_depth=depth_t)
    keep = scored_pixels(w.valid)
    if depth_t is not None:
        occluded = depth_diff(w.projected_depth, w.sampled_depth) > threshold
        keep = keep * (1.0 - imagebuf.dilate(occluded.astype(np.float64), 1, 1))
    return keep


def _finest(depths):
    if depths is None:
        return None
    d = depths if isinstance(depths, np.ndarray) else depths[-1]
    return np.asarray(d, dtype=np.float64)


def hierarchical_refine(
    image_t,
    image_t1,
    depths_t,
    depths_t1,
    K: Intrinsics,
    levels: int = 2,
    first: DirectConfig = LEVEL_ONE,
    residual: DirectConfig = RESIDUAL,
    occlusion_threshold: float = OCCLUSION_THRESHOLD,
) -> RefinementResult:
    """Coarse pose, then ``levels - 1`` residual poses estimated between the
    synthesized intermediate view and frame t+1.

    Depths are pyramids ``[D_1, ..., D_N]`` (or single full-resolution maps);
    the finest level is used. ``depths_t`` may be None, in which case the
    residual levels mask only pixels that leave frame t.

    The residual estimated on the view acts in the frame-(t+1) camera, so it
    is conjugated into ``T^r = T_m R T_m^-1`` so that ``T_{m+1} = T^r T_m``.
    """
    if levels < 1:
        raise InvalidArgumentError("levels must be >= 1")
    if residual.iterations >= first.iterations:
        raise InvalidArgumentError("the residual budget must be smaller than the first level's")
    depth = _finest(depths_t1)
    depth_t = _finest(depths_t)
    image_t, image_t1 = imagebuf.as_image(image_t), imagebuf.as_image(image_t1)
    try:
        T = direct_estimate(image_t, image_t1, depth, K, None, first)
    except DivergedError as e:
        raise DivergedError(str(e), e.last_iterate, level=1) from e

    def level_loss(T):
        mask = coarse_pose_mask(image_t, depth, T, K, depth_t, occlusion_threshold)
        return masked_photometric(image_t, image_t1, depth, T, K, mask, first.lambda_rho)

    poses, losses = [T], [level_loss(T)]
    residuals, views, rtw = [], [], []
    for m in range(1, levels):
        view = inverse_warp(image_t, depth, T, K).warped_image
        mask = coarse_pose_mask(image_t, depth, T, K, depth_t, occlusion_threshold)
        try:
            R = direct_estimate(view, image_t1, depth, K, None, residual, mask)
        except DivergedError as e:
            raise DivergedError(str(e), e.last_iterate, level=m + 1) from e
        Tr = compose(compose(T, R), invert(T))
        T = compose(Tr, T)
        views.append(view)
        residuals.append(Tr)
        rtw.append(log_pose(Tr))
        poses.append(T)
        losses.append(level_loss(T))
    return RefinementResult(poses, residuals, views, losses, rtw)


# joint depth + pose optimization ------------------------------------------------


@dataclass
class JointState:
    """Free variables of the joint objective.

    ``coarse`` is ``T_1``; ``residuals`` are ``T^r_1..T^r_{M-1}`` so that
    ``T_{m+1} = T^r_m * T_m``. Depth lists run low to high resolution.
    """

    depths_t: list[np.ndarray]
    depths_t1: list[np.ndarray]
    coarse: Pose
    residuals: list[Pose] = field(default_factory=list)

    @property
    def poses(self) -> list[Pose]:
        out = [self.coarse]
        for R in self.residuals:
            out.append(compose(R, out[-1]))
        return out


@dataclass(frozen=True)
class JointConfig:
    """Step sizes of the joint descent.

    Depth moves along its log (a relative step, ``lr_depth`` times the
    per-pixel gradient of the log-depth); twists move with separate
    translation and rotation rates.
    """

    lr_depth: float = 0.005
    lr_translation: float = 1e-3
    lr_rotation: float = 1e-5
    max_log_step: float = 0.1
    loss: LossConfig = LossConfig()


def build_joint_loss(tape: Tape, state: JointState, image_t, image_t1, K: Intrinsics, cfg: LossConfig, aug=None):
    """Leaf variables and the bundle for the current state.

    Returns ``(depth_t_vars, depth_t1_vars, twist_vars, bundle, loss)``; the
    twists are zero-valued left perturbations of ``T_1`` and each residual.
    """
    dt = [tape.var(d) for d in state.depths_t]
    dt1 = [tape.var(d) for d in state.depths_t1]
    xis = [tape.var(np.zeros(6)) for _ in range(1 + len(state.residuals))]
    T = twist_pose(xis[0], state.coarse)
    poses = [T]
    for xi, R in zip(xis[1:], state.residuals):
        T = PoseVar(*_compose(twist_pose(xi, R), T))
        poses.append(T)
    bundle = pair_losses(image_t, image_t1, dt, dt1, poses, K, cfg)
    loss = total_loss(bundle, aug, cfg)
    return dt, dt1, xis, bundle, loss


def _compose(A: PoseVar, B: PoseVar):
    return A.R @ B.R, A.R @ B.t + A.t


def joint_refine_step(state: JointState, image_t, image_t1, K: Intrinsics, cfg: JointConfig = JointConfig()):
    """One gradient step on all depth scales and all pose levels.

    The augmentation term is not part of this objective. Each depth scale
    takes a step in log-depth scaled by its pixel count, so scales of every
    resolution move at a comparable per-pixel rate; the relative change per
    step is capped at ``max_log_step``. Returns ``(new_state, bundle)``.
    """
    tape = Tape()
    dt, dt1, xis, bundle, loss = build_joint_loss(tape, state, image_t, image_t1, K, cfg.loss)
    if not math.isfinite(float(loss.value)):
        raise DivergedError("non-finite joint loss", last_iterate=state)
    tape.backward(loss, [*dt, *dt1, *xis])
    for v in (*dt, *dt1, *xis):
        if not np.all(np.isfinite(v.grad)):
            raise DivergedError("non-finite gradient", last_iterate=state)

    def step_depth(vs):
        out = []
        for v in vs:
            g_log = v.value * v.grad * v.value.size
            out.append(v.value * np.exp(-np.clip(cfg.lr_depth * g_log, -cfg.max_log_step, cfg.max_log_step)))
        return out

    rate = np.array([cfg.lr_translation] * 3 + [cfg.lr_rotation] * 3)

    def step_pose(xi, T):
        return compose(exp_twist(-rate * xi.grad), T)

    new = JointState(
        step_depth(dt),
        step_depth(dt1),
        step_pose(xis[0], state.coarse),
        [step_pose(x, R) for x, R in zip(xis[1:], state.residuals)],
    )
    return new, bundle


# gradient check of the whole objective ---------------------------------------


def pipeline_gradcheck(seed: int, width: int, height: int, levels: int = 2, scales: int = 2, cfg: LossConfig | None = None, h: float = 1e-6):
    """Finite-difference check of the total loss on a small random pair.

    The default association keeps every depth path live; under stop-depth
    association the taped depth gradient deliberately omits the coarse-pose
    terms, which finite differences cannot.

    Leaves are every depth pixel of both frames at every scale and the
    twists perturbing each pose level; the augmentation term compares the
    finest pose with a sampled label. Returns an ``autodiff.GradcheckReport``.
    """
    from . import synthdata

    cfg = LossConfig(association_mode=AssociationMode.ALL_DEPTH_ALL_POSE) if cfg is None else cfg
    rng = np.random.default_rng(seed)
    K = synthdata.default_intrinsics(width, height)
    scene = synthdata.random_scene(seed, focal=K.fx)
    T_gt = synthdata.sample_motion(rng, 3.0, 0.2)
    pair = synthdata.make_pair(scene, T_gt, K)

    def noisy(d):
        return d * np.exp(0.1 * rng.standard_normal(d.shape))

    dt = [noisy(d) for d in synthdata.depth_pyramid(pair.depth_t, scales)]
    dt1 = [noisy(d) for d in synthdata.depth_pyramid(pair.depth_t1, scales)]
    coarse = compose(exp_twist(rng.normal(0, [0.02] * 3 + [0.005] * 3)), T_gt)
    residuals = [exp_twist(rng.normal(0, [0.005] * 3 + [0.001] * 3)) for _ in range(levels - 1)]
    label = compose(exp_twist(rng.normal(0, [0.01] * 3 + [0.002] * 3)), T_gt)
    t_lab = label.translation
    q_lab = rotation_to_quaternion(label.rotation).as_array()
    leaves = {f"depth_t_{i + 1}": d for i, d in enumerate(dt)}
    leaves.update({f"depth_t1_{i + 1}": d for i, d in enumerate(dt1)})
    leaves.update({f"twist_{m + 1}": np.zeros(6) for m in range(levels)})

    def build(tape: Tape, v: dict):
        T = twist_pose(v["twist_1"], coarse)
        poses = [T]
        for m, R in enumerate(residuals, start=2):
            T = PoseVar(*_compose(twist_pose(v[f"twist_{m}"], R), T))
            poses.append(T)
        bundle = pair_losses(
            pair.image_t,
            pair.image_t1,
            [v[f"depth_t_{i + 1}"] for i in range(scales)],
            [v[f"depth_t1_{i + 1}"] for i in range(scales)],
            poses,
            K,
            cfg,
        )
        aug = aug_pose_loss_var(poses[-1].t, quaternion_var(poses[-1].R), tape.const(t_lab), tape.const(q_lab), tape.const(0.0), tape.const(0.0))
        return total_loss(bundle, aug, cfg)

    return ad.gradcheck(build, leaves, h=h)
