"""Training objective: photometric error, masks, reconstruction,
geometry-consistency and smoothness terms, the augmentation pose loss and
their weighted total.

Every term has a taped form (``*_var``) used for optimization and a plain
form on numpy arrays that evaluates the same code without recording.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import imagebuf
from .autodiff import Tape, Var
from .errors import InvalidArgumentError
from .geometry import Intrinsics, Quaternion
from .warp import PoseVar, inverse_warp_var, invert_var

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


class AssociationMode(str, enum.Enum):
    """How depth gradients associate with the pose levels."""

    ALL_DEPTH_ALL_POSE = "all"
    STOP_DEPTH_FOR_COARSE_POSE = "stop"


@dataclass(frozen=True)
class LossConfig:
    alpha_recon: float = 1.0
    alpha_gc: float = 0.1
    alpha_smooth: float = 0.5
    alpha_aug: float = 2.0
    lambda_rho: float = 0.15
    ssim_radius: int = 1
    eps: float = 1e-7
    association_mode: AssociationMode = AssociationMode.STOP_DEPTH_FOR_COARSE_POSE

    def __post_init__(self):
        if min(self.alpha_recon, self.alpha_gc, self.alpha_smooth, self.alpha_aug) < 0:
            raise InvalidArgumentError("loss weights must be non-negative")
        if not 0 <= self.lambda_rho <= 1:
            raise InvalidArgumentError("lambda_rho must lie in [0, 1]")
        object.__setattr__(self, "association_mode", AssociationMode(self.association_mode))


@dataclass
class AugLossParams:
    w_t: float = 0.0
    w_q: float = 0.0


def _plain(fn: Callable, *arrays, **kw):
    tape = Tape(record=False)
    out = fn(*(None if a is None else tape.const(a) for a in arrays), **kw)
    return out.value


# per-pixel maps -----------------------------------------------------------------


def ssim_map_var(a: Var, b: Var, radius: int = 1) -> Var:
    mu_a = ad.box_mean(a, radius)
    mu_b = ad.box_mean(b, radius)
    mu_ab = mu_a * mu_b
    var_a = ad.box_mean(a * a, radius) - mu_a * mu_a
    var_b = ad.box_mean(b * b, radius) - mu_b * mu_b
    cov = ad.box_mean(a * b, radius) - mu_ab
    num = (2 * mu_ab + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den


def ssim_map(a, b, radius: int = 1) -> np.ndarray:
    """Per-pixel, per-channel SSIM with (2r+1)^2 box statistics."""
    a, b = imagebuf.as_image(a), imagebuf.as_image(b)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    return _plain(ssim_map_var, a, b, radius=radius)


def photometric_var(a: Var, b: Var, lambda_rho: float = 0.15, radius: int = 1) -> Var:
    l1 = ad.abs_(a - b).mean(axis=2)
    ssim = ssim_map_var(a, b, radius).mean(axis=2)
    sigma = lambda_rho * l1 + (1 - lambda_rho) * (1 - ssim) / 2
    return ad.clamp(sigma, lo=0.0)


def photometric(a, b, lambda_rho: float = 0.15, radius: int = 1) -> np.ndarray:
    """Per-pixel mix of channel-mean L1 and SSIM dissimilarity."""
    a, b = imagebuf.as_image(a), imagebuf.as_image(b)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    return _plain(photometric_var, a, b, lambda_rho=lambda_rho, radius=radius)


def depth_diff_var(projected: Var, sampled: Var, eps: float = 1e-7) -> Var:
    return ad.abs_(projected - sampled) / (projected + sampled + eps)


def depth_diff(projected, sampled, eps: float = 1e-7) -> np.ndarray:
    return _plain(depth_diff_var, np.asarray(projected, float), np.asarray(sampled, float), eps=eps)


def weight_mask(ddiff):
    return 1 - ddiff


def auto_mask(sigma_warp, sigma_ident) -> np.ndarray:
    """1 where the warp explains the target strictly better than no warp."""
    return ad.less(sigma_warp, sigma_ident)


# scalar terms -------------------------------------------------------------------


def recon_loss_var(sigma: Var, m_weight, m_auto, valid) -> Var:
    return (m_weight * (m_auto * valid) * sigma).mean()


def recon_loss(warped, target, m_weight, m_auto, valid, lambda_rho: float = 0.15, radius: int = 1) -> float:
    sigma = photometric(warped, target, lambda_rho, radius)
    return float(np.mean(np.asarray(m_weight) * (np.asarray(m_auto) * np.asarray(valid)) * sigma))


def gc_loss_var(ddiff: Var, m_auto, valid) -> Var:
    return ((m_auto * valid) * ddiff).mean()


def gc_loss(ddiff, m_auto, valid=1.0) -> float:
    return float(np.mean((np.asarray(m_auto) * np.asarray(valid)) * np.asarray(ddiff)))


def smooth_loss_var(depth: Var, image, eps: float = 1e-7) -> Var:
    """Edge-aware smoothness of min-normalized depth.

    Each gradient direction is averaged over the positions where its
    forward difference exists.
    """
    gray = imagebuf.channel_mean(ad.value(image))
    ex = np.exp(-np.abs(imagebuf.grad_x(gray)))[:, :-1]
    ey = np.exp(-np.abs(imagebuf.grad_y(gray)))[:-1, :]
    dn = depth / (ad.amin(depth) + eps)
    terms = []
    if depth.shape[1] > 1:
        gx = dn[:, 1:] - dn[:, :-1]
        terms.append((ad.abs_(gx) * ex).mean())
    if depth.shape[0] > 1:
        gy = dn[1:, :] - dn[:-1, :]
        terms.append((ad.abs_(gy) * ey).mean())
    if not terms:
        return depth.tape.const(0.0)
    return terms[0] if len(terms) == 1 else terms[0] + terms[1]


def smooth_loss(depth, image, eps: float = 1e-7) -> float:
    tape = Tape(record=False)
    return float(smooth_loss_var(tape.const(depth), image, eps).value)


# augmentation pose loss -----------------------------------------------------------


def _norm(x: Var) -> Var:
    return ad.sqrt((x * x).sum())


def aug_pose_loss_var(t_m, q_m, t_aug, q_aug, w_t, w_q) -> Var:
    tape = ad._tape_of(t_m, q_m, t_aug, q_aug, w_t, w_q)
    t_m, q_m, t_aug, q_aug, w_t, w_q = (tape.lift(x) for x in (t_m, q_m, t_aug, q_aug, w_t, w_q))
    return _norm(t_m - t_aug) * ad.exp(-w_t) + w_t + _norm(q_m - q_aug) * ad.exp(-w_q) + w_q


def _qarr(q) -> np.ndarray:
    return q.as_array() if isinstance(q, Quaternion) else np.asarray(q, dtype=np.float64)


def aug_pose_loss(t_m, q_m, t_aug, q_aug, params: AugLossParams = AugLossParams()) -> float:
    """Translation and quaternion errors weighted by learnable log-variances."""
    tape = Tape(record=False)
    out = aug_pose_loss_var(
        tape.const(t_m), tape.const(_qarr(q_m)), tape.const(t_aug), tape.const(_qarr(q_aug)),
        tape.const(params.w_t), tape.const(params.w_q),
    )
    return float(out.value)


def quaternion_var(R: Var) -> Var:
    """Unit quaternion (w, x, y, z) of a rotation with angle well below pi."""
    w = ad.sqrt(1.0 + R[0, 0] + R[1, 1] + R[2, 2]) * 0.5
    f = 0.25 / w
    return ad.stack([w, (R[2, 1] - R[1, 2]) * f, (R[0, 2] - R[2, 0]) * f, (R[1, 0] - R[0, 1]) * f])


# pair bundle ---------------------------------------------------------------------


@dataclass
class PairLossBundle:
    recon: dict[tuple[int, int], Var]
    gc: dict[tuple[int, int], Var]
    smooth: Var
    recon_total: Var
    gc_total: Var
    masks: dict[tuple[int, int, str], dict[str, np.ndarray]] = field(default_factory=dict)
    aug: Var | None = None
    total: Var | None = None

    def rows(self) -> list[tuple[str, int, int, float]]:
        """``(term, level, scale, value)``; level/scale 0 for unindexed terms."""
        out = []
        for (u, v), x in sorted(self.recon.items()):
            out.append(("recon", u, v, float(x.value)))
        for (u, v), x in sorted(self.gc.items()):
            out.append(("gc", u, v, float(x.value)))
        out.append(("recon_total", 0, 0, float(self.recon_total.value)))
        out.append(("gc_total", 0, 0, float(self.gc_total.value)))
        out.append(("smooth", 0, 0, float(self.smooth.value)))
        if self.aug is not None:
            out.append(("aug", 0, 0, float(self.aug.value)))
        if self.total is not None:
            out.append(("total", 0, 0, float(self.total.value)))
        return out


def aggregate(term: Callable[[int, int, bool], tuple[Var, Var]], M: int, N: int, mode) -> tuple[Var, Var, dict, dict]:
    """Sum per-(level, scale) terms under an association policy.

    ``term(u, v, stop_depth)`` builds ``(L^R_uv, L^GC_uv)``; with
    ``stop_depth`` it must feed stop-gradient copies of the depths so the
    term still trains the pose. In STOP mode levels ``u < M`` are built with
    ``stop_depth=True``.
    """
    mode = AssociationMode(mode)
    recon, gc = {}, {}
    for u in range(1, M + 1):
        stop = mode is AssociationMode.STOP_DEPTH_FOR_COARSE_POSE and u < M
        for v in range(1, N + 1):
            recon[(u, v)], gc[(u, v)] = term(u, v, stop)
    keys = sorted(recon)
    r_tot, g_tot = recon[keys[0]], gc[keys[0]]
    for k in keys[1:]:
        r_tot = r_tot + recon[k]
        g_tot = g_tot + gc[k]
    return r_tot, g_tot, recon, gc


def pair_losses(
    image_t,
    image_t1,
    depths_t: list[Var],
    depths_t1: list[Var],
    poses: list[PoseVar],
    K: Intrinsics,
    cfg: LossConfig = LossConfig(),
) -> PairLossBundle:
    """All pair terms for pose levels ``T_1..T_M`` and depth scales ``D_1..D_N``.

    ``poses[m]`` maps frame-(t+1) camera points into frame t. Each term
    sums the forward direction (target t+1) and the backward direction
    (target t, pose inverted). Lower-resolution depths are upsampled to the
    full image size before use.
    """
    tape = poses[0].R.tape
    X = {"t": tape.lift(imagebuf.as_image(image_t)), "t1": tape.lift(imagebuf.as_image(image_t1))}
    size = K.size
    up = {
        "t": [ad.upsample(d, size) for d in depths_t],
        "t1": [ad.upsample(d, size) for d in depths_t1],
    }
    M, N = len(poses), len(depths_t1)
    if len(depths_t) != N:
        raise InvalidArgumentError("both frames need the same number of depth scales")
    inverse = [invert_var(T) for T in poses]
    ident = {
        "t1": photometric_var(X["t"], X["t1"], cfg.lambda_rho, cfg.ssim_radius).value,
        "t": photometric_var(X["t1"], X["t"], cfg.lambda_rho, cfg.ssim_radius).value,
    }
    masks = {}

    def direction(u, v, stop, tgt, src, T):
        d_tgt, d_src = up[tgt][v - 1], up[src][v - 1]
        if stop:
            d_tgt, d_src = ad.stop_gradient(d_tgt), ad.stop_gradient(d_src)
        w = inverse_warp_var(X[src], d_tgt, T, K, d_src)
        sigma = photometric_var(w.warped, X[tgt], cfg.lambda_rho, cfg.ssim_radius)
        m_auto = auto_mask(sigma, ident[tgt])
        ddiff = depth_diff_var(w.projected_depth, w.sampled_depth, cfg.eps)
        m_weight = weight_mask(ddiff)
        valid = w.valid.astype(np.float64)
        masks[(u, v, tgt)] = {"auto": m_auto, "weight": m_weight.value, "valid": valid, "diff": ddiff.value}
        return recon_loss_var(sigma, m_weight, m_auto, valid), gc_loss_var(ddiff, m_auto, valid)

    def term(u, v, stop):
        rf, gf = direction(u, v, stop, "t1", "t", poses[u - 1])
        rb, gb = direction(u, v, stop, "t", "t1", inverse[u - 1])
        return rf + rb, gf + gb

    r_tot, g_tot, recon, gc = aggregate(term, M, N, cfg.association_mode)
    smooth = None
    for key, img in (("t", image_t), ("t1", image_t1)):
        s = up[key][0].tape.const(0.0)
        for d in up[key]:
            s = s + smooth_loss_var(d, img, cfg.eps)
        s = s / len(up[key])
        smooth = s if smooth is None else smooth + s
    return PairLossBundle(recon, gc, smooth, r_tot, g_tot, masks)


def total_loss(bundle: PairLossBundle, aug: Var | float | None, cfg: LossConfig = LossConfig()) -> Var:
    L = cfg.alpha_recon * bundle.recon_total + cfg.alpha_gc * bundle.gc_total + cfg.alpha_smooth * bundle.smooth
    if aug is not None:
        L = L + cfg.alpha_aug * aug
        bundle.aug = aug if isinstance(aug, Var) else L.tape.const(aug)
    bundle.total = L
    return L
