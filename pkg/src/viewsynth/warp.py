"""Inverse warping (view synthesis by sampling) and forward warping
(splatting with a depth-ordered z-buffer), plus hole filling for the
forward-warped view.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from . import imagebuf
from .autodiff import Tape, Var
from .errors import InvalidArgumentError
from .geometry import EPS_Z, Intrinsics, Pose, pixel_rays


# differentiable poses --------------------------------------------------------


class PoseVar(NamedTuple):
    """A pose whose rotation (3, 3) and translation (3,) live on a tape."""

    R: Var
    t: Var

    @classmethod
    def constant(cls, tape: Tape, T: Pose) -> PoseVar:
        return cls(tape.const(T.rotation), tape.const(T.translation))

    def to_pose(self) -> Pose:
        return Pose(self.R.value, self.t.value)


def hat_var(w: Var) -> Var:
    zero = w.tape.const(0.0)
    x, y, z = w[0], w[1], w[2]
    return ad.stack([zero, -z, y, z, zero, -x, -y, x, zero]).reshape(3, 3)


def exp_twist_var(xi: Var) -> PoseVar:
    rho, phi = xi[0:3], xi[3:6]
    A, B, C = ad.rodrigues_coeffs((phi * phi).sum())
    Phi = hat_var(phi)
    Phi2 = Phi @ Phi
    eye = np.eye(3)
    R = eye + A * Phi + B * Phi2
    V = eye + B * Phi + C * Phi2
    return PoseVar(R, V @ rho)


def compose_var(A: PoseVar, B: PoseVar) -> PoseVar:
    """Apply ``B`` first, then ``A``."""
    return PoseVar(A.R @ B.R, A.R @ B.t + A.t)


def invert_var(T: PoseVar) -> PoseVar:
    Rt = T.R.T
    return PoseVar(Rt, -(Rt @ T.t))


def twist_pose(xi: Var, base: Pose | PoseVar) -> PoseVar:
    """``exp(xi) * base``: a left perturbation of ``base``."""
    if isinstance(base, Pose):
        base = PoseVar.constant(xi.tape, base)
    return compose_var(exp_twist_var(xi), base)


# inverse warp -----------------------------------------------------------------


@dataclass
class WarpResult:
    warped_image: np.ndarray
    projected_depth: np.ndarray
    sampled_depth: np.ndarray | None
    valid: np.ndarray


class WarpVars(NamedTuple):
    warped: Var
    projected_depth: Var
    sampled_depth: Var | None
    valid: np.ndarray


def inverse_warp_var(source: Var, target_depth: Var, T: PoseVar, K: Intrinsics, source_depth: Var | None = None) -> WarpVars:
    """Synthesize the target view by sampling ``source``.

    Each target pixel is lifted with ``target_depth``, moved into the source
    camera by ``T`` and projected; the source image (and optionally the
    source depth) is bilinearly sampled there.
    """
    tape = target_depth.tape
    H, W = target_depth.shape
    if source.shape[:2] != (H, W) or (H, W) != K.size:
        raise InvalidArgumentError(f"size mismatch: source {source.shape[:2]}, depth {(H, W)}, intrinsics {K.size}")
    if source_depth is not None and source_depth.shape != (H, W):
        raise InvalidArgumentError("source depth size mismatch")
    rays = pixel_rays(K).reshape(3, -1)
    P = target_depth.reshape(1, H * W) * rays
    Q = T.R @ P + T.t.reshape(3, 1)
    Z = Q[2]
    in_front = Z.value > EPS_Z
    Zs = ad.where(in_front, Z, 1.0)
    u = (K.fx * Q[0] / Zs + K.cx).reshape(H, W)
    v = (K.fy * Q[1] / Zs + K.cy).reshape(H, W)
    sampled, ok = ad.bilinear_sample(source, u, v)
    valid = ok & in_front.reshape(H, W)
    warped = ad.where(valid[..., None] if sampled.ndim == 3 else valid, sampled, 0.0)
    projected = ad.where(valid, Zs.reshape(H, W), 1.0)
    sdepth = None
    if source_depth is not None:
        sd, _ = ad.bilinear_sample(source_depth, u, v)
        sdepth = ad.where(valid, sd, 1.0)
    return WarpVars(warped, projected, sdepth, valid)


def inverse_warp(source, target_depth, T: Pose, K: Intrinsics, source_depth=None) -> WarpResult:
    """Plain-array inverse warp; same arithmetic as :func:`inverse_warp_var`.

    Invalid pixels (out of bounds or behind the camera) have value 0 and
    depth entries set to 1.
    """
    source = imagebuf.as_image(source)
    target_depth = np.asarray(target_depth, dtype=np.float64)
    if source.shape[:2] != target_depth.shape:
        raise InvalidArgumentError(f"size mismatch: {source.shape[:2]} vs {target_depth.shape}")
    if np.any(target_depth <= 0):
        raise InvalidArgumentError("target depth must be positive")
    tape = Tape(record=False)
    w = inverse_warp_var(
        tape.const(source),
        tape.const(target_depth),
        PoseVar.constant(tape, T),
        K,
        None if source_depth is None else tape.const(source_depth),
    )
    return WarpResult(
        w.warped.value,
        w.projected_depth.value,
        None if w.sampled_depth is None else w.sampled_depth.value,
        w.valid.astype(np.float64),
    )


# forward warp -------------------------------------------------------------------


@dataclass
class ForwardWarpResult:
    image: np.ndarray
    splat_depth: np.ndarray
    hole_mask: np.ndarray
    # flat source index that won each target pixel, -1 for holes
    source_index: np.ndarray


def splat_targets(source_depth, T: Pose, K: Intrinsics):
    """Nearest target pixel and projected depth for every source pixel.

    Returns ``(target_flat_index, projected_depth, ok)`` over flattened
    source pixels.
    """
    D = np.asarray(source_depth, dtype=np.float64)
    if np.any(D <= 0):
        raise InvalidArgumentError("source depth must be positive")
    H, W = D.shape
    P = pixel_rays(K).reshape(3, -1) * D.reshape(1, -1)
    Q = T.rotation @ P + T.translation[:, None]
    Z = Q[2]
    ok = Z > EPS_Z
    Zs = np.where(ok, Z, 1.0)
    u = K.fx * Q[0] / Zs + K.cx
    v = K.fy * Q[1] / Zs + K.cy
    # round half up so ties do not depend on banker's rounding
    ui = np.floor(u + 0.5)
    vi = np.floor(v + 0.5)
    ok &= (ui >= 0) & (ui <= W - 1) & (vi >= 0) & (vi <= H - 1)
    target = np.where(ok, vi * W + ui, -1).astype(np.intp)
    return target, Z, ok


def zbuffer(target: np.ndarray, key_depth: np.ndarray, ok: np.ndarray, n_targets: int) -> np.ndarray:
    """Winner per target: smallest ``key_depth``, ties to the lowest source index.

    The result does not depend on the order in which splats are presented.
    """
    src = np.flatnonzero(ok)
    order = np.lexsort((src, key_depth[src], target[src]))
    src = src[order]
    tgt = target[src]
    first = np.ones(len(src), dtype=bool)
    first[1:] = tgt[1:] != tgt[:-1]
    winner = np.full(n_targets, -1, dtype=np.intp)
    winner[tgt[first]] = src[first]
    return winner


def forward_warp(source, source_depth, T_aug: Pose, K: Intrinsics) -> ForwardWarpResult:
    """Splat every source pixel into the view ``T_aug`` (nearest pixel).

    On collisions the source pixel with the smallest source depth wins.
    """
    img = imagebuf.as_image(source)
    D = np.asarray(source_depth, dtype=np.float64)
    H, W = D.shape
    target, Z, ok = splat_targets(D, T_aug, K)
    winner = zbuffer(target, D.reshape(-1), ok, H * W)
    hit = winner >= 0
    flat_img = img.reshape(H * W, -1)
    out = np.zeros_like(flat_img)
    out[hit] = flat_img[winner[hit]]
    depth = np.zeros(H * W)
    depth[hit] = Z[winner[hit]]
    return ForwardWarpResult(
        out.reshape(img.shape),
        depth.reshape(H, W),
        hit.reshape(H, W).astype(np.float64),
        winner.reshape(H, W),
    )


# hole filling --------------------------------------------------------------------


class HoleFill(NamedTuple):
    image: np.ndarray
    h_prime: np.ndarray
    h2: np.ndarray
    h3: np.ndarray


def diffuse_fill(values: np.ndarray, known: np.ndarray, region: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fill ``region`` pixels with the mean of already-known 4-neighbors.

    Sweeps are simultaneous: every unassigned region pixel with at least one
    known neighbor is assigned in the same sweep, then becomes known.
    Returns the filled values and the final known mask.
    """
    vals = np.array(values, dtype=np.float64)
    squeeze = vals.ndim == 2
    if squeeze:
        vals = vals[:, :, None]
    known = np.asarray(known, dtype=bool).copy()
    pending = np.asarray(region, dtype=bool) & ~known
    while pending.any():
        acc = np.zeros_like(vals)
        cnt = np.zeros(known.shape)
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            shifted_k = np.zeros_like(known)
            shifted_v = np.zeros_like(vals)
            src_r = slice(max(dr, 0), known.shape[0] + min(dr, 0))
            dst_r = slice(max(-dr, 0), known.shape[0] + min(-dr, 0))
            src_c = slice(max(dc, 0), known.shape[1] + min(dc, 0))
            dst_c = slice(max(-dc, 0), known.shape[1] + min(-dc, 0))
            shifted_k[dst_r, dst_c] = known[src_r, src_c]
            shifted_v[dst_r, dst_c] = vals[src_r, src_c]
            acc += shifted_v * shifted_k[..., None]
            cnt += shifted_k
        ready = pending & (cnt > 0)
        if not ready.any():
            break
        vals[ready] = acc[ready] / cnt[ready][:, None]
        known |= ready
        pending &= ~ready
    return (vals[:, :, 0] if squeeze else vals), known


def fill_holes(fw: ForwardWarpResult, radius: int = 1, iterations: int = 2) -> HoleFill:
    """Inpaint thin holes next to valid pixels; zero the large ones.

    ``H'`` is the hole mask (1 = splatted), ``H2`` its dilation and
    ``H3 = H2 - H'`` the ring that gets inpainted.
    """
    if radius < 1 or iterations < 1:
        raise InvalidArgumentError("radius and iterations must be >= 1")
    h_prime = np.asarray(fw.hole_mask, dtype=np.float64)
    h2 = imagebuf.dilate(h_prime, radius, iterations)
    h3 = h2 - h_prime
    img, known = diffuse_fill(fw.image, h_prime > 0.5, h3 > 0.5)
    img[~known] = 0.0
    img[h2 < 0.5] = 0.0
    return HoleFill(img, h_prime, h2, h3)
