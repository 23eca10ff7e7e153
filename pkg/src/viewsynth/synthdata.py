"""Deterministic synthetic scenes with exact depth and pose ground truth.

Scenes are made of textured fronto-parallel rectangles, axis-aligned boxes
and an unbounded background plane, rendered by analytic ray casting at one
sample per pixel. Depth is the camera-frame z of the first hit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import imagebuf
from .geometry import Intrinsics, Pose, compose, euler_xyz, invert, pixel_rays

MAX_DEPTH = 80.0


@dataclass(frozen=True)
class Texture:
    """Procedural value noise plus stripes, evaluated on surface coordinates."""

    base: tuple[float, float, float]
    scale: float  # metres per noise lattice cell
    seed: int
    stripe_freq: float = 0.0  # cycles per metre
    stripe_angle: float = 0.0
    stripe_amp: float = 0.0
    contrast: float = 0.45
    octaves: int = 3

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        perm = rng.permutation(256)
        table = rng.random((256, 3))
        out = np.zeros(a.shape + (3,))
        amp, total = 1.0, 0.0
        for octave in range(self.octaves):
            f = 2.0**octave / self.scale
            out += amp * _value_noise(a * f + 17.0 * octave, b * f + 31.0 * octave, perm, table)
            total += amp
            amp *= 0.5
        out = out / total - 0.5
        img = np.asarray(self.base) + self.contrast * out
        if self.stripe_amp > 0:
            c, s = np.cos(self.stripe_angle), np.sin(self.stripe_angle)
            img += self.stripe_amp * np.sin(2 * np.pi * self.stripe_freq * (c * a + s * b))[..., None]
        return np.clip(img, 0.02, 0.98)


def _value_noise(x, y, perm, table):
    xi, yi = np.floor(x), np.floor(y)
    fx, fy = x - xi, y - yi
    sx, sy = fx * fx * (3 - 2 * fx), fy * fy * (3 - 2 * fy)
    xi = xi.astype(np.int64) & 255
    yi = yi.astype(np.int64) & 255

    def h(i, j):
        return table[perm[(perm[i & 255] + j) & 255]]

    top = h(xi, yi) * (1 - sx)[..., None] + h(xi + 1, yi) * sx[..., None]
    bot = h(xi, yi + 1) * (1 - sx)[..., None] + h(xi + 1, yi + 1) * sx[..., None]
    return top * (1 - sy)[..., None] + bot * sy[..., None]


@dataclass(frozen=True)
class Rect:
    """Rectangle in the plane ``z = depth`` spanning ``[x0, x1] x [y0, y1]``."""

    depth: float
    x0: float
    x1: float
    y0: float
    y1: float
    texture: Texture


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    texture: Texture


@dataclass(frozen=True)
class Scene:
    rects: tuple[Rect, ...] = ()
    boxes: tuple[Box, ...] = ()
    background_depth: float = 40.0
    background: Texture = field(default_factory=lambda: Texture((0.5, 0.55, 0.6), 4.0, 0))
    seed: int = 0


def random_scene(
    seed: int, focal: float = 100.0, n_rects: int = 4, n_boxes: int = 2, cell_px: float = 6.0, octaves: int = 3
) -> Scene:
    """A cluttered scene in front of the origin camera.

    Texture cells are sized to span roughly ``cell_px`` pixels at the
    surface's depth for a camera with focal length ``focal``.
    """
    rng = np.random.default_rng(seed)
    px = cell_px / focal

    def texture(z):
        return Texture(
            base=tuple(rng.uniform(0.3, 0.7, 3)),
            scale=px * z,
            seed=int(rng.integers(1 << 31)),
            stripe_freq=1.0 / (px * z * rng.uniform(3.0, 6.0)),
            stripe_angle=float(rng.uniform(0, np.pi)),
            stripe_amp=float(rng.uniform(0.05, 0.15)),
            octaves=octaves,
        )

    rects = []
    for _ in range(n_rects):
        z = float(rng.uniform(4.0, 20.0))
        w, h = z * rng.uniform(0.2, 0.5, 2)
        cx, cy = z * rng.uniform(-0.4, 0.4, 2)
        rects.append(Rect(z, cx - w, cx + w, cy - h, cy + h, texture(z)))
    boxes = []
    for _ in range(n_boxes):
        z = float(rng.uniform(5.0, 15.0))
        c = np.array([*(z * rng.uniform(-0.35, 0.35, 2)), z])
        half = z * rng.uniform(0.06, 0.14, 3)
        boxes.append(Box(tuple(c - half), tuple(c + half), texture(z)))
    bg_z = float(rng.uniform(30.0, 45.0))
    return Scene(tuple(rects), tuple(boxes), bg_z, texture(bg_z), seed)


def default_intrinsics(width: int, height: int, focal: float | None = None) -> Intrinsics:
    f = 0.58 * width if focal is None else focal
    return Intrinsics(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


def render(scene: Scene, camera: Pose, K: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Ray-cast ``scene`` from a camera with camera-to-world pose ``camera``.

    Returns ``(image (H, W, 3), depth (H, W))``.
    """
    H, W = K.height, K.width
    d = (camera.rotation @ pixel_rays(K).reshape(3, -1)).T  # world directions, camera z = 1
    o = camera.translation
    best = np.full(H * W, np.inf)
    color = np.zeros((H * W, 3))

    def offer(lam, hit, a, b, tex):
        take = hit & (lam < best)
        if take.any():
            best[take] = lam[take]
            color[take] = tex(a[take], b[take])

    with np.errstate(divide="ignore", invalid="ignore"):
        dz = d[:, 2]
        lam = (scene.background_depth - o[2]) / dz
        hit = (dz > 0) & (lam > 1e-6)
        p = o + lam[:, None] * d
        offer(np.where(hit, lam, np.inf), hit, p[:, 0], p[:, 1], scene.background)

        for r in scene.rects:
            lam = (r.depth - o[2]) / dz
            p = o + lam[:, None] * d
            hit = (lam > 1e-6) & (p[:, 0] >= r.x0) & (p[:, 0] <= r.x1) & (p[:, 1] >= r.y0) & (p[:, 1] <= r.y1)
            offer(np.where(hit, lam, np.inf), hit, p[:, 0], p[:, 1], r.texture)

        for bx in scene.boxes:
            lo, hi = np.asarray(bx.lo), np.asarray(bx.hi)
            t1 = (lo - o) / d
            t2 = (hi - o) / d
            tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
            tmax = np.where(np.isnan(t1), np.inf, np.maximum(t1, t2))
            near = tmin.max(axis=1)
            axis = tmin.argmax(axis=1)
            far = tmax.min(axis=1)
            hit = (near <= far) & (near > 1e-6)
            p = o + near[:, None] * d
            # surface coordinates: the two axes spanning the entered face
            a = np.where(axis == 0, p[:, 1], p[:, 0])
            b = np.where(axis == 2, p[:, 1], p[:, 2])
            offer(np.where(hit, near, np.inf), hit, a, b, bx.texture)

    # camera z of the hit point equals the ray parameter since ray z = 1
    depth = best.reshape(H, W)
    return color.reshape(H, W, 3), depth


@dataclass
class FramePair:
    image_t: np.ndarray
    image_t1: np.ndarray
    depth_t: np.ndarray
    depth_t1: np.ndarray
    pose: Pose  # maps frame t+1 camera points into frame t (the camera motion)
    K: Intrinsics


def make_pair(scene: Scene, T_gt: Pose, K: Intrinsics, camera_t: Pose | None = None) -> FramePair:
    """Render frame t at ``camera_t`` (default: world origin) and frame t+1
    at ``camera_t * T_gt``."""
    cam_t = Pose.identity() if camera_t is None else camera_t
    img_t, d_t = render(scene, cam_t, K)
    img_t1, d_t1 = render(scene, compose(cam_t, T_gt), K)
    return FramePair(img_t, img_t1, d_t, d_t1, T_gt, K)


@dataclass
class Sequence:
    images: list[np.ndarray]
    depths: list[np.ndarray]
    poses: list[Pose]  # camera-to-world
    K: Intrinsics


def make_trajectory(scene: Scene, poses: list[Pose], K: Intrinsics) -> Sequence:
    images, depths = [], []
    for P in poses:
        img, d = render(scene, P, K)
        images.append(img)
        depths.append(d)
    return Sequence(images, depths, list(poses), K)


def relative_pose(cam_a: Pose, cam_b: Pose) -> Pose:
    """Motion from camera a to camera b, mapping b-frame points into a."""
    return compose(invert(cam_a), cam_b)


def sample_motion(rng: np.random.Generator, max_rot_deg: float, max_trans: float) -> Pose:
    """Uniform per-axis rotation (x-y-z order) and translation."""
    r = np.radians(max_rot_deg) * rng.uniform(-1, 1, 3)
    t = max_trans * rng.uniform(-1, 1, 3)
    return Pose(euler_xyz(*r), t)


def depth_pyramid(depth, levels: int = 4) -> list[np.ndarray]:
    """``[D_1, ..., D_N]`` ordered low to high resolution by 2x2 averaging."""
    out = [np.asarray(depth, dtype=np.float64)]
    for _ in range(levels - 1):
        out.append(imagebuf.downsample2(out[-1]))
    return out[::-1]


def texture_ok(image, floor: float = 0.01, fraction: float = 0.5) -> bool:
    """True when the gradient magnitude exceeds ``floor`` on enough pixels."""
    g = imagebuf.channel_mean(image)
    mag = np.hypot(imagebuf.grad_x(g), imagebuf.grad_y(g))
    return float(np.mean(mag > floor)) >= fraction
