"""Dense grid operations on images, depth maps and masks.

Grids are plain numpy arrays: images are ``(H, W, C)`` float arrays with
``C`` in {1, 3}, depth maps and masks are ``(H, W)``. Coordinates are
``(u, v) = (column, row)`` with pixel centers on integers.
"""

from __future__ import annotations

import functools
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .errors import InvalidArgumentError


def as_image(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise InvalidArgumentError(f"expected (H, W, C) image with C in {{1, 3}}, got {a.shape}")
    return a


# coordinates this far outside the pixel grid still count as inside
BOUNDS_TOL = 1e-9


class BilinearStencil(NamedTuple):
    """Neighbor indices and weights for sampling at fractional coordinates.

    ``rows``/``cols`` index the top-left neighbor; ``fu``/``fv`` are the
    fractional offsets in ``[0, 1]``. Out-of-bounds samples point at (0, 0)
    and carry ``valid = False``.
    """

    rows: np.ndarray
    cols: np.ndarray
    fu: np.ndarray
    fv: np.ndarray
    valid: np.ndarray


def bilinear_stencil(u, v, height: int, width: int) -> BilinearStencil:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    lo, hu, hv = -BOUNDS_TOL, width - 1 + BOUNDS_TOL, height - 1 + BOUNDS_TOL
    valid = (u >= lo) & (u <= hu) & (v >= lo) & (v <= hv)
    # round-off at the border (a lifted-and-reprojected edge pixel) stays inside
    uu = np.where(valid, np.clip(u, 0, width - 1), 0.0)
    vv = np.where(valid, np.clip(v, 0, height - 1), 0.0)
    # the last row/column is reached from the cell before it with weight 1
    c0 = np.minimum(np.floor(uu), max(width - 2, 0)).astype(np.intp)
    r0 = np.minimum(np.floor(vv), max(height - 2, 0)).astype(np.intp)
    fu = uu - c0
    fv = vv - r0
    return BilinearStencil(r0, c0, fu, fv, valid)


def _gather(img: np.ndarray, s: BilinearStencil) -> np.ndarray:
    H, W = img.shape[:2]
    r1 = np.minimum(s.rows + 1, H - 1)
    c1 = np.minimum(s.cols + 1, W - 1)
    fu = s.fu[..., None]
    fv = s.fv[..., None]
    top = img[s.rows, s.cols] * (1 - fu) + img[s.rows, c1] * fu
    bot = img[r1, s.cols] * (1 - fu) + img[r1, c1] * fu
    out = top * (1 - fv) + bot * fv
    return np.where(s.valid[..., None], out, 0.0)


def bilinear_sample(img, u, v) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``img`` at fractional ``(u, v)``.

    Returns ``(values, valid)`` where values has shape ``u.shape + (C,)`` for
    an ``(H, W, C)`` image, or ``u.shape`` for a 2-D grid. Samples whose
    four-neighborhood leaves the image are 0 with ``valid = False``.
    """
    img = np.asarray(img, dtype=np.float64)
    flat = img.ndim == 2
    grid = img[:, :, None] if flat else img
    s = bilinear_stencil(u, v, grid.shape[0], grid.shape[1])
    out = _gather(grid, s)
    return (out[..., 0] if flat else out), s.valid


def interp_matrix(n_src: int, n_dst: int) -> np.ndarray:
    """Linear interpolation matrix mapping ``n_src`` samples to ``n_dst``.

    End samples are aligned, so affine signals are reproduced exactly.
    """
    M = np.zeros((n_dst, n_src))
    if n_src == 1 or n_dst == 1:
        M[:, 0] = 1.0
        return M
    x = np.arange(n_dst) * (n_src - 1) / (n_dst - 1)
    i0 = np.minimum(np.floor(x).astype(int), n_src - 2)
    f = x - i0
    M[np.arange(n_dst), i0] = 1 - f
    M[np.arange(n_dst), i0 + 1] += f
    return M


def upsample(a, size: tuple[int, int]) -> np.ndarray:
    """Bilinear upsampling of a 2-D or 3-D grid to ``size = (H, W)``."""
    a = np.asarray(a, dtype=np.float64)
    H, W = size
    if H < a.shape[0] or W < a.shape[1]:
        raise InvalidArgumentError(f"cannot upsample {a.shape[:2]} to smaller {size}")
    if (H, W) == a.shape[:2]:
        return a.copy()
    Mh = interp_matrix(a.shape[0], H)
    Mw = interp_matrix(a.shape[1], W)
    return np.einsum("ij,jk...,lk->il...", Mh, a, Mw)


def downsample2(a) -> np.ndarray:
    """2x2 block mean; odd trailing rows/columns are dropped."""
    a = np.asarray(a, dtype=np.float64)
    H, W = a.shape[0] // 2, a.shape[1] // 2
    a = a[: 2 * H, : 2 * W]
    return 0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2])


def grad_x(img) -> np.ndarray:
    """Forward difference along columns; the last column is zero."""
    img = np.asarray(img, dtype=np.float64)
    g = np.zeros_like(img)
    g[:, :-1] = img[:, 1:] - img[:, :-1]
    return g


def grad_y(img) -> np.ndarray:
    """Forward difference along rows; the last row is zero."""
    img = np.asarray(img, dtype=np.float64)
    g = np.zeros_like(img)
    g[:-1] = img[1:] - img[:-1]
    return g


def dilate(mask, radius: int = 1, iterations: int = 1) -> np.ndarray:
    """Grey dilation with a (2r+1)^2 square, repeated ``iterations`` times."""
    m = np.asarray(mask, dtype=np.float64)
    if radius < 0 or iterations < 0:
        raise InvalidArgumentError("radius and iterations must be non-negative")
    for _ in range(iterations):
        m = ndimage.maximum_filter(m, size=2 * radius + 1, mode="constant", cval=0.0)
    return m


@functools.lru_cache(maxsize=64)
def _box_indices(n: int, radius: int) -> tuple[np.ndarray, ...]:
    base = np.arange(n)
    return tuple(np.clip(base + k, 0, n - 1) for k in range(-radius, radius + 1))


def box_mean(img, radius: int = 1) -> np.ndarray:
    """Mean over a (2r+1)^2 window with edge replication, per channel."""
    a = np.asarray(img, dtype=np.float64)
    n = 2 * radius + 1
    rows = ndimage.uniform_filter1d(a, n, axis=0, mode="nearest")
    return ndimage.uniform_filter1d(rows, n, axis=1, mode="nearest")


def box_mean_adjoint(g, radius: int = 1) -> np.ndarray:
    """Transpose of :func:`box_mean` as a linear map."""
    g = np.asarray(g, dtype=np.float64)
    n = 2 * radius + 1
    cols = np.zeros_like(g)
    for idx in _box_indices(g.shape[1], radius):
        np.add.at(cols, (slice(None), idx), g)
    out = np.zeros_like(g)
    for idx in _box_indices(g.shape[0], radius):
        np.add.at(out, idx, cols)
    return out / (n * n)


def channel_mean(img) -> np.ndarray:
    return as_image(img).mean(axis=2)
