"""Pinhole camera model and rigid-body pose algebra.

Conventions used throughout the package:

* pixel coordinates are ``(u, v) = (column, row)`` with pixel centers on
  integer coordinates;
* a :class:`Pose` ``T = (R, t)`` maps a point ``P`` to ``R @ P + t``;
* twists are 6-vectors ``[rho, phi]`` (translation part first, rotation part
  second) and ``exp_twist`` is the SE(3) exponential;
* quaternions are ``(w, x, y, z)`` with ``w >= 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import AmbiguousLogError, InvalidArgumentError

EPS_Z = 1e-6
"""Points with camera z at or below this are treated as behind the camera."""

REORTHO_EVERY = 32

# theta^2 below which the Rodrigues coefficients use their Taylor series
_SERIES_S = 2.5e-3


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgumentError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvalidArgumentError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def size(self) -> tuple[int, int]:
        """``(height, width)``."""
        return self.height, self.width

    def scaled(self, factor: float, width: int, height: int) -> Intrinsics:
        """Intrinsics after resampling by ``factor`` with integer pixel centers.

        A 2x2 block average (``factor = 0.5``) puts the new pixel ``i`` at old
        coordinate ``2 i + 0.5``, hence the half-pixel shift.
        """
        shift = 0.5 * (1.0 / factor - 1.0)
        return Intrinsics(
            self.fx * factor,
            self.fy * factor,
            (self.cx - shift) * factor,
            (self.cy - shift) * factor,
            width,
            height,
        )


class Projection(NamedTuple):
    pixel: tuple[float, float]
    depth: float
    in_front: bool


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray
    # compositions since the rotation was last re-orthonormalized
    chain: int = field(default=0, compare=False)

    def __post_init__(self):
        R = _frozen(self.rotation)
        t = _frozen(self.translation).reshape(3)
        if R.shape != (3, 3):
            raise InvalidArgumentError("rotation must be 3x3")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> Pose:
        M = np.asarray(M, dtype=np.float64)
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def from_translation(cls, t) -> Pose:
        return cls(np.eye(3), t)

    @property
    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def apply(self, points) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        return np.asarray(points) @ self.rotation.T + self.translation

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return bool(
            np.abs(R.T @ R - np.eye(3)).max() <= tol and abs(np.linalg.det(R) - 1.0) <= tol
        )

    def __matmul__(self, other: Pose) -> Pose:
        return compose(self, other)

    def __repr__(self):
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True)
class Quaternion:
    w: float
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def to_rotation(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )


def backproject(p, d: float, K: Intrinsics) -> np.ndarray:
    """Camera-frame point seen at pixel ``p = (u, v)`` with depth ``d``."""
    if not d > 0:
        raise InvalidArgumentError(f"depth must be positive, got {d}")
    u, v = p
    return d * np.array([(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0])


def project(P, K: Intrinsics) -> Projection:
    X, Y, Z = (float(c) for c in P)
    if Z <= EPS_Z:
        return Projection((math.nan, math.nan), Z, False)
    return Projection((K.fx * X / Z + K.cx, K.fy * Y / Z + K.cy), Z, True)


def pixel_rays(K: Intrinsics) -> np.ndarray:
    """``K^-1 [u, v, 1]`` for every pixel, shape (3, H, W)."""
    v, u = np.mgrid[0 : K.height, 0 : K.width].astype(np.float64)
    return np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)])


def compose(A: Pose, B: Pose) -> Pose:
    """Apply ``B`` first, then ``A``."""
    R = A.rotation @ B.rotation
    t = A.rotation @ B.translation + A.translation
    chain = max(A.chain, B.chain) + 1
    if chain >= REORTHO_EVERY:
        R, chain = orthonormalize(R), 0
    return Pose(R, t, chain)


def invert(T: Pose) -> Pose:
    Rt = T.rotation.T
    return Pose(Rt, -Rt @ T.translation, T.chain)


def hat(w) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rodrigues_coeffs(s):
    """Coefficients ``A = sin t / t``, ``B = (1 - cos t) / t^2`` and
    ``C = (t - sin t) / t^3`` as functions of ``s = t^2``, plus their
    derivatives with respect to ``s``.

    Works elementwise on arrays; small angles use Taylor series so that both
    values and derivatives stay accurate at ``s = 0``.
    """
    s = np.asarray(s, dtype=np.float64)
    small = s < _SERIES_S
    ss = np.where(small, s, 0.0)
    A_ser = 1 - ss / 6 + ss**2 / 120 - ss**3 / 5040
    B_ser = 0.5 - ss / 24 + ss**2 / 720 - ss**3 / 40320
    C_ser = 1 / 6 - ss / 120 + ss**2 / 5040 - ss**3 / 362880
    dA_ser = -1 / 6 + ss / 60 - ss**2 / 1680
    dB_ser = -1 / 24 + ss / 360 - ss**2 / 13440
    dC_ser = -1 / 120 + ss / 2520 - ss**2 / 120960

    sl = np.where(small, 1.0, s)
    t = np.sqrt(sl)
    sn, cs = np.sin(t), np.cos(t)
    A = sn / t
    B = (1 - cs) / sl
    C = (t - sn) / (sl * t)
    dA = (t * cs - sn) / (2 * sl * t)
    dB = (t * sn - 2 * (1 - cs)) / (2 * sl * sl)
    dC = ((1 - cs) * t - 3 * (t - sn)) / (2 * sl * sl * t)
    pick = lambda a, b: np.where(small, a, b)  # noqa: E731
    return (
        (pick(A_ser, A), pick(B_ser, B), pick(C_ser, C)),
        (pick(dA_ser, dA), pick(dB_ser, dB), pick(dC_ser, dC)),
    )


def exp_twist(xi) -> Pose:
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (6,) or not np.all(np.isfinite(xi)):
        raise InvalidArgumentError("twist must be a finite 6-vector")
    rho, phi = xi[:3], xi[3:]
    (A, B, C), _ = rodrigues_coeffs(phi @ phi)
    Phi = hat(phi)
    Phi2 = Phi @ Phi
    R = np.eye(3) + A * Phi + B * Phi2
    V = np.eye(3) + B * Phi + C * Phi2
    return Pose(R, V @ rho)


def log_rotation(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    cos_t = (np.trace(R) - 1.0) / 2.0
    sin_t = np.linalg.norm(vee) / 2.0
    theta = math.atan2(sin_t, cos_t)
    if theta >= math.pi - 1e-6:
        raise AmbiguousLogError(f"rotation angle {theta} is too close to pi")
    if theta < 1e-4:
        factor = 0.5 + theta**2 / 12 + 7 * theta**4 / 720
    else:
        factor = theta / (2 * math.sin(theta))
    return factor * vee


def log_pose(T: Pose) -> np.ndarray:
    phi = log_rotation(T.rotation)
    s = float(phi @ phi)
    (A, B, _), _ = rodrigues_coeffs(s)
    if s < _SERIES_S:
        D = 1 / 12 + s / 720 + s**2 / 30240
    else:
        D = (1 - A / (2 * B)) / s
    Phi = hat(phi)
    V_inv = np.eye(3) - 0.5 * Phi + D * (Phi @ Phi)
    return np.concatenate([V_inv @ T.translation, phi])


def rotation_to_quaternion(R: np.ndarray) -> Quaternion:
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        S = math.sqrt(tr + 1.0) * 2
        q = [0.25 * S, (R[2, 1] - R[1, 2]) / S, (R[0, 2] - R[2, 0]) / S, (R[1, 0] - R[0, 1]) / S]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        S = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = [(R[2, 1] - R[1, 2]) / S, 0.25 * S, (R[0, 1] + R[1, 0]) / S, (R[0, 2] + R[2, 0]) / S]
    elif R[1, 1] > R[2, 2]:
        S = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = [(R[0, 2] - R[2, 0]) / S, (R[0, 1] + R[1, 0]) / S, 0.25 * S, (R[1, 2] + R[2, 1]) / S]
    else:
        S = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = [(R[1, 0] - R[0, 1]) / S, (R[0, 2] + R[2, 0]) / S, (R[1, 2] + R[2, 1]) / S, 0.25 * S]
    q = np.array(q)
    q /= np.linalg.norm(q)
    # hemisphere w >= 0; for w == 0 the first nonzero component is made positive
    lead = q[np.flatnonzero(np.abs(q) > 1e-15)[0]]
    if q[0] < 0 or (q[0] == 0 and lead < 0):
        q = -q
    return Quaternion(*(float(c) for c in q))


def pose_to_tq(T: Pose) -> tuple[np.ndarray, Quaternion]:
    return T.translation.copy(), rotation_to_quaternion(T.rotation)


def euler_xyz(rx: float, ry: float, rz: float) -> np.ndarray:
    """Rotation applying x, then y, then z elementary rotations."""
    cx, sx, cy, sy, cz, sz = (math.cos(rx), math.sin(rx), math.cos(ry), math.sin(ry), math.cos(rz), math.sin(rz))
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix in radians."""
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return math.atan2(np.linalg.norm(vee) / 2.0, (np.trace(R) - 1.0) / 2.0)


def pose_errors(est: Pose, gt: Pose) -> tuple[float, float]:
    """Rotation error in degrees and translation error relative to ``|t_gt|``."""
    dR = est.rotation @ gt.rotation.T
    rot = math.degrees(rotation_angle(dR))
    tn = np.linalg.norm(gt.translation)
    trans = np.linalg.norm(est.translation - gt.translation) / max(tn, 1e-12)
    return rot, float(trans)
