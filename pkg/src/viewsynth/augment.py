"""6-DoF pose augmentation: sample a pose, forward-warp a frame into it,
fill the holes, and score a pose estimator against the known label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import autodiff as ad
from .autodiff import Tape
from .errors import InvalidArgumentError
from .geometry import Intrinsics, Pose, euler_xyz, invert, pose_to_tq
from .losses import AugLossParams, aug_pose_loss_var
from .warp import fill_holes, forward_warp


@dataclass(frozen=True)
class PoseSampler:
    """Uniform per-axis pose distribution. Rotation limits are in radians."""

    max_rotation: float = float(np.radians(5.0))
    max_translation: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.max_rotation < 0 or self.max_translation < 0:
            raise InvalidArgumentError("sampler ranges must be >= 0")

    def rng(self, index: int | None = None) -> np.random.Generator:
        """Generator for the root seed, or for sample ``index`` derived from it."""
        if index is None:
            return np.random.default_rng(self.seed)
        return np.random.default_rng([self.seed, index])


def sample_pose(sampler: PoseSampler, rng: np.random.Generator | None = None) -> Pose:
    """Independent uniform draws per axis; rotation applied x, then y, then z."""
    rng = sampler.rng() if rng is None else rng
    r = rng.uniform(-1.0, 1.0, 3) * sampler.max_rotation
    t = rng.uniform(-1.0, 1.0, 3) * sampler.max_translation
    return Pose(euler_xyz(*r), t)


@dataclass
class AugmentedSample:
    original: np.ndarray
    augmented: np.ndarray
    label: Pose  # maps original-camera points into the augmented camera
    h_prime: np.ndarray
    h2: np.ndarray
    h3: np.ndarray
    depth: np.ndarray  # splatted depth of the augmented view, holes filled


@dataclass(frozen=True)
class FillConfig:
    radius: int = 1
    iterations: int = 2


def nearest_fill(values: np.ndarray, known: np.ndarray) -> np.ndarray:
    """Replace unknown pixels by their nearest known pixel (Euclidean)."""
    known = np.asarray(known, dtype=bool)
    if not known.any():
        raise InvalidArgumentError("nothing to fill from")
    _, (r, c) = ndimage.distance_transform_edt(~known, return_indices=True)
    return values[r, c]


def make_augmented_pair(image, depth, K: Intrinsics, sampler: PoseSampler | Pose, fill: FillConfig = FillConfig(), rng=None) -> AugmentedSample:
    """Forward-warp ``image`` into a sampled view and fill its holes.

    ``sampler`` may also be a fixed :class:`Pose` to use as the label.
    """
    label = sampler if isinstance(sampler, Pose) else sample_pose(sampler, rng)
    image = np.asarray(image, dtype=np.float64)
    fw = forward_warp(image, depth, label, K)
    filled = fill_holes(fw, fill.radius, fill.iterations)
    hp, h2 = filled.h_prime, filled.h2
    if np.any((filled.h3 != h2 - hp)):
        raise AssertionError("inpainting mask is not the ring between the dilated and raw masks")
    d = nearest_fill(fw.splat_depth, hp > 0.5)
    return AugmentedSample(image, filled.image, label, hp, h2, filled.h3, d)


def augmented_suite(image, depth, K: Intrinsics, sampler: PoseSampler, count: int, fill: FillConfig = FillConfig()):
    """``count`` samples, sample ``i`` drawn from a generator seeded by ``(seed, i)``."""
    return [make_augmented_pair(image, depth, K, sampler, fill, sampler.rng(i)) for i in range(count)]


def _tq_var(tape: Tape, T: Pose):
    t, q = pose_to_tq(T)
    return tape.const(t), tape.const(q.as_array())


def augmentation_loss_var(tape: Tape, estimate: Pose, label: Pose, w_t, w_q):
    """Uncertainty-weighted pose loss on a tape. ``w_t``/``w_q`` may be Vars."""
    t_m, q_m = _tq_var(tape, estimate)
    t_a, q_a = _tq_var(tape, label)
    return aug_pose_loss_var(t_m, q_m, t_a, q_a, tape.lift(w_t), tape.lift(w_q))


def score_estimator(sample: AugmentedSample, estimator, K: Intrinsics, params: AugLossParams = AugLossParams()):
    """Estimate the augmentation pose and score it against the label.

    The estimator is run as ``estimator(original, augmented, depth, K)``,
    which yields the pose taking augmented-camera points into the original
    camera; its inverse is compared with the label. Returns ``(pose, loss)``.
    """
    est = estimator(sample.original, sample.augmented, sample.depth, K)
    pose = invert(est)
    tape = Tape(record=False)
    loss = augmentation_loss_var(tape, pose, sample.label, params.w_t, params.w_q)
    return pose, float(loss.value)


def optimal_weights(estimate: Pose, label: Pose) -> AugLossParams:
    """Minimizers ``w = ln(error)`` of the weighted loss at fixed errors."""
    t_m, q_m = pose_to_tq(estimate)
    t_a, q_a = pose_to_tq(label)
    et = float(np.linalg.norm(t_m - t_a))
    eq = float(np.linalg.norm(q_m.as_array() - q_a.as_array()))
    if et <= 0 or eq <= 0:
        raise InvalidArgumentError("weights are unbounded below at zero error")
    return AugLossParams(float(np.log(et)), float(np.log(eq)))
