"""
Pose augmentation by forward warping
====================================

Take one rendered frame with its depth, pick a random camera motion, splat
the frame into the new camera, and fill the thin cracks the splatting leaves.
The result is a new training pair whose relative pose is known exactly.
A pose estimator is then scored against that label with the
uncertainty-weighted pose loss.

Run with ``python3 demos/pose_augmentation.py``.
"""

import numpy as np

from viewsynth import synthdata
from viewsynth.augment import PoseSampler, augmented_suite, optimal_weights, score_estimator
from viewsynth.geometry import Pose, pose_errors
from viewsynth.refine import AUGMENTED, DirectEstimator

K = synthdata.default_intrinsics(320, 240)
image, depth = synthdata.render(synthdata.random_scene(105, focal=K.fx), Pose.identity(), K)

# rotations up to 5 deg and translations up to 0.3 m per axis
sampler = PoseSampler(np.radians(5.0), 0.3, seed=7)
samples = augmented_suite(image, depth, K, sampler, 3)

# H' marks splatted pixels, H2 its dilation and H3 = H2 - H' the filled ring;
# whatever lies outside H2 is a large hole and stays black
for i, s in enumerate(samples):
    print(
        "sample %d: holes %.1f%%, inpainted %.1f%%, left black %.1f%%"
        % (i, 100 * (1 - s.h_prime.mean()), 100 * s.h3.mean(), 100 * (1 - s.h2.mean()))
    )

# recover each label from the image pair alone
estimator = DirectEstimator(AUGMENTED)
print("\nsample  rot err (deg)  trans err  loss (w = 0)")
for i, s in enumerate(samples):
    pose, loss = score_estimator(s, estimator, K)
    r, t = pose_errors(pose, s.label)
    print("%6d  %13.4f  %8.2f%%  %.5f" % (i, r, 100 * t, loss))

# at fixed errors the learned weights settle at the log of each error,
# where the loss per term equals 1 + log(error)
w = optimal_weights(pose, samples[-1].label)
print("\noptimal weights for the last sample: w_t %.3f, w_q %.3f" % (w.w_t, w.w_q))
