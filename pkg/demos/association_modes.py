"""
Which poses should train the depth?
===================================

With several pose levels, every level yields a reconstruction loss. Letting
all of them push on the depth means the coarse, less accurate poses drag the
depth toward explaining their errors. Stopping the depth gradient for the
coarse levels lets only the finest pose shape the depth, while every pose
level still receives its own gradient.

This demo perturbs the depth of one pair, gives it a poor coarse pose and a
good finest pose, and runs joint descent in both modes.

Run with ``python3 demos/association_modes.py`` (about a minute).
"""

import numpy as np
from scipy import ndimage

from viewsynth import synthdata
from viewsynth.geometry import compose, exp_twist, invert, pose_errors
from viewsynth.losses import AssociationMode, LossConfig
from viewsynth.metrics import depth_metrics
from viewsynth.refine import JointConfig, JointState, joint_refine_step

K = synthdata.default_intrinsics(48, 32)
rng = np.random.default_rng(3)
T = synthdata.sample_motion(rng, 3.0, 1.0)
pair = synthdata.make_pair(synthdata.random_scene(3003, focal=K.fx), T, K)


# smooth multiplicative noise of about 15% on every depth scale
def perturb(d):
    n = ndimage.gaussian_filter(rng.standard_normal(d.shape), 4)
    return synthdata.depth_pyramid(d * np.exp(0.15 * n / n.std()), 4)


dt, dt1 = perturb(pair.depth_t), perturb(pair.depth_t1)
coarse = compose(exp_twist(rng.normal(0, [0.18] * 3 + [0.03] * 3)), T)
fine = compose(exp_twist(rng.normal(0, [0.003] * 3 + [0.0005] * 3)), T)
print("coarse pose error %.2f deg / %.1f%%" % tuple(np.multiply(pose_errors(coarse, T), (1, 100))))
print("fine pose error   %.3f deg / %.2f%%" % tuple(np.multiply(pose_errors(fine, T), (1, 100))))
print("initial AbsRel    %.4f" % depth_metrics(dt1[-1], pair.depth_t1).abs_rel)

for mode in AssociationMode:
    state = JointState([d.copy() for d in dt], [d.copy() for d in dt1], coarse, [compose(fine, invert(coarse))])
    cfg = JointConfig(lr_depth=0.005, lr_translation=1e-4, lr_rotation=1e-6, loss=LossConfig(association_mode=mode))
    print("\n%s" % mode.value)
    for step in range(1, 201):
        state, bundle = joint_refine_step(state, pair.image_t, pair.image_t1, K, cfg)
        if step % 50 == 0:
            a = depth_metrics(state.depths_t1[-1], pair.depth_t1).abs_rel
            print("  step %3d  loss %.4f  AbsRel %.4f" % (step, float(bundle.total.value), a))

# single scenes go either way, and past ~100 steps both modes start to drift
# as the depth overfits the photometric error; the acceptance suite compares
# medians over 10 scenes
