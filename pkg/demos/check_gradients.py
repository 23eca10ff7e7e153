"""
Checking the gradients of the whole objective
=============================================

The loss combines warping, SSIM, masks, depth upsampling and a pose loss on
quaternions. The reverse-mode tape differentiates all of it; here every
depth pixel and every twist component is compared with a central finite
difference on a tiny pair.

Run with ``python3 demos/check_gradients.py``.
"""

from viewsynth.refine import pipeline_gradcheck

# a 12x10 pair, two pose levels, two depth scales per frame
report = pipeline_gradcheck(seed=3, width=12, height=10, levels=2, scales=2)

print("leaf          probes  skipped  max rel error")
for name in report.max_rel_error:
    print("%-12s  %6d  %7d  %.2e" % (name, report.checked[name], report.skipped[name], report.max_rel_error[name]))

# probes whose finite difference straddles a kink (a clamp, a mask edge or
# a pixel-grid crossing) are skipped rather than counted
print("\nworst relative error %.2e" % report.worst)
