import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viewsynth import losses, synthdata
from viewsynth.autodiff import Tape
from viewsynth.errors import InvalidArgumentError
from viewsynth.geometry import Pose, exp_twist, pose_to_tq
from viewsynth.losses import AssociationMode, AugLossParams, LossConfig, SSIM_C1, SSIM_C2
from viewsynth.warp import PoseVar, twist_pose


def naive_ssim(a, b, r=1):
    """Loop oracle: window statistics with clamped (edge-replicated) indices."""
    H, W = a.shape
    out = np.zeros((H, W))
    for i, j in itertools.product(range(H), range(W)):
        rows = [min(max(i + k, 0), H - 1) for k in range(-r, r + 1)]
        cols = [min(max(j + k, 0), W - 1) for k in range(-r, r + 1)]
        wa = np.array([a[p, q] for p in rows for q in cols])
        wb = np.array([b[p, q] for p in rows for q in cols])
        ma, mb = wa.mean(), wb.mean()
        va, vb = (wa * wa).mean() - ma * ma, (wb * wb).mean() - mb * mb
        cov = (wa * wb).mean() - ma * mb
        out[i, j] = (2 * ma * mb + SSIM_C1) * (2 * cov + SSIM_C2) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
    return out


class TestPhotometric:
    def test_identical_is_zero(self, rng):
        a = rng.random((5, 6, 3))
        np.testing.assert_allclose(losses.photometric(a, a), 0.0, atol=1e-12)

    def test_ssim_matches_loop_oracle(self, rng):
        a, b = rng.random((5, 4)), rng.random((5, 4))
        np.testing.assert_allclose(losses.ssim_map(a, b)[..., 0], naive_ssim(a, b), rtol=1e-12)

    def test_mix(self, rng):
        a, b = rng.random((4, 4, 1)), rng.random((4, 4, 1))
        lam = 0.15
        expected = lam * np.abs(a - b)[..., 0] + (1 - lam) * (1 - naive_ssim(a[..., 0], b[..., 0])) / 2
        np.testing.assert_allclose(losses.photometric(a, b, lam), np.maximum(expected, 0), rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            losses.photometric(np.zeros((2, 2)), np.zeros((2, 3)))


class TestMasks:
    def test_depth_diff_range_and_scale_invariance(self, rng):
        p, s = rng.uniform(0.5, 20, (6, 6)), rng.uniform(0.5, 20, (6, 6))
        d = losses.depth_diff(p, s)
        assert (d >= 0).all() and (d < 1).all()
        np.testing.assert_allclose(losses.depth_diff(3.7 * p, 3.7 * s), d, atol=1e-7)

    def test_weight_mask(self, rng):
        d = losses.depth_diff(rng.uniform(1, 5, 10), rng.uniform(1, 5, 10))
        w = losses.weight_mask(d)
        assert (w > 0).all() and (w <= 1).all()

    def test_auto_mask_strict(self):
        np.testing.assert_array_equal(losses.auto_mask(np.array([0.1, 0.2, 0.3]), np.array([0.2, 0.2, 0.2])), [1, 0, 0])


class TestScalarTerms:
    def test_recon_perfect_is_zero(self, rng):
        a = rng.random((4, 4, 3))
        assert losses.recon_loss(a, a, 1.0, 1.0, 1.0) == pytest.approx(0.0, abs=1e-12)

    def test_recon_masks_zero(self, rng):
        a, b = rng.random((4, 4, 3)), rng.random((4, 4, 3))
        assert losses.recon_loss(a, b, 1.0, np.zeros((4, 4)), 1.0) == 0.0

    def test_recon_two_by_two_oracle(self):
        a = np.array([[0.1, 0.7], [0.4, 0.9]])
        b = np.array([[0.3, 0.2], [0.8, 0.5]])
        mw = np.array([[1.0, 0.5], [0.25, 0.8]])
        ma = np.array([[1.0, 0.0], [1.0, 1.0]])
        valid = np.array([[1.0, 1.0], [0.0, 1.0]])
        ssim = naive_ssim(a, b)
        total = 0.0
        for i, j in itertools.product(range(2), range(2)):
            sigma = 0.15 * abs(a[i, j] - b[i, j]) + 0.85 * (1 - ssim[i, j]) / 2
            total += mw[i, j] * ma[i, j] * valid[i, j] * sigma
        assert losses.recon_loss(a, b, mw, ma, valid) == pytest.approx(total / 4, rel=1e-12)

    def test_gc_examples(self):
        assert losses.gc_loss(np.zeros((3, 3)), np.ones((3, 3))) == 0.0
        assert losses.gc_loss(np.full((3, 3), 0.5), np.ones((3, 3))) == 0.5
        d = np.array([[0.1, 0.4], [0.2, 0.3]])
        m = np.array([[1.0, 0.0], [1.0, 1.0]])
        assert losses.gc_loss(d, m) == pytest.approx((0.1 + 0.2 + 0.3) / 4)

    def test_smooth_constant(self, rng):
        assert losses.smooth_loss(np.full((5, 6), 4.0), rng.random((5, 6, 3))) == 0.0

    def test_smooth_ramp(self):
        v, u = np.mgrid[0:5, 0:6].astype(float)
        depth = 2.0 + 0.3 * u
        assert losses.smooth_loss(depth, np.full((5, 6, 3), 0.5)) == pytest.approx(0.3 / 2.0, rel=1e-6)

    def test_smooth_edge_suppression(self):
        v, u = np.mgrid[0:4, 0:6].astype(float)
        depth = 2.0 + 0.3 * u
        flat = losses.smooth_loss(depth, np.zeros((4, 6)))
        edged = np.zeros((4, 6))
        edged[:, 3:] = 1.0
        # one of five column differences now sits on an edge of height 1
        assert losses.smooth_loss(depth, edged) == pytest.approx(flat * (4 + np.exp(-1)) / 5, rel=1e-6)


class TestAugLoss:
    def test_zero_at_labels(self):
        t, q = pose_to_tq(exp_twist([0.1, 0.2, -0.1, 0.02, 0.01, 0.03]))
        assert losses.aug_pose_loss(t, q, t, q) == 0.0

    def test_value_two_at_unit_errors(self):
        t0, t1 = np.zeros(3), np.array([0.0, 1.0, 0.0])
        q0 = np.array([1.0, 0, 0, 0])
        # a 120 degree turn about x sits at quaternion distance exactly 1
        q1 = np.array([0.5, np.sqrt(0.75), 0, 0])
        assert np.linalg.norm(q0 - q1) == pytest.approx(1.0)
        assert losses.aug_pose_loss(t1, q1, t0, q0) == pytest.approx(2.0)

    @settings(max_examples=30)
    @given(st.floats(0.01, 5.0))
    def test_stationary_at_log_error(self, e):
        tape = Tape()
        w = tape.var(np.array(np.log(e)))
        L = losses.aug_pose_loss_var(tape.const([e, 0, 0]), tape.const([1.0, 0, 0, 0]), tape.const([0.0, 0, 0]), tape.const([1.0, 0, 0, 0]), w, tape.const(0.0))
        tape.backward(L, [w])
        assert abs(float(w.grad)) < 1e-6

    def test_weights_change_value(self):
        t0, t1 = np.zeros(3), np.array([0.5, 0, 0])
        q = np.array([1.0, 0, 0, 0])
        val = losses.aug_pose_loss(t1, q, t0, q, AugLossParams(w_t=1.0, w_q=0.0))
        assert val == pytest.approx(0.5 * np.exp(-1.0) + 1.0)


def _bundle(pair, mode, levels=2, scales=2):
    cfg = LossConfig(association_mode=mode)
    tape = Tape()
    dt = [tape.var(d) for d in synthdata.depth_pyramid(pair.depth_t, scales)]
    dt1 = [tape.var(d) for d in synthdata.depth_pyramid(pair.depth_t1, scales)]
    xis = [tape.var(np.zeros(6)) for _ in range(levels)]
    poses = [twist_pose(xi, exp_twist([0.02 * m, 0, 0, 0, 0.002 * m, 0]) @ pair.pose) for m, xi in enumerate(xis)]
    b = losses.pair_losses(pair.image_t, pair.image_t1, dt, dt1, poses, pair.K, cfg)
    return tape, dt, dt1, xis, b, cfg


class TestAggregate:
    def test_single_level_modes_identical(self, small_pair):
        g = {}
        for mode in AssociationMode:
            tape, dt, dt1, xis, b, _ = _bundle(small_pair, mode, levels=1)
            tape.backward(b.recon_total, [*dt1])
            g[mode] = [d.grad for d in dt1]
        for a, c in zip(*g.values()):
            np.testing.assert_array_equal(a, c)

    def test_forward_values_identical(self, small_pair):
        vals = [float(_bundle(small_pair, m)[4].recon_total.value) for m in AssociationMode]
        assert vals[0] == vals[1]

    def test_stop_depth_gradient_is_finest_level_only(self, small_pair):
        tape, dt, dt1, xis, b, _ = _bundle(small_pair, AssociationMode.STOP_DEPTH_FOR_COARSE_POSE)
        tape.backward(b.recon_total, [*dt1, *xis])
        stop_grads = [d.grad.copy() for d in dt1]
        assert all(np.abs(x.grad).max() > 0 for x in xis)
        tape2, dt_2, dt1_2, xis_2, b2, _ = _bundle(small_pair, AssociationMode.ALL_DEPTH_ALL_POSE)
        finest = sum(v for (u, _), v in sorted(b2.recon.items()) if u == 2)
        tape2.backward(finest, [*dt1_2])
        for a, c in zip(stop_grads, dt1_2):
            np.testing.assert_array_equal(a, c.grad)


class TestTotal:
    def test_zero_terms(self, small_pair):
        tape = Tape()
        z = tape.const(0.0)
        b = losses.PairLossBundle({}, {}, z, z, z)
        assert float(losses.total_loss(b, 0.0).value) == 0.0

    def test_default_weights(self):
        c = LossConfig()
        assert (c.alpha_recon, c.alpha_gc, c.alpha_smooth, c.alpha_aug) == (1.0, 0.1, 0.5, 2.0)
        assert c.lambda_rho == 0.15

    def test_linear_in_each_term(self):
        tape = Tape()
        r, g, s = tape.const(0.3), tape.const(0.7), tape.const(1.1)
        cfg = LossConfig(alpha_recon=1.5, alpha_gc=0.2, alpha_smooth=0.4, alpha_aug=3.0)
        b = losses.PairLossBundle({}, {}, s, r, g)
        assert float(losses.total_loss(b, 0.05, cfg).value) == pytest.approx(1.5 * 0.3 + 0.2 * 0.7 + 0.4 * 1.1 + 3.0 * 0.05)

    def test_rejects_bad_config(self):
        with pytest.raises(InvalidArgumentError):
            LossConfig(alpha_gc=-1.0)
        with pytest.raises(InvalidArgumentError):
            LossConfig(lambda_rho=1.5)

    def test_ground_truth_masks_in_range(self, small_pair):
        b = _bundle(small_pair, AssociationMode.ALL_DEPTH_ALL_POSE)[4]
        for m in b.masks.values():
            for key in ("auto", "weight", "valid"):
                assert m[key].min() >= 0 and m[key].max() <= 1
            assert m["diff"].min() >= 0 and m["diff"].max() < 1

    def test_rows(self, small_pair):
        rows = _bundle(small_pair, "stop")[4].rows()
        assert {r[0] for r in rows} >= {"recon", "gc", "smooth", "recon_total", "gc_total"}
        assert sum(1 for r in rows if r[0] == "recon") == 4


def test_pose_var_identity_matches():
    tape = Tape()
    pv = PoseVar.constant(tape, Pose.identity())
    np.testing.assert_array_equal(pv.R.value, np.eye(3))
