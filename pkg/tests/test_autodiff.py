import numpy as np
import pytest

from viewsynth import autodiff as ad
from viewsynth import imagebuf, losses, synthdata
from viewsynth.autodiff import Tape
from viewsynth.errors import InvalidArgumentError
from viewsynth.geometry import exp_twist
from viewsynth.warp import PoseVar, inverse_warp_var, twist_pose


def grad_of(fn, *values):
    tape = Tape()
    vs = [tape.var(v) for v in values]
    out = fn(*vs)
    tape.backward(out, vs)
    return [v.grad for v in vs]


def fd_grad(fn, x, h=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (fn(xp) - fn(xm)) / (2 * h)
    return g


def plain(fn, *values):
    tape = Tape(record=False)
    return float(fn(*(tape.const(v) for v in values)).value)


class TestPrimitives:
    def test_product_rule(self, rng):
        x, y = rng.random(4), rng.random(4)
        gx, gy = grad_of(lambda a, b: (a * b).sum(), x, y)
        np.testing.assert_allclose(gx, y)
        np.testing.assert_allclose(gy, x)

    @pytest.mark.parametrize(
        "fn",
        [
            lambda a: ad.exp(a).sum(),
            lambda a: ad.log(a + 2.0).sum(),
            lambda a: ad.sqrt(a + 2.0).sum(),
            lambda a: (a / (a * a + 1.0)).mean(),
            lambda a: ad.abs_(a - 0.5).sum(),
            lambda a: ad.clamp(a, 0.2, 0.8).sum(),
            lambda a: ad.amin(a * a + a),
            lambda a: ad.box_mean(a.reshape(3, 4), 1).sum() * ad.box_mean(a.reshape(3, 4), 1)[1, 2],
            lambda a: (ad.upsample(a.reshape(3, 4), (6, 8)) ** 2).sum(),
            lambda a: (a.reshape(3, 4) @ a.reshape(4, 3)).sum(),
        ],
    )
    def test_matches_finite_differences(self, rng, fn):
        x = rng.uniform(0.05, 0.95, 12)
        (g,) = grad_of(fn, x)
        np.testing.assert_allclose(g, fd_grad(lambda z: plain(fn, z), x), rtol=1e-5, atol=1e-8)

    def test_bilinear_coordinates(self, rng):
        img = rng.random((5, 6))

        def fn(uv):
            t = Tape(record=False)
            return float(ad.bilinear_sample(t.const(img), t.const(uv[:3]), t.const(uv[3:]))[0].sum().value)

        uv = np.array([1.3, 2.6, 4.2, 0.4, 3.7, 2.1])
        tape = Tape()
        u, v = tape.var(uv[:3]), tape.var(uv[3:])
        out, _ = ad.bilinear_sample(tape.const(img), u, v)
        tape.backward(out.sum(), [u, v])
        np.testing.assert_allclose(np.concatenate([u.grad, v.grad]), fd_grad(fn, uv), rtol=1e-6)

    def test_forward_matches_untaped(self, rng):
        a, b = rng.random((6, 7, 3)), rng.random((6, 7, 3))
        tape = Tape()
        taped = losses.ssim_map_var(tape.var(a), tape.var(b)).value
        np.testing.assert_array_equal(taped, losses.ssim_map(a, b))
        np.testing.assert_array_equal(ad.box_mean(tape.var(a), 1).value, imagebuf.box_mean(a, 1))

    def test_ssim_of_identical_is_one(self, rng):
        a = rng.random((6, 7, 3))
        tape = Tape()
        np.testing.assert_allclose(losses.ssim_map_var(tape.var(a), tape.var(a)).value, 1.0)

    def test_depth_diff_taped_matches_plain(self, rng):
        p, s = rng.uniform(1, 10, (4, 5)), rng.uniform(1, 10, (4, 5))
        tape = Tape()
        np.testing.assert_array_equal(losses.depth_diff_var(tape.var(p), tape.var(s)).value, losses.depth_diff(p, s))

    def test_comparison_carries_no_gradient(self, rng):
        tape = Tape()
        x = tape.var(rng.random(5))
        m = ad.less(x, 0.5)
        assert isinstance(m, np.ndarray)
        out = (x * m).sum()
        tape.backward(out, [x])
        np.testing.assert_array_equal(x.grad, m)

    def test_guarded_division_is_finite(self):
        tape = Tape()
        x = tape.var(np.array([1.0]))
        out = x / tape.const(np.array([0.0]))
        assert np.isfinite(out.value).all()


class TestBackward:
    def test_non_scalar_rejected(self):
        tape = Tape()
        x = tape.var(np.ones(3))
        with pytest.raises(InvalidArgumentError):
            tape.backward(x * 2.0, [x])

    def test_unreachable_leaf_gets_zero(self):
        tape = Tape()
        x, y = tape.var(np.ones(3)), tape.var(np.ones(2))
        tape.backward((x * 2.0).sum(), [x, y])
        np.testing.assert_array_equal(y.grad, 0.0)

    def test_mixing_tapes_rejected(self):
        a, b = Tape().var(1.0), Tape().var(2.0)
        with pytest.raises(InvalidArgumentError):
            a + b


class TestStopGradient:
    def test_value_unchanged(self):
        tape = Tape()
        x = tape.var(np.array([1.5, -2.0]))
        np.testing.assert_array_equal(ad.stop_gradient(x).value, x.value)

    def test_blocks_one_factor(self):
        tape = Tape()
        x = tape.var(np.array(3.0))
        tape.backward(ad.stop_gradient(x) * x, [x])
        assert x.grad == pytest.approx(3.0)

    def test_sibling_path_unaffected(self):
        tape = Tape()
        x = tape.var(np.array(3.0))
        tape.backward(ad.stop_gradient(x) * 5.0 + x * x, [x])
        assert x.grad == pytest.approx(6.0)


def test_photometric_pixel_gradient():
    rng = np.random.default_rng(3)
    a, b = rng.random((6, 6, 3)), rng.random((6, 6, 3))

    def f(x):
        t = Tape(record=False)
        return float(losses.photometric_var(t.const(x), t.const(b)).mean().value)

    tape = Tape()
    va = tape.var(a)
    tape.backward(losses.photometric_var(va, tape.const(b)).mean(), [va])
    i = (2, 3, 1)
    h = 1e-4
    ap, am = a.copy(), a.copy()
    ap[i] += h
    am[i] -= h
    fd = (f(ap) - f(am)) / (2 * h)
    assert abs(va.grad[i] - fd) / abs(fd) < 1e-4


def test_twist_gradient_on_small_pair():
    K = synthdata.default_intrinsics(8, 8)
    scene = synthdata.random_scene(4, focal=K.fx)
    T = synthdata.sample_motion(np.random.default_rng(4), 2.0, 0.2)
    pair = synthdata.make_pair(scene, T, K)

    def build(tape, v):
        P = twist_pose(v["xi"], T)
        w = inverse_warp_var(tape.const(pair.image_t), tape.const(pair.depth_t1), P, K)
        sigma = losses.photometric_var(w.warped, tape.const(pair.image_t1))
        return (sigma * w.valid).mean()

    rep = ad.gradcheck(build, {"xi": np.full(6, 1e-3)}, h=1e-6)
    assert rep.checked["xi"] > 0
    assert rep.worst < 1e-3


def test_gradcheck_reports_skips_at_kinks():
    rep = ad.gradcheck(lambda t, v: ad.abs_(v["x"]).sum(), {"x": np.array([0.0, 1.0])}, h=1e-3)
    assert rep.skipped["x"] == 1 and rep.checked["x"] == 1


def test_pose_var_constant_matches_pose():
    P = exp_twist([0.1, 0.2, 0.3, 0.01, 0.02, 0.03])
    tape = Tape()
    pv = PoseVar.constant(tape, P)
    np.testing.assert_array_equal(pv.R.value, P.rotation)
    np.testing.assert_array_equal(pv.t.value, P.translation)
