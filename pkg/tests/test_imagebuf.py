import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from viewsynth import imagebuf
from viewsynth.errors import InvalidArgumentError


def affine_image(a, b, c, H=12, W=15):
    v, u = np.mgrid[0:H, 0:W].astype(float)
    return a * u + b * v + c


class TestBilinearSample:
    def test_integer_coordinates_exact(self, rng):
        img = rng.random((6, 7, 3))
        vals, ok = imagebuf.bilinear_sample(img, np.array([3.0]), np.array([2.0]))
        assert ok.all()
        np.testing.assert_array_equal(vals[0], img[2, 3])

    def test_midpoint(self):
        img = np.array([[0.0, 1.0]])
        vals, ok = imagebuf.bilinear_sample(np.vstack([img, img]), np.array([0.5]), np.array([0.0]))
        assert vals[0] == pytest.approx(0.5)

    def test_last_row_and_column_are_inside(self, rng):
        img = rng.random((5, 6))
        vals, ok = imagebuf.bilinear_sample(img, np.array([5.0]), np.array([4.0]))
        assert ok[0] and vals[0] == img[4, 5]

    def test_out_of_bounds_is_zero_and_invalid(self, rng):
        img = rng.random((5, 6)) + 1
        vals, ok = imagebuf.bilinear_sample(img, np.array([-0.5, 5.5, 2.0]), np.array([1.0, 1.0, 4.01]))
        assert not ok.any()
        np.testing.assert_array_equal(vals, 0.0)

    @settings(max_examples=50)
    @given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(0, 14), st.floats(0, 11))
    def test_reproduces_affine(self, a, b, c, u, v):
        img = affine_image(a, b, c)
        vals, ok = imagebuf.bilinear_sample(img, np.array([u]), np.array([v]))
        assert ok[0]
        assert vals[0] == pytest.approx(a * u + b * v + c, abs=1e-9)

    def test_weights_sum_to_one(self, rng):
        img = np.ones((8, 9))
        u, v = rng.uniform(0, 8, 100), rng.uniform(0, 7, 100)
        vals, _ = imagebuf.bilinear_sample(img, u, v)
        np.testing.assert_allclose(vals, 1.0)


class TestUpsample:
    def test_constant(self):
        np.testing.assert_allclose(imagebuf.upsample(np.full((3, 4), 2.5), (12, 16)), 2.5)

    def test_ramp_stays_ramp(self):
        up = imagebuf.upsample(affine_image(1.0, 2.0, 0.0, 4, 5), (8, 10))
        gx = np.diff(up, axis=1)
        gy = np.diff(up, axis=0)
        np.testing.assert_allclose(gx, gx[0, 0])
        np.testing.assert_allclose(gy, gy[0, 0])

    def test_identity_size(self, rng):
        a = rng.random((4, 5))
        np.testing.assert_array_equal(imagebuf.upsample(a, (4, 5)), a)

    def test_shrinking_rejected(self):
        with pytest.raises(InvalidArgumentError):
            imagebuf.upsample(np.zeros((4, 4)), (2, 8))


class TestGradients:
    def test_constant_is_zero(self):
        assert not imagebuf.grad_x(np.full((4, 5), 3.0)).any()
        assert not imagebuf.grad_y(np.full((4, 5), 3.0)).any()

    def test_ramp_slope(self):
        img = affine_image(0.3, -0.7, 1.0, 5, 6)
        np.testing.assert_allclose(imagebuf.grad_x(img)[:, :-1], 0.3)
        np.testing.assert_allclose(imagebuf.grad_y(img)[:-1], -0.7)
        assert not imagebuf.grad_x(img)[:, -1].any()
        assert not imagebuf.grad_y(img)[-1].any()

    def test_width_one(self):
        assert not imagebuf.grad_x(np.arange(5.0)[:, None]).any()


class TestDilate:
    def test_all_ones_and_zeros(self):
        np.testing.assert_array_equal(imagebuf.dilate(np.ones((4, 4)), 1, 2), 1)
        np.testing.assert_array_equal(imagebuf.dilate(np.zeros((4, 4)), 1, 2), 0)

    def test_single_pixel(self):
        m = np.zeros((5, 5))
        m[2, 2] = 1
        expected = np.zeros((5, 5))
        expected[1:4, 1:4] = 1
        np.testing.assert_array_equal(imagebuf.dilate(m, 1, 1), expected)

    @settings(max_examples=30)
    @given(hnp.arrays(bool, (6, 7)), hnp.arrays(bool, (6, 7)))
    def test_monotone(self, a, b):
        small, big = a & b, a | b
        assert np.all(imagebuf.dilate(small, 1, 2) <= imagebuf.dilate(big, 1, 2))


class TestBoxMean:
    def test_constant(self):
        np.testing.assert_allclose(imagebuf.box_mean(np.full((5, 5), 0.3)), 0.3)

    def test_impulse(self):
        m = np.zeros((5, 5))
        m[2, 2] = 1
        out = imagebuf.box_mean(m, 1)
        np.testing.assert_allclose(out[1:4, 1:4], 1 / 9)
        assert out.sum() == pytest.approx(1.0)

    def test_affine_interior(self):
        img = affine_image(0.5, 0.25, 1.0, 7, 8)
        np.testing.assert_allclose(imagebuf.box_mean(img, 1)[1:-1, 1:-1], img[1:-1, 1:-1])

    def test_adjoint(self, rng):
        x, y = rng.random((6, 7)), rng.random((6, 7))
        lhs = np.sum(imagebuf.box_mean(x, 2) * y)
        rhs = np.sum(x * imagebuf.box_mean_adjoint(y, 2))
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_downsample_block_mean():
    a = np.arange(16.0).reshape(4, 4)
    np.testing.assert_allclose(imagebuf.downsample2(a), [[2.5, 4.5], [10.5, 12.5]])
