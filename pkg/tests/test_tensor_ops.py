"""Unit and property tests for the elementary tensor kernels.

Expected values come from independent oracles: a naive quadruple-loop
convolution, direct evaluation of the Gaussian formula, and a
hand-worked bilinear interpolation case.
"""

import numpy as np
import pytest

from hagxai.tensor_ops import (
    GaussianKernelSpec,
    area_normalize,
    as_map2d,
    convolve_same,
    gaussian_kernel,
    max_min_normalize,
    piecewise_linear,
    resize_bilinear,
)


def conv_loop_oracle(x, k):
    """Naive quadruple-loop correlation with zero padding, same output size."""
    h, w = x.shape
    kh, kw = k.shape
    ch, cw = (kh - 1) // 2, (kw - 1) // 2
    out = np.zeros((h, w), dtype=np.float64)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for a in range(kh):
                for b in range(kw):
                    ii = i + a - ch
                    jj = j + b - cw
                    if 0 <= ii < h and 0 <= jj < w:
                        acc += float(k[a, b]) * float(x[ii, jj])
            out[i, j] = acc
    return out


class TestMaxMinNormalize:
    def test_affine_map_of_extremes(self):
        out = max_min_normalize([[0, 2], [4, 8]])
        np.testing.assert_allclose(out, [[0, 0.25], [0.5, 1.0]], atol=1e-7)

    def test_already_normalized_unchanged(self):
        x = np.array([[0, 1], [0.5, 0.25]], dtype=np.float32)
        np.testing.assert_array_equal(max_min_normalize(x), x)

    def test_constant_map_returns_zeros(self):
        np.testing.assert_array_equal(max_min_normalize([[3, 3], [3, 3]]), np.zeros((2, 2)))

    def test_range_and_idempotence(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            x = rng.normal(size=(5, 9)).astype(np.float32)
            out = max_min_normalize(x)
            assert out.min() >= 0.0 and out.max() <= 1.0
            np.testing.assert_allclose(max_min_normalize(out), out, atol=1e-6)


class TestAreaNormalize:
    def test_zero_map_stays_zero(self):
        np.testing.assert_array_equal(area_normalize(np.zeros((2, 2)), 1e-8), np.zeros((2, 2)))

    def test_uniform_map_approaches_mean_split(self):
        out = area_normalize(np.ones((2, 2)), 1e-12)
        np.testing.assert_allclose(out, 0.25, atol=1e-9)

    def test_direct_formula(self):
        out = area_normalize(np.array([[2.0, 0.0], [0.0, 2.0]]), 1e-8)
        np.testing.assert_allclose(out, [[2 / (4 + 1e-8), 0], [0, 2 / (4 + 1e-8)]], rtol=1e-6)

    def test_output_mass_matches_ratio(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            x = rng.uniform(0, 5, size=(6, 6)).astype(np.float32)
            out = area_normalize(x)
            total = np.sum(x.astype(np.float64))
            want = total / (total + 1e-8)
            assert 0.0 < want < 1.0
            assert np.sum(out, dtype=np.float64) == pytest.approx(want, rel=1e-6)

    def test_requires_positive_epsilon(self):
        with pytest.raises(ValueError):
            area_normalize(np.ones((2, 2)), 0.0)


class TestPiecewiseLinear:
    def test_relu_identity_abs(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            x = rng.normal(size=(4, 4, 3)).astype(np.float32)
            np.testing.assert_array_equal(piecewise_linear(x, 1, 0), np.maximum(x, 0))
            np.testing.assert_array_equal(piecewise_linear(x, 1, 1), x)
            np.testing.assert_array_equal(piecewise_linear(x, 1, -1), np.abs(x))

    def test_quoted_examples(self):
        np.testing.assert_array_equal(piecewise_linear(np.array([-2.0, 3.0]).reshape(1, 2), 1, 0), [[0, 3]])
        np.testing.assert_array_equal(piecewise_linear(np.array([-2.0, 3.0]).reshape(1, 2), 1, -1), [[2, 3]])

    def test_general_slopes(self):
        x = np.array([[-4.0, 0.0, 5.0]])
        np.testing.assert_allclose(piecewise_linear(x, 0.5, 2.0), [[-8.0, 0.0, 2.5]], atol=1e-7)


class TestGaussianKernel:
    def test_center_is_amplitude(self):
        for v in (0.1, 1.0, 17.3, -2.0):
            k = gaussian_kernel(GaussianKernelSpec(size=5, amplitude=1.0, variance=v))
            assert k[2, 2] == pytest.approx(1.0)

    def test_symmetry(self):
        k = gaussian_kernel(GaussianKernelSpec(size=7, amplitude=2.5, variance=4.0))
        np.testing.assert_allclose(k, k[::-1, :], atol=0)
        np.testing.assert_allclose(k, k[:, ::-1], atol=0)
        np.testing.assert_allclose(k, k.T, atol=0)

    def test_corner_value_direct_formula(self):
        k = gaussian_kernel(GaussianKernelSpec(size=3, amplitude=2.0, variance=3.0, epsilon=1e-8))
        assert k[0, 0] == pytest.approx(2.0 * np.exp(-2.0 / 6.00000001), rel=1e-6)

    def test_monotone_decrease_with_radius(self):
        spec = GaussianKernelSpec(size=9, amplitude=1.0, variance=2.0)
        k = gaussian_kernel(spec).astype(np.float64)
        c = (spec.size - 1) / 2
        yy, xx = np.mgrid[0 : spec.size, 0 : spec.size]
        r2 = (yy - c) ** 2 + (xx - c) ** 2
        order = np.argsort(r2.ravel())
        values = k.ravel()[order]
        assert np.all(np.diff(values) <= 1e-12)

    def test_amplitude_scaling_exact(self):
        base = gaussian_kernel(GaussianKernelSpec(size=5, amplitude=1.0, variance=2.0))
        scaled = gaussian_kernel(GaussianKernelSpec(size=5, amplitude=3.0, variance=2.0))
        np.testing.assert_array_equal(scaled, np.float32(3.0) * base)

    def test_negative_variance_uses_absolute_value(self):
        pos = gaussian_kernel(GaussianKernelSpec(size=5, amplitude=1.0, variance=2.0))
        neg = gaussian_kernel(GaussianKernelSpec(size=5, amplitude=1.0, variance=-2.0))
        np.testing.assert_array_equal(pos, neg)

    def test_even_size_rejected(self):
        with pytest.raises(ValueError):
            GaussianKernelSpec(size=4)

    def test_size_one_is_delta(self):
        np.testing.assert_array_equal(gaussian_kernel(GaussianKernelSpec(size=1)), [[1.0]])


class TestConvolveSame:
    def test_delta_kernel_identity(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(6, 7)).astype(np.float32)
        delta = np.zeros((3, 3), dtype=np.float32)
        delta[1, 1] = 1.0
        np.testing.assert_allclose(convolve_same(x, delta), x, atol=1e-7)

    def test_constant_map_interior(self):
        k = np.full((3, 3), 0.5, dtype=np.float32)
        out = convolve_same(np.full((5, 5), 2.0, dtype=np.float32), k)
        assert out[2, 2] == pytest.approx(2.0 * k.sum())

    def test_center_impulse_uniform_kernel(self):
        x = np.zeros((3, 3), dtype=np.float32)
        x[1, 1] = 1.0
        out = convolve_same(x, np.full((3, 3), 1 / 9, dtype=np.float32))
        np.testing.assert_allclose(out, 1 / 9, atol=1e-7)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            x = rng.normal(size=(16, 16)).astype(np.float32)
            k = rng.normal(size=(5, 5)).astype(np.float32)
            got = convolve_same(x, k)
            want = conv_loop_oracle(x, k)
            np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-5)

    def test_linearity(self):
        rng = np.random.default_rng(23)
        u = rng.normal(size=(8, 8)).astype(np.float32)
        w = rng.normal(size=(8, 8)).astype(np.float32)
        k = rng.normal(size=(3, 3)).astype(np.float32)
        lhs = convolve_same(2.0 * u + 3.0 * w, k)
        rhs = 2.0 * convolve_same(u, k) + 3.0 * convolve_same(w, k)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-5, atol=1e-5)

    def test_stack_applies_per_channel(self):
        rng = np.random.default_rng(29)
        stack = rng.normal(size=(6, 6, 3)).astype(np.float32)
        k = rng.normal(size=(3, 3)).astype(np.float32)
        out = convolve_same(stack, k)
        for c in range(3):
            np.testing.assert_allclose(out[:, :, c], convolve_same(stack[:, :, c], k), atol=1e-6)

    def test_kernel_larger_than_map(self):
        x = np.ones((2, 2), dtype=np.float32)
        k = np.ones((5, 5), dtype=np.float32)
        np.testing.assert_allclose(convolve_same(x, k), conv_loop_oracle(x, k), atol=1e-6)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            convolve_same(np.ones((4, 4)), np.ones((2, 2)))


class TestResizeBilinear:
    def test_identity_same_size(self):
        rng = np.random.default_rng(31)
        x = rng.normal(size=(5, 8)).astype(np.float32)
        np.testing.assert_array_equal(resize_bilinear(x, 5, 8), x)

    def test_constant_preserved(self):
        out = resize_bilinear(np.full((3, 4), 1.5, dtype=np.float32), 7, 9)
        np.testing.assert_allclose(out, 1.5, atol=1e-6)

    def test_hand_case_2x2_to_3x3(self):
        out = resize_bilinear(np.array([[0.0, 1.0], [1.0, 2.0]]), 3, 3)
        expected = np.array([[0.0, 0.5, 1.0], [0.5, 1.0, 1.5], [1.0, 1.5, 2.0]])
        np.testing.assert_allclose(out, expected, atol=1e-6)

    def test_corners_align(self):
        rng = np.random.default_rng(37)
        x = rng.uniform(size=(4, 6)).astype(np.float32)
        out = resize_bilinear(x, 9, 13)
        assert out[0, 0] == pytest.approx(x[0, 0], abs=1e-6)
        assert out[0, -1] == pytest.approx(x[0, -1], abs=1e-6)
        assert out[-1, 0] == pytest.approx(x[-1, 0], abs=1e-6)
        assert out[-1, -1] == pytest.approx(x[-1, -1], abs=1e-6)

    def test_single_row_output(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
        out = resize_bilinear(x, 1, 2)
        np.testing.assert_allclose(out, [[1.0, 2.0]], atol=1e-6)


class TestValidation:
    def test_rejects_nan(self):
        bad = np.array([[1.0, np.nan]])
        with pytest.raises(ValueError):
            as_map2d(bad)

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            as_map2d(np.zeros(4))
