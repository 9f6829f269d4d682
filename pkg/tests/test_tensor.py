import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_conv2d, naive_depthwise_conv2d
from sepconvlstm import tensor as T
from sepconvlstm.errors import DimensionError, UsageError


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class TestConv2d:
    def test_identity_scale(self):
        out = T.conv2d(np.ones((1, 1, 1)), np.full((1, 1, 1, 1), 2.0))
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 2.0

    def test_zero_padding_overlap_counts(self):
        out = T.conv2d(np.ones((1, 3, 3)), np.ones((1, 1, 3, 3)))
        assert out[0, 1, 1] == 9.0
        for y, x in [(0, 0), (0, 2), (2, 0), (2, 2)]:
            assert out[0, y, x] == 4.0
        assert out[0, 0, 1] == 6.0

    def test_matches_naive_loops(self, rng):
        x = rng.standard_normal((2, 5, 5))
        k = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        np.testing.assert_allclose(T.conv2d(x, k, b), naive_conv2d(x, k, b), rtol=0, atol=1e-12)

    def test_rectangular_kernel(self, rng):
        x = rng.standard_normal((2, 6, 4))
        k = rng.standard_normal((1, 2, 5, 1))
        np.testing.assert_allclose(T.conv2d(x, k), naive_conv2d(x, k), atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError, match="input channels"):
            T.conv2d(np.ones((2, 3, 3)), np.ones((1, 3, 3, 3)))

    def test_even_kernel_rejected(self):
        with pytest.raises(DimensionError, match="odd"):
            T.conv2d(np.ones((1, 3, 3)), np.ones((1, 1, 2, 2)))

    def test_bad_bias(self):
        with pytest.raises(DimensionError):
            T.conv2d(np.ones((1, 3, 3)), np.ones((2, 1, 1, 1)), np.ones(3))

    def test_linear_in_input(self, rng):
        k = rng.standard_normal((3, 2, 3, 3))
        x, y = rng.standard_normal((2, 2, 6, 6))
        a, b = rng.standard_normal(2)
        np.testing.assert_allclose(T.conv2d(a * x + b * y, k), a * T.conv2d(x, k) + b * T.conv2d(y, k),
                                   atol=1e-10)

    def test_ones_1x1_is_channel_sum(self, rng):
        x = rng.standard_normal((4, 5, 7))
        out = T.conv2d(x, np.ones((1, 4, 1, 1)))
        np.testing.assert_allclose(out[0], x.sum(axis=0), atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(c_in=st.integers(1, 4), c_out=st.integers(1, 4), h=st.integers(1, 8), w=st.integers(1, 8),
           kh=st.sampled_from([1, 3, 5]), kw=st.sampled_from([1, 3, 5]), seed=st.integers(0, 2**16))
    def test_random_shapes_match_oracle(self, c_in, c_out, h, w, kh, kw, seed):
        r = np.random.default_rng(seed)
        x = r.standard_normal((c_in, h, w))
        k = r.standard_normal((c_out, c_in, kh, kw))
        np.testing.assert_allclose(T.conv2d(x, k), naive_conv2d(x, k), atol=1e-12)


class TestDepthwise:
    def test_zero_channel_gives_bias(self, rng):
        x = np.zeros((2, 4, 4))
        x[0] = rng.standard_normal((4, 4))
        k = rng.standard_normal((2, 1, 3, 3))
        out = T.depthwise_conv2d(x, k, np.array([0.0, 0.7]))
        np.testing.assert_array_equal(out[1], np.full((4, 4), 0.7))
        np.testing.assert_array_equal(T.depthwise_conv2d(x, k)[1], np.zeros((4, 4)))

    def test_single_channel_equals_conv2d(self, rng):
        x = rng.standard_normal((1, 5, 5))
        k = rng.standard_normal((1, 1, 3, 3))
        np.testing.assert_allclose(T.depthwise_conv2d(x, k), T.conv2d(x, k), atol=1e-12)

    def test_matches_naive_loops(self, rng):
        x = rng.standard_normal((4, 6, 6))
        k = rng.standard_normal((4, 1, 3, 3))
        np.testing.assert_allclose(T.depthwise_conv2d(x, k), naive_depthwise_conv2d(x, k), atol=1e-12)

    def test_channel_independence(self, rng):
        x = rng.standard_normal((3, 5, 5))
        k = rng.standard_normal((3, 1, 3, 3))
        base = T.depthwise_conv2d(x, k)
        x2 = x.copy()
        x2[0] += rng.standard_normal((5, 5))
        x2[2] *= -3.0
        np.testing.assert_array_equal(T.depthwise_conv2d(x2, k)[1], base[1])

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            T.depthwise_conv2d(np.ones((2, 3, 3)), np.ones((3, 1, 3, 3)))
        with pytest.raises(DimensionError):
            T.depthwise_conv2d(np.ones((2, 3, 3)), np.ones((2, 2, 3, 3)))


class TestBackwardKernels:
    @pytest.mark.parametrize("depthwise", [False, True])
    def test_against_finite_differences(self, rng, depthwise):
        x = rng.standard_normal((3, 4, 5))
        k = rng.standard_normal((3, 1, 3, 3) if depthwise else (2, 3, 3, 1))
        fwd = T.depthwise_conv2d if depthwise else T.conv2d
        bwd = T.depthwise_conv2d_backward if depthwise else T.conv2d_backward
        g = rng.standard_normal(fwd(x, k).shape)
        dx, dk = bwd(x, k, g)
        # linear maps: finite differences are exact up to roundoff
        for arr, grad in [(x, dx), (k, dk)]:
            num = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + 1.0
                up = np.sum(g * fwd(x, k))
                arr[idx] = orig - 1.0
                down = np.sum(g * fwd(x, k))
                arr[idx] = orig
                num[idx] = (up - down) / 2.0
            np.testing.assert_allclose(grad, num, atol=1e-10)


class TestElementwise:
    def test_hadamard_identity(self, rng):
        a = rng.standard_normal((2, 3, 4))
        np.testing.assert_array_equal(T.hadamard(a, np.ones_like(a)), a)

    def test_activations_at_zero(self):
        z = np.zeros((1, 1, 1))
        assert T.sigmoid(z)[0, 0, 0] == 0.5
        assert T.tanh(z)[0, 0, 0] == 0.0

    def test_add_inverse(self, rng):
        a = rng.standard_normal((2, 3, 4))
        np.testing.assert_array_equal(T.add(a, -a), np.zeros_like(a))

    def test_sigmoid_matches_definition(self, rng):
        a = rng.standard_normal((2, 3, 4)) * 5
        np.testing.assert_allclose(T.sigmoid(a), 1.0 / (1.0 + np.exp(-a)), rtol=1e-12, atol=1e-15)

    def test_sigmoid_saturates_without_overflow(self):
        with np.errstate(all="raise"):
            out = T.sigmoid(np.array([[[-1000.0, 1000.0]]]))
        np.testing.assert_array_equal(out, [[[0.0, 1.0]]])

    @pytest.mark.parametrize("op", [T.hadamard, T.add])
    def test_shape_mismatch(self, op):
        with pytest.raises(DimensionError):
            op(np.ones((1, 2, 2)), np.ones((1, 2, 3)))


class TestFlopCounter:
    def test_counts_by_kind(self):
        x = np.ones((2, 3, 3))
        with T.FlopCounter() as fc:
            T.conv2d(x, np.ones((4, 2, 3, 3)))
            T.depthwise_conv2d(x, np.ones((2, 1, 3, 3)))
            T.hadamard(x, x)
            T.add(x, x)
            T.sigmoid(x)
            T.tanh(x)
        assert fc.counts == {
            "conv": 2 * 9 * 2 * 4 * 9 + 2 * 9 * 2 * 9,
            "hadamard": 18,
            "add": 18,
            "sigmoid": 5 * 18,
            "tanh": 5 * 18,
        }

    def test_inactive_counter_sees_nothing(self):
        fc = T.FlopCounter()
        T.tanh(np.ones((1, 2, 2)))
        with fc:
            pass
        assert fc.total == 0

    def test_reading_without_instrumentation_is_usage_error(self):
        with pytest.raises(UsageError, match="instrumentation disabled"):
            T.FlopCounter().report()

    def test_nested_counters_are_scoped(self):
        x = np.ones((1, 2, 2))
        with T.FlopCounter() as outer:
            T.add(x, x)
            with T.FlopCounter() as inner:
                T.add(x, x)
        assert inner.counts["add"] == 4
        assert outer.counts["add"] == 4


class TestTensorFile:
    def test_round_trip(self, rng):
        x = rng.standard_normal((3, 4, 5))
        buf = io.BytesIO()
        T.write_tensor(buf, x)
        raw = buf.getvalue()
        assert raw[:4] == b"TNSR" and raw[4] == 1
        assert int.from_bytes(raw[5:9], "little") == 3
        assert len(raw) == 4 + 1 + 12 + 8 * x.size
        np.testing.assert_array_equal(T.read_tensor(io.BytesIO(raw)), x)

    def test_file_round_trip(self, tmp_path, rng):
        x = rng.standard_normal((1, 2, 2))
        T.save_tensor(tmp_path / "x.tnsr", x)
        np.testing.assert_array_equal(T.load_tensor(tmp_path / "x.tnsr"), x)

    def test_rejects_bad_magic_and_truncation(self, rng):
        buf = io.BytesIO()
        T.write_tensor(buf, rng.standard_normal((1, 2, 2)))
        raw = buf.getvalue()
        with pytest.raises(ValueError, match="magic"):
            T.read_tensor(io.BytesIO(b"XXXX" + raw[4:]))
        with pytest.raises(ValueError, match="truncated"):
            T.read_tensor(io.BytesIO(raw[:-3]))
