import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from classbd.autograd import Tensor, finite_difference_check
from classbd.filters import (
    FrequencyDomainFilter,
    QuadraticConvLayer,
    TimeDomainFilter,
    classbd_forward,
    freq_filter_forward,
    qconv_forward,
    relinear_init,
    time_filter_forward,
)
from classbd.params import ParameterStore, load_checkpoint, save_checkpoint
from classbd.signals import TimeSeries, ValidationError


def randomize(layer, seed, scale=0.3):
    rng = np.random.default_rng(seed)
    for name, p in layer.params.items():
        p.data[...] = rng.standard_normal(p.shape) * scale


def sum_product_oracle(layer, x, act=lambda v: v):
    """Per-position double loop over output positions and taps (single channel)."""
    k = layer.kernel_size
    left = layer.padding[0]
    w1, w2, w3 = (getattr(layer, f"W{i}").data[0, 0] for i in (1, 2, 3))
    b1, b2, b3 = (float(getattr(layer, f"b{i}").data[0]) for i in (1, 2, 3))
    n = x.size
    out = np.zeros(n)
    for i in range(n):
        s1 = s2 = s3 = 0.0
        for j in range(k):
            m = i + j - left
            if 0 <= m < n:
                s1 += w1[j] * x[m]
                s2 += w2[j] * x[m]
                s3 += w3[j] * x[m] * x[m]
        out[i] = act((s1 + b1) * (s2 + b2) + s3 + b3)
    return out


def linear_conv(x, w, b, left):
    """Same-padded multi-channel cross-correlation, (c_in, n) -> (c_out, n)."""
    c_out, c_in, k = w.shape
    n = x.shape[1]
    xp = np.pad(x, ((0, 0), (left, k - 1 - left)))
    out = np.zeros((c_out, n))
    for o in range(c_out):
        for c in range(c_in):
            out[o] += np.correlate(xp[c], w[o, c], mode="valid")
        out[o] += b[o]
    return out


class TestQuadraticLayer:
    def test_sum_product_equivalence(self):
        worst = 0.0
        for seed in range(100):
            layer = QuadraticConvLayer(1, 1, 5)
            randomize(layer, seed)
            x = np.random.default_rng(1000 + seed).standard_normal(32)
            out = qconv_forward(layer, x[None])[0]
            worst = max(worst, np.abs(out - sum_product_oracle(layer, x)).max())
        assert worst <= 1e-10

    @pytest.mark.parametrize("act,fn", [("tanh", np.tanh), ("relu", lambda v: np.maximum(v, 0))])
    def test_activation(self, act, fn):
        layer = QuadraticConvLayer(1, 1, 4, activation=act)
        randomize(layer, 3)
        x = np.random.default_rng(0).standard_normal(20)
        np.testing.assert_allclose(qconv_forward(layer, x[None])[0], sum_product_oracle(layer, x, fn), atol=1e-12)

    def test_zero_input(self):
        layer = QuadraticConvLayer(1, 3, 7)
        randomize(layer, 0)
        out = qconv_forward(layer, np.zeros((1, 16)))
        expect = layer.b1.data * layer.b2.data + layer.b3.data
        np.testing.assert_allclose(out, np.repeat(expect[:, None], 16, axis=1), atol=1e-15)

    def test_channel_mismatch(self):
        with pytest.raises(ValidationError):
            QuadraticConvLayer(2, 3, 5)(Tensor(np.zeros((1, 1, 10))))

    def test_unknown_activation(self):
        with pytest.raises(ValidationError):
            QuadraticConvLayer(1, 1, 3, activation="gelu")

    @pytest.mark.parametrize("k", [1, 4, 5, 64])
    def test_same_length(self, k):
        layer = QuadraticConvLayer(1, 2, k)
        assert qconv_forward(layer, np.ones((1, 100))).shape == (2, 100)


class TestReLinear:
    def test_exact_values(self):
        layer = QuadraticConvLayer(4, 8, 64)
        relinear_init(layer, seed=0)
        assert np.all(layer.b2.data == 1.0)
        assert not layer.W2.data.any() and not layer.W3.data.any() and not layer.b3.data.any()
        assert np.abs(layer.b1.data).max() <= math.sqrt(1 / 64)

    def test_w1_moment(self):
        layer = QuadraticConvLayer(40, 40, 64)  # 102400 draws
        relinear_init(layer, seed=1)
        assert abs(layer.W1.data.std() / math.sqrt(1 / (32 * 64)) - 1) <= 0.05

    def test_reduces_to_linear(self):
        layer = QuadraticConvLayer(2, 3, 9)
        relinear_init(layer, seed=4)
        x = np.random.default_rng(0).standard_normal((2, 50))
        ref = linear_conv(x, layer.W1.data, layer.b1.data, layer.padding[0])
        assert np.abs(qconv_forward(layer, x) - ref).max() <= 1e-12

    def test_time_filter_two_layer_oracle(self):
        tf = TimeDomainFilter(seed=3)
        x = np.random.default_rng(1).standard_normal(2048)
        l1, l2 = tf.layer1, tf.layer2
        h = linear_conv(x[None], l1.W1.data, l1.b1.data, l1.padding[0])
        ref = linear_conv(h, l2.W1.data, l2.b1.data, l2.padding[0])[0]
        assert np.abs(time_filter_forward(tf, x) - ref).max() <= 1e-10


class TestTimeFilter:
    @pytest.mark.parametrize("n", [512, 1024, 2048])
    def test_length(self, n):
        out = time_filter_forward(TimeDomainFilter(), TimeSeries(np.ones(n), 1000.0))
        assert isinstance(out, TimeSeries) and len(out) == n

    def test_identity_init(self):
        tf = TimeDomainFilter()
        tf.identity_init()
        x = np.random.default_rng(0).standard_normal((3, 256))
        np.testing.assert_allclose(time_filter_forward(tf, x), x, atol=1e-12)

    def test_rejects_multichannel(self):
        with pytest.raises(ValidationError):
            TimeDomainFilter()(Tensor(np.zeros((1, 2, 8))))


class TestFrequencyFilter:
    def test_identity(self):
        x = np.random.default_rng(0).standard_normal(2048)
        np.testing.assert_allclose(freq_filter_forward(FrequencyDomainFilter(2048), x), x, atol=1e-9)

    def test_notch(self):
        n, k = 256, 12
        ff = FrequencyDomainFilter(n)
        ff.gain_re.data[k] = 0.0
        x = np.cos(2 * np.pi * k * np.arange(n) / n)
        assert np.linalg.norm(freq_filter_forward(ff, x)) <= 1e-6

    @pytest.mark.parametrize("n", [64, 63])
    def test_circular_convolution(self, n):
        rng = np.random.default_rng(n)
        ff = FrequencyDomainFilter(n)
        ff.gain_re.data[...] = rng.standard_normal(ff.num_bins)
        ff.gain_im.data[...] = rng.standard_normal(ff.num_bins)
        x = rng.standard_normal(n)
        h = np.fft.irfft(ff.complex_gains(), n)
        ref = np.array([sum(h[m] * x[(i - m) % n] for m in range(n)) for i in range(n)])
        np.testing.assert_allclose(freq_filter_forward(ff, x), ref, atol=1e-8)

    @given(st.integers(2, 80), st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_real_output(self, n, seed):
        rng = np.random.default_rng(seed)
        ff = FrequencyDomainFilter(n)
        for p in ff.params.values():
            p.data[...] = rng.standard_normal(p.shape)
        out = ff(Tensor(rng.standard_normal((2, n))))
        assert not np.iscomplexobj(out.data) and out.shape == (2, n)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            FrequencyDomainFilter(32)(Tensor(np.zeros((1, 31))))

    def test_dense_identity(self):
        ff = FrequencyDomainFilter(40, dense=True)
        x = np.random.default_rng(0).standard_normal(40)
        np.testing.assert_allclose(freq_filter_forward(ff, x), x, atol=1e-9)
        assert ff.gain_re.shape == (21, 21)


class TestPipeline:
    def test_identity_freq_filter(self):
        tf = TimeDomainFilter(seed=2)
        x = np.random.default_rng(0).standard_normal((2, 2048))
        xhat, yhat = classbd_forward(tf, FrequencyDomainFilter(2048), x)
        assert xhat.shape == yhat.shape == (2, 2048)
        np.testing.assert_allclose(yhat.data, xhat.data, atol=1e-9)

    def test_ablation_passthrough(self):
        x = np.random.default_rng(0).standard_normal((1, 64))
        xhat, yhat = classbd_forward(None, None, x)
        np.testing.assert_array_equal(yhat.data, x)

    def test_gradients(self):
        from classbd.losses import frequency_loss_t, time_loss_t

        tf = TimeDomainFilter(channels=3, kernel_size=6, seed=0)
        for layer in (tf.layer1, tf.layer2):
            randomize(layer, 5, 0.2)
            layer.b2.data += 1.0
        ff = FrequencyDomainFilter(48)
        rng = np.random.default_rng(1)
        ff.gain_re.data += 0.2 * rng.standard_normal(ff.num_bins)
        ff.gain_im.data += 0.2 * rng.standard_normal(ff.num_bins)
        x = rng.standard_normal((2, 48))

        def loss():
            xhat, yhat = classbd_forward(tf, ff, x)
            return time_loss_t(xhat) + frequency_loss_t(yhat) + (yhat * yhat).mean()

        params = list(tf.params.values()) + list(ff.params.values())
        rep = finite_difference_check(params, loss, entries=4)
        assert max(r["rel_error"] for r in rep) <= 1e-4


class TestParameterStore:
    def test_unique_names(self):
        s = ParameterStore()
        s.add("a", Tensor(np.zeros(2)))
        with pytest.raises(ValidationError):
            s.add("a", Tensor(np.zeros(2)))

    def test_grad_slots(self):
        s = ParameterStore()
        p = s.add("w", Tensor(np.ones((2, 3))))
        assert p.requires_grad and p.grad.shape == (2, 3) and not p.grad.any()

    def test_checkpoint_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {"a": rng.standard_normal((3, 4)), "b.c": rng.standard_normal(5), "s": np.array(0.25)}
        path = tmp_path / "ck.bin"
        save_checkpoint(path, tensors, {"epoch": 3})
        back, meta = load_checkpoint(path)
        assert meta["epoch"] == 3
        for k, v in tensors.items():
            assert back[k].tobytes() == v.astype("<f8").tobytes() and back[k].shape == v.shape

    def test_checkpoint_layout(self, tmp_path):
        import json
        import struct

        path = tmp_path / "ck.bin"
        save_checkpoint(path, {"x": np.array([1.0, 2.0])}, {})
        raw = path.read_bytes()
        assert raw[:8] == b"CLASSBD1"
        (hlen,) = struct.unpack("<Q", raw[8:16])
        header = json.loads(raw[16 : 16 + hlen])
        entry = header["tensors"][0]
        assert entry["name"] == "x" and entry["shape"] == [2]
        payload = raw[16 + hlen :]
        assert np.frombuffer(payload[entry["offset"] : entry["offset"] + 16], "<f8").tolist() == [1.0, 2.0]

    def test_corrupt_checkpoint(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTACKPT" + b"\0" * 8)
        with pytest.raises(ValidationError):
            load_checkpoint(path)
