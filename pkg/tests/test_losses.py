import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from classbd import autograd as ag
from classbd.autograd import Tensor
from classbd.dsp import EnvelopeSpectrum, envelope_spectrum
from classbd.losses import (
    UncertaintyWeights,
    cross_entropy,
    cross_entropy_t,
    envelope_spectrum_t,
    es_sparsity_loss,
    frequency_loss_t,
    g_lp_lq,
    joint_loss,
    kurtosis,
    kurtosis_t,
    sparsity_ratio,
    time_loss_t,
)
from classbd.signals import ValidationError

finite_vec = arrays(np.float64, st.integers(2, 64),
                    elements=st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False))


class TestKurtosis:
    def test_impulse(self):
        assert kurtosis([1.0, 0, 0, 0]) == 1.0

    def test_constant(self):
        assert kurtosis(np.full(8, -3.0)) == 0.125

    def test_zero_rejected(self):
        with pytest.raises(ValidationError):
            kurtosis(np.zeros(5))

    def test_gaussian_monte_carlo(self):
        n = 2048
        vals = [kurtosis(np.random.default_rng(s).standard_normal(n)) for s in range(100)]
        assert abs(np.mean(vals) / (3 / n) - 1) <= 0.2

    @given(finite_vec, st.floats(1e-3, 1e3))
    @settings(max_examples=60, deadline=None)
    def test_scale_invariant(self, x, c):
        if np.sum(x * x) < 1e-6:
            return
        assert kurtosis(c * x) == pytest.approx(kurtosis(x), rel=1e-9)

    def test_tensor_matches(self):
        x = np.random.default_rng(0).standard_normal((4, 100))
        np.testing.assert_allclose(kurtosis_t(Tensor(x)).data, [kurtosis(r) for r in x], rtol=1e-13)


class TestGeneralisedNorm:
    def test_signs(self):
        assert g_lp_lq([1.0, 0, 0, 0], 4, 2) == -1.0
        assert g_lp_lq([1.0, 0, 0, 0], 2, 4) == 1.0

    def test_equal_orders(self):
        assert g_lp_lq(np.random.default_rng(0).standard_normal(10), 3, 3) == 0.0

    def test_zero_rejected(self):
        with pytest.raises(ValidationError):
            g_lp_lq(np.zeros(4), 4, 2)
        with pytest.raises(ValidationError):
            sparsity_ratio([1.0], -1, 2)

    def test_time_loss_identity(self):
        x = np.random.default_rng(1).standard_normal((6, 50))
        lt = time_loss_t(Tensor(x)).data
        assert abs(lt - np.mean([g_lp_lq(r, 4, 2) for r in x])) <= 1e-12

    @pytest.mark.parametrize("p,q", [(4, 2), (2, 4), (3, 1), (1, 3)])
    def test_monotone_in_max_element(self, p, q):
        rng = np.random.default_rng(p * 10 + q)
        violations = 0
        for _ in range(1000):
            x = rng.standard_normal(64)
            i = np.argmax(np.abs(x))
            y = x.copy()
            y[i] *= 1.01
            r0, r1 = sparsity_ratio(x, p, q), sparsity_ratio(y, p, q)
            ok = r1 > r0 if p > q else r1 < r0
            violations += not ok
        assert violations == 0


class TestEsLoss:
    def test_single_line(self):
        for a in (1e-3, 1.0, 42.0):
            assert es_sparsity_loss(EnvelopeSpectrum(np.array([5.0, 0, a, 0]), 1.0)) == pytest.approx(1.0)

    @pytest.mark.parametrize("k", [1, 4, 9, 30])
    def test_equal_bins(self, k):
        m = np.zeros(64)
        m[1 : k + 1] = 2.0
        assert es_sparsity_loss(m) == pytest.approx(math.sqrt(k))

    def test_matches_general_form(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            m = np.abs(rng.standard_normal(129))
            assert abs(es_sparsity_loss(m) - g_lp_lq(m[1:], 2, 4)) <= 1e-12

    def test_dc_only_rejected(self):
        with pytest.raises(ValidationError):
            es_sparsity_loss(EnvelopeSpectrum(np.array([3.0, 0, 0]), 1.0))

    def test_scale_invariant(self):
        m = np.abs(np.random.default_rng(2).standard_normal(65))
        es = EnvelopeSpectrum(m, 1.0)
        assert es_sparsity_loss(es.scaled(7.0)) == pytest.approx(es_sparsity_loss(es), rel=1e-12)

    def test_tensor_path_matches(self):
        x = np.random.default_rng(3).standard_normal((3, 256))
        es_t = envelope_spectrum_t(Tensor(x)).data
        for row, es_row in zip(x, es_t):
            np.testing.assert_allclose(es_row, envelope_spectrum(row).magnitudes, rtol=1e-9, atol=1e-9)
        lf = frequency_loss_t(Tensor(x)).data
        assert lf == pytest.approx(np.mean([es_sparsity_loss(envelope_spectrum(r)) for r in x]), rel=1e-9)


class TestCrossEntropy:
    def test_uniform(self):
        assert cross_entropy(np.zeros((3, 7)), [0, 3, 6]) == pytest.approx(math.log(7), abs=1e-15)

    def test_confident(self):
        z = np.zeros((2, 4))
        z[0, 1] = z[1, 2] = 20.0
        assert cross_entropy(z, [1, 2]) <= 1e-8

    def test_overflow_safe(self):
        z = np.array([[1000.0, 0.0], [0.0, -1000.0]])
        assert cross_entropy(z, [0, 0]) == pytest.approx(0.0, abs=1e-12)

    def test_naive_oracle(self):
        rng = np.random.default_rng(0)
        z = rng.standard_normal((16, 4))
        y = rng.integers(0, 4, 16)
        naive = np.mean([-math.log(math.exp(r[c]) / sum(math.exp(v) for v in r)) for r, c in zip(z, y)])
        assert abs(cross_entropy(z, y) - naive) <= 1e-12
        assert abs(float(cross_entropy_t(Tensor(z), y).data) - naive) <= 1e-12

    def test_label_range(self):
        with pytest.raises(ValidationError):
            cross_entropy(np.zeros((1, 3)), [3])
        with pytest.raises(ValidationError):
            cross_entropy_t(Tensor(np.zeros((1, 3))), [-1])


class TestJointLoss:
    def weights(self, value):
        w = UncertaintyWeights()
        for s in (w.s_c, w.s_t, w.s_f):
            s.data = np.array(float(value))
        return w

    def test_unit_sigma(self):
        br = joint_loss(1.5, -0.2, 3.0, self.weights(0.0))
        assert br.weighted_total == pytest.approx(1.5 - 0.2 + 3.0)

    def test_default_init(self):
        w = UncertaintyWeights()
        assert w.snapshot() == (-0.5, -0.5, -0.5)
        br = joint_loss(1.0, 1.0, 1.0, w)
        assert br.weighted_total == pytest.approx(3 * math.e - 1.5)
        assert br.weighted_total == pytest.approx(6.6548, abs=1e-4)

    def test_plain_sum(self):
        assert joint_loss(1.0, -0.5, 2.0, None).weighted_total == 2.5

    def test_disabled_terms(self):
        w = UncertaintyWeights()
        br = joint_loss(Tensor(np.array(1.0)), Tensor(np.array(-0.3)), Tensor(np.array(2.0)), w,
                        enable_lt=False, enable_lf=False)
        assert br.weighted_total == pytest.approx(math.e - 0.5)
        assert br.lt == 0.0 and br.lf == 0.0
        ag.backward(br.tensor)
        for s in (w.s_t, w.s_f):
            assert s.grad is None or s.grad == 0.0
        assert w.s_c.grad != 0.0

    def test_grad_s_t_finite_difference(self):
        w = UncertaintyWeights()
        w.s_t.data = np.array(0.3)
        lt = -0.004
        br = joint_loss(1.2, lt, 5.0, w)
        ag.backward(br.tensor)
        h = 1e-6

        def total(st_):
            return math.exp(-2 * w.s_c.data) * 1.2 + math.exp(-2 * st_) * lt + math.exp(-2 * w.s_f.data) * 5.0 \
                + float(w.s_c.data) + st_ + float(w.s_f.data)

        fd = (total(0.3 + h) - total(0.3 - h)) / (2 * h)
        assert abs(float(w.s_t.grad) - fd) / abs(fd) <= 1e-6

    def test_offset_only_shifts_weighted_term(self):
        w = UncertaintyWeights()
        a = joint_loss(1.0, -0.1, 2.0, w)
        b = joint_loss(1.0, -0.1, 2.0, w, lt_offset=1.0)
        assert b.lt == a.lt == -0.1
        assert b.weighted_total - a.weighted_total == pytest.approx(math.exp(1.0))

    @given(st.floats(-5, 5), st.floats(0.01, 3), st.sampled_from([0, 1, 2]), st.floats(-2, 2))
    @settings(max_examples=50, deadline=None)
    def test_monotone_in_components(self, base, delta, which, s):
        w = self.weights(s)
        comps = [base, base, base]
        lo = joint_loss(*comps, w).weighted_total
        comps[which] += delta
        assert joint_loss(*comps, w).weighted_total > lo

    def test_nonfinite_rejected(self):
        with pytest.raises(ValidationError):
            joint_loss(float("nan"), 0.0, 0.0, None)

    def test_sigma_positive(self):
        w = self.weights(-30.0)
        assert math.exp(2 * float(w.s_c.data)) > 0
