import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import toeplitz
from scipy.special import binom

from classbd.dsp import fault_frequency_index, squared_envelope_spectrum
from classbd.losses import kurtosis
from classbd.med import FirFilter, med_deconvolve
from classbd.signals import FaultSpec, TimeSeries, ValidationError, add_noise_snr, generate_fault_signal

FS = 12000.0
SPEC = FaultSpec(fault_period_s=1 / 87.0, resonance_hz=3000.0, decay_rate=900.0)


def noisy_fault(seed, snr=-6.0):
    x = generate_fault_signal(SPEC, 2048 / FS, FS, seed=seed)
    return add_noise_snr(x, snr, "gaussian", seed=1000 + seed)


class TestFirFilter:
    def test_unit_norm(self):
        f = FirFilter([3.0, 4.0])
        np.testing.assert_allclose(f.taps, [0.6, 0.8])

    def test_zero_rejected(self):
        with pytest.raises(ValidationError):
            FirFilter(np.zeros(4))

    def test_valid_length(self):
        assert FirFilter(np.ones(5)).apply(np.ones(20)).size == 16


class TestMed:
    def test_scalar_filter_on_sparse_train(self):
        x = np.zeros(200)
        x[::25] = 1.0
        r = med_deconvolve(x, filter_length=1)
        assert abs(abs(r.filter.taps[0]) - 1.0) <= 1e-12
        np.testing.assert_allclose(r.output.samples, r.filter.taps[0] * x)

    def test_seeded_trials(self):
        k_up = ffi_up = 0
        for seed in range(100):
            x = noisy_fault(seed)
            r = med_deconvolve(x, 64)
            k_up += kurtosis(r.output.samples) > kurtosis(x.samples)
            ffi_up += (fault_frequency_index(squared_envelope_spectrum(r.output), 87.0)
                       > fault_frequency_index(squared_envelope_spectrum(x), 87.0))
        assert k_up >= 95
        assert ffi_up > 50

    @pytest.mark.parametrize("seed", range(5))
    def test_trace_monotone_and_unit_norm(self, seed):
        r = med_deconvolve(noisy_fault(seed), 32, max_iters=30)
        assert np.all(np.diff(r.kurtosis_trace) >= -1e-9)
        assert abs(np.linalg.norm(r.filter.taps) - 1.0) <= 1e-12
        assert len(r.kurtosis_trace) == r.iterations + 1
        assert r.output.samples.size == 2048 - 32 + 1

    def test_fixed_point_equation(self):
        # one iteration from a centred delta equals the normal-equation solution
        x = noisy_fault(7).samples
        L = 16
        r = med_deconvolve(x, L, max_iters=1)
        y0 = x[L - 1 - L // 2 : x.size - L // 2]
        X = np.array([x[n : n + L][::-1] for n in range(x.size - L + 1)])
        ac = np.array([np.dot(x[: x.size - k], x[k:]) for k in range(L)])
        b = np.linalg.solve(toeplitz(ac), X.T @ y0**3)
        np.testing.assert_allclose(r.filter.taps, b / np.linalg.norm(b), atol=1e-10)

    @given(st.floats(1e-3, 1e3))
    @settings(max_examples=10, deadline=None)
    def test_scale_invariant_trace(self, c):
        x = noisy_fault(3).samples
        a = med_deconvolve(x, 16, max_iters=10).kurtosis_trace
        b = med_deconvolve(c * x, 16, max_iters=10).kurtosis_trace
        np.testing.assert_allclose(b, a, rtol=1e-7)

    def test_short_signal(self):
        with pytest.raises(ValidationError):
            med_deconvolve(np.ones(10), 10)

    def test_ill_conditioned_warns(self):
        # binomial pulse: spectral null of order 30 at Nyquist
        x = binom(30, np.arange(31))
        with pytest.warns(UserWarning, match="ill-conditioned"):
            med_deconvolve(x, 16, max_iters=3)

    def test_keeps_sample_rate(self):
        r = med_deconvolve(TimeSeries(noisy_fault(0).samples, 5000.0), 8, max_iters=2)
        assert r.output.sample_rate_hz == 5000.0
