import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from classbd import autograd as ag
from classbd.autograd import Tensor, finite_difference_check
from classbd.filters import FrequencyDomainFilter, TimeDomainFilter, time_filter_forward
from classbd.losses import time_loss_t
from classbd.optim import CosineSchedule, NumericalError, Sgd, SgdConfig, cosine_lr, sgd_step
from classbd.params import ParameterStore
from classbd.signals import ValidationError


def store_with(values):
    s = ParameterStore()
    for name, v in values.items():
        s.add(name, Tensor(np.asarray(v, dtype=float)))
    return s


class TestCosine:
    def test_endpoints(self):
        s = CosineSchedule(0.1, 0.001, 50)
        assert cosine_lr(s, 0) == 0.1
        assert cosine_lr(s, 50) == pytest.approx(0.001, abs=1e-15)
        assert cosine_lr(s, 25) == pytest.approx((0.1 + 0.001) / 2, abs=1e-15)

    @given(st.floats(1e-4, 10), st.floats(0, 0.99), st.integers(1, 500))
    @settings(max_examples=50, deadline=None)
    def test_monotone(self, eta_max, frac, total):
        s = CosineSchedule(eta_max, eta_max * frac, total)
        lrs = [cosine_lr(s, t) for t in range(total + 1)]
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            cosine_lr(CosineSchedule(0.1), 51)
        with pytest.raises(ValidationError):
            cosine_lr(CosineSchedule(0.1), -1)

    def test_invalid_schedule(self):
        with pytest.raises(ValidationError):
            CosineSchedule(0.1, 0.2)


class TestSgd:
    def test_plain_step(self):
        s = store_with({"w": 2.0})
        s["w"].grad = np.array(0.5)
        sgd_step(s, SgdConfig(momentum=0.0), 0.1)
        assert float(s["w"].data) == 2.0 - 0.1 * 0.5
        assert float(s["w"].grad) == 0.0

    def test_momentum_unroll(self):
        s = store_with({"w": np.zeros(3)})
        g = np.array([1.0, -2.0, 0.5])
        opt = None
        for _ in range(2):
            s["w"].grad = g.copy()
            opt = sgd_step(s, SgdConfig(momentum=0.9), 0.1, opt)
        np.testing.assert_allclose(s["w"].data, -0.1 * g * (1 + 1.9), rtol=1e-15)

    def test_zero_gradient_bitwise(self):
        rng = np.random.default_rng(0)
        s = store_with({"a": rng.standard_normal(5), "b": rng.standard_normal((2, 2))})
        before = {k: p.data.tobytes() for k, p in s.items()}
        opt = Sgd(s, SgdConfig())
        for _ in range(3):
            opt.step(0.1)
        assert all(p.data.tobytes() == before[k] for k, p in s.items())

    def test_nan_gradient_names_parameter(self):
        s = store_with({"ok": [1.0], "bad.w": [1.0]})
        s["bad.w"].grad = np.array([np.nan])
        with pytest.raises(NumericalError, match="bad.w"):
            Sgd(s, SgdConfig()).step(0.1)
        assert float(s["ok"].data[0]) == 1.0

    def test_per_module_clipping(self):
        s = store_with({"big.w": np.zeros(2), "small.w": np.zeros(1)})
        s["big.w"].grad = np.array([30.0, 40.0])
        s["small.w"].grad = np.array([0.5])
        Sgd(s, SgdConfig(momentum=0.0, grad_clip=1.0)).step(1.0)
        np.testing.assert_allclose(s["big.w"].data, [-0.6, -0.8], rtol=1e-15)
        assert float(s["small.w"].data[0]) == -0.5

    def test_grad_norm(self):
        s = store_with({"a.x": np.zeros(2), "b.y": np.zeros(1)})
        s["a.x"].grad = np.array([3.0, 0.0])
        s["b.y"].grad = np.array([4.0])
        opt = Sgd(s, SgdConfig())
        assert opt.grad_norm() == 5.0 and opt.grad_norm("a") == 3.0

    def test_state_round_trip(self):
        s = store_with({"w": np.zeros(2)})
        opt = Sgd(s, SgdConfig())
        s["w"].grad = np.array([1.0, 2.0])
        opt.step(0.1)
        other = Sgd(s, SgdConfig())
        other.load_state(opt.state())
        np.testing.assert_array_equal(other.velocity["w"], [1.0, 2.0])

    @pytest.mark.parametrize("kw", [dict(learning_rate=0.0), dict(momentum=1.0), dict(batch_size=0),
                                    dict(grad_clip=0.0)])
    def test_invalid_config(self, kw):
        with pytest.raises(ValidationError):
            SgdConfig(**kw)


class TestGradientOracles:
    def test_quadratic_bowl(self):
        p = Tensor(np.random.default_rng(0).standard_normal(6), requires_grad=True)
        rep = finite_difference_check([p], lambda: (p * p).sum())
        assert max(r["rel_error"] for r in rep) <= 1e-10

    def test_kurtosis_gradient(self):
        p = Tensor(np.random.default_rng(1).standard_normal((1, 128)), requires_grad=True)
        rep = finite_difference_check([p], lambda: time_loss_t(p), entries=30)
        assert max(r["rel_error"] for r in rep) <= 1e-6

    def test_identity_filter_energy_adjoint(self):
        n = 64
        x = np.random.default_rng(2).standard_normal(n)
        ff = FrequencyDomainFilter(n)
        out = ff(Tensor(x[None]))
        ag.backward((out * out).sum())
        X = np.fft.rfft(x)
        mult = np.full(X.size, 2.0)
        mult[0] = mult[-1] = 1.0  # DC and Nyquist have no mirror bin
        np.testing.assert_allclose(ff.gain_re.grad, 2 * mult * np.abs(X) ** 2 / n, rtol=1e-10, atol=1e-10)

    def test_output_shift_derivative(self):
        tf = TimeDomainFilter(channels=4, kernel_size=8, seed=1)
        x = np.random.default_rng(3).standard_normal((1, 96))
        b3 = tf.layer2.b3
        xhat = time_filter_forward(tf, x)
        ag.backward(time_loss_t(tf(Tensor(x))))
        a, b = np.sum(xhat**4), np.sum(xhat**2)
        # d/dc of -sum((x+c)^4) / sum((x+c)^2)^2 at c = 0
        direct = -(4 * np.sum(xhat**3) / b**2 - 2 * a * 2 * np.sum(xhat) / b**3)
        assert float(b3.grad[0]) == pytest.approx(direct, rel=1e-10)

    def test_unreachable_parameters_zero(self):
        ff = FrequencyDomainFilter(16)
        ag.backward(ff(Tensor(np.ones((1, 16)))).sum())
        # a constant input has no energy outside DC, so those gains get zero gradient
        assert np.abs(ff.gain_re.grad[1:]).max() <= 1e-12 and ff.gain_re.grad[0] != 0
