"""Neural blind-deconvolution filters.

A time-domain filter made of two quadratic convolution layers (1 -> 16 -> 1
channels) followed by a per-bin frequency-domain filter.  Both are
length-preserving maps.
"""
from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .params import ParameterStore
from .signals import TimeSeries, ValidationError

ACTIVATIONS = {"identity": lambda t: t, "tanh": ag.tanh, "relu": ag.relu}


def _as_batch(x) -> tuple[np.ndarray | Tensor, bool]:
    """Coerce a signal, 1-D array or (batch, length) array to 2-D."""
    if isinstance(x, TimeSeries):
        x = x.samples
    if isinstance(x, Tensor):
        return (x.reshape(1, -1), True) if x.ndim == 1 else (x, False)
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        return Tensor(arr[None, :]), True
    return Tensor(arr), False


class QuadraticConvLayer:
    """``act((W1*x + b1) * (W2*x + b2) + W3*(x*x) + b3)`` with same-length padding.

    Convolutions are cross-correlations over ``kernel_size`` taps with
    ``(k-1)//2`` zeros on the left and the rest on the right.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 64,
                 activation: str = "identity", prefix: str = "qconv"):
        if activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {activation!r}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.activation = activation
        shape = (out_channels, in_channels, kernel_size)
        self.params = ParameterStore()
        for i in (1, 2, 3):
            setattr(self, f"W{i}", self.params.add(f"{prefix}.W{i}", Tensor(np.zeros(shape))))
            setattr(self, f"b{i}", self.params.add(f"{prefix}.b{i}", Tensor(np.zeros(out_channels))))

    @property
    def padding(self) -> tuple[int, int]:
        left = (self.kernel_size - 1) // 2
        return left, self.kernel_size - 1 - left

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ValidationError(
                f"expected (batch, {self.in_channels}, length) input, got {x.shape}"
            )
        c = self.out_channels
        bias = lambda b: b.reshape(1, c, 1)  # noqa: E731
        # W1 and W2 share one transform of x
        lin = ag.conv1d(x, ag.concatenate([self.W1, self.W2], axis=0), padding=self.padding)
        a = lin[:, :c] + bias(self.b1)
        b = lin[:, c:] + bias(self.b2)
        power = ag.conv1d(x * x, self.W3, padding=self.padding) + bias(self.b3)
        return ACTIVATIONS[self.activation](a * b + power)


def relinear_init(layer: QuadraticConvLayer, seed: int = 0) -> None:
    """Start the layer as a linear convolution.

    ``W1 ~ N(0, 1/(32 k))`` and ``b1 ~ U(-1/sqrt(k), 1/sqrt(k))`` with ``k`` the
    kernel size; ``W2 = W3 = 0``, ``b2 = 1``, ``b3 = 0``.
    """
    rng = np.random.default_rng(seed)
    k = layer.kernel_size
    layer.W1.data[...] = rng.normal(0.0, math.sqrt(1.0 / (32 * k)), size=layer.W1.shape)
    bound = math.sqrt(1.0 / k)
    layer.b1.data[...] = rng.uniform(-bound, bound, size=layer.b1.shape)
    layer.W2.data[...] = 0.0
    layer.W3.data[...] = 0.0
    layer.b2.data[...] = 1.0
    layer.b3.data[...] = 0.0


def qconv_forward(layer: QuadraticConvLayer, x) -> np.ndarray:
    """Evaluate a layer on a (channels, length) or (batch, channels, length) array."""
    arr = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=float)
    single = arr.ndim == 2
    out = layer(Tensor(arr[None] if single else arr)).data
    return out[0] if single else out


class TimeDomainFilter:
    """Two quadratic layers: 1 -> ``channels`` -> 1."""

    def __init__(self, channels: int = 16, kernel_size: int = 64, activation: str = "identity",
                 seed: int = 0, prefix: str = "time"):
        self.layer1 = QuadraticConvLayer(1, channels, kernel_size, activation, f"{prefix}.layer1")
        self.layer2 = QuadraticConvLayer(channels, 1, kernel_size, activation, f"{prefix}.layer2")
        relinear_init(self.layer1, seed)
        relinear_init(self.layer2, seed + 1)
        self.params = ParameterStore()
        self.params.update(self.layer1.params)
        self.params.update(self.layer2.params)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2:
            raise ValidationError("time filter expects (batch, length) input")
        bsz, n = x.shape
        h = self.layer2(self.layer1(x.reshape(bsz, 1, n)))
        return h.reshape(bsz, n)

    def identity_init(self) -> None:
        """Make the filter an exact pass-through (delta kernels, unit product gate)."""
        for layer in (self.layer1, self.layer2):
            relinear_init(layer)
            layer.W1.data[...] = 0.0
            layer.b1.data[...] = 0.0
        centre = self.layer1.padding[0]
        self.layer1.W1.data[:, 0, centre] = 1.0
        self.layer2.W1.data[0, :, centre] = 1.0 / self.layer1.out_channels


def time_filter_forward(filt: TimeDomainFilter, x):
    """Run the time filter on a TimeSeries, array or Tensor batch."""
    t, single = _as_batch(x)
    out = filt(t)
    if isinstance(x, TimeSeries):
        return x.with_samples(out.data[0])
    if isinstance(x, Tensor):
        return out.reshape(-1) if single else out
    return out.data[0] if single else out.data


class FrequencyDomainFilter:
    """Per-bin complex gain and bias between an FFT and its inverse.

    Parameters cover the non-negative bins only; the inverse real FFT applies
    the conjugate response to negative frequencies, so real in gives real
    out whatever the parameter values.  ``dense=True`` replaces the diagonal
    gain by a full complex bin-mixing matrix.
    """

    def __init__(self, length: int, dense: bool = False, prefix: str = "freq"):
        if length < 2:
            raise ValidationError("frequency filter length must be >= 2")
        self.length = length
        self.dense = dense
        nb = length // 2 + 1
        self.params = ParameterStore()
        if dense:
            self.gain_re = self.params.add(f"{prefix}.gain_re", Tensor(np.eye(nb)))
            self.gain_im = self.params.add(f"{prefix}.gain_im", Tensor(np.zeros((nb, nb))))
        else:
            self.gain_re = self.params.add(f"{prefix}.gain_re", Tensor(np.ones(nb)))
            self.gain_im = self.params.add(f"{prefix}.gain_im", Tensor(np.zeros(nb)))
        self.bias_re = self.params.add(f"{prefix}.bias_re", Tensor(np.zeros(nb)))
        self.bias_im = self.params.add(f"{prefix}.bias_im", Tensor(np.zeros(nb)))

    @property
    def num_bins(self) -> int:
        return self.length // 2 + 1

    def identity_init(self) -> None:
        nb = self.num_bins
        self.gain_re.data[...] = np.eye(nb) if self.dense else 1.0
        self.gain_im.data[...] = 0.0
        self.bias_re.data[...] = 0.0
        self.bias_im.data[...] = 0.0

    def complex_gains(self) -> np.ndarray:
        return self.gain_re.data + 1j * self.gain_im.data

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.length:
            raise ValidationError(f"expected length {self.length}, got {x.shape[-1]}")
        spec = ag.rfft(x)
        gain = ag.complex_(self.gain_re, self.gain_im)
        filtered = ag.matmul(spec, gain) if self.dense else spec * gain
        filtered = filtered + ag.complex_(self.bias_re, self.bias_im)
        return ag.irfft(filtered, self.length)


def freq_filter_forward(filt: FrequencyDomainFilter, x):
    t, single = _as_batch(x)
    out = filt(t)
    if isinstance(x, TimeSeries):
        return x.with_samples(out.data[0])
    if isinstance(x, Tensor):
        return out.reshape(-1) if single else out
    return out.data[0] if single else out.data


def classbd_forward(time_filter: TimeDomainFilter | None, freq_filter: FrequencyDomainFilter | None,
                    x) -> tuple[Tensor, Tensor]:
    """Return the time-filter tap and the final BD output as Tensors.

    Either filter may be ``None`` (ablation), in which case it acts as identity.
    """
    t, _ = _as_batch(x)
    xhat = time_filter(t) if time_filter is not None else t
    yhat = freq_filter(xhat) if freq_filter is not None else xhat
    return xhat, yhat
