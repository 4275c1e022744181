"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the operations the ClassBD pipeline needs are provided: elementwise
arithmetic, reductions, 1-D convolution, FFT-domain filtering, the analytic
signal, pooling and a fused log-softmax.  Complex tensors are supported.

Gradient convention for complex values: the gradient stored for a complex
tensor ``z`` is ``dL/dRe(z) + 1j * dL/dIm(z)`` for a real scalar loss ``L``.
Gradients flowing into real tensors are the real part of that quantity.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import next_fast_len

from .dsp import analytic_weights


class GraphError(RuntimeError):
    """Raised on misuse of the recorded graph (no forward, double backward)."""


class Tensor:
    """An array node in the recorded computation graph."""

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if not np.iscomplexobj(arr):
            arr = arr.astype(np.float64, copy=False)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._consumed = False

    # -- basic protocol -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.data)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return mul(self, power(as_tensor(other), -1.0))

    def __rtruediv__(self, other):
        return mul(as_tensor(other), power(self, -1.0))

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Create an op output; record the graph only if some parent needs grads."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _fit(grad: np.ndarray, parent: Tensor) -> np.ndarray:
    grad = _unbroadcast(grad, parent.shape)
    if not parent.is_complex and np.iscomplexobj(grad):
        grad = grad.real
    return grad


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------
def backward(output: Tensor, grad: np.ndarray | None = None) -> None:
    """Propagate gradients from ``output`` into every reachable leaf.

    Leaves accumulate into ``.grad``.  The graph is released afterwards, so a
    second call on the same output raises :class:`GraphError`.
    """
    if output._consumed:
        raise GraphError("backward called twice on the same graph")
    if output._backward is None:
        raise GraphError("backward requires an output produced by a recorded forward pass")
    if grad is None:
        if output.data.size != 1:
            raise GraphError("implicit seed gradient needs a scalar output")
        grad = np.ones_like(output.data)

    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(output, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(output): np.asarray(grad)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if g is not None and node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            pg = _fit(pg, p)
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg
        node._backward = None
        node._parents = ()
    output._consumed = True


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * np.conj(bd), g * np.conj(ad)))


def power(a: Tensor, exponent: float) -> Tensor:
    a = as_tensor(a)
    d = a.data
    out = d ** exponent
    return _make(out, (a,), lambda g: (g * exponent * d ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    d = a.data
    return _make(np.log(d), (a,), lambda g: (g / d,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def tabs(a: Tensor) -> Tensor:
    """Magnitude; the gradient at exact zero is taken as zero."""
    d = a.data
    out = np.abs(d)
    safe = np.where(out > 0, out, 1.0)
    unit = np.where(out > 0, d / safe, 0.0)
    return _make(out, (a,), lambda g: (g * unit,))


def real(a: Tensor) -> Tensor:
    return _make(a.data.real.copy(), (a,), lambda g: (g + 0j,))


def imag(a: Tensor) -> Tensor:
    return _make(a.data.imag.copy(), (a,), lambda g: (1j * g,))


def complex_(re: Tensor, im: Tensor) -> Tensor:
    """Assemble a complex tensor from real and imaginary parts."""
    return _make(re.data + 1j * im.data, (re, im), lambda g: (g.real, g.imag))


# ---------------------------------------------------------------------------
# shape / reductions
# ---------------------------------------------------------------------------
def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = a.shape

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), _bw)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def getitem(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, np.result_type(a.data, np.float64)

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in parts)

    def _bw(g):
        full = np.zeros(shape, dtype=np.result_type(dtype, g))
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), _bw)


def concatenate(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def _bw(g):
        ga = g @ np.conj(np.swapaxes(bd, -1, -2))
        gb = np.conj(np.swapaxes(ad, -1, -2)) @ g
        return ga, gb

    return _make(ad @ bd, (a, b), _bw)


# ---------------------------------------------------------------------------
# Fourier-domain operations (last axis, unnormalized forward, 1/N inverse)
# ---------------------------------------------------------------------------
def rfft(a: Tensor) -> Tensor:
    n = a.shape[-1]

    def _bw(g):
        full = np.zeros(g.shape[:-1] + (n,), dtype=complex)
        full[..., : g.shape[-1]] = g
        return (n * np.fft.ifft(full, axis=-1),)

    return _make(np.fft.rfft(a.data, axis=-1), (a,), _bw)


def irfft(a: Tensor, n: int) -> Tensor:
    """Inverse real FFT; imaginary parts of the DC (and even-N Nyquist) bins are ignored."""
    nbins = a.shape[-1]
    weight = np.full(nbins, 2.0)
    weight[0] = 1.0
    if n % 2 == 0:
        weight[-1] = 1.0

    def _bw(g):
        gf = np.fft.rfft(g, axis=-1)[..., :nbins] * weight / n
        if n % 2 == 0:
            gf[..., -1] = gf[..., -1].real
        gf[..., 0] = gf[..., 0].real
        return (gf,)

    return _make(np.fft.irfft(a.data, n=n, axis=-1), (a,), _bw)


def analytic(a: Tensor) -> Tensor:
    """Analytic signal along the last axis.  The linear map is Hermitian."""
    h = analytic_weights(a.shape[-1])

    def apply(v):
        return np.fft.ifft(np.fft.fft(v, axis=-1) * h, axis=-1)

    return _make(apply(a.data), (a,), lambda g: (apply(g),))


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------
def _fft_corr_valid(xp: np.ndarray, w: np.ndarray) -> tuple:
    n = next_fast_len(xp.shape[-1], real=True)
    XP = np.fft.rfft(xp, n=n, axis=-1)
    W = np.fft.rfft(w, n=n, axis=-1)
    return n, XP, W


def conv1d(x: Tensor, w: Tensor, stride: int = 1, padding: tuple = (0, 0)) -> Tensor:
    """Cross-correlation ``out[b,o,n] = sum_{c,j} w[o,c,j] xpad[b,c,n*stride+j]``.

    ``x`` has shape (batch, in_channels, length), ``w`` (out, in, kernel).
    Long kernels at stride 1 go through the FFT; others use sliding windows.
    """
    xd, wd = x.data, w.data
    if xd.ndim != 3 or wd.ndim != 3 or xd.shape[1] != wd.shape[1]:
        raise ValueError(f"conv1d shape mismatch: x {xd.shape}, w {wd.shape}")
    pl, pr = padding
    xp = np.pad(xd, ((0, 0), (0, 0), (pl, pr))) if (pl or pr) else xd
    lp, k = xp.shape[-1], wd.shape[-1]
    lfull = lp - k + 1
    if lfull < 1:
        raise ValueError("kernel longer than padded input")
    lx = xd.shape[-1]

    if stride == 1 and k >= 16:
        n, XP, W = _fft_corr_valid(xp, wd)
        Wc = np.conj(W)
        out = np.fft.irfft(np.einsum("bcf,ocf->bof", XP, Wc), n=n, axis=-1)[..., :lfull]

        def _bw(g):
            G = np.fft.rfft(g, n=n, axis=-1)
            gw = np.fft.irfft(np.einsum("bcf,bof->ocf", XP, np.conj(G)), n=n, axis=-1)[..., :k]
            if not x.requires_grad:
                return None, gw
            gxp = np.fft.irfft(np.einsum("bof,ocf->bcf", G, W), n=n, axis=-1)[..., :lp]
            return gxp[..., pl : pl + lx], gw

        return _make(out, (x, w), _bw)

    win = sliding_window_view(xp, k, axis=-1)[:, :, ::stride, :]
    lout = win.shape[2]
    out = np.tensordot(win, wd, axes=([1, 3], [1, 2])).transpose(0, 2, 1)

    def _bw(g):
        gw = np.tensordot(g, win, axes=([0, 2], [0, 2]))
        if not x.requires_grad:
            return None, gw
        gxp = np.zeros_like(xp)
        span = stride * (lout - 1) + 1
        for j in range(k):
            gxp[:, :, j : j + span : stride] += np.einsum("oc,bol->bcl", wd[:, :, j], g)
        return gxp[..., pl : pl + lx], gw

    return _make(np.ascontiguousarray(out), (x, w), _bw)


def max_pool1d(x: Tensor, size: int) -> Tensor:
    """Non-overlapping max pooling; a trailing remainder is dropped."""
    d = x.data
    lout = d.shape[-1] // size
    blocks = d[..., : lout * size].reshape(d.shape[:-1] + (lout, size))
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def _bw(g):
        gb = np.zeros(blocks.shape)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        full = np.zeros(d.shape)
        full[..., : lout * size] = gb.reshape(d.shape[:-1] + (lout * size,))
        return (full,)

    return _make(out, (x,), _bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    d = x.data
    shifted = d - d.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return _make(out, (x,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),))


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------
def finite_difference_check(
    params: Iterable[Tensor],
    loss_fn: Callable[[], Tensor],
    h: float = 1e-5,
    entries: int | None = None,
    tol: float = 1e-4,
    seed: int = 0,
    floor: float = 1e-7,
) -> list[dict]:
    """Compare analytic gradients with central differences.

    ``loss_fn`` must rebuild the forward pass from the current parameter
    values each call.  For every probed entry the report holds the analytic
    value, the numerical value and ``|a - n| / max(|a|, |n|, floor)``.
    When ``entries`` is given, that many entries are drawn per parameter.
    Non-finite probes are flagged rather than raised.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    backward(loss_fn())
    analytic_grads = [p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    report = []
    for p, ga in zip(params, analytic_grads):
        flat = p.data.reshape(-1)
        if entries is None or entries >= flat.size:
            picks = np.arange(flat.size)
        else:
            picks = rng.choice(flat.size, size=entries, replace=False)
        parts = [1.0] if not p.is_complex else [1.0, 1j]
        for idx in picks:
            for unit in parts:
                orig = flat[idx]
                flat[idx] = orig + unit * h
                lp = float(loss_fn().data)
                flat[idx] = orig - unit * h
                lm = float(loss_fn().data)
                flat[idx] = orig
                num = (lp - lm) / (2 * h)
                g = ga.reshape(-1)[idx]
                ana = float(g.real if unit == 1.0 else g.imag) if p.is_complex else float(g)
                finite = np.isfinite(num) and np.isfinite(ana)
                err = abs(ana - num) / max(abs(ana), abs(num), floor) if finite else np.inf
                report.append(
                    {
                        "name": p.name,
                        "index": int(idx),
                        "analytic": ana,
                        "numeric": num,
                        "rel_error": err,
                        "flagged": (not finite) or err > tol,
                    }
                )
    return report
