"""Sparsity criteria, cross-entropy and the uncertainty-weighted joint loss.

The public scalar functions accept plain arrays.  The ``*_t`` variants take
:class:`~classbd.autograd.Tensor` batches (one signal per row) and return a
differentiable batch mean.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .dsp import EnvelopeSpectrum
from .signals import ValidationError

ENVELOPE_EPS = 1e-12


def kurtosis(y) -> float:
    """``sum(y**4) / sum(y**2)**2``; equals ``1/N`` for a constant and 1 for an impulse."""
    y = np.asarray(y, dtype=float)
    e2 = np.sum(y * y)
    if not e2 > 0:
        raise ValidationError("kurtosis of an all-zero signal is undefined")
    return float(np.sum(y**4) / e2**2)


def sparsity_ratio(x, p: float, q: float) -> float:
    """Unsigned ratio ``sum|x|^p / (sum|x|^q)^(p/q)``."""
    if not (p > 0 and q > 0):
        raise ValidationError("p and q must be positive")
    a = np.abs(np.asarray(x, dtype=float))
    sq = np.sum(a**q)
    if not sq > 0:
        raise ValidationError("sparsity ratio of an all-zero vector is undefined")
    return float(np.sum(a**p) / sq ** (p / q))


def g_lp_lq(x, p: float, q: float) -> float:
    """Signed generalised sparsity ``sgn(log(q/p)) * sparsity_ratio(x, p, q)``.

    The sign makes both the l4/l2 (kurtosis) and l2/l4 forms decrease as the
    input gets sparser; ``p == q`` gives 0.
    """
    r = sparsity_ratio(x, p, q)
    return float(np.sign(math.log(q / p))) * r


def es_sparsity_loss(es) -> float:
    """``sum ES^2 / sqrt(sum ES^4)`` over the non-DC bins; 1 for a single line."""
    mags = es.non_dc if isinstance(es, EnvelopeSpectrum) else np.asarray(es, dtype=float)[1:]
    s4 = np.sum(mags**4)
    if not s4 > 0:
        raise ValidationError("envelope spectrum is zero outside DC")
    return float(np.sum(mags**2) / math.sqrt(s4))


def cross_entropy(logits, labels) -> float:
    """Mean negative log-softmax of the true class, computed with a max shift."""
    z = np.atleast_2d(np.asarray(logits, dtype=float))
    labels = np.asarray(labels, dtype=int).reshape(-1)
    if labels.size != z.shape[0]:
        raise ValidationError("one label per logit row required")
    if np.any(labels < 0) or np.any(labels >= z.shape[1]):
        raise ValidationError("label out of range")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(lse - shifted[np.arange(z.shape[0]), labels]))


# ---------------------------------------------------------------------------
# differentiable batch versions
# ---------------------------------------------------------------------------
def kurtosis_t(y: Tensor) -> Tensor:
    """Per-row kurtosis, shape (batch,)."""
    y2 = y * y
    return (y2 * y2).sum(axis=-1) / y2.sum(axis=-1) ** 2


def time_loss_t(xhat: Tensor) -> Tensor:
    """Batch mean of ``-kurtosis`` (the l4/l2 criterion with its sign)."""
    return -kurtosis_t(xhat).mean()


def envelope_t(y: Tensor) -> Tensor:
    z = ag.analytic(y)
    re, im = ag.real(z), ag.imag(z)
    return ag.sqrt(re * re + im * im + ENVELOPE_EPS)


def envelope_spectrum_t(y: Tensor) -> Tensor:
    """One-sided envelope spectrum magnitudes per row (DC included)."""
    return ag.tabs(ag.rfft(envelope_t(y)))


def frequency_loss_t(yhat: Tensor) -> Tensor:
    """Batch mean of the l2/l4 envelope-spectrum criterion over non-DC bins."""
    es = envelope_spectrum_t(yhat)[..., 1:]
    e2 = es * es
    return (e2.sum(axis=-1) / ag.sqrt((e2 * e2).sum(axis=-1))).mean()


def cross_entropy_t(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=int)
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise ValidationError("label out of range")
    logp = ag.log_softmax(logits, axis=1)
    return -logp[np.arange(labels.size), labels].mean()


# ---------------------------------------------------------------------------
# joint loss
# ---------------------------------------------------------------------------
class UncertaintyWeights:
    """Learnable log-sigmas ``s_c, s_t, s_f``; task weight is ``exp(-2 s)``."""

    INIT = -0.5

    def __init__(self, init: float = INIT):
        self.s_c = Tensor(np.array(init), requires_grad=True, name="uncertainty.s_c")
        self.s_t = Tensor(np.array(init), requires_grad=True, name="uncertainty.s_t")
        self.s_f = Tensor(np.array(init), requires_grad=True, name="uncertainty.s_f")

    def parameters(self) -> dict:
        return {p.name: p for p in (self.s_c, self.s_t, self.s_f)}

    def snapshot(self) -> tuple[float, float, float]:
        return float(self.s_c.data), float(self.s_t.data), float(self.s_f.data)


@dataclass
class LossBreakdown:
    lc: float
    lt: float
    lf: float
    weighted_total: float
    sigmas: tuple
    tensor: Tensor | None = None


def _val(v) -> float:
    return float(v.data) if isinstance(v, Tensor) else float(v)


def joint_loss(lc, lt, lf, w: UncertaintyWeights | None, enable_lt: bool = True,
               enable_lf: bool = True, lt_offset: float = 0.0) -> LossBreakdown:
    """``sum_k exp(-2 s_k) L_k + s_k`` over the enabled tasks.

    Arguments may be floats or Tensors; with Tensors the breakdown carries
    the differentiable total in ``tensor``.  ``w=None`` gives the plain sum.
    A disabled task contributes neither its loss nor its ``s`` term.

    ``lt_offset`` is added to ``lt`` inside the weighted sum only.  Because
    ``lt = -kurtosis`` is negative, the unshifted objective decreases without
    bound as ``s_t -> -inf``; an offset of 1 makes the term non-negative so
    ``s_t`` has a finite optimum.  The breakdown still reports the raw ``lt``.
    """
    parts = [(lc, None if w is None else w.s_c)]
    if enable_lt:
        parts.append((lt + lt_offset if lt_offset else lt, None if w is None else w.s_t))
    if enable_lf:
        parts.append((lf, None if w is None else w.s_f))
    for value, _ in parts:
        if not math.isfinite(_val(value)):
            raise ValidationError("loss component is not finite")

    use_graph = any(isinstance(v, Tensor) for v, _ in parts) or w is not None
    total = None
    for value, s in parts:
        if s is None:
            term = value
        elif use_graph:
            term = ag.exp(s * -2.0) * value + s
        else:
            term = math.exp(-2 * float(s.data)) * value + float(s.data)
        total = term if total is None else total + term

    sig = w.snapshot() if w is not None else (0.0, 0.0, 0.0)
    return LossBreakdown(
        lc=_val(lc),
        lt=_val(lt) if enable_lt else 0.0,
        lf=_val(lf) if enable_lf else 0.0,
        weighted_total=_val(total),
        sigmas=sig,
        tensor=total if isinstance(total, Tensor) else None,
    )
