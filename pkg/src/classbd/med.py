"""Minimum entropy deconvolution (Wiggins' fixed-point iteration)."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

from .losses import kurtosis
from .signals import TimeSeries, ValidationError

COND_LIMIT = 1e12


@dataclass
class FirFilter:
    taps: np.ndarray

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=float)
        self.renormalize()

    def renormalize(self) -> None:
        norm = np.linalg.norm(self.taps)
        if not norm > 0:
            raise ValidationError("filter taps are all zero")
        self.taps = self.taps / norm

    def apply(self, x) -> np.ndarray:
        """Valid-mode convolution, output length ``N - L + 1``."""
        return np.convolve(np.asarray(x, dtype=float), self.taps, mode="valid")


@dataclass
class MedResult:
    filter: FirFilter
    output: TimeSeries
    kurtosis_trace: list
    iterations: int
    converged: bool


def _lagged(x: np.ndarray, L: int) -> np.ndarray:
    """Rows ``[x[n+L-1], x[n+L-2], ..., x[n]]`` so that ``X @ f`` is valid convolution."""
    win = np.lib.stride_tricks.sliding_window_view(x, L)
    return win[:, ::-1]


def med_deconvolve(x, filter_length: int = 64, max_iters: int = 100, tol: float = 1e-6,
                   mono_tol: float = 1e-9) -> MedResult:
    """Iteratively update a unit-norm FIR filter to maximise output kurtosis.

    Each step solves ``R f = X^T y^3`` with ``R`` the Toeplitz autocorrelation
    matrix of ``x``, then renormalises ``f``.  Iteration stops when the
    kurtosis change falls below ``tol``, after ``max_iters`` steps, or when a
    step would lower kurtosis by more than ``mono_tol`` (that step is
    rejected).
    """
    series = x if isinstance(x, TimeSeries) else None
    xs = series.samples if series is not None else np.asarray(x, dtype=float)
    fs = series.sample_rate_hz if series is not None else 1.0
    L = int(filter_length)
    if L < 1 or xs.size <= L:
        raise ValidationError("signal must be longer than the filter")
    if not np.any(xs):
        raise ValidationError("signal has zero power")

    r = np.correlate(xs, xs, mode="full")[xs.size - 1 : xs.size - 1 + L]
    R = toeplitz(r)
    cond = np.linalg.cond(R)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        lam = 1e-8 * np.trace(R) / L
        warnings.warn(f"autocorrelation matrix ill-conditioned (cond={cond:.3g}); adding {lam:.3g} I")
        R = R + lam * np.eye(L)
        if not np.isfinite(np.linalg.cond(R)) or np.linalg.cond(R) > 1e3 * COND_LIMIT:
            raise np.linalg.LinAlgError("autocorrelation matrix is singular even after regularisation")

    X = _lagged(xs, L)
    taps = np.zeros(L)
    taps[L // 2] = 1.0
    filt = FirFilter(taps)
    y = X @ filt.taps
    trace = [kurtosis(y)]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        b = np.linalg.solve(R, X.T @ y**3)
        cand = FirFilter(b)
        y_new = X @ cand.taps
        k_new = kurtosis(y_new)
        if k_new < trace[-1] - mono_tol:
            converged = True
            it -= 1
            break
        filt, y = cand, y_new
        trace.append(k_new)
        if abs(trace[-1] - trace[-2]) < tol:
            converged = True
            break
    return MedResult(filt, TimeSeries(y, fs), trace, it, converged)
