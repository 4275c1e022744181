"""Fourier analysis, analytic signal, envelope spectra and the FFI metric.

DFT convention: the forward transform is unnormalised and the inverse
carries the ``1/N`` factor, i.e. ``X[k] = sum_n x[n] exp(-2j pi k n / N)``.

The fault frequency index (FFI) is computed here over the normalised squared
envelope spectrum rather than over a spectral-coherence based enhanced
envelope spectrum, so FFI values are comparable only within this package.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .signals import TimeSeries, ValidationError


@dataclass(frozen=True)
class Spectrum:
    """Full two-sided DFT of a signal."""

    bins: np.ndarray
    sample_rate_hz: float

    @property
    def frequencies_hz(self) -> np.ndarray:
        return np.fft.fftfreq(self.bins.size, d=1.0 / self.sample_rate_hz)


@dataclass(frozen=True)
class EnvelopeSpectrum:
    """One-sided magnitude spectrum (bins ``0..N//2``).

    Bin 0 is the envelope mean.  It is kept in ``magnitudes`` but excluded by
    ``non_dc`` and by every consumer that measures cyclic content.
    """

    magnitudes: np.ndarray
    bin_resolution_hz: float
    dc_index: int = 0

    def __post_init__(self):
        m = np.asarray(self.magnitudes, dtype=float)
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ValidationError("envelope spectrum magnitudes must be finite and non-negative")
        object.__setattr__(self, "magnitudes", m)

    @property
    def frequencies_hz(self) -> np.ndarray:
        return np.arange(self.magnitudes.size) * self.bin_resolution_hz

    @property
    def non_dc(self) -> np.ndarray:
        return self.magnitudes[1:]

    def peak_bin(self) -> int:
        """Index of the largest non-DC magnitude."""
        return int(np.argmax(self.non_dc)) + 1

    def scaled(self, c: float) -> "EnvelopeSpectrum":
        return EnvelopeSpectrum(self.magnitudes * c, self.bin_resolution_hz)


def _samples(signal) -> tuple[np.ndarray, float]:
    if isinstance(signal, TimeSeries):
        return signal.samples, signal.sample_rate_hz
    x = np.asarray(signal, dtype=float)
    if x.size == 0:
        raise ValidationError("empty input")
    return x, 1.0


def fft(signal: TimeSeries) -> Spectrum:
    x, fs = _samples(signal)
    if x.size < 2:
        raise ValidationError("fft needs at least two samples")
    return Spectrum(np.fft.fft(x), fs)


def ifft(spectrum: Spectrum) -> TimeSeries:
    """Inverse DFT; the imaginary residue of a real signal's spectrum is dropped."""
    if spectrum.bins.size == 0:
        raise ValidationError("empty spectrum")
    z = np.fft.ifft(spectrum.bins)
    return TimeSeries(z.real, spectrum.sample_rate_hz)


def analytic_weights(n: int) -> np.ndarray:
    """Spectral mask turning a real length-``n`` signal into its analytic signal."""
    h = np.zeros(n)
    h[0] = 1.0
    if n % 2 == 0:
        h[n // 2] = 1.0
        h[1 : n // 2] = 2.0
    else:
        h[1 : (n + 1) // 2] = 2.0
    return h


def analytic_signal(signal) -> np.ndarray:
    """``y + j*H{y}`` via the one-sided spectrum.

    Negative-frequency bins are zeroed and strictly positive ones doubled;
    DC, and the Nyquist bin for even lengths, are left unchanged.
    """
    x, _ = _samples(signal)
    return np.fft.ifft(np.fft.fft(x) * analytic_weights(x.size))


def hilbert_transform(signal) -> np.ndarray:
    return analytic_signal(signal).imag


def envelope(signal) -> np.ndarray:
    z = analytic_signal(signal)
    return np.sqrt(z.real**2 + z.imag**2)


def envelope_spectrum(signal) -> EnvelopeSpectrum:
    """Magnitude of the one-sided DFT of the Hilbert envelope."""
    x, fs = _samples(signal)
    return EnvelopeSpectrum(np.abs(np.fft.rfft(envelope(x))), fs / x.size)


def squared_envelope_spectrum(signal) -> EnvelopeSpectrum:
    """Magnitude of the one-sided DFT of the squared envelope ``|z|**2``."""
    x, fs = _samples(signal)
    z = analytic_signal(x)
    se = z.real**2 + z.imag**2
    return EnvelopeSpectrum(np.abs(np.fft.rfft(se)), fs / x.size)


def instantaneous_autocorrelation(signal, t: int, tau: int, half_window: int = 0) -> float:
    """Lag product ``x[t - floor(tau/2)] * x[t + ceil(tau/2)]``.

    With ``half_window > 0`` the product is summed over ``t - w .. t + w``.
    Odd lags split as floor/ceil around ``t``.
    """
    x, _ = _samples(signal)
    lo_off = tau // 2
    hi_off = tau - lo_off
    u = np.arange(t - half_window, t + half_window + 1)
    a, b = u - lo_off, u + hi_off
    if min(a.min(), b.min()) < 0 or max(a.max(), b.max()) >= x.size:
        raise ValidationError(f"lag window around t={t}, tau={tau} leaves the signal")
    return float(np.sum(x[a] * x[b]))


def fault_frequency_index(es: EnvelopeSpectrum, fc_hz: float, harmonics: int = 5,
                          drift: float = 0.1) -> float:
    """Mean over harmonics of the normalised spectral peak near ``i * fc``.

    The spectrum is divided by its largest non-DC magnitude; for each
    harmonic the maximum over bins in ``[(i - drift) fc, (i + drift) fc]`` is
    taken (the nearest bin when the window holds none).
    """
    if not fc_hz > 0 or harmonics < 1:
        raise ValidationError("fc_hz and harmonics must be positive")
    mags = es.magnitudes
    fmax = (mags.size - 1) * es.bin_resolution_hz
    if (harmonics + drift) * fc_hz > fmax:
        raise ValidationError(
            f"harmonic window up to {(harmonics + drift) * fc_hz:.1f} Hz exceeds {fmax:.1f} Hz"
        )
    peak = mags[1:].max()
    if peak <= 0:
        return 0.0
    norm = mags / peak
    freqs = es.frequencies_hz
    total = 0.0
    for i in range(1, harmonics + 1):
        lo, hi = (i - drift) * fc_hz, (i + drift) * fc_hz
        sel = (freqs >= lo) & (freqs <= hi)
        sel[0] = False
        if not sel.any():
            sel = np.zeros_like(sel)
            sel[max(1, int(round(i * fc_hz / es.bin_resolution_hz)))] = True
        total += norm[sel].max()
    return total / harmonics


def write_spectrum_csv(es: EnvelopeSpectrum, path) -> None:
    """``freq_hz,magnitude`` rows for every one-sided bin."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["freq_hz", "magnitude"])
        for f, m in zip(es.frequencies_hz, es.magnitudes):
            w.writerow([f"{f:.6f}", f"{m:.10g}"])
