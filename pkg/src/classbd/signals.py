"""Synthetic bearing-fault signals, noise injection and dataset segmentation."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import iirpeak, lfilter


class ValidationError(ValueError):
    """Invalid input to a signal, dataset or model routine."""


@dataclass(frozen=True)
class TimeSeries:
    """A uniformly sampled real signal."""

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValidationError("samples must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("samples contain NaN or Inf")
        if not self.sample_rate_hz > 0:
            raise ValidationError("sample_rate_hz must be positive")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def with_samples(self, samples) -> "TimeSeries":
        return TimeSeries(samples, self.sample_rate_hz)


@dataclass(frozen=True)
class FaultSpec:
    """Parameters of the periodic-impact fault model.

    The impulse response is ``A * exp(-decay * t) * sin(2 pi f_r t)`` for
    ``t >= 0``; impacts are modulated by ``q(t) = (1 + cos(2 pi t / T_m)) / 2``
    or by 1 when ``modulation_period_s`` is 0.
    """

    fault_period_s: float
    resonance_hz: float
    decay_rate: float
    modulation_period_s: float = 0.0
    impulse_amplitude: float = 1.0
    jitter_fraction: float = 0.0

    def validate(self, sample_rate_hz: float) -> None:
        if not sample_rate_hz > 0:
            raise ValidationError("sample_rate_hz must be positive")
        if not self.fault_period_s > 2.0 / sample_rate_hz:
            raise ValidationError(
                f"fault_period_s={self.fault_period_s} leaves fewer than two samples between impacts"
            )
        if not 0 < self.resonance_hz < sample_rate_hz / 2:
            raise ValidationError(f"resonance_hz={self.resonance_hz} must lie in (0, Nyquist)")
        if not self.decay_rate > 0:
            raise ValidationError("decay_rate must be positive")
        if self.modulation_period_s < 0:
            raise ValidationError("modulation_period_s must be non-negative")
        if not 0 <= self.jitter_fraction <= 0.05:
            raise ValidationError("jitter_fraction must lie in [0, 0.05]")

    @property
    def fault_frequency_hz(self) -> float:
        return 1.0 / self.fault_period_s


@dataclass(frozen=True)
class LabeledSegment:
    series: TimeSeries
    class_id: int
    start_index: int = 0
    seed: int | None = None
    clean: TimeSeries | None = None


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)
    num_classes: int = 1
    segment_length: int = 0

    def check(self) -> None:
        for seg in self.train + self.validation + self.test:
            if len(seg.series) != self.segment_length:
                raise ValidationError("segment length mismatch")
            if not 0 <= seg.class_id < self.num_classes:
                raise ValidationError(f"class_id {seg.class_id} out of range")

    def arrays(self, part: str) -> tuple[np.ndarray, np.ndarray]:
        """Stack one split into ``(X, y)`` arrays."""
        segs = getattr(self, part)
        if not segs:
            return np.zeros((0, self.segment_length)), np.zeros(0, dtype=int)
        x = np.stack([s.series.samples for s in segs])
        y = np.array([s.class_id for s in segs], dtype=int)
        return x, y


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------
_TAIL_EFOLDS = 40.0  # exp(-40) ~ 4e-18: impulse tail below float resolution


def generate_fault_signal(
    spec: FaultSpec, duration_s: float, sample_rate_hz: float, seed: int = 0
) -> TimeSeries:
    """Sum of modulated, decaying impulse responses spaced one fault period apart.

    Impacts before ``t = 0`` whose tails reach into the window are included,
    so a jitter-free signal is periodic over the whole record when the
    period is an integer number of samples.
    """
    spec.validate(sample_rate_hz)
    if duration_s < 2 * spec.fault_period_s:
        raise ValidationError("duration_s must cover at least two fault periods")
    n = int(round(duration_s * sample_rate_hz))
    out = np.zeros(n)
    if spec.impulse_amplitude == 0:
        return TimeSeries(out, sample_rate_hz)

    rng = np.random.default_rng(seed)
    period = spec.fault_period_s
    tail_s = _TAIL_EFOLDS / spec.decay_rate
    i_first = -int(math.ceil(tail_s / period)) - 1
    i_last = int(math.ceil(duration_s / period)) + 1
    idx = np.arange(i_first, i_last + 1)
    drift = rng.uniform(-spec.jitter_fraction, spec.jitter_fraction, size=idx.size) * period
    impacts = idx * period + drift
    if spec.modulation_period_s > 0:
        weights = 0.5 * (1.0 + np.cos(2 * np.pi * impacts / spec.modulation_period_s))
    else:
        weights = np.ones(idx.size)

    dt = 1.0 / sample_rate_hz
    tail_n = int(math.ceil(tail_s * sample_rate_hz)) + 1
    w = 2 * np.pi * spec.resonance_hz
    for t_i, q_i in zip(impacts, weights):
        lo = max(0, int(math.ceil(t_i / dt - 1e-9)))
        hi = min(n, lo + tail_n)
        if hi <= lo:
            continue
        tau = np.arange(lo, hi) * dt - t_i
        tau = np.maximum(tau, 0.0)
        out[lo:hi] += q_i * np.exp(-spec.decay_rate * tau) * np.sin(w * tau)
    return TimeSeries(spec.impulse_amplitude * out, sample_rate_hz)


def harmonic_background(
    duration_s: float,
    sample_rate_hz: float,
    freqs_hz: Sequence[float],
    amplitudes: Sequence[float],
    phases: Sequence[float] | None = None,
) -> TimeSeries:
    """Stationary sum of sinusoids, e.g. shaft-rotation harmonics."""
    n = int(round(duration_s * sample_rate_hz))
    t = np.arange(n) / sample_rate_hz
    phases = np.zeros(len(freqs_hz)) if phases is None else phases
    x = np.zeros(n)
    for f, a, ph in zip(freqs_hz, amplitudes, phases):
        x += a * np.cos(2 * np.pi * f * t + ph)
    return TimeSeries(x, sample_rate_hz)


def resonant_background(
    duration_s: float,
    sample_rate_hz: float,
    centre_hz: float,
    quality: float,
    rms: float,
    seed: int = 0,
) -> TimeSeries:
    """Stationary random vibration: white forcing through a second-order resonator.

    Models a structural mode excited by broadband running forces. Unlike
    shaft harmonics it carries no discrete cyclic line, so its envelope
    spectrum is a smooth low-frequency hump.
    """
    if not 0 < centre_hz < sample_rate_hz / 2:
        raise ValidationError("background centre must lie strictly below Nyquist")
    if quality <= 0 or rms < 0:
        raise ValidationError("background quality must be positive and rms non-negative")
    n = int(round(duration_s * sample_rate_hz))
    b, a = iirpeak(centre_hz, quality, fs=sample_rate_hz)
    rng = np.random.default_rng(seed)
    # run in a settling prefix so the record starts in steady state
    settle = int(10 * quality * sample_rate_hz / centre_hz)
    x = lfilter(b, a, rng.standard_normal(n + settle))[settle:]
    if rms == 0:
        return TimeSeries(np.zeros(n), sample_rate_hz)
    return TimeSeries(x * (rms / np.sqrt(np.mean(x**2))), sample_rate_hz)


def pink_noise(n: int, rng: np.random.Generator, alpha: float = 1.0) -> np.ndarray:
    """Unit-power noise whose power spectral density falls like ``1/f**alpha``."""
    nbins = n // 2 + 1
    spec = rng.standard_normal(nbins) + 1j * rng.standard_normal(nbins)
    f = np.arange(nbins, dtype=float)
    f[0] = 1.0
    spec *= f ** (-alpha / 2.0)
    spec[0] = 0.0
    x = np.fft.irfft(spec, n=n)
    return x / np.sqrt(np.mean(x**2))


def add_noise_snr(
    signal: TimeSeries, snr_db: float, noise_kind: str = "gaussian", seed: int = 0
) -> TimeSeries:
    """Add noise at a target SNR, measured against this signal's own power.

    Gaussian and Laplace noise are drawn with variance exactly ``Pn``; pink
    noise is synthesised in the frequency domain and rescaled to power ``Pn``.
    """
    x = signal.samples
    ps = float(np.mean(x**2))
    if ps <= 0:
        raise ValidationError("signal has zero power; SNR is undefined")
    pn = ps / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(seed)
    if noise_kind == "gaussian":
        noise = rng.standard_normal(x.size) * math.sqrt(pn)
    elif noise_kind == "laplace":
        noise = rng.laplace(0.0, math.sqrt(pn / 2.0), size=x.size)
    elif noise_kind == "pink":
        noise = pink_noise(x.size, rng) * math.sqrt(pn)
    else:
        raise ValidationError(f"unknown noise kind {noise_kind!r}")
    return signal.with_samples(x + noise)


def measured_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    clean = np.asarray(clean)
    noise = np.asarray(noisy) - clean
    return 10.0 * math.log10(np.mean(clean**2) / np.mean(noise**2))


def zscore_normalize(signal: TimeSeries) -> TimeSeries:
    """Standardise to zero mean and unit sample standard deviation (ddof=1)."""
    x = signal.samples
    if x.size < 2:
        raise ValidationError("z-score needs at least two samples")
    sd = float(np.std(x, ddof=1))
    if not sd > 0:
        raise ValidationError("constant signal has zero variance")
    return signal.with_samples((x - x.mean()) / sd)


def zscore_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise z-score for a stacked batch of segments."""
    x = np.asarray(x, dtype=float)
    sd = x.std(axis=-1, ddof=1, keepdims=True)
    if np.any(sd <= 0):
        raise ValidationError("constant segment has zero variance")
    return (x - x.mean(axis=-1, keepdims=True)) / sd


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------
def window_starts(length: int, segment_length: int, stride: int) -> np.ndarray:
    if length < segment_length:
        return np.zeros(0, dtype=int)
    return np.arange(0, length - segment_length + 1, stride)


def segment_signal(
    signal: TimeSeries,
    segment_length: int,
    stride: int,
    test_fraction: float,
    val_fraction: float,
    class_id: int,
    seed: int = 0,
    num_classes: int | None = None,
) -> DatasetSplit:
    """Chronological split: the trailing ``test_fraction`` of the record is test.

    The leading part is windowed with ``stride`` and shuffled into train and
    validation.  The test region is windowed with the same stride starting
    at the split point, so no test sample precedes a train/validation sample.
    """
    n = len(signal)
    if segment_length < 1 or stride < 1:
        raise ValidationError("segment_length and stride must be positive")
    if segment_length > n:
        raise ValidationError(f"segment_length {segment_length} exceeds signal length {n}")
    if not (0 < test_fraction < 1 and 0 < val_fraction < 1):
        raise ValidationError("fractions must lie in (0, 1)")
    split = n - int(round(test_fraction * n))
    x = signal.samples
    fs = signal.sample_rate_hz

    def make(start):
        return LabeledSegment(
            TimeSeries(x[start : start + segment_length], fs), class_id, start_index=int(start)
        )

    fit_starts = window_starts(split, segment_length, stride)
    test_starts = split + window_starts(n - split, segment_length, stride)
    rng = np.random.default_rng(seed)
    order = rng.permutation(fit_starts.size)
    n_val = int(round(val_fraction * fit_starts.size))
    val_idx = np.sort(order[:n_val])
    train_idx = np.sort(order[n_val:])
    return DatasetSplit(
        train=[make(fit_starts[i]) for i in train_idx],
        validation=[make(fit_starts[i]) for i in val_idx],
        test=[make(s) for s in test_starts],
        num_classes=num_classes if num_classes is not None else class_id + 1,
        segment_length=segment_length,
    )


def merge_splits(parts: Sequence[DatasetSplit], num_classes: int) -> DatasetSplit:
    if not parts:
        raise ValidationError("nothing to merge")
    lengths = {p.segment_length for p in parts}
    if len(lengths) != 1:
        raise ValidationError("segment lengths differ across parts")
    merged = DatasetSplit(num_classes=num_classes, segment_length=lengths.pop())
    for p in parts:
        merged.train += p.train
        merged.validation += p.validation
        merged.test += p.test
    merged.check()
    return merged


# ---------------------------------------------------------------------------
# dataset I/O
# ---------------------------------------------------------------------------
SPLITS = ("train", "validation", "test")


def _write_f32(path: Path, arr: np.ndarray) -> None:
    path.write_bytes(np.asarray(arr, dtype="<f4").tobytes())


def _read_f32(path: Path) -> np.ndarray:
    return np.frombuffer(path.read_bytes(), dtype="<f4").astype(np.float64)


def save_dataset(dataset: DatasetSplit, directory, metadata: dict | None = None) -> Path:
    """Write one sub-directory per split with float32 records and JSON sidecars.

    Each record ``NNNNNN.f32`` holds the segment samples as little-endian
    float32; a clean reference, when present, goes to ``NNNNNN.clean.f32``.
    """
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    fs = None
    for part in SPLITS:
        sub = root / part
        sub.mkdir(exist_ok=True)
        records = []
        for i, seg in enumerate(getattr(dataset, part)):
            fs = seg.series.sample_rate_hz
            stem = f"{i:06d}"
            _write_f32(sub / f"{stem}.f32", seg.series.samples)
            rec = {"file": f"{stem}.f32", "class_id": seg.class_id, "start_index": seg.start_index,
                   "seed": seg.seed}
            if seg.clean is not None:
                _write_f32(sub / f"{stem}.clean.f32", seg.clean.samples)
                rec["clean_file"] = f"{stem}.clean.f32"
            records.append(rec)
        (sub / "records.json").write_text(json.dumps({"records": records}, indent=1))
    sidecar = {
        "sample_rate_hz": fs,
        "segment_length": dataset.segment_length,
        "num_classes": dataset.num_classes,
        "format": "float32-le",
    }
    sidecar.update(metadata or {})
    (root / "dataset.json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))
    return root


def load_dataset(directory) -> tuple[DatasetSplit, dict]:
    root = Path(directory)
    meta_path = root / "dataset.json"
    if not meta_path.exists():
        raise ValidationError(f"{root} has no dataset.json")
    meta = json.loads(meta_path.read_text())
    fs = meta["sample_rate_hz"]
    ds = DatasetSplit(num_classes=meta["num_classes"], segment_length=meta["segment_length"])
    for part in SPLITS:
        sub = root / part
        if not (sub / "records.json").exists():
            continue
        segs = []
        for rec in json.loads((sub / "records.json").read_text())["records"]:
            clean = None
            if "clean_file" in rec:
                clean = TimeSeries(_read_f32(sub / rec["clean_file"]), fs)
            segs.append(
                LabeledSegment(TimeSeries(_read_f32(sub / rec["file"]), fs), rec["class_id"],
                               rec.get("start_index", 0), rec.get("seed"), clean)
            )
        setattr(ds, part, segs)
    ds.check()
    return ds, meta


def read_csv_signal(path, sample_rate_hz: float) -> TimeSeries:
    """Read a single-column CSV with header ``value``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "value" not in reader.fieldnames:
            raise ValidationError(f"{path}: expected a 'value' column")
        values = [float(row["value"]) for row in reader]
    return TimeSeries(np.array(values), sample_rate_hz)
