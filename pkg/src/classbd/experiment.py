"""End-to-end orchestration: synthesis, training, evaluation and export.

Everything here is deterministic for a fixed configuration: per-segment
noise seeds, per-epoch shuffles and initialisations all derive from the
configured seeds, and training runs single-threaded.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import autograd as ag
from .classifier import evaluate_metrics, predict
from .dsp import fault_frequency_index, squared_envelope_spectrum, write_spectrum_csv
from .model import ClassBD, ModelConfig
from .optim import CosineSchedule, NumericalError, Sgd, SgdConfig, cosine_lr
from .params import load_checkpoint
from .signals import (
    DatasetSplit,
    FaultSpec,
    LabeledSegment,
    TimeSeries,
    ValidationError,
    add_noise_snr,
    generate_fault_signal,
    harmonic_background,
    load_dataset,
    merge_splits,
    read_csv_signal,
    resonant_background,
    save_dataset,
    segment_signal,
    zscore_rows,
)

log = logging.getLogger(__name__)

LOG_HEADER = ["epoch", "step", "lc", "lt", "lf", "total", "s_c", "s_t", "s_f", "lr"]
SCHEMA_PATH = Path(__file__).with_name("report_schema.json")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------
@dataclass
class ClassDef:
    name: str
    fault: dict | None = None  # FaultSpec fields; None is a healthy class

    def fault_spec(self) -> FaultSpec | None:
        return FaultSpec(**self.fault) if self.fault else None


@dataclass
class DatasetConfig:
    sample_rate_hz: float = 12000.0
    segment_length: int = 2048
    record_length: int = 2048 * 100
    stride: int = 512
    test_fraction: float = 0.2
    val_fraction: float = 0.2
    seed: int = 0
    # deterministic shaft harmonics under every class (off by default)
    background_hz: list = field(default_factory=list)
    background_amplitude: list = field(default_factory=list)
    # stationary random structural mode under every class; rms 0 turns it off
    random_background_hz: float = 1200.0
    random_background_q: float = 4.0
    random_background_rms: float = 0.16
    classes: list = field(default_factory=list)
    ingest: list = field(default_factory=list)  # [{"path", "class_id"}] CSV records

    @property
    def num_classes(self) -> int:
        ids = [c.get("class_id", 0) for c in self.ingest]
        return max([len(self.classes)] + [i + 1 for i in ids])


@dataclass
class NoiseConfig:
    kind: str = "gaussian"
    snr_db: list = field(default_factory=lambda: [-10.0, -6.0, -2.0, 2.0])
    seed: int = 1


@dataclass
class TrainingConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    batch_size: int = 128
    max_epochs: int = 50
    eta_min: float = 0.0
    seed: int = 0
    schedule_per_step: bool = False
    enable_lt: bool = True
    enable_lf: bool = True
    uncertainty_weighting: bool = True
    lt_offset: float = 1.0
    grad_clip: float | None = 1.0


@dataclass
class OutputConfig:
    directory: str = "classbd_out"
    checkpoint_every: int = 10


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    model: dict = field(default_factory=dict)  # ModelConfig fields minus num_classes/segment_length
    training: TrainingConfig = field(default_factory=TrainingConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"dataset", "noise", "model", "training", "output"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config sections: {sorted(unknown)}")
        try:
            cfg = cls(
                dataset=DatasetConfig(**d.get("dataset", {})),
                noise=NoiseConfig(**d.get("noise", {})),
                model=dict(d.get("model", {})),
                training=TrainingConfig(**d.get("training", {})),
                output=OutputConfig(**d.get("output", {})),
            )
        except TypeError as exc:
            raise ValidationError(f"bad config: {exc}") from exc
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def validate(self) -> None:
        ds = self.dataset
        if ds.num_classes < 2:
            raise ValidationError("need at least two classes")
        for c in ds.classes:
            cd = ClassDef(**c)
            spec = cd.fault_spec()
            if spec is not None:
                spec.validate(ds.sample_rate_hz)
        for rec in ds.ingest:
            if not Path(rec["path"]).exists():
                raise ValidationError(f"ingest path {rec['path']} does not exist")
        if len(ds.background_hz) != len(ds.background_amplitude):
            raise ValidationError("background_hz and background_amplitude differ in length")
        if not 0 < ds.random_background_hz < ds.sample_rate_hz / 2 or ds.random_background_q <= 0 \
                or ds.random_background_rms < 0:
            raise ValidationError("random background needs 0 < centre < Nyquist, q > 0, rms >= 0")
        silent = ds.random_background_rms == 0 and not any(ds.background_amplitude)
        if silent and any(c.get("fault") is None for c in ds.classes):
            raise ValidationError("a class without a fault needs a non-zero background")
        if ds.record_length < ds.segment_length:
            raise ValidationError("record_length shorter than segment_length")
        if self.noise.kind not in ("gaussian", "laplace", "pink"):
            raise ValidationError(f"unknown noise kind {self.noise.kind!r}")
        bad = {"num_classes", "segment_length"} & set(self.model)
        if bad:
            raise ValidationError(f"model section must not set {sorted(bad)}")

    def model_config(self) -> ModelConfig:
        kw = dict(self.model)
        kw.setdefault("seed", self.training.seed)
        return ModelConfig(num_classes=self.dataset.num_classes,
                           segment_length=self.dataset.segment_length, **kw)

    def with_overrides(self, **sections) -> "ExperimentConfig":
        d = copy.deepcopy(self.to_dict())
        for sec, values in sections.items():
            d[sec].update(values)
        return ExperimentConfig.from_dict(d)


def default_classes() -> list[dict]:
    """Healthy plus three fault classes sharing one structural resonance.

    Impulse amplitudes scale with sqrt(period) so every fault class carries
    the same power; per-segment SNR then hides no class cue in signal level.
    """
    common = {"resonance_hz": 3000.0, "decay_rate": 900.0, "jitter_fraction": 0.01}

    def fault(period, **extra):
        return {"fault_period_s": period, "impulse_amplitude": math.sqrt(period * 87.0), **extra, **common}

    return [
        {"name": "healthy", "fault": None},
        {"name": "outer", "fault": fault(1 / 87.0)},
        {"name": "inner", "fault": fault(1 / 131.0, modulation_period_s=1 / 25.0)},
        {"name": "ball", "fault": fault(1 / 57.0, modulation_period_s=1 / 10.0)},
    ]


def default_config(**sections) -> ExperimentConfig:
    cfg = ExperimentConfig(dataset=DatasetConfig(classes=default_classes()))
    return cfg.with_overrides(**sections) if sections else ExperimentConfig.from_dict(cfg.to_dict())


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------
def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _snr_code(snr_db: float) -> int:
    return int(round(snr_db * 1000)) + 10**6


def clean_records(cfg: ExperimentConfig) -> list[TimeSeries]:
    """One clean source record per class."""
    ds = cfg.dataset
    fs = ds.sample_rate_hz
    duration = ds.record_length / fs
    background = harmonic_background(duration, fs, ds.background_hz, ds.background_amplitude)
    records = []
    for cid, c in enumerate(ds.classes):
        spec = ClassDef(**c).fault_spec()
        x = background.samples.copy()
        if ds.random_background_rms > 0:
            x = x + resonant_background(duration, fs, ds.random_background_hz, ds.random_background_q,
                                        ds.random_background_rms, seed=_seed(ds.seed, 11, cid)).samples
        if spec is not None:
            x = x + generate_fault_signal(spec, duration, fs, seed=_seed(ds.seed, cid)).samples
        records.append(TimeSeries(x[: ds.record_length], fs))
    for rec in ds.ingest:
        ext = read_csv_signal(rec["path"], rec.get("sample_rate_hz", fs))
        records.append(ext)
    return records


def class_ids(cfg: ExperimentConfig) -> list[int]:
    return list(range(len(cfg.dataset.classes))) + [r.get("class_id", 0) for r in cfg.dataset.ingest]


def build_dataset(cfg: ExperimentConfig, snr_db: float | None) -> DatasetSplit:
    """Segment each class record chronologically, then add per-segment noise."""
    ds = cfg.dataset
    parts = []
    for rec, cid in zip(clean_records(cfg), class_ids(cfg)):
        parts.append(segment_signal(rec, ds.segment_length, ds.stride, ds.test_fraction,
                                    ds.val_fraction, cid, seed=_seed(ds.seed, 7, cid),
                                    num_classes=ds.num_classes))
    clean = merge_splits(parts, ds.num_classes)
    if snr_db is None:
        return clean
    noisy = DatasetSplit(num_classes=clean.num_classes, segment_length=clean.segment_length)
    for pid, part in enumerate(("train", "validation", "test")):
        segs = []
        for i, seg in enumerate(getattr(clean, part)):
            s = _seed(cfg.noise.seed, _snr_code(snr_db), seg.class_id, pid, i)
            segs.append(LabeledSegment(add_noise_snr(seg.series, snr_db, cfg.noise.kind, s),
                                       seg.class_id, seg.start_index, s, seg.series))
        setattr(noisy, part, segs)
    return noisy


def synth(cfg: ExperimentConfig, out_dir) -> Path:
    """Write one dataset directory per SNR level plus a manifest."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    levels = []
    for snr in cfg.noise.snr_db:
        sub = root / snr_dirname(snr)
        ds = build_dataset(cfg, snr)
        save_dataset(ds, sub, {"snr_db": snr, "noise_kind": cfg.noise.kind,
                               "config_hash": cfg.hash()})
        levels.append({"snr_db": snr, "directory": sub.name,
                       "counts": {p: len(getattr(ds, p)) for p in ("train", "validation", "test")}})
    manifest = {
        "config_hash": cfg.hash(),
        "config": cfg.to_dict(),
        "classes": [
            {"class_id": i, "name": c["name"], "fault": c.get("fault"),
             "seed": _seed(cfg.dataset.seed, i)}
            for i, c in enumerate(cfg.dataset.classes)
        ],
        "noise_seed": cfg.noise.seed,
        "levels": levels,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return root


def snr_dirname(snr: float) -> str:
    return f"snr_{snr:+g}dB"


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------
@dataclass
class TrainResult:
    model: ClassBD
    log_rows: list
    val_history: list
    checkpoint: Path | None
    wall_clock_s: float
    epochs_run: int


def _limit_threads():
    return threadpool_limits(int(os.environ.get("CLASSBD_THREADS", "1")))


def _stack(dataset: DatasetSplit, part: str) -> tuple[np.ndarray, np.ndarray]:
    x, y = dataset.arrays(part)
    return (zscore_rows(x) if len(x) else x), y


def train(cfg: ExperimentConfig, dataset: DatasetSplit, out_dir=None, resume_from=None,
          stop_after_epoch: int | None = None) -> TrainResult:
    """Train ClassBD (or an ablation) under the joint loss with SGD + cosine annealing.

    ``resume_from`` continues a run from a checkpoint written by this function;
    ``stop_after_epoch`` ends early (used to test resumption).
    """
    if dataset.num_classes != cfg.dataset.num_classes:
        raise ValidationError("dataset and config disagree on the class count")
    tc = cfg.training
    sgd = SgdConfig(tc.learning_rate, tc.momentum, tc.batch_size, tc.max_epochs, tc.seed, tc.grad_clip)
    x_train, y_train = _stack(dataset, "train")
    x_val, y_val = _stack(dataset, "validation")
    if len(x_train) == 0:
        raise ValidationError("empty training split")
    steps_per_epoch = math.ceil(len(x_train) / sgd.batch_size)
    total_steps = sgd.max_epochs * (steps_per_epoch if tc.schedule_per_step else 1)
    schedule = CosineSchedule(sgd.learning_rate, tc.eta_min, total_steps)

    model = ClassBD(cfg.model_config())
    opt = Sgd(model.params, sgd)
    start_epoch, rows, val_history = 0, [], []
    if resume_from is not None:
        tensors, meta = load_checkpoint(resume_from)
        if meta.get("config_hash") != cfg.hash():
            raise ValidationError("checkpoint was written under a different configuration")
        model.load_state(tensors)
        opt.load_state(tensors)
        start_epoch = int(meta["epoch"]) + 1
        rows = [dict(zip(LOG_HEADER, r)) for r in meta.get("log_rows", [])]
        val_history = meta.get("val_history", [])

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    last_good = None
    t0 = time.perf_counter()
    limiter = _limit_threads()
    epoch = start_epoch - 1
    try:
        for epoch in range(start_epoch, sgd.max_epochs):
            model.train(True)
            order = np.random.default_rng([sgd.seed, epoch]).permutation(len(x_train))
            for step in range(steps_per_epoch):
                sched_t = epoch * steps_per_epoch + step if tc.schedule_per_step else epoch
                lr = cosine_lr(schedule, sched_t)
                idx = order[step * sgd.batch_size : (step + 1) * sgd.batch_size]
                br = model.loss(x_train[idx], y_train[idx], tc.enable_lt, tc.enable_lf,
                                tc.uncertainty_weighting, tc.lt_offset)
                if not math.isfinite(br.weighted_total):
                    raise NumericalError(f"non-finite loss at epoch {epoch}, step {step}")
                ag.backward(br.tensor)
                opt.step(lr)
                rows.append({"epoch": epoch, "step": step, "lc": br.lc, "lt": br.lt, "lf": br.lf,
                             "total": br.weighted_total, "s_c": br.sigmas[0], "s_t": br.sigmas[1],
                             "s_f": br.sigmas[2], "lr": lr})
            if len(x_val):
                m = evaluate_metrics(predict(model.logits(x_val)), y_val, dataset.num_classes)
                val_history.append({"epoch": epoch, "macro_f1": m["macro"]["f1"]})
                log.info("epoch %d  loss %.4f  val F1 %.3f", epoch, rows[-1]["total"], m["macro"]["f1"])
            final = epoch == sgd.max_epochs - 1 or epoch == stop_after_epoch
            if out is not None and (final or (epoch + 1) % cfg.output.checkpoint_every == 0):
                last_good = out / "checkpoint.bin"
                _save_training_checkpoint(model, opt, cfg, epoch, rows, val_history, last_good)
            if stop_after_epoch is not None and epoch >= stop_after_epoch:
                break
    except NumericalError:
        log.error("training diverged; last good checkpoint: %s", last_good)
        raise
    finally:
        limiter.unregister()
    if out is not None:
        write_log_csv(rows, out / "train_log.csv")
    return TrainResult(model, rows, val_history, last_good, time.perf_counter() - t0, epoch + 1)


def _save_training_checkpoint(model, opt, cfg, epoch, rows, val_history, path) -> None:
    meta = {
        "epoch": epoch,
        "config_hash": cfg.hash(),
        "config": cfg.to_dict(),
        "log_rows": [[r[k] for k in LOG_HEADER] for r in rows],
        "val_history": val_history,
    }
    model.save(path, extra_tensors=opt.state(), meta=meta)


def write_log_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_HEADER)
        for r in rows:
            w.writerow([r["epoch"], r["step"]] + [repr(float(r[k])) for k in LOG_HEADER[2:]])


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------
def fault_frequencies(cfg: ExperimentConfig) -> dict[int, float]:
    out = {}
    for cid, c in enumerate(cfg.dataset.classes):
        spec = ClassDef(**c).fault_spec()
        if spec is not None:
            out[cid] = spec.fault_frequency_hz
    return out


def ffi_of(x: np.ndarray, fs: float, fc: float, harmonics: int = 5) -> float:
    return fault_frequency_index(squared_envelope_spectrum(TimeSeries(x, fs)), fc, harmonics)


def ffi_table(model: ClassBD, cfg: ExperimentConfig, dataset: DatasetSplit, part: str = "test") -> dict:
    """FFI before and after BD for every faulty segment of a split."""
    fs = cfg.dataset.sample_rate_hz
    x, y = _stack(dataset, part)
    yhat = model.bd_output(x)
    per_class = {}
    improved = total = 0
    for cid, fc in fault_frequencies(cfg).items():
        sel = np.flatnonzero(y == cid)
        before = [ffi_of(x[i], fs, fc) for i in sel]
        after = [ffi_of(yhat[i], fs, fc) for i in sel]
        up = int(np.sum(np.array(after) > np.array(before)))
        improved += up
        total += len(sel)
        per_class[str(cid)] = {
            "fc_hz": fc,
            "ffi_before": float(np.mean(before)) if before else 0.0,
            "ffi_after": float(np.mean(after)) if after else 0.0,
            "fraction_improved": up / len(sel) if len(sel) else 0.0,
        }
    return {"per_class": per_class, "fraction_improved": improved / total if total else 0.0}


def evaluate_split(model: ClassBD, dataset: DatasetSplit, part: str = "test") -> dict:
    x, y = _stack(dataset, part)
    return evaluate_metrics(predict(model.logits(x)), y, dataset.num_classes)


def evaluate(model: ClassBD, cfg: ExperimentConfig, datasets: dict, out_dir=None,
             config_hash: str | None = None, spectra_per_class: int = 1,
             train_result: TrainResult | None = None) -> dict:
    """Build the run report for ``{snr_db: DatasetSplit}``.

    Writes ``report.json`` and ``metrics.csv`` and exports envelope spectra of
    a few test segments before/after BD when ``out_dir`` is given.
    """
    t0 = time.perf_counter()
    fs = cfg.dataset.sample_rate_hz
    levels = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for snr, ds in sorted(datasets.items()):
        if ds.num_classes != model.cfg.num_classes:
            raise ValidationError(
                f"dataset has {ds.num_classes} classes, checkpoint {model.cfg.num_classes}"
            )
        m = evaluate_split(model, ds)
        levels.append({
            "snr_db": float(snr),
            "macro_f1": m["macro"]["f1"],
            "macro_fpr": m["macro"]["fpr"],
            "per_class": m["per_class"],
            "confusion": m["confusion"],
            "ffi": ffi_table(model, cfg, ds),
        })
        if out is not None and spectra_per_class > 0:
            x, y = _stack(ds, "test")
            yhat = model.bd_output(x)
            for cid in range(ds.num_classes):
                for j, i in enumerate(np.flatnonzero(y == cid)[:spectra_per_class]):
                    stem = f"{snr_dirname(snr)}_class{cid}_{j}"
                    write_spectrum_csv(squared_envelope_spectrum(TimeSeries(x[i], fs)),
                                       out / f"ses_{stem}_before.csv")
                    write_spectrum_csv(squared_envelope_spectrum(TimeSeries(yhat[i], fs)),
                                       out / f"ses_{stem}_after.csv")
    report = {
        "config_hash": config_hash or cfg.hash(),
        "seed": cfg.training.seed,
        "num_classes": model.cfg.num_classes,
        "levels": levels,
        "wall_clock_s": time.perf_counter() - t0 + (train_result.wall_clock_s if train_result else 0.0),
        "loss_curve": [
            {k: r[k] for k in ("epoch", "step", "total")} for r in (train_result.log_rows if train_result else [])
        ],
    }
    if out is not None:
        (out / "report.json").write_text(json.dumps(report, indent=1))
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["snr_db", "macro_f1", "macro_fpr", "ffi_fraction_improved"])
            for lv in levels:
                w.writerow([lv["snr_db"], lv["macro_f1"], lv["macro_fpr"], lv["ffi"]["fraction_improved"]])
    return report


def report_schema() -> dict:
    return json.loads(SCHEMA_PATH.read_text())


def merge_reports(reports: list[dict]) -> dict:
    """Concatenate SNR levels of reports that share one configuration hash."""
    hashes = {r["config_hash"] for r in reports}
    if len(hashes) != 1:
        raise ValidationError(f"refusing to merge reports from different configs: {sorted(hashes)}")
    merged = dict(reports[0])
    merged["levels"] = sorted((lv for r in reports for lv in r["levels"]), key=lambda lv: lv["snr_db"])
    return merged


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------
def export_features(model: ClassBD, dataset: DatasetSplit, path, parts=("train", "validation", "test")) -> int:
    """Write BD outputs as CSV rows (``f0..f{N-1},label``); returns the row count."""
    n = dataset.segment_length
    rows = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(n)] + ["label"])
        for part in parts:
            x, y = _stack(dataset, part)
            if not len(x):
                continue
            feats = model.bd_output(x)
            for row, label in zip(feats, y):
                w.writerow([repr(float(v)) for v in row] + [int(label)])
                rows += 1
    return rows


def load_level_datasets(root) -> dict:
    """``{snr_db: DatasetSplit}`` for a directory written by :func:`synth`."""
    root = Path(root)
    if (root / "dataset.json").exists():
        ds, meta = load_dataset(root)
        return {float(meta.get("snr_db", 0.0)): ds}
    manifest = json.loads((root / "manifest.json").read_text())
    return {float(lv["snr_db"]): load_dataset(root / lv["directory"])[0] for lv in manifest["levels"]}
