"""Command-line entry point: ``classbd <subcommand> [options]``.

Exit status is 0 on success, 2 for invalid input or configuration and 3
when a numerical failure (divergence, singular system) aborts the command.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .dsp import envelope_spectrum, fault_frequency_index, squared_envelope_spectrum, write_spectrum_csv
from .experiment import (
    ExperimentConfig,
    default_config,
    evaluate,
    export_features,
    load_level_datasets,
    synth,
    train,
)
from .med import med_deconvolve
from .model import ClassBD
from .optim import NumericalError
from .signals import TimeSeries, ValidationError, read_csv_signal, zscore_rows

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg = cfg.with_overrides(training={"seed": args.seed}, dataset={"seed": args.seed})
    return cfg


def _out_dir(args, cfg: ExperimentConfig | None = None) -> Path:
    out = Path(args.out) if args.out else Path(cfg.output.directory if cfg else ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_signal(path, fs: float) -> TimeSeries:
    """A ``value`` CSV, or raw little-endian float32 with a ``.f32`` suffix."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{path} does not exist")
    if path.suffix == ".f32":
        return TimeSeries(np.frombuffer(path.read_bytes(), dtype="<f4").astype(float), fs)
    return read_csv_signal(path, fs)


def _select_levels(datasets: dict, snr: list | None) -> dict:
    if not snr:
        return datasets
    missing = [s for s in snr if float(s) not in datasets]
    if missing:
        raise ValidationError(f"SNR levels {missing} not in dataset (have {sorted(datasets)})")
    return {float(s): datasets[float(s)] for s in snr}


# -- subcommands -----------------------------------------------------------
def cmd_synth(args) -> dict:
    cfg = _load_config(args)
    root = synth(cfg, _out_dir(args, cfg))
    return {"dataset": str(root), "config_hash": cfg.hash()}


def cmd_train(args) -> dict:
    cfg = _load_config(args)
    datasets = _select_levels(load_level_datasets(args.data), [args.snr] if args.snr is not None else None)
    if len(datasets) != 1:
        raise ValidationError("train needs exactly one SNR level; pass --snr")
    ((snr, ds),) = datasets.items()
    out = _out_dir(args, cfg)
    result = train(cfg, ds, out_dir=out, resume_from=args.resume)
    report = evaluate(result.model, cfg, {snr: ds}, out_dir=out, train_result=result)
    return {"checkpoint": str(result.checkpoint), "macro_f1": report["levels"][0]["macro_f1"]}


def _config_from_checkpoint(meta: dict, args) -> ExperimentConfig:
    if args.config:
        return _load_config(args)
    if "config" not in meta:
        raise ValidationError("checkpoint carries no experiment config; pass --config")
    return ExperimentConfig.from_dict(meta["config"])


def cmd_eval(args) -> dict:
    model, _, meta = ClassBD.load(args.checkpoint)
    cfg = _config_from_checkpoint(meta, args)
    datasets = _select_levels(load_level_datasets(args.data), args.snr)
    report = evaluate(model, cfg, datasets, out_dir=_out_dir(args),
                      config_hash=meta.get("config_hash"), spectra_per_class=args.spectra)
    return {lv["snr_db"]: {"macro_f1": lv["macro_f1"], "macro_fpr": lv["macro_fpr"]}
            for lv in report["levels"]}


def cmd_bd_run(args) -> dict:
    x = _read_signal(args.input, args.fs)
    out = _out_dir(args)
    if args.method == "med":
        res = med_deconvolve(x, args.filter_length, args.max_iters, args.tol)
        y = res.output.samples
        with open(out / "kurtosis_trace.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "kurtosis"])
            w.writerows([i, repr(k)] for i, k in enumerate(res.kurtosis_trace))
        np.savetxt(out / "filter_taps.csv", res.filter.taps, header="tap", comments="")
        summary = {"iterations": res.iterations, "converged": res.converged,
                   "kurtosis_in": res.kurtosis_trace[0], "kurtosis_out": res.kurtosis_trace[-1]}
    else:
        if not args.checkpoint:
            raise ValidationError("--method classbd needs --checkpoint")
        model, _, _ = ClassBD.load(args.checkpoint)
        n = model.cfg.segment_length
        if x.samples.size < n:
            raise ValidationError(f"signal shorter than the model segment length {n}")
        count = x.samples.size // n
        segs = zscore_rows(x.samples[: count * n].reshape(count, n))
        y = model.bd_output(segs).reshape(-1)
        summary = {"segments": count}
    (out / "bd_output.f32").write_bytes(np.asarray(y, dtype="<f4").tobytes())
    np.savetxt(out / "bd_output.csv", y, header="value", comments="")
    summary["output"] = str(out / "bd_output.csv")
    return summary


def cmd_ffi(args) -> dict:
    x = _read_signal(args.input, args.fs)
    es = envelope_spectrum(x) if args.plain else squared_envelope_spectrum(x)
    return {"ffi": fault_frequency_index(es, args.fc, args.harmonics), "fc_hz": args.fc}


def cmd_export_spectrum(args) -> dict:
    x = _read_signal(args.input, args.fs)
    es = envelope_spectrum(x) if args.plain else squared_envelope_spectrum(x)
    out = _out_dir(args) / (Path(args.input).stem + "_es.csv")
    write_spectrum_csv(es, out)
    return {"spectrum": str(out), "bins": int(es.magnitudes.size)}


def cmd_export_features(args) -> dict:
    model, _, meta = ClassBD.load(args.checkpoint)
    datasets = _select_levels(load_level_datasets(args.data), [args.snr] if args.snr is not None else None)
    out = _out_dir(args)
    written = {}
    for snr, ds in sorted(datasets.items()):
        if ds.num_classes != model.cfg.num_classes:
            raise ValidationError("dataset and checkpoint disagree on the class count")
        path = out / f"features_snr_{snr:+g}dB.csv"
        written[str(path)] = export_features(model, ds, path)
    return written


# -- parser ----------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON (defaults built in)")
    common.add_argument("--seed", type=int, help="override dataset and training seeds")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="classbd", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="write synthetic datasets, one per SNR level")

    t = sub.add_parser("train", parents=[common], help="train a model on one SNR level")
    t.add_argument("--data", required=True, help="dataset directory or synth output root")
    t.add_argument("--snr", type=float)
    t.add_argument("--resume", help="checkpoint to continue from")

    e = sub.add_parser("eval", parents=[common], help="per-SNR metrics, FFI and spectra")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--snr", type=float, nargs="*")
    e.add_argument("--spectra", type=int, default=1, help="spectra exported per class and level")

    b = sub.add_parser("bd-run", parents=[common], help="deconvolve one signal with MED or a trained model")
    b.add_argument("--method", choices=("med", "classbd"), default="med")
    b.add_argument("--input", required=True, help="CSV with a 'value' column or raw .f32")
    b.add_argument("--fs", type=float, default=12000.0)
    b.add_argument("--checkpoint")
    b.add_argument("--filter-length", type=int, default=64)
    b.add_argument("--max-iters", type=int, default=100)
    b.add_argument("--tol", type=float, default=1e-6)

    for name, help_ in (("ffi", "fault frequency index of one signal"),
                        ("export-spectrum", "write the envelope spectrum as CSV")):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.add_argument("--input", required=True)
        s.add_argument("--fs", type=float, default=12000.0)
        s.add_argument("--plain", action="store_true", help="envelope spectrum instead of squared envelope")
        if name == "ffi":
            s.add_argument("--fc", type=float, required=True)
            s.add_argument("--harmonics", type=int, default=5)

    f = sub.add_parser("export-features", parents=[common], help="BD outputs plus labels as CSV")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--snr", type=float)
    return p


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "bd-run": cmd_bd_run,
    "ffi": cmd_ffi,
    "export-spectrum": cmd_export_spectrum,
    "export-features": cmd_export_features,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        threads = int(os.environ.get("CLASSBD_THREADS", "1"))
    except ValueError:
        print("error: CLASSBD_THREADS must be an integer", file=sys.stderr)
        return EXIT_INVALID
    try:
        with threadpool_limits(threads):
            result = COMMANDS[args.command](args)
    except (ValidationError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(json.dumps(result, indent=1, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
