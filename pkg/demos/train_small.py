"""A short ClassBD run on a reduced problem.

The full experiment takes several minutes. Here the segments, the network
and the epoch count are all cut down, so the whole loop (synthesis,
joint training, evaluation, FFI table) finishes in seconds. Eight epochs
on 60 segments is far too little to learn a useful filter, so expect
near-chance F1; the point is the shape of the loop and its outputs.
"""
import tempfile

from classbd.experiment import build_dataset, default_config, evaluate, ffi_table, train

cfg = default_config(
    dataset={"segment_length": 512, "record_length": 512 * 24, "stride": 512},
    noise={"snr_db": [0.0]},
    model={"channels": 4, "kernel_size": 16,
           "wdcnn": {"first_kernel": 32, "first_stride": 8, "stage_channels": [8, 16], "fc_width": 32}},
    training={"batch_size": 16, "max_epochs": 8},
)
ds = build_dataset(cfg, 0.0)
print(f"segments: train {len(ds.train)}, validation {len(ds.validation)}, test {len(ds.test)}")

with tempfile.TemporaryDirectory() as out:
    result = train(cfg, ds, out_dir=out)
    for row in result.log_rows[:: max(1, len(result.log_rows) // 8)]:
        print(f"epoch {row['epoch']:2d}  lc {row['lc']:.3f}  lt {row['lt']:+.4f}  lf {row['lf']:.3f}")
    report = evaluate(result.model, cfg, {0.0: ds}, out_dir=out)

level = report["levels"][0]
print(f"test macro F1: {level['macro_f1']:.3f}")
print(f"FFI improved on {ffi_table(result.model, cfg, ds)['fraction_improved']:.0%} of fault segments")
