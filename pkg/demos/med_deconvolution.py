"""Minimum entropy deconvolution as a kurtosis-seeking FIR filter.

MED solves for the filter that maximises output kurtosis by fixed-point
iteration. Kurtosis should rise, and the fault harmonics should stand out
more in the squared envelope spectrum.
"""
from classbd import (
    FaultSpec,
    add_noise_snr,
    fault_frequency_index,
    generate_fault_signal,
    kurtosis,
    med_deconvolve,
    squared_envelope_spectrum,
)

FS = 12_000.0
FC = 87.0

spec = FaultSpec(fault_period_s=1 / FC, resonance_hz=3000.0, decay_rate=900.0)
x = add_noise_snr(generate_fault_signal(spec, 2048 / FS, FS, seed=0), -6.0, "gaussian", seed=1)

result = med_deconvolve(x, filter_length=64)
y = result.output

print(f"iterations: {len(result.kurtosis_trace) - 1}")
print(f"kurtosis   before {kurtosis(x.samples):.5f}  after {kurtosis(y.samples):.5f}")
ffi_x = fault_frequency_index(squared_envelope_spectrum(x), FC)
ffi_y = fault_frequency_index(squared_envelope_spectrum(y), FC)
print(f"FFI        before {ffi_x:.3f}  after {ffi_y:.3f}")
