"""Classifier-guided blind deconvolution for vibration-based fault diagnosis."""
from .autograd import GraphError, Tensor, backward, finite_difference_check
from .classifier import Wdcnn, WdcnnConfig, classifier_forward, evaluate_metrics, predict
from .dsp import (
    EnvelopeSpectrum,
    Spectrum,
    analytic_signal,
    envelope,
    envelope_spectrum,
    fault_frequency_index,
    fft,
    hilbert_transform,
    ifft,
    instantaneous_autocorrelation,
    squared_envelope_spectrum,
    write_spectrum_csv,
)
from .filters import (
    FrequencyDomainFilter,
    QuadraticConvLayer,
    TimeDomainFilter,
    classbd_forward,
    freq_filter_forward,
    qconv_forward,
    relinear_init,
    time_filter_forward,
)
from .losses import (
    LossBreakdown,
    UncertaintyWeights,
    cross_entropy,
    es_sparsity_loss,
    g_lp_lq,
    joint_loss,
    kurtosis,
    sparsity_ratio,
)
from .med import FirFilter, MedResult, med_deconvolve
from .model import ClassBD, ModelConfig
from .optim import CosineSchedule, NumericalError, Sgd, SgdConfig, cosine_lr, sgd_step
from .params import ParameterStore, load_checkpoint, save_checkpoint
from .signals import (
    DatasetSplit,
    FaultSpec,
    LabeledSegment,
    TimeSeries,
    ValidationError,
    add_noise_snr,
    generate_fault_signal,
    harmonic_background,
    resonant_background,
    load_dataset,
    measured_snr_db,
    save_dataset,
    segment_signal,
    zscore_normalize,
)

__version__ = "0.1.0"
