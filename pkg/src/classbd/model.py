"""ClassBD: neural BD front-end + classifier trained under one joint loss."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .classifier import Wdcnn, WdcnnConfig
from .filters import FrequencyDomainFilter, TimeDomainFilter, classbd_forward
from .losses import (
    LossBreakdown,
    UncertaintyWeights,
    cross_entropy_t,
    frequency_loss_t,
    joint_loss,
    time_loss_t,
)
from .params import ParameterStore, load_checkpoint, save_checkpoint
from .signals import ValidationError


@dataclass
class ModelConfig:
    num_classes: int
    segment_length: int = 2048
    enable_time_filter: bool = True
    enable_freq_filter: bool = True
    channels: int = 16
    kernel_size: int = 64
    activation: str = "identity"
    dense_freq: bool = False
    standardize_bd_output: bool = True  # per-segment z-score between BD and classifier
    wdcnn: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def enable_bd(self) -> bool:
        return self.enable_time_filter or self.enable_freq_filter

    def wdcnn_config(self) -> WdcnnConfig:
        kw = dict(self.wdcnn)
        if "stage_channels" in kw:
            kw["stage_channels"] = tuple(kw["stage_channels"])
        return WdcnnConfig(num_classes=self.num_classes, input_length=self.segment_length, **kw)


def standardize_t(y: Tensor, eps: float = 1e-12) -> Tensor:
    """Row-wise zero mean, unit sample standard deviation (ddof=1)."""
    n = y.shape[-1]
    centred = y - y.mean(axis=-1, keepdims=True)
    var = (centred * centred).sum(axis=-1, keepdims=True) * (1.0 / (n - 1))
    return centred / ag.sqrt(var + eps)


class ClassBD:
    """Time filter -> frequency filter -> WDCNN, plus learnable loss weights."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.time_filter = (
            TimeDomainFilter(cfg.channels, cfg.kernel_size, cfg.activation, seed=cfg.seed)
            if cfg.enable_time_filter else None
        )
        self.freq_filter = (
            FrequencyDomainFilter(cfg.segment_length, dense=cfg.dense_freq)
            if cfg.enable_freq_filter else None
        )
        self.classifier = Wdcnn(cfg.wdcnn_config(), seed=cfg.seed + 100)
        self.weights = UncertaintyWeights()
        self.params = ParameterStore()
        for part in (self.time_filter, self.freq_filter, self.classifier):
            if part is not None:
                self.params.update(part.params)
        self.params.update(self.weights.parameters())

    def train(self, mode: bool = True) -> None:
        self.classifier.training = mode

    def bd(self, x) -> tuple[Tensor, Tensor]:
        """``(xhat, yhat)``: time-filter tap and final BD output."""
        return classbd_forward(self.time_filter, self.freq_filter, x)

    def forward(self, x) -> tuple[Tensor, Tensor, Tensor]:
        xhat, yhat = self.bd(x)
        feed = standardize_t(yhat) if self.cfg.standardize_bd_output and self.cfg.enable_bd else yhat
        return xhat, yhat, self.classifier(feed)

    def loss(self, x, labels, enable_lt: bool = True, enable_lf: bool = True,
             uncertainty: bool = True, lt_offset: float = 0.0) -> LossBreakdown:
        xhat, yhat, logits = self.forward(x)
        lc = cross_entropy_t(logits, labels)
        use_lt = enable_lt and self.time_filter is not None
        use_lf = enable_lf and self.cfg.enable_bd
        lt = time_loss_t(xhat) if use_lt else 0.0
        lf = frequency_loss_t(yhat) if use_lf else 0.0
        return joint_loss(lc, lt, lf, self.weights if uncertainty else None,
                          enable_lt=use_lt, enable_lf=use_lf, lt_offset=lt_offset)

    def bd_output(self, x, batch_size: int = 256) -> np.ndarray:
        """BD output for a stacked array of segments, no graph recorded."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if not self.cfg.enable_bd:
            return x.copy()
        out = [self.bd(Tensor(x[i : i + batch_size]))[1].data for i in range(0, len(x), batch_size)]
        return np.concatenate(out, axis=0)

    def logits(self, x, batch_size: int = 256) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        prev = self.classifier.training
        self.train(False)
        try:
            out = [self.forward(Tensor(x[i : i + batch_size]))[2].data
                   for i in range(0, len(x), batch_size)]
        finally:
            self.train(prev)
        return np.concatenate(out, axis=0)

    # -- persistence -------------------------------------------------------
    def state(self) -> dict[str, np.ndarray]:
        st = self.params.state()
        st.update({f"buffer/{k}": v.copy() for k, v in self.classifier.buffers.items()})
        return st

    def load_state(self, state: dict) -> None:
        self.params.load_state(state)
        for k, v in self.classifier.buffers.items():
            key = f"buffer/{k}"
            if key in state:
                v[...] = state[key]

    def save(self, path, extra_tensors: dict | None = None, meta: dict | None = None) -> None:
        tensors = self.state()
        tensors.update(extra_tensors or {})
        m = {"model": asdict(self.cfg)}
        m.update(meta or {})
        save_checkpoint(path, tensors, m)

    @classmethod
    def load(cls, path) -> tuple["ClassBD", dict, dict]:
        tensors, meta = load_checkpoint(path)
        if "model" not in meta:
            raise ValidationError(f"{path} carries no model configuration")
        model = cls(ModelConfig(**meta["model"]))
        model.load_state(tensors)
        return model, tensors, meta
