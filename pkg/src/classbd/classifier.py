"""Wide-first-kernel 1-D CNN classifier and one-vs-rest classification metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .params import ParameterStore
from .signals import ValidationError


@dataclass(frozen=True)
class WdcnnConfig:
    num_classes: int
    input_length: int = 2048
    first_kernel: int = 64
    first_stride: int = 16
    stage_channels: tuple = (16, 32, 64)
    fc_width: int = 100
    batch_norm: bool = False

    def feature_lengths(self) -> list[int]:
        """Temporal length after each conv + pool stage."""
        pad = (self.first_kernel - self.first_stride) // 2
        n = (self.input_length + 2 * pad - self.first_kernel) // self.first_stride + 1
        lengths = [n // 2]
        for _ in self.stage_channels[1:]:
            lengths.append(lengths[-1] // 2)
        return lengths

    def validate(self) -> None:
        if self.num_classes < 1:
            raise ValidationError("num_classes must be positive")
        if not self.stage_channels:
            raise ValidationError("at least one stage is required")
        if min(self.feature_lengths()) < 1:
            raise ValidationError(
                f"input length {self.input_length} too short for {len(self.stage_channels)} stages"
            )


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _he_uniform(rng, fan_in, shape):
    """Variance 2/fan_in, which keeps ReLU activations from shrinking stage by stage."""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Wdcnn:
    """Wide strided first convolution, then 3-tap conv/pool stages, GAP and an MLP head."""

    BN_EPS = 1e-5
    BN_MOMENTUM = 0.1

    def __init__(self, cfg: WdcnnConfig, seed: int = 0, prefix: str = "clf"):
        cfg.validate()
        self.cfg = cfg
        self.training = True
        rng = np.random.default_rng(seed)
        self.params = ParameterStore()
        self.buffers: dict[str, np.ndarray] = {}
        self._convs = []
        in_ch = 1
        for i, out_ch in enumerate(cfg.stage_channels):
            k = cfg.first_kernel if i == 0 else 3
            fan_in = in_ch * k
            w = self.params.add(f"{prefix}.conv{i}.weight",
                                Tensor(_he_uniform(rng, fan_in, (out_ch, in_ch, k))))
            b = self.params.add(f"{prefix}.conv{i}.bias", Tensor(_uniform(rng, fan_in, out_ch)))
            if i == 0:
                pad = (cfg.first_kernel - cfg.first_stride) // 2
                spec = (w, b, cfg.first_stride, (pad, pad))
            else:
                spec = (w, b, 1, (1, 1))
            if cfg.batch_norm:
                self.params.add(f"{prefix}.bn{i}.gamma", Tensor(np.ones(out_ch)))
                self.params.add(f"{prefix}.bn{i}.beta", Tensor(np.zeros(out_ch)))
                self.buffers[f"{prefix}.bn{i}.running_mean"] = np.zeros(out_ch)
                self.buffers[f"{prefix}.bn{i}.running_var"] = np.ones(out_ch)
            self._convs.append(spec)
            in_ch = out_ch
        self.prefix = prefix
        c = cfg.stage_channels[-1]
        self.fc1_w = self.params.add(f"{prefix}.fc1.weight", Tensor(_he_uniform(rng, c, (c, cfg.fc_width))))
        self.fc1_b = self.params.add(f"{prefix}.fc1.bias", Tensor(_uniform(rng, c, cfg.fc_width)))
        self.out_w = self.params.add(f"{prefix}.out.weight",
                                     Tensor(_he_uniform(rng, cfg.fc_width, (cfg.fc_width, cfg.num_classes))))
        self.out_b = self.params.add(f"{prefix}.out.bias",
                                     Tensor(_uniform(rng, cfg.fc_width, cfg.num_classes)))

    def _batch_norm(self, h: Tensor, i: int) -> Tensor:
        p = f"{self.prefix}.bn{i}"
        gamma = self.params[f"{p}.gamma"].reshape(1, -1, 1)
        beta = self.params[f"{p}.beta"].reshape(1, -1, 1)
        rm, rv = self.buffers[f"{p}.running_mean"], self.buffers[f"{p}.running_var"]
        if self.training:
            mu = h.mean(axis=(0, 2), keepdims=True)
            centred = h - mu
            var = (centred * centred).mean(axis=(0, 2), keepdims=True)
            m = self.BN_MOMENTUM
            count = h.shape[0] * h.shape[2]
            rm[...] = (1 - m) * rm + m * mu.data.reshape(-1)
            rv[...] = (1 - m) * rv + m * var.data.reshape(-1) * count / max(count - 1, 1)
            return centred / ag.sqrt(var + self.BN_EPS) * gamma + beta
        return (h - rm.reshape(1, -1, 1)) / np.sqrt(rv.reshape(1, -1, 1) + self.BN_EPS) * gamma + beta

    def __call__(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=float))
        if x.ndim != 2 or x.shape[1] != self.cfg.input_length:
            raise ValidationError(
                f"classifier expects (batch, {self.cfg.input_length}) input, got {x.shape}"
            )
        h = x.reshape(x.shape[0], 1, x.shape[1])
        for i, (w, b, stride, pad) in enumerate(self._convs):
            h = ag.conv1d(h, w, stride=stride, padding=pad) + b.reshape(1, -1, 1)
            if self.cfg.batch_norm:
                h = self._batch_norm(h, i)
            h = ag.max_pool1d(ag.relu(h), 2)
        feat = h.mean(axis=2)
        hidden = ag.relu(feat @ self.fc1_w + self.fc1_b)
        return hidden @ self.out_w + self.out_b


def classifier_forward(model: Wdcnn, yhat) -> np.ndarray:
    """Logits for a batch of BD outputs, without recording a graph."""
    data = yhat.data if isinstance(yhat, Tensor) else np.asarray(yhat, dtype=float)
    return model(Tensor(np.atleast_2d(data))).data


def predict(logits) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest class index."""
    return np.argmax(np.atleast_2d(np.asarray(logits)), axis=1)


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def evaluate_metrics(predictions, labels, num_classes: int) -> dict:
    """Per-class and macro precision, recall, F1 and FPR from one-vs-rest counts.

    A class that is neither present nor predicted scores 1 on precision,
    recall and F1.  Other empty denominators give 0.
    """
    pred = np.asarray(predictions, dtype=int).reshape(-1)
    true = np.asarray(labels, dtype=int).reshape(-1)
    if pred.size != true.size:
        raise ValidationError("predictions and labels differ in length")
    confusion = np.zeros((num_classes, num_classes), dtype=int)
    np.add.at(confusion, (true, pred), 1)
    total = pred.size
    per_class = []
    for c in range(num_classes):
        tp = int(confusion[c, c])
        fp = int(confusion[:, c].sum() - tp)
        fn = int(confusion[c, :].sum() - tp)
        tn = total - tp - fp - fn
        if tp + fp == 0 and tp + fn == 0:
            precision = recall = f1 = 1.0
        else:
            precision = _ratio(tp, tp + fp)
            recall = _ratio(tp, tp + fn)
            f1 = _ratio(2 * precision * recall, precision + recall)
        per_class.append({
            "class_id": c, "tp": tp, "fp": fp, "fn": fn, "tn": tn,
            "precision": precision, "recall": recall, "f1": f1, "fpr": _ratio(fp, fp + tn),
        })
    macro = {k: float(np.mean([m[k] for m in per_class])) for k in ("precision", "recall", "f1", "fpr")}
    macro["accuracy"] = _ratio(float(np.trace(confusion)), total)
    return {"per_class": per_class, "macro": macro, "confusion": confusion.tolist()}
