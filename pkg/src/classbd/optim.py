"""SGD with momentum and cosine learning-rate annealing."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import ParameterStore
from .signals import ValidationError


class NumericalError(FloatingPointError):
    """Non-finite values encountered during optimisation."""


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    batch_size: int = 128
    max_epochs: int = 50
    seed: int = 0
    grad_clip: float | None = None  # L2 norm cap per module (name prefix before the first '.'), None disables

    def __post_init__(self):
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ValidationError("grad_clip must be positive")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValidationError("batch_size and max_epochs must be positive")


@dataclass(frozen=True)
class CosineSchedule:
    eta_max: float
    eta_min: float = 0.0
    total_steps: int = 50

    def __post_init__(self):
        if not (self.eta_max > 0 and 0 <= self.eta_min < self.eta_max and self.total_steps > 0):
            raise ValidationError("need eta_max > eta_min >= 0 and total_steps > 0")


def cosine_lr(schedule: CosineSchedule, t: int) -> float:
    """``eta_min + (eta_max - eta_min) * (1 + cos(pi t / T)) / 2``."""
    if not 0 <= t <= schedule.total_steps:
        raise ValidationError(f"step {t} outside [0, {schedule.total_steps}]")
    span = schedule.eta_max - schedule.eta_min
    return schedule.eta_min + 0.5 * span * (1.0 + math.cos(math.pi * t / schedule.total_steps))


def _group(name: str) -> str:
    return name.split(".", 1)[0]


class Sgd:
    """Heavy-ball SGD: ``v <- mu v + g``, ``theta <- theta - lr v``."""

    def __init__(self, store: ParameterStore, cfg: SgdConfig):
        self.store = store
        self.cfg = cfg
        self.velocity = {name: np.zeros_like(p.data) for name, p in store.items()}

    def grad_norm(self, group: str | None = None) -> float:
        """L2 norm of the gradient, over one module prefix or all parameters."""
        return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for name, p in self.store.items()
                             if group is None or _group(name) == group))

    def step(self, lr: float) -> None:
        for name, p in self.store.items():
            if not np.all(np.isfinite(p.grad)):
                raise NumericalError(f"non-finite gradient in parameter {name!r}")
        scales: dict[str, float] = {}
        if self.cfg.grad_clip is not None:
            for g in {_group(name) for name, _ in self.store.items()}:
                norm = self.grad_norm(g)
                scales[g] = self.cfg.grad_clip / norm if norm > self.cfg.grad_clip else 1.0
        mu = self.cfg.momentum
        for name, p in self.store.items():
            scale = scales.get(_group(name), 1.0)
            v = self.velocity[name]
            v *= mu
            v += p.grad if scale == 1.0 else scale * p.grad
            p.data -= lr * v
        self.store.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {f"momentum/{k}": v.copy() for k, v in self.velocity.items()}

    def load_state(self, state: dict) -> None:
        for k in self.velocity:
            key = f"momentum/{k}"
            if key in state:
                self.velocity[k][...] = state[key]


def sgd_step(store: ParameterStore, cfg: SgdConfig, lr_now: float, optimizer: Sgd | None = None) -> Sgd:
    """Apply one update, creating the momentum state on first use."""
    opt = optimizer if optimizer is not None else Sgd(store, cfg)
    opt.step(lr_now)
    return opt
