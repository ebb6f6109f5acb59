"""L1 loss, RMSE metric, Adam and the multi-step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, apply_op


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over every element; subgradient 0 at exact ties."""
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray(np.abs(diff).mean(), dtype=pred.dtype).reshape(1, 1, 1, 1)

    def _backward(g):
        s = np.sign(diff) * (g.reshape(()) / n)
        return s.astype(pred.dtype), (-s).astype(target.dtype)

    return apply_op(out, (pred, target), _backward)


def rmse(pred, target) -> float:
    """Root mean squared error, accumulated in float64."""
    p = np.asarray(pred.data if isinstance(pred, Tensor) else pred, dtype=np.float64)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"rmse: shape mismatch {p.shape} vs {t.shape}")
    return float(np.sqrt(np.mean((p - t) ** 2)))


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, **kw) -> "AdamState":
        st = cls(**kw)
        for name, p in params.items():
            st.m[name] = np.zeros_like(p.data)
            st.v[name] = np.zeros_like(p.data)
        return st


def adam_step(params, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update in place; clears gradients afterwards."""
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ValueError(f"adam_step: no gradient for {missing[0]!r} ({len(missing)} missing)")
    state.t += 1
    b1, b2, t = state.beta1, state.beta2, state.t
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape:
            raise ShapeError(f"adam_step: moment buffer for {name!r} has shape {m.shape}, param {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p.data -= step.astype(p.dtype)
        p.grad = None


@dataclass(frozen=True)
class Schedule:
    """Multi-step decay: ``base_lr * gamma ** (#milestones <= epoch)``."""

    base_lr: float = 0.00025
    milestones: tuple = (25, 50, 75, 100, 125, 150)
    gamma: float = 0.5
    total_epochs: int = 200

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        ms = self.milestones
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError(f"milestones must be strictly increasing, got {ms}")
        if ms and ms[-1] >= self.total_epochs:
            raise ConfigError(f"milestones must be < total_epochs ({self.total_epochs}), got {ms}")

    def to_dict(self) -> dict:
        return {
            "base_lr": self.base_lr,
            "milestones": list(self.milestones),
            "gamma": self.gamma,
            "total_epochs": self.total_epochs,
        }


def lr_at(schedule: Schedule, epoch: int) -> float:
    if not 0 <= epoch < schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    drops = sum(1 for m in schedule.milestones if m <= epoch)
    return schedule.base_lr * schedule.gamma**drops
