"""Adam optimizer and the reduce-on-plateau learning-rate scheduler.

Defaults are beta1=0.9, beta2=0.99 and decay=1e-6.
"decay" is interpreted as per-step learning-rate decay
lr_t = lr / (1 + decay * t) by default; the alternative L2 reading (add
decay * p to the gradient) is available via decay_mode="l2".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import GradKey, ModelParams, get_array, learnable_keys, set_array

PLATEAU_FACTOR = math.sqrt(0.1)


class NumericalError(RuntimeError):
    """Non-finite values where finite ones are required (NaN loss/gradient)."""


@dataclass
class AdamState:
    m: dict[GradKey, np.ndarray]
    v: dict[GradKey, np.ndarray]
    t: int = 0
    base_lr: float = 6e-5
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-8
    decay: float = 1e-6
    decay_mode: str = "lr"  # "lr" or "l2"


def init_adam(params: ModelParams, base_lr: float = 6e-5, beta1: float = 0.9,
              beta2: float = 0.99, epsilon: float = 1e-8, decay: float = 1e-6,
              decay_mode: str = "lr") -> AdamState:
    if decay_mode not in ("lr", "l2"):
        raise ValueError(f"decay_mode must be 'lr' or 'l2', got {decay_mode!r}")
    keys = learnable_keys(params)
    return AdamState(
        m={k: np.zeros_like(get_array(params, k)) for k in keys},
        v={k: np.zeros_like(get_array(params, k)) for k in keys},
        base_lr=base_lr, beta1=beta1, beta2=beta2,
        epsilon=epsilon, decay=decay, decay_mode=decay_mode,
    )


def adam_step(state: AdamState, params: ModelParams,
              grads: dict[GradKey, np.ndarray], lr: float | None = None) -> None:
    """One bias-corrected Adam update over every learnable array, in place.

    `lr` is the scheduler-controlled rate (defaults to base_lr); with
    decay_mode="lr" the effective rate is lr / (1 + decay * t).
    """
    state.t += 1
    lr = state.base_lr if lr is None else lr
    if state.decay_mode == "lr":
        lr_t = lr / (1.0 + state.decay * state.t)
    else:
        lr_t = lr
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for key in learnable_keys(params):
        p = get_array(params, key)
        if key not in grads:
            raise ValueError(f"missing gradient for {key}")
        g = grads[key]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match "
                             f"parameter shape {p.shape} at {key}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient at {key}")
        if state.decay_mode == "l2":
            g = g + state.decay * p
        m = state.m[key]
        v = state.v[key]
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        m_hat = m / bc1
        v_hat = v / bc2
        p -= (lr_t * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(p.dtype)


@dataclass
class PlateauScheduler:
    """Multiply lr by sqrt(0.1) after `patience` epochs without improvement."""

    lr: float = 6e-5
    factor: float = PLATEAU_FACTOR
    patience: int = 10
    min_delta: float = 1e-4
    min_lr: float = 1e-8
    best: float = field(default=math.inf)
    wait: int = 0

    def observe(self, val_loss: float) -> tuple[float, bool]:
        """Feed one validation loss; returns (current lr, reduced this call)."""
        if math.isnan(val_loss):
            raise NumericalError("validation loss is NaN")
        reduced = False
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.wait = 0
        else:
            self.wait += 1
            if self.wait > self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.wait = 0
                reduced = True
        return self.lr, reduced


def scheduler_observe(sched: PlateauScheduler, val_loss: float) -> tuple[float, bool]:
    return sched.observe(val_loss)
