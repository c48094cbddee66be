"""Parameter update rules (SGD, Adam, Adagrad, Adadelta, RMSProp) and early stopping.

Slot arrays (moments/accumulators) are created lazily on the first step and
keyed by parameter name; a parameter appearing later, or with a different
shape, is a ``SlotError``. Adadelta applies the learning rate as a multiplier
on its computed delta (Keras convention) so one learning-rate grid drives all
optimizers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .tensor import GradientMap, Tensor

__all__ = [
    "OptimizerState",
    "EarlyStopState",
    "SlotError",
    "optimizer_step",
    "early_stop_observe",
    "OPTIMIZER_KINDS",
]

OPTIMIZER_KINDS = ("sgd", "adam", "adagrad", "adadelta", "rmsprop")


class SlotError(KeyError):
    """Optimizer slot missing or shape-mismatched for a parameter."""


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    rho: float = 0.9
    eps: float = 1e-8
    step_count: int = 0
    slots: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(f"unknown optimizer kind '{self.kind}'")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def _slot_names(self) -> tuple[str, ...]:
        return {
            "sgd": (),
            "adam": ("m", "v"),
            "adagrad": ("acc",),
            "adadelta": ("acc_grad", "acc_delta"),
            "rmsprop": ("acc",),
        }[self.kind]


def _slots_for(state: OptimizerState, name: str, shape) -> Dict[str, np.ndarray]:
    slot = state.slots.get(name)
    if slot is None:
        if state.step_count > 0:
            raise SlotError(f"no slot for parameter '{name}' after step {state.step_count}")
        slot = {k: np.zeros(shape) for k in state._slot_names()}
        state.slots[name] = slot
    else:
        for arr in slot.values():
            if arr.shape != tuple(shape):
                raise SlotError(f"slot shape {arr.shape} != parameter shape {tuple(shape)} for '{name}'")
    return slot


def optimizer_step(state: OptimizerState, params: Dict[str, Tensor], grads: GradientMap) -> None:
    """Apply one in-place update to every parameter that has a gradient."""
    lr = state.learning_rate
    t = state.step_count + 1
    for name, p in params.items():
        g = grads.get(p.id)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
        slot = _slots_for(state, name, p.array.shape)

        if state.kind == "sgd":
            p.array -= lr * g
        elif state.kind == "adam":
            m, v = slot["m"], slot["v"]
            m *= state.beta1
            m += (1 - state.beta1) * g
            v *= state.beta2
            v += (1 - state.beta2) * g * g
            m_hat = m / (1 - state.beta1 ** t)
            v_hat = v / (1 - state.beta2 ** t)
            p.array -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
        elif state.kind == "adagrad":
            acc = slot["acc"]
            acc += g * g
            p.array -= lr * g / (np.sqrt(acc) + state.eps)
        elif state.kind == "adadelta":
            ag, ad = slot["acc_grad"], slot["acc_delta"]
            ag *= state.rho
            ag += (1 - state.rho) * g * g
            delta = np.sqrt(ad + state.eps) / np.sqrt(ag + state.eps) * g
            ad *= state.rho
            ad += (1 - state.rho) * delta * delta
            p.array -= lr * delta
        else:  # rmsprop
            acc = slot["acc"]
            acc *= state.rho
            acc += (1 - state.rho) * g * g
            p.array -= lr * g / (np.sqrt(acc) + state.eps)
    state.step_count = t


@dataclass
class EarlyStopState:
    patience: int
    mode: str = "minimize"
    min_delta: float = 1e-6
    best_metric: float = field(default=None)  # type: ignore[assignment]
    best_epoch: int = 0
    epochs_since_improve: int = 0
    last_epoch: int = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.mode not in ("minimize", "maximize"):
            raise ValueError(f"unknown mode '{self.mode}'")


def early_stop_observe(state: EarlyStopState, epoch: int, metric: float) -> tuple[str, int]:
    """Observe one epoch's validation metric.

    Returns ("continue" | "stop", best_epoch). Stop fires exactly when the
    number of consecutive non-improving epochs reaches the patience.
    Improvement means a change beyond ``min_delta`` in the stated direction.
    """
    if state.last_epoch is not None and epoch <= state.last_epoch:
        raise ValueError(f"epochs must be observed in increasing order "
                         f"(got {epoch} after {state.last_epoch})")
    state.last_epoch = epoch

    if state.best_metric is None:
        improved = True
    elif state.mode == "minimize":
        improved = metric < state.best_metric - state.min_delta
    else:
        improved = metric > state.best_metric + state.min_delta

    if improved:
        state.best_metric = metric
        state.best_epoch = epoch
        state.epochs_since_improve = 0
        return "continue", state.best_epoch

    state.epochs_since_improve += 1
    if state.epochs_since_improve >= state.patience:
        return "stop", state.best_epoch
    return "continue", state.best_epoch
