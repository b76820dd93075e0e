"""Training-step machinery: trainer specs, optimizers, mixup, and the two
weight-update paths (discardable temporary weights vs. committed shared-store
steps). Both paths run the exact same per-step code, so a commit with a given
rng state and batch reproduces the first temporary step bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import numerics, supernet
from .numerics import RngStream, Tape
from .space import OPTIMIZERS, SearchSpace, selection_to_config
from .supernet import ParamKey, SubModelView, SuperModelWeights

MOMENTUM = 0.9
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
RMSPROP_RHO = 0.9
RMSPROP_EPS = 1e-8


@dataclass(frozen=True)
class TrainerDefaults:
    """Fallbacks for trainer fields that are not part of the search space."""

    learning_rate: float = 0.01
    inner_steps: int = 1


@dataclass(frozen=True)
class TrainerSpec:
    optimizer: str = "sgd"
    learning_rate: float = 0.01
    weight_decay: float = 0.0
    mixup_ratio: float = 0.0
    dropout_keep: float | tuple[float, ...] = 1.0
    inner_steps: int = 1

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        # lr 0 is allowed so zero-step limiting behaviour stays expressible.
        if not np.isfinite(self.learning_rate) or self.learning_rate < 0.0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not np.isfinite(self.weight_decay) or self.weight_decay < 0.0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 <= self.mixup_ratio <= 1.0:
            raise ValueError(f"mixup_ratio must be in [0, 1], got {self.mixup_ratio}")
        keeps = (
            (self.dropout_keep,)
            if isinstance(self.dropout_keep, (int, float))
            else tuple(self.dropout_keep)
        )
        for k in keeps:
            if not 0.0 < k <= 1.0:
                raise ValueError(f"dropout_keep must be in (0, 1], got {k}")
        if self.inner_steps < 1:
            raise ValueError(f"inner_steps must be >= 1, got {self.inner_steps}")


class SlotStore:
    """Per-(optimizer family, key) optimizer state, created lazily."""

    def __init__(self):
        self._slots: dict[tuple[str, object], dict] = {}

    def get(self, family: str, key, like: np.ndarray) -> dict:
        slot_key = (family, key)
        slot = self._slots.get(slot_key)
        if slot is None:
            if family == "momentum":
                slot = {"buf": np.zeros_like(like)}
            elif family == "adam":
                slot = {"step": 0, "m": np.zeros_like(like), "v": np.zeros_like(like)}
            elif family == "rmsprop":
                slot = {"sq": np.zeros_like(like)}
            else:
                slot = {}
            self._slots[slot_key] = slot
        return slot

    def items(self):
        return self._slots.items()

    def restore(self, family: str, key, slot: dict) -> None:
        self._slots[(family, key)] = slot

    def __len__(self):
        return len(self._slots)


@dataclass
class TemporaryWeights:
    """Discardable copies of one sub-model's tensors plus fresh slot state."""

    overrides: dict[ParamKey, np.ndarray]
    slots: SlotStore


def build_trainer(
    space: SearchSpace,
    selection: Sequence[int],
    defaults: TrainerDefaults = TrainerDefaults(),
) -> TrainerSpec:
    """TrainerSpec for a selection; unsearched fields fall back to defaults."""
    derived = selection_to_config(space, selection)
    fields = {
        "optimizer": "sgd",
        "learning_rate": defaults.learning_rate,
        "weight_decay": 0.0,
        "mixup_ratio": 0.0,
        "dropout_keep": 1.0,
    }
    for decision, value in zip(space.hyper_decisions, derived.hyper_values):
        fields[decision.name] = value
    return TrainerSpec(inner_steps=defaults.inner_steps, **fields)


def trainer_from_derived(
    space: SearchSpace,
    derived,
    defaults: TrainerDefaults = TrainerDefaults(),
) -> TrainerSpec:
    """TrainerSpec from a derived configuration, continuous values as-is."""
    fields = {
        "optimizer": "sgd",
        "learning_rate": defaults.learning_rate,
        "weight_decay": 0.0,
        "mixup_ratio": 0.0,
        "dropout_keep": 1.0,
    }
    for decision, value in zip(space.hyper_decisions, derived.hyper_values):
        fields[decision.name] = value
    return TrainerSpec(inner_steps=defaults.inner_steps, **fields)


def apply_mixup(batch: tuple[np.ndarray, np.ndarray], ratio: float, rng: RngStream):
    """Blend the batch with a shuffled partner using one Beta(ratio, ratio) draw.

    ``ratio == 0`` returns the batch unchanged and consumes no randomness.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mixup ratio must be in [0, 1], got {ratio}")
    x, y = batch
    if x.shape[0] != y.shape[0]:
        raise ValueError("features and labels disagree on batch size")
    if ratio == 0.0:
        return x, y
    lam = rng.beta(ratio, ratio)
    partner = rng.permutation(x.shape[0])
    mixed_x = lam * x + (1.0 - lam) * x[partner]
    mixed_y = lam * y + (1.0 - lam) * y[partner]
    return mixed_x, mixed_y


def optimizer_step(
    params: dict,
    grads: Mapping,
    slots: SlotStore,
    spec: TrainerSpec,
) -> None:
    """One in-place update of every tensor in ``params``.

    Weight decay is decoupled: parameters are shrunk by ``lr * wd`` before the
    gradient-based update. Keys are visited in sorted order so the update
    sequence never depends on dict construction order.
    """
    lr = spec.learning_rate
    wd = spec.weight_decay
    for key in sorted(params):
        p = params[key]
        g = grads[key]
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for {key}")
        if wd != 0.0:
            p *= 1.0 - lr * wd
        if spec.optimizer == "sgd":
            p -= lr * g
        elif spec.optimizer == "momentum":
            slot = slots.get("momentum", key, p)
            buf = slot["buf"]
            buf *= MOMENTUM
            buf += g
            p -= lr * buf
        elif spec.optimizer == "adam":
            slot = slots.get("adam", key, p)
            slot["step"] += 1
            t = slot["step"]
            m, v = slot["m"], slot["v"]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * (g * g)
            m_hat = m / (1.0 - ADAM_BETA1**t)
            v_hat = v / (1.0 - ADAM_BETA2**t)
            p -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        else:  # rmsprop
            slot = slots.get("rmsprop", key, p)
            sq = slot["sq"]
            sq *= RMSPROP_RHO
            sq += (1.0 - RMSPROP_RHO) * (g * g)
            p -= lr * g / (np.sqrt(sq) + RMSPROP_EPS)


def _train_step(
    weights: SuperModelWeights,
    view: SubModelView,
    params: dict[ParamKey, np.ndarray],
    spec: TrainerSpec,
    batch: tuple[np.ndarray, np.ndarray],
    slots: SlotStore,
    rng: RngStream,
) -> None:
    """One full step (mixup, train-mode forward, backward, optimizer) applied
    to the tensors in ``params``."""
    x, y = apply_mixup(batch, spec.mixup_ratio, rng)
    tape = Tape()
    logits, leaves = supernet.forward(
        weights,
        view.selection,
        x,
        supernet.TRAIN,
        overrides=params,
        dropout_keep=spec.dropout_keep,
        rng=rng,
        tape=tape,
    )
    labels = tape.constant(y)
    loss = numerics.softmax_cross_entropy(tape, logits, labels)
    grads_by_node = numerics.backward(tape, loss)
    grads = {key: grads_by_node[node] for key, node in leaves.items()}
    optimizer_step({key: params[key] for key in leaves}, grads, slots, spec)


def make_temporary(
    weights: SuperModelWeights,
    view: SubModelView,
    spec: TrainerSpec,
    train_batches: Sequence[tuple[np.ndarray, np.ndarray]],
    rng: RngStream,
) -> TemporaryWeights:
    """Copy the view's tensors and advance the copies by ``inner_steps`` steps.

    The shared store is read once (for the copies) and never written; every
    update lands on the copies with fresh optimizer slots.
    """
    if len(train_batches) < spec.inner_steps:
        raise ValueError(
            f"need {spec.inner_steps} train batches, got {len(train_batches)}"
        )
    overrides = {key: weights.store[key].copy() for key in view.keys}
    slots = SlotStore()
    for step in range(spec.inner_steps):
        _train_step(weights, view, overrides, spec, train_batches[step], slots, rng)
    return TemporaryWeights(overrides, slots)


def commit_step(
    weights: SuperModelWeights,
    view: SubModelView,
    spec: TrainerSpec,
    batch: tuple[np.ndarray, np.ndarray],
    slots: SlotStore,
    rng: RngStream,
) -> None:
    """One optimizer step written through the view into the shared store.

    ``slots`` persists across commits so stateful optimizers accumulate their
    statistics per parameter; parameters outside the view are untouched.
    """
    params = {key: weights.store[key] for key in view.keys}
    _train_step(weights, view, params, spec, batch, slots, rng)
