"""Weight-shared super-model over a layered search space.

The shared store holds one tensor per parameter of every candidate op of every
layer, keyed by ``ParamKey``. Any selection addresses a sub-model whose
forward pass reads only that selection's keys, so candidates can be trained
and scored without materializing separate networks. A fixed linear
classification head (initialized once per store, never updated) maps the last
layer's slot width to the class count; it is not part of the searchable store.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import numerics
from .numerics import Node, RngStream, Tape
from .space import (
    OP_AFFINE_RELU,
    OP_AFFINE_TANH,
    OP_IDENTITY,
    SearchSpace,
    validate_selection,
)

TRAIN = "train"
EVAL = "eval"


@dataclass(frozen=True, order=True)
class ParamKey:
    """Address of one parameter tensor: (layer, candidate index, name)."""

    layer: int
    op: int
    name: str  # "weight" | "bias"

    def text(self) -> str:
        return f"{self.layer}/{self.op}/{self.name}"


@dataclass
class SuperModelWeights:
    """Shared parameter store plus the fixed classification head."""

    space: SearchSpace
    store: dict[ParamKey, np.ndarray]
    head_weight: np.ndarray
    head_bias: np.ndarray


@dataclass(frozen=True)
class SubModelView:
    """The store keys addressed by one selection."""

    selection: tuple[int, ...]
    keys: tuple[ParamKey, ...]


def _op_keys(layer: int, op_index: int, op) -> tuple[ParamKey, ...]:
    if not op.has_params:
        return ()
    return (ParamKey(layer, op_index, "weight"), ParamKey(layer, op_index, "bias"))


def init_weights(space: SearchSpace, rng: RngStream) -> SuperModelWeights:
    """Fresh store: affine weights uniform in ±1/sqrt(fan_in), biases zero.

    Draw order is fixed (layers in order, candidates in order, weight before
    bias, head last), so a given stream state determines every tensor.
    """
    store: dict[ParamKey, np.ndarray] = {}
    for decision in space.arch_decisions:
        for op_index, op in enumerate(decision.candidates):
            if not op.has_params:
                continue
            w_shape, b_shape = op.param_shapes
            scale = 1.0 / math.sqrt(op.in_width)
            weight = (rng.uniform(w_shape) * 2.0 - 1.0) * scale
            store[ParamKey(decision.layer_id, op_index, "weight")] = weight
            store[ParamKey(decision.layer_id, op_index, "bias")] = np.zeros(b_shape)
    head_scale = 1.0 / math.sqrt(space.last_width)
    head_weight = (rng.uniform((space.last_width, space.num_classes)) * 2.0 - 1.0) * head_scale
    head_bias = np.zeros(space.num_classes)
    return SuperModelWeights(space, store, head_weight, head_bias)


def sub_view(weights: SuperModelWeights, selection: Sequence[int]) -> SubModelView:
    """Keys of the sub-model addressed by ``selection``."""
    space = weights.space
    sel = validate_selection(space, selection)
    keys: list[ParamKey] = []
    for decision, op_index in zip(space.arch_decisions, sel):
        op = decision.candidates[op_index]
        keys.extend(_op_keys(decision.layer_id, op_index, op))
    return SubModelView(sel, tuple(keys))


def _resolve_keep(dropout_keep, n_layers: int) -> tuple[float, ...]:
    if isinstance(dropout_keep, (int, float)):
        return (float(dropout_keep),) * n_layers
    keeps = tuple(float(k) for k in dropout_keep)
    if len(keeps) != n_layers:
        raise ValueError(f"need {n_layers} per-layer keep probabilities, got {len(keeps)}")
    return keeps


def forward(
    weights: SuperModelWeights,
    selection: Sequence[int],
    batch_x: np.ndarray,
    mode: str = EVAL,
    *,
    overrides: Mapping[ParamKey, np.ndarray] | None = None,
    dropout_keep=1.0,
    rng: RngStream | None = None,
    tape: Tape | None = None,
):
    """Run the selected sub-model on a batch.

    Eval mode returns a logits array. Train mode records the pass on ``tape``
    and returns ``(logits_node, leaves)`` where ``leaves`` maps each selected
    ParamKey to its tape leaf, ready for ``numerics.backward``. ``overrides``
    substitutes tensors for store entries without touching the store itself.
    """
    space = weights.space
    sel = validate_selection(space, selection)
    x = np.asarray(batch_x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != space.input_dim:
        raise ValueError(f"batch shape {x.shape} does not match input_dim {space.input_dim}")

    def param(key: ParamKey) -> np.ndarray:
        if overrides is not None and key in overrides:
            return overrides[key]
        return weights.store[key]

    if mode == EVAL:
        h = x
        for decision, op_index in zip(space.arch_decisions, sel):
            op = decision.candidates[op_index]
            if op.has_params:
                w = param(ParamKey(decision.layer_id, op_index, "weight"))
                b = param(ParamKey(decision.layer_id, op_index, "bias"))
                z = h @ w + b
                if op.kind == OP_AFFINE_RELU:
                    z = np.maximum(z, 0.0)
                elif op.kind == OP_AFFINE_TANH:
                    z = np.tanh(z)
            else:
                z = h
            if z.shape[1] < decision.out_width:
                padded = np.zeros((z.shape[0], decision.out_width))
                padded[:, : z.shape[1]] = z
                z = padded
            elif z.shape[1] > decision.out_width:
                z = z[:, : decision.out_width].copy()
            h = z
        return h @ weights.head_weight + weights.head_bias

    if mode != TRAIN:
        raise ValueError(f"unknown mode {mode!r}")
    if tape is None:
        raise ValueError("train mode requires a tape")
    keeps = _resolve_keep(dropout_keep, len(space.arch_decisions))
    if any(k < 1.0 for k in keeps) and rng is None:
        raise ValueError("dropout requires an rng stream")

    leaves: dict[ParamKey, Node] = {}
    h_node = tape.constant(x)
    for decision, op_index, keep in zip(space.arch_decisions, sel, keeps):
        op = decision.candidates[op_index]
        if op.has_params:
            wk = ParamKey(decision.layer_id, op_index, "weight")
            bk = ParamKey(decision.layer_id, op_index, "bias")
            w_node = tape.leaf(param(wk))
            b_node = tape.leaf(param(bk))
            leaves[wk] = w_node
            leaves[bk] = b_node
            z = numerics.add_bias(tape, numerics.matmul(tape, h_node, w_node), b_node)
            if op.kind == OP_AFFINE_RELU:
                z = numerics.relu(tape, z)
            elif op.kind == OP_AFFINE_TANH:
                z = numerics.tanh(tape, z)
        else:
            z = h_node
        if z.value.shape[1] < decision.out_width:
            z = numerics.pad_cols(tape, z, decision.out_width)
        elif z.value.shape[1] > decision.out_width:
            z = numerics.take_cols(tape, z, decision.out_width)
        if keep < 1.0:
            z = numerics.dropout(tape, z, keep, rng)
        h_node = z
    head_w = tape.constant(weights.head_weight)
    head_b = tape.constant(weights.head_bias)
    logits = numerics.add_bias(tape, numerics.matmul(tape, h_node, head_w), head_b)
    return logits, leaves


def op_macs(op) -> int:
    """Multiply-accumulate count of a single op at its resolved shapes."""
    if op.kind == OP_IDENTITY:
        return 0
    return op.in_width * op.width


def cost(space: SearchSpace, selection: Sequence[int]) -> float:
    """MAC count of the selected ops across all searched layers.

    The fixed head is excluded: its cost is identical for every selection, so
    it carries no signal for cost-aware search.
    """
    sel = validate_selection(space, selection)
    total = 0
    for decision, op_index in zip(space.arch_decisions, sel):
        total += op_macs(decision.candidates[op_index])
    return float(total)
