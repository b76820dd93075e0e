"""REINFORCE controller over the joint search space.

The controller keeps one logit vector per decision and treats the joint
distribution as a product of independent softmaxes. Sampling draws one index
per decision by inverse CDF; updates take a single Adam step on the logits
using reward-minus-baseline advantages averaged over the step's sampled
pairs. The baseline is a scalar moving average of observed rewards,
initialized to the first reward it sees. During a warm-up window at the start
of a run the logits are left untouched (so sampling stays at its uniform
initialization) while the baseline keeps tracking rewards.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .numerics import RngStream, softmax
from .space import SearchSpace
from .trainstep import SlotStore, TrainerSpec, optimizer_step

MAX_ORACLE_SELECTIONS = 10**6


@dataclass(frozen=True)
class MetaHyperparameters:
    total_meta_steps: int
    meta_lr: float = 0.05
    baseline_momentum: float = 0.95
    warmup_fraction: float = 0.3
    entropy_weight: float = 0.0

    def __post_init__(self):
        if self.total_meta_steps < 0:
            raise ValueError("total_meta_steps must be non-negative")
        if self.meta_lr <= 0.0:
            raise ValueError("meta_lr must be positive")
        if not 0.0 <= self.baseline_momentum < 1.0:
            raise ValueError("baseline_momentum must be in [0, 1)")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in [0, 1)")

    @property
    def warmup_steps(self) -> float:
        return self.warmup_fraction * self.total_meta_steps


@dataclass
class ControllerState:
    logits: list[np.ndarray]
    baseline: float = 0.0
    baseline_initialized: bool = False
    step: int = 0
    slots: SlotStore = field(default_factory=SlotStore)


def init_controller(space: SearchSpace) -> ControllerState:
    """Zero logits for every decision: the uniform joint distribution."""
    return ControllerState(
        logits=[np.zeros(card) for card in space.cardinalities()]
    )


def probabilities(state: ControllerState) -> list[np.ndarray]:
    return [softmax(z) for z in state.logits]


def sample(state: ControllerState, rng: RngStream) -> tuple[tuple[int, ...], float]:
    """Draw one selection plus its joint log-probability.

    Each decision consumes exactly one uniform draw and picks the first index
    whose cumulative probability exceeds it.
    """
    selection: list[int] = []
    log_prob = 0.0
    for probs in probabilities(state):
        u = rng.uniform()
        cdf = np.cumsum(probs)
        idx = min(int(np.searchsorted(cdf, u, side="right")), len(probs) - 1)
        selection.append(idx)
        log_prob += math.log(probs[idx])
    return tuple(selection), log_prob


def reinforce_logit_gradient(
    state: ControllerState,
    samples: Sequence[tuple[Sequence[int], float]],
    baseline: float,
) -> list[np.ndarray]:
    """Descent-direction logit gradient for a batch of (selection, reward).

    For decision d this is ``-(1/K) sum_i a_i (onehot(sel_i[d]) - p_d)`` with
    advantage ``a_i = r_i - baseline``; stepping against it ascends expected
    reward.
    """
    probs = probabilities(state)
    grads = [np.zeros_like(z) for z in state.logits]
    k = len(samples)
    if k == 0:
        raise ValueError("need at least one sample")
    for selection, reward in samples:
        if not np.isfinite(reward):
            raise ValueError("reward must be finite")
        advantage = reward - baseline
        for d, idx in enumerate(selection):
            grads[d] += advantage * probs[d]
            grads[d][idx] -= advantage
    for g in grads:
        g /= k
    return grads


def _entropy_gradient(probs: list[np.ndarray], weight: float) -> list[np.ndarray]:
    # Descent gradient of -weight * H(p) w.r.t. logits: weight * p * (log p + H).
    out = []
    for p in probs:
        log_p = np.log(p)
        h = -float(np.dot(p, log_p))
        out.append(weight * p * (log_p + h))
    return out


def reinforce_update(
    state: ControllerState,
    samples: Sequence[tuple[Sequence[int], float]],
    meta: MetaHyperparameters,
) -> ControllerState:
    """One meta-step: Adam on the logits, then the baseline moving average.

    Advantages use the baseline as of the start of the call; when no reward
    has ever been observed the first sample's reward stands in, which keeps
    the first update free of a start-up advantage spike. Inside the warm-up
    window the logits (and their Adam slots) are left bitwise unchanged while
    the baseline still tracks every reward.
    """
    if not samples:
        raise ValueError("reinforce_update needs at least one sample")
    for selection, _ in samples:
        if len(selection) != len(state.logits):
            raise ValueError("selection length does not match decision count")
    pre_baseline = state.baseline if state.baseline_initialized else float(samples[0][1])

    if state.step >= meta.warmup_steps:
        grads = reinforce_logit_gradient(state, samples, pre_baseline)
        if meta.entropy_weight != 0.0:
            for g, e in zip(grads, _entropy_gradient(probabilities(state), meta.entropy_weight)):
                g += e
        params = {d: z for d, z in enumerate(state.logits)}
        grad_map = {d: g for d, g in enumerate(grads)}
        optimizer_step(
            params,
            grad_map,
            state.slots,
            TrainerSpec(optimizer="adam", learning_rate=meta.meta_lr),
        )

    m = meta.baseline_momentum
    for _, reward in samples:
        r = float(reward)
        if not np.isfinite(r):
            raise ValueError("reward must be finite")
        if not state.baseline_initialized:
            state.baseline = r
            state.baseline_initialized = True
        else:
            state.baseline = m * state.baseline + (1.0 - m) * r
    state.step += 1
    return state


def expected_reward_gradient_oracle(
    state: ControllerState,
    reward_fn: Callable[[tuple[int, ...]], float],
) -> list[np.ndarray]:
    """Exact gradient of expected reward w.r.t. the logits, by enumeration.

    Ascent direction: entry ``(d, j)`` is
    ``sum_sel P(sel) r(sel) (1[sel_d = j] - p_d[j])``. Only usable on spaces
    small enough to enumerate.
    """
    cards = [len(z) for z in state.logits]
    total = 1
    for c in cards:
        total *= c
    if total > MAX_ORACLE_SELECTIONS:
        raise ValueError(f"space too large to enumerate: {total} selections")
    probs = probabilities(state)
    grads = [np.zeros_like(z) for z in state.logits]
    for selection in itertools.product(*(range(c) for c in cards)):
        p_sel = 1.0
        for d, idx in enumerate(selection):
            p_sel *= float(probs[d][idx])
        weighted = p_sel * float(reward_fn(selection))
        for d, idx in enumerate(selection):
            grads[d] -= weighted * probs[d]
            grads[d][idx] += weighted
    return grads
