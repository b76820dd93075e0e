"""Search engine: alternates controller updates with shared-weight commits.

Each meta-step has two phases. The controller phase samples K
(architecture, hyperparameter) pairs, scores each by training a discardable
copy of its sub-model for a few steps and measuring validation accuracy, and
applies one REINFORCE update from the K rewards; the shared store is
read-only here. The commit phase re-samples K pairs and serializes K
single-step updates into the shared store, each at 1/K of the sampled
learning rate, so one meta-step advances the store by about one effective
step regardless of K. After the last meta-step the learned per-decision
probabilities are collapsed into one concrete configuration, which can be
retrained from scratch.
"""
from __future__ import annotations

import os
import time
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import controller as ctrl
from . import persist, supernet, trainstep
from .config import ConfigError, EngineConfig, config_to_dict
from .data import DataSplit, Dataset, concat, load_csv, spirals, split, two_moons
from .numerics import RngStream, softmax
from .space import DerivedConfig, SearchSpace, build_space, derive, selection_to_config
from .supernet import SuperModelWeights
from .trainstep import SlotStore, TrainerDefaults, TrainerSpec


@dataclass(frozen=True)
class RewardSpec:
    """How a candidate's scalar reward is computed from accuracy and cost."""

    mode: str = "plain"  # "plain" | "cost_aware"
    beta: float = 0.0
    target_cost: float | None = None

    def __post_init__(self):
        if self.mode not in ("plain", "cost_aware"):
            raise ValueError(f"unknown reward mode {self.mode!r}")
        if self.beta > 0.0:
            raise ValueError("beta must be <= 0")
        if self.mode == "cost_aware" and (self.target_cost is None or self.target_cost <= 0.0):
            raise ValueError("cost_aware mode needs a positive target_cost")


@dataclass
class RewardRecord:
    meta_step: int
    selection: tuple[int, ...]
    accuracy: float
    cost: float
    reward: float
    baseline: float = 0.0


@dataclass
class SearchResult:
    derived: DerivedConfig
    final_probabilities: list[np.ndarray]
    reward_history: list[RewardRecord]
    wall_steps: int


@dataclass
class RetrainResult:
    weights: SuperModelWeights
    selection: tuple[int, ...]
    trainer: TrainerSpec
    val_accuracy: float
    val_loss: float
    test_accuracy: float
    test_loss: float


@dataclass
class BaselineTrial:
    index: int
    selection: tuple[int, ...]
    derived: DerivedConfig
    val_accuracy: float
    test_accuracy: float


@dataclass
class BaselineResult:
    best: BaselineTrial
    trials: list[BaselineTrial]


def compute_reward(accuracy: float, cost: float, spec: RewardSpec) -> float:
    """Plain mode returns accuracy; cost-aware mode adds a penalty that is
    zero exactly on target and grows linearly with relative cost error."""
    if not np.isfinite(accuracy) or not 0.0 <= accuracy <= 1.0:
        raise ValueError(f"accuracy must be in [0, 1], got {accuracy}")
    if spec.mode == "plain":
        return float(accuracy)
    if cost < 0.0 or not np.isfinite(cost):
        raise ValueError(f"cost must be non-negative, got {cost}")
    return float(accuracy + spec.beta * abs(cost / spec.target_cost - 1.0))


def eval_metrics(
    weights: SuperModelWeights,
    selection: Sequence[int],
    batch: tuple[np.ndarray, np.ndarray],
    overrides=None,
) -> tuple[float, float]:
    """(accuracy, mean cross-entropy) of an eval-mode forward pass."""
    x, y = batch
    logits = supernet.forward(weights, selection, x, supernet.EVAL, overrides=overrides)
    predicted = np.argmax(logits, axis=1)
    actual = np.argmax(y, axis=1)
    accuracy = float(np.mean(predicted == actual))
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    loss = float((lse - (y * logits).sum(axis=1)).mean())
    return accuracy, loss


def evaluate_candidate(
    weights: SuperModelWeights,
    selection: Sequence[int],
    train_batches: Sequence[tuple[np.ndarray, np.ndarray]],
    val_batch: tuple[np.ndarray, np.ndarray],
    rng: RngStream,
    *,
    reward_spec: RewardSpec = RewardSpec(),
    defaults: TrainerDefaults = TrainerDefaults(),
    meta_step: int = 0,
) -> RewardRecord:
    """Score one sampled pair without touching the shared store.

    Builds the pair's trainer, advances temporary weights by ``inner_steps``
    train batches, and measures accuracy on the validation batch with the
    temporary weights overriding the store.
    """
    space = weights.space
    spec = trainstep.build_trainer(space, selection, defaults)
    view = supernet.sub_view(weights, selection)
    temp = trainstep.make_temporary(weights, view, spec, train_batches, rng)
    accuracy, _ = eval_metrics(weights, selection, val_batch, overrides=temp.overrides)
    cost = supernet.cost(space, selection)
    reward = compute_reward(accuracy, cost, reward_spec)
    return RewardRecord(meta_step, tuple(selection), accuracy, cost, reward)


def _build_dataset(config: EngineConfig) -> Dataset:
    data = config.data
    if data.csv_path is not None:
        return load_csv(data.csv_path)
    if data.generator == "two_moons":
        return two_moons(data.n, data.noise_sd, data.seed)
    if data.generator == "spirals":
        return spirals(data.n, data.turns, data.noise_sd, data.seed)
    raise ConfigError("data.generator is 'none' but the run needs a dataset")


def _check_dataset_shapes(space: SearchSpace, dataset: Dataset) -> None:
    if dataset.features.shape[1] != space.input_dim:
        raise ConfigError(
            f"dataset has {dataset.features.shape[1]} features but space.input_dim "
            f"is {space.input_dim}"
        )
    if dataset.labels.shape[1] != space.num_classes:
        raise ConfigError(
            f"dataset has {dataset.labels.shape[1]} classes but space.num_classes "
            f"is {space.num_classes}"
        )


def _draw_batch(
    dataset: Dataset, batch_size: int, rng: RngStream
) -> tuple[np.ndarray, np.ndarray]:
    n = len(dataset)
    if batch_size >= n:
        return dataset.features, dataset.labels
    idx = rng.sample_indices(n, batch_size)
    return dataset.features[idx], dataset.labels[idx]


def search(
    config: EngineConfig,
    *,
    evaluate_override: Callable[[tuple[int, ...]], tuple[float, float]] | None = None,
    resume_from: str | None = None,
    audit: Callable[[str, int, SuperModelWeights | None], None] | None = None,
) -> SearchResult:
    """Run the full meta-loop and return the derived configuration.

    ``evaluate_override``, when given, replaces temporary-weight evaluation
    with a direct ``selection -> (accuracy, cost)`` lookup; no dataset or
    shared store is involved (useful for tabular studies of the controller).
    ``audit`` is called after each phase with (phase, step, weights).
    """
    space = build_space(config.space)
    meta = ctrl.MetaHyperparameters(
        total_meta_steps=config.search.total_meta_steps,
        meta_lr=config.search.meta_lr,
        baseline_momentum=config.search.baseline_momentum,
        warmup_fraction=config.search.warmup_fraction,
        entropy_weight=config.search.entropy_weight,
    )
    reward_spec = RewardSpec(
        mode=config.search.reward.mode,
        beta=config.search.reward.beta,
        target_cost=config.search.reward.target_cost,
    )
    defaults = TrainerDefaults(
        learning_rate=config.search.default_learning_rate,
        inner_steps=config.search.inner_steps,
    )
    seed = config.data.seed
    k = config.search.pairs_per_step
    total = config.search.total_meta_steps

    uses_network = evaluate_override is None
    weights: SuperModelWeights | None = None
    commit_slots = SlotStore()
    splits: DataSplit | None = None
    if uses_network:
        if config.data.generator == "none" and config.data.csv_path is None:
            raise ConfigError("data.generator 'none' requires an evaluate override")
        dataset = _build_dataset(config)
        _check_dataset_shapes(space, dataset)
        splits = split(dataset, config.data.fractions, seed)
        weights = supernet.init_weights(space, RngStream(seed, "init"))

    state = ctrl.init_controller(space)
    ctrl_stream = RngStream(seed, "controller")
    start_step = 0

    if resume_from is not None:
        ckpt = persist.load_checkpoint(resume_from)
        from .config import parse_config

        echoed = parse_config(ckpt.config_echo)
        if echoed.sections_for_resume() != config.sections_for_resume():
            raise ConfigError(
                "checkpoint was produced by a different configuration; "
                "only output paths may differ on resume"
            )
        state.logits = [z.copy() for z in ckpt.logits]
        state.baseline = ckpt.baseline
        state.baseline_initialized = ckpt.baseline_initialized
        state.step = ckpt.controller_step
        state.slots = ckpt.controller_slots
        commit_slots = ckpt.commit_slots
        if uses_network:
            if ckpt.head_weight is None:
                raise ValueError("checkpoint has no network state to resume from")
            weights.store = ckpt.store
            weights.head_weight = ckpt.head_weight
            weights.head_bias = ckpt.head_bias
        ctrl_stream = RngStream(seed, "controller", ckpt.rng_counters.get("controller", 0))
        start_step = ckpt.meta_step

    log_fh = None
    if config.output.log_path is not None:
        mode = "a" if resume_from is not None else "w"
        directory = os.path.dirname(config.output.log_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        log_fh = open(config.output.log_path, mode, encoding="utf-8")
        if resume_from is None:
            log_fh.write(persist.event_header(space.labels(), space.cardinalities()) + "\n")

    def save_checkpoint_now(step_done: int) -> None:
        if config.output.checkpoint_path is None:
            return
        ckpt = persist.Checkpoint(
            config_echo=config_to_dict(config),
            meta_step=step_done,
            logits=[z.copy() for z in state.logits],
            baseline=state.baseline,
            baseline_initialized=state.baseline_initialized,
            controller_step=state.step,
            controller_slots=state.slots,
            store=dict(weights.store) if weights is not None else {},
            head_weight=None if weights is None else weights.head_weight,
            head_bias=None if weights is None else weights.head_bias,
            commit_slots=commit_slots,
            rng_counters={"controller": ctrl_stream.counter},
        )
        persist.save_checkpoint(config.output.checkpoint_path, ckpt)

    history: list[RewardRecord] = []
    try:
        for step in range(start_step, total):
            t0 = time.monotonic()
            records: list[RewardRecord] = []
            for i in range(k):
                selection, _ = ctrl.sample(state, ctrl_stream)
                if evaluate_override is not None:
                    accuracy, cost = evaluate_override(selection)
                    reward = compute_reward(accuracy, cost, reward_spec)
                    record = RewardRecord(step, selection, accuracy, cost, reward)
                else:
                    data_rng = RngStream(seed, f"eval-data/{step}/{i}")
                    batches = [
                        _draw_batch(splits.train, config.search.train_batch_size, data_rng)
                        for _ in range(config.search.inner_steps)
                    ]
                    val_batch = _draw_batch(
                        splits.val, config.search.val_batch_size, data_rng
                    )
                    record = evaluate_candidate(
                        weights,
                        selection,
                        batches,
                        val_batch,
                        RngStream(seed, f"eval-train/{step}/{i}"),
                        reward_spec=reward_spec,
                        defaults=defaults,
                        meta_step=step,
                    )
                records.append(record)
            pre_baseline = (
                state.baseline if state.baseline_initialized else records[0].reward
            )
            for record in records:
                record.baseline = pre_baseline
            ctrl.reinforce_update(
                state, [(r.selection, r.reward) for r in records], meta
            )
            if audit is not None:
                audit("controller", step, weights)

            if uses_network:
                for i in range(k):
                    selection, _ = ctrl.sample(state, ctrl_stream)
                    spec = trainstep.build_trainer(space, selection, defaults)
                    spec = replace(spec, learning_rate=spec.learning_rate / k)
                    batch = _draw_batch(
                        splits.train,
                        config.search.train_batch_size,
                        RngStream(seed, f"commit-data/{step}/{i}"),
                    )
                    trainstep.commit_step(
                        weights,
                        supernet.sub_view(weights, selection),
                        spec,
                        batch,
                        commit_slots,
                        RngStream(seed, f"commit-train/{step}/{i}"),
                    )
                if audit is not None:
                    audit("commit", step, weights)

            history.extend(records)
            if log_fh is not None:
                event = persist.EventRecord(
                    meta_step=step,
                    mean_reward=float(np.mean([r.reward for r in records])),
                    baseline=state.baseline,
                    probabilities=[p.tolist() for p in ctrl.probabilities(state)],
                    store_digest=persist.weights_digest(weights),
                    wall_ms=(time.monotonic() - t0) * 1000.0,
                )
                persist.write_event(log_fh, event)
            interval = config.output.checkpoint_interval
            if interval > 0 and (step + 1) % interval == 0:
                save_checkpoint_now(step + 1)
    finally:
        if log_fh is not None:
            log_fh.close()
    save_checkpoint_now(total)

    final_probs = ctrl.probabilities(state)
    return SearchResult(
        derived=derive(space, final_probs),
        final_probabilities=final_probs,
        reward_history=history,
        wall_steps=total,
    )


def _derived_space(space: SearchSpace, arch_choice: Sequence[int]) -> SearchSpace:
    """Space with each layer narrowed to its chosen op (shared keys at op 0)."""
    decisions = []
    for decision, idx in zip(space.arch_decisions, arch_choice):
        decisions.append(replace(decision, candidates=(decision.candidates[idx],)))
    return replace(space, arch_decisions=tuple(decisions))


def retrain(
    space: SearchSpace,
    derived: DerivedConfig,
    splits: DataSplit,
    epochs: int,
    *,
    batch_size: int = 64,
    defaults: TrainerDefaults = TrainerDefaults(),
    seed: int = 0,
    name: str = "retrain",
) -> RetrainResult:
    """Train the derived architecture from scratch and measure held-out metrics.

    Fresh weights cover only the chosen ops. Training runs ``epochs`` shuffled
    passes over train and validation data combined, using the derived
    hyperparameter values exactly as given (continuous values are not snapped
    back to the basis).
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if len(derived.arch_choice) != space.n_arch:
        raise ValueError("derived arch length does not match the space")
    sub_space = _derived_space(space, derived.arch_choice)
    trainer = trainstep.trainer_from_derived(space, derived, defaults)
    weights = supernet.init_weights(sub_space, RngStream(seed, f"{name}/init"))
    selection = (0,) * sub_space.n_arch + tuple(
        d.default_index for d in sub_space.hyper_decisions
    )
    view = supernet.sub_view(weights, selection)
    slots = SlotStore()

    pool = concat(splits.train, splits.val)
    n = len(pool)
    effective_batch = min(batch_size, n)
    for epoch in range(epochs):
        order = RngStream(seed, f"{name}/order/{epoch}").permutation(n)
        step_rng = RngStream(seed, f"{name}/steps/{epoch}")
        for start in range(0, n, effective_batch):
            idx = order[start : start + effective_batch]
            batch = (pool.features[idx], pool.labels[idx])
            trainstep.commit_step(weights, view, trainer, batch, slots, step_rng)

    val_acc, val_loss = eval_metrics(
        weights, selection, (splits.val.features, splits.val.labels)
    )
    test_acc, test_loss = eval_metrics(
        weights, selection, (splits.test.features, splits.test.labels)
    )
    return RetrainResult(
        weights=weights,
        selection=selection,
        trainer=trainer,
        val_accuracy=val_acc,
        val_loss=val_loss,
        test_accuracy=test_acc,
        test_loss=test_loss,
    )


def random_search_baseline(
    space: SearchSpace,
    splits: DataSplit,
    budget: int,
    epochs: int,
    seed: int,
    *,
    batch_size: int = 64,
    defaults: TrainerDefaults = TrainerDefaults(),
) -> BaselineResult:
    """Retrain ``budget`` uniformly sampled configurations from scratch.

    Each trial is a pure function of (seed, trial index); the best trial is
    the highest validation accuracy with ties going to the lowest index.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    cards = space.cardinalities()
    trials: list[BaselineTrial] = []
    for j in range(budget):
        pick = RngStream(seed, f"baseline-select/{j}")
        selection = tuple(pick.index(c) for c in cards)
        derived = selection_to_config(space, selection)
        result = retrain(
            space,
            derived,
            splits,
            epochs,
            batch_size=batch_size,
            defaults=defaults,
            seed=seed,
            name=f"baseline/{j}",
        )
        trials.append(
            BaselineTrial(j, selection, derived, result.val_accuracy, result.test_accuracy)
        )
    best = max(trials, key=lambda t: (t.val_accuracy, -t.index))
    return BaselineResult(best=best, trials=trials)
