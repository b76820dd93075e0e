"""Persistence: store digests, JSONL event logs, and resumable checkpoints.

Everything is JSON with a fixed key order and shortest-round-trip decimal
floats, so identical in-memory state always serializes to identical bytes and
a save/load/save cycle is byte-stable. Files are written to a temp path and
renamed into place.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .numerics import fnv1a64
from .supernet import ParamKey, SuperModelWeights
from .trainstep import SlotStore

CHECKPOINT_FORMAT_VERSION = 1
EVENT_LOG_FORMAT_VERSION = 1


def _float_list(arr: np.ndarray) -> list[float]:
    return [float(v) for v in np.asarray(arr, dtype=np.float64).reshape(-1)]


def store_digest(store: Mapping[ParamKey, np.ndarray]) -> str:
    """64-bit FNV-1a over the sorted-key canonical store serialization."""
    h = None
    for key in sorted(store):
        text = (
            key.text()
            + ":"
            + ",".join(repr(v) for v in store[key].reshape(-1).tolist())
            + ";"
        )
        h = fnv1a64(text) if h is None else fnv1a64(text, h)
    if h is None:
        h = fnv1a64(b"")
    return f"{h:016x}"


# ---------------------------------------------------------------------------
# Event log
# ---------------------------------------------------------------------------


@dataclass
class EventRecord:
    """One meta-step of the search loop."""

    meta_step: int
    mean_reward: float
    baseline: float
    probabilities: list[list[float]]
    store_digest: str
    wall_ms: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "meta_step": self.meta_step,
                "mean_reward": self.mean_reward,
                "baseline": self.baseline,
                "probabilities": self.probabilities,
                "store_digest": self.store_digest,
                "wall_ms": self.wall_ms,
            }
        )


def event_header(labels: Iterable[str], cardinalities: Iterable[int]) -> str:
    return json.dumps(
        {
            "format_version": EVENT_LOG_FORMAT_VERSION,
            "decisions": [
                {"label": l, "cardinality": c} for l, c in zip(labels, cardinalities)
            ],
        }
    )


def write_event(fh, record: EventRecord) -> None:
    fh.write(record.to_json() + "\n")
    fh.flush()


def read_events(path: str) -> tuple[dict | None, list[EventRecord]]:
    """Read an event log; returns (header, records)."""
    header = None
    records: list[EventRecord] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: malformed JSON on line {line_no} ({exc})") from None
            if "decisions" in doc:
                header = doc
                continue
            records.append(
                EventRecord(
                    meta_step=doc["meta_step"],
                    mean_reward=doc["mean_reward"],
                    baseline=doc["baseline"],
                    probabilities=doc["probabilities"],
                    store_digest=doc["store_digest"],
                    wall_ms=doc["wall_ms"],
                )
            )
    return header, records


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    """Resumable search state."""

    config_echo: dict
    meta_step: int
    logits: list[np.ndarray]
    baseline: float
    baseline_initialized: bool
    controller_step: int
    controller_slots: SlotStore
    store: dict[ParamKey, np.ndarray]
    head_weight: np.ndarray | None
    head_bias: np.ndarray | None
    commit_slots: SlotStore
    rng_counters: dict[str, int] = field(default_factory=dict)


def _tensor_doc(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "values": _float_list(arr)}


def _tensor_from_doc(doc: dict) -> np.ndarray:
    return np.asarray(doc["values"], dtype=np.float64).reshape(doc["shape"])


def _slot_doc(slots: SlotStore, key_text) -> dict:
    out = {}
    for (family, key), slot in sorted(slots.items(), key=lambda kv: (kv[0][0], key_text(kv[0][1]))):
        entry = {}
        for name, value in sorted(slot.items()):
            entry[name] = value if isinstance(value, int) else _tensor_doc(value)
        out[f"{family}|{key_text(key)}"] = entry
    return out


def _slots_from_doc(doc: dict, key_parse) -> SlotStore:
    slots = SlotStore()
    for combined, entry in doc.items():
        family, _, key_text = combined.partition("|")
        slot = {
            name: value if isinstance(value, int) else _tensor_from_doc(value)
            for name, value in entry.items()
        }
        slots.restore(family, key_parse(key_text), slot)
    return slots


def _param_key_text(key: ParamKey) -> str:
    return key.text()


def _param_key_parse(text: str) -> ParamKey:
    layer, op, name = text.split("/")
    return ParamKey(int(layer), int(op), name)


def checkpoint_to_document(ckpt: Checkpoint) -> dict:
    store_doc = {
        key.text(): _tensor_doc(ckpt.store[key]) for key in sorted(ckpt.store)
    }
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": ckpt.config_echo,
        "meta_step": ckpt.meta_step,
        "controller": {
            "logits": [_float_list(z) for z in ckpt.logits],
            "baseline": ckpt.baseline,
            "baseline_initialized": ckpt.baseline_initialized,
            "step": ckpt.controller_step,
            "slots": _slot_doc(ckpt.controller_slots, str),
        },
        "store": store_doc,
        "head": (
            None
            if ckpt.head_weight is None
            else {"weight": _tensor_doc(ckpt.head_weight), "bias": _tensor_doc(ckpt.head_bias)}
        ),
        "commit_slots": _slot_doc(ckpt.commit_slots, _param_key_text),
        "rng": dict(sorted(ckpt.rng_counters.items())),
        "store_digest": store_digest(ckpt.store),
    }


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    """Serialize and atomically replace ``path``."""
    payload = json.dumps(checkpoint_to_document(ckpt), sort_keys=True)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(payload)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def load_checkpoint(path: str) -> Checkpoint:
    """Parse and integrity-check a checkpoint file."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: malformed checkpoint JSON ({exc})") from None
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(
            f"{path}: checkpoint format version {version!r} is not "
            f"{CHECKPOINT_FORMAT_VERSION}"
        )
    store = {_param_key_parse(text): _tensor_from_doc(t) for text, t in doc["store"].items()}
    if store_digest(store) != doc["store_digest"]:
        raise ValueError(f"{path}: store digest mismatch, checkpoint is corrupt")
    head = doc.get("head")
    controller = doc["controller"]
    return Checkpoint(
        config_echo=doc["config"],
        meta_step=doc["meta_step"],
        logits=[np.asarray(z, dtype=np.float64) for z in controller["logits"]],
        baseline=controller["baseline"],
        baseline_initialized=controller["baseline_initialized"],
        controller_step=controller["step"],
        controller_slots=_slots_from_doc(controller["slots"], int),
        store=store,
        head_weight=None if head is None else _tensor_from_doc(head["weight"]),
        head_bias=None if head is None else _tensor_from_doc(head["bias"]),
        commit_slots=_slots_from_doc(doc["commit_slots"], _param_key_parse),
        rng_counters={k: int(v) for k, v in doc.get("rng", {}).items()},
    )


def weights_digest(weights: SuperModelWeights | None) -> str:
    return store_digest(weights.store if weights is not None else {})
