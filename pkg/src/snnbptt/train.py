"""Population readout, spike-count cross-entropy, AdamW and the epoch loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import TimeSplit, Var
from .data import Dataset, Prefetcher, encode
from .model import ModelParams, NetworkSpec, forward_unrolled
from .tensor import NonFiniteError, Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PopulationReadout:
    """Contiguous blocks: neurons [c*k, (c+1)*k) vote for class c."""

    classes: int
    neurons_per_class: int = 1

    def __post_init__(self):
        if self.classes < 1 or self.neurons_per_class < 1:
            raise ValueError("classes and neurons_per_class must be positive")

    @property
    def population(self) -> int:
        return self.classes * self.neurons_per_class

    @classmethod
    def for_spec(cls, spec: NetworkSpec) -> "PopulationReadout":
        return cls(spec.classes, spec.neurons_per_class)


def class_scores(spike_record: Var, readout: PopulationReadout) -> Var:
    if spike_record.shape[-1] != readout.population:
        raise ValueError(f"record has {spike_record.shape[-1]} output neurons, "
                         f"readout expects {readout.population}")
    return ag.class_scores(spike_record, readout.classes)


def loss(spike_record: Var, labels, readout: PopulationReadout) -> Var:
    return ag.softmax_cross_entropy(class_scores(spike_record, readout), labels)


def predict(spike_record: np.ndarray, readout: PopulationReadout) -> np.ndarray:
    """Class with the highest population spike count (ties -> lowest class id)."""
    t, b, p = spike_record.shape
    counts = spike_record.reshape(t, b, readout.classes, readout.neurons_per_class).sum(axis=(0, 3))
    return counts.argmax(axis=1)


@dataclass(frozen=True)
class AdamWConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


class NonFiniteGradientError(NonFiniteError):
    pass


@dataclass
class AdamWState:
    config: AdamWConfig = field(default_factory=AdamWConfig)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adamw_step(params: ModelParams, grads: dict[str, Tensor],
               state: AdamWState) -> ModelParams:
    """One decoupled-weight-decay Adam update on the master weights.

    w <- w - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * w
    Mutates `state`; returns new params.
    """
    cfg = state.config
    for name, g in grads.items():
        if not np.isfinite(g.data).all():
            raise NonFiniteGradientError(f"non-finite gradient for {name}; step aborted")
    state.t += 1
    bc1 = 1 - cfg.beta1 ** state.t
    bc2 = 1 - cfg.beta2 ** state.t
    updates = {}
    for name, w in params.items():
        if name not in grads:
            continue
        dtype = w.data.dtype
        g = grads[name].data.astype(dtype, copy=False)
        if g.shape != w.shape:
            raise ValueError(f"{name}: gradient {g.shape} vs parameter {w.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(w.data)
            v = np.zeros_like(w.data)
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        m_hat = m / bc1
        v_hat = v / bc2
        new = w.data - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps) - cfg.lr * cfg.weight_decay * w.data
        updates[name] = Tensor._wrap(new.astype(dtype, copy=False), w.precision)
    return params.updated(updates)


@dataclass
class StepResult:
    params: ModelParams
    loss: float
    correct: int
    wallclock_s: float


def train_step(params: ModelParams, spec: NetworkSpec, images: Tensor, labels: np.ndarray,
               state: AdamWState, timer: Optional[TimeSplit] = None,
               encode_seed: int = 0) -> StepResult:
    """Forward over T steps, backward, AdamW update; timed end to end."""
    start = time.perf_counter()
    x = encode(images, spec.time_steps, spec.encoding, encode_seed)
    readout = PopulationReadout.for_spec(spec)
    record, tape = forward_unrolled(params, spec, x, timer=timer)
    loss_var = loss(record, labels, readout)
    value = loss_var.value.item()
    if not math.isfinite(value):
        raise NonFiniteError(f"loss is {value}")
    grads = tape.backward(loss_var).named()
    params = adamw_step(params, grads, state)
    elapsed = time.perf_counter() - start
    correct = int((predict(record.value.data, readout) == labels).sum())
    return StepResult(params, value, correct, elapsed)


@dataclass
class EpochMetrics:
    loss: float
    accuracy: float
    wallclock: float
    batches: int
    batch_wallclocks: list[float] = field(default_factory=list)


def train_epoch(params: ModelParams, dataset: Dataset, spec: NetworkSpec, optimizer: AdamWState,
                batch_size: int = 128, seed: int = 0, shuffle: bool = True,
                timer: Optional[TimeSplit] = None, prefetch: bool = True,
                max_batches: Optional[int] = None) -> tuple[ModelParams, EpochMetrics]:
    if dataset.sample_shape != spec.input_shape:
        raise ValueError(f"dataset samples {dataset.sample_shape} vs spec input {spec.input_shape}")
    start = time.perf_counter()
    batches = dataset.batches(batch_size, shuffle=shuffle, seed=seed)
    source = Prefetcher(batches) if prefetch else batches
    total_loss = 0.0
    correct = seen = n = 0
    walls = []
    try:
        for n, batch in enumerate(source, 1):
            res = train_step(params, spec, batch.images, batch.labels, optimizer, timer,
                             encode_seed=seed * 100003 + n)
            params = res.params
            total_loss += res.loss * len(batch)
            correct += res.correct
            seen += len(batch)
            walls.append(res.wallclock_s)
            if max_batches is not None and n >= max_batches:
                break
    finally:
        if isinstance(source, Prefetcher):
            source.close()
    metrics = EpochMetrics(loss=total_loss / max(seen, 1), accuracy=correct / max(seen, 1),
                           wallclock=time.perf_counter() - start, batches=n,
                           batch_wallclocks=walls)
    return params, metrics


def evaluate(params: ModelParams, spec: NetworkSpec, dataset: Dataset,
             batch_size: int = 256, seed: int = 0) -> tuple[float, float]:
    """(accuracy, mean loss) without weight updates."""
    readout = PopulationReadout.for_spec(spec)
    correct = 0
    total_loss = 0.0
    for n, batch in enumerate(dataset.batches(batch_size), 1):
        x = encode(batch.images, spec.time_steps, spec.encoding, seed * 7919 + n)
        record, _ = forward_unrolled(params, spec, x)
        total_loss += loss(record, batch.labels, readout).value.item() * len(batch)
        correct += int((predict(record.value.data, readout) == batch.labels).sum())
    return correct / len(dataset), total_loss / len(dataset)


def fit(spec: NetworkSpec, train: Dataset, epochs: int = 1, batch_size: int = 128,
        seed: int = 0, adamw: AdamWConfig = AdamWConfig(), test: Optional[Dataset] = None,
        callback=None):
    """Build, train for `epochs`, optionally evaluate; returns (params, history)."""
    from .model import build

    params = build(spec, seed)
    state = AdamWState(adamw)
    history = []
    for epoch in range(epochs):
        params, metrics = train_epoch(params, train, spec, state, batch_size, seed=seed + epoch)
        entry = {"epoch": epoch + 1, "loss": metrics.loss, "train_accuracy": metrics.accuracy,
                 "wallclock": metrics.wallclock, "metrics": metrics}
        if test is not None:
            entry["test_accuracy"], entry["test_loss"] = evaluate(params, spec, test)
        log.info("epoch %d loss %.4f train acc %.4f test acc %s (%.1fs)", epoch + 1,
                 metrics.loss, metrics.accuracy, entry.get("test_accuracy"), metrics.wallclock)
        history.append(entry)
        if callback is not None:
            callback(entry, params)
    return params, history


__all__ = [
    "AdamWConfig", "AdamWState", "EpochMetrics", "NonFiniteGradientError", "PopulationReadout",
    "adamw_step", "class_scores", "evaluate", "fit", "loss", "predict",
    "train_epoch", "train_step",
]
