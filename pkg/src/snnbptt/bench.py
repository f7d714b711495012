"""Training-throughput harness, neuronal/synaptic time split and parameter sweeps.

Throughput is batch_size / wallclock, where one batch covers encoding, the
unrolled forward pass, backward pass and the AdamW update.  Timed batches
follow untimed warmup batches; `repeats` measurements give mean and std.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .autograd import TimeSplit
from .data import Dataset
from .model import CIFAR10_SHAPE, MNIST_SHAPE, NetworkSpec, build
from .neuron import NeuronModel
from .surrogate import SurrogateKind
from .tensor import Precision, Tensor
from .train import AdamWConfig, AdamWState, evaluate, fit, train_step

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "config_id", "network", "neuron_model", "precision", "batch_size", "hidden_width",
    "kernel_n1", "kernel_n2", "time_steps", "population", "epochs",
    "repeat_mean_wallclock_s", "wallclock_std_s", "images_per_s", "neuronal_time_s",
    "synaptic_time_s", "loss", "accuracy", "seed",
)

SWEEP_AXES = ("batch_size", "hidden_width", "kernel_depths", "neuron_model", "precision",
              "population", "time_steps")

INPUT_SHAPES = {"mnist": MNIST_SHAPE, "cifar10": CIFAR10_SHAPE}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BenchConfig:
    network: str = "dsnn"
    neuron_model: str = "lif"
    precision: str = "single"
    batch_size: int = 128
    hidden_width: int = 1000
    kernel_n1: int = 12
    kernel_n2: int = 64
    time_steps: int = 25
    population: int = 10
    epochs: int = 0
    repeats: int = 5
    seed: int = 0
    dataset: str = "mnist"
    surrogate: str = "fast_sigmoid"
    warmup: int = 3
    batches_per_repeat: int = 1
    lr: float = AdamWConfig.lr
    weight_decay: float = AdamWConfig.weight_decay
    beta: float = 0.9
    alpha: float = 0.8
    u_thr: float = 1.0
    encoding: str = "constant_current"

    def __post_init__(self):
        if self.network not in ("dsnn", "csnn"):
            raise ConfigError(f"network must be dsnn or csnn, got {self.network!r}")
        if self.dataset not in INPUT_SHAPES:
            raise ConfigError(f"dataset must be one of {sorted(INPUT_SHAPES)}")
        for name in ("batch_size", "hidden_width", "kernel_n1", "kernel_n2", "time_steps",
                     "population", "repeats", "batches_per_repeat"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0 or self.warmup < 0:
            raise ConfigError("epochs and warmup must be >= 0")
        if self.population % 10:
            raise ConfigError(f"population {self.population} is not a multiple of 10 classes")
        object.__setattr__(self, "neuron_model", NeuronModel(self.neuron_model).value)
        object.__setattr__(self, "precision", Precision.parse(self.precision).value)
        object.__setattr__(self, "surrogate", SurrogateKind.parse(self.surrogate).value)

    def spec(self) -> NetworkSpec:
        shape = INPUT_SHAPES[self.dataset]
        common = dict(input_shape=shape, population=self.population, time_steps=self.time_steps,
                      neuron_model=self.neuron_model, precision=self.precision,
                      surrogate=self.surrogate, beta=self.beta, alpha=self.alpha,
                      u_thr=self.u_thr, encoding=self.encoding)
        if self.network == "dsnn":
            return NetworkSpec.dsnn(hidden=self.hidden_width, **common)
        return NetworkSpec.csnn(n1=self.kernel_n1, n2=self.kernel_n2, **common)

    @property
    def config_id(self) -> str:
        key = "|".join(f"{f.name}={getattr(self, f.name)}" for f in dataclasses.fields(self))
        return hashlib.sha1(key.encode()).hexdigest()[:12]

    def replace(self, **changes) -> "BenchConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class BenchRecord:
    config: BenchConfig
    wallclock_mean_s: float
    wallclock_std_s: float
    images_per_s: float
    neuronal_time_s: float
    synaptic_time_s: float
    loss: Optional[float] = None
    accuracy: Optional[float] = None
    wallclocks: list[float] = field(default_factory=list)
    error: Optional[str] = None

    def row(self) -> dict:
        c = self.config
        return {
            "config_id": c.config_id, "network": c.network, "neuron_model": c.neuron_model,
            "precision": c.precision, "batch_size": c.batch_size, "hidden_width": c.hidden_width,
            "kernel_n1": c.kernel_n1, "kernel_n2": c.kernel_n2, "time_steps": c.time_steps,
            "population": c.population, "epochs": c.epochs,
            "repeat_mean_wallclock_s": _fmt(self.wallclock_mean_s),
            "wallclock_std_s": _fmt(self.wallclock_std_s),
            "images_per_s": _fmt(self.images_per_s),
            "neuronal_time_s": _fmt(self.neuronal_time_s),
            "synaptic_time_s": _fmt(self.synaptic_time_s),
            "loss": _fmt(self.loss), "accuracy": _fmt(self.accuracy), "seed": c.seed,
        }


def _fmt(x: Optional[float]) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def _synthetic_batches(config: BenchConfig, shape) -> Iterator[tuple[Tensor, np.ndarray]]:
    rng = np.random.default_rng(config.seed)
    while True:
        x = rng.random((config.batch_size,) + tuple(shape), dtype=np.float32)
        y = rng.integers(0, 10, config.batch_size)
        yield Tensor._wrap(x, Precision.SINGLE), y


def _dataset_batches(config: BenchConfig, dataset: Dataset) -> Iterator[tuple[Tensor, np.ndarray]]:
    epoch = 0
    while True:
        for b in dataset.batches(config.batch_size, shuffle=True, seed=config.seed + epoch,
                                 drop_last=True):
            yield b.images, b.labels
        epoch += 1


def measure_throughput(config: BenchConfig, train_data: Optional[Dataset] = None,
                       test_data: Optional[Dataset] = None) -> BenchRecord:
    """Time `repeats` x `batches_per_repeat` training batches after warmup.

    Without data, batches are seeded uniform noise of the right shape (the
    cost of a dense step does not depend on pixel values).  With
    `epochs > 0` and data, a fresh model is also trained and its test
    accuracy reported.
    """
    spec = config.spec()
    if train_data is not None and len(train_data) < config.batch_size:
        raise ConfigError(f"dataset has {len(train_data)} samples < batch size {config.batch_size}")
    params = build(spec, config.seed)
    state = AdamWState(AdamWConfig(lr=config.lr, weight_decay=config.weight_decay))
    source = (_dataset_batches(config, train_data) if train_data is not None
              else _synthetic_batches(config, spec.input_shape))
    res = None
    for _ in range(config.warmup):
        x, y = next(source)
        res = train_step(params, spec, x, y, state)
        params = res.params
    timer = TimeSplit()
    per_repeat = []
    for _ in range(config.repeats):
        walls = []
        for _ in range(config.batches_per_repeat):
            x, y = next(source)
            res = train_step(params, spec, x, y, state, timer=timer)
            params = res.params
            walls.append(res.wallclock_s)
        per_repeat.append(float(np.mean(walls)))
    n_batches = config.repeats * config.batches_per_repeat
    mean = float(np.mean(per_repeat))
    std = float(np.std(per_repeat, ddof=1)) if len(per_repeat) > 1 else 0.0
    loss = res.loss if res is not None else None
    accuracy = None
    if config.epochs > 0:
        if train_data is None:
            raise ConfigError("accuracy runs (epochs > 0) need a training dataset")
        trained, history = fit(spec, train_data, config.epochs, config.batch_size, config.seed,
                               AdamWConfig(lr=config.lr, weight_decay=config.weight_decay),
                               test=test_data)
        loss = history[-1]["loss"]
        accuracy = history[-1].get("test_accuracy", history[-1]["train_accuracy"])
    return BenchRecord(
        config=config, wallclock_mean_s=mean, wallclock_std_s=std,
        images_per_s=config.batch_size / mean,
        neuronal_time_s=timer.neuronal / n_batches, synaptic_time_s=timer.synaptic / n_batches,
        loss=loss, accuracy=accuracy, wallclocks=per_repeat)


def time_split(config: BenchConfig, train_data: Optional[Dataset] = None) -> tuple[float, float]:
    """Mean per-batch (neuronal, synaptic) seconds, forward and backward combined."""
    rec = measure_throughput(config.replace(epochs=0), train_data)
    return rec.neuronal_time_s, rec.synaptic_time_s


def parse_axis_value(axis: str, value):
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    if axis == "kernel_depths":
        if isinstance(value, str):
            parts = value.lower().replace(":", "x").split("x")
            if len(parts) != 2:
                raise ConfigError(f"kernel depths must look like 12x64, got {value!r}")
            return int(parts[0]), int(parts[1])
        n1, n2 = value
        return int(n1), int(n2)
    if axis in ("neuron_model", "precision"):
        return str(value)
    return int(value)


def config_at(base: BenchConfig, axis: str, value) -> BenchConfig:
    value = parse_axis_value(axis, value)
    if axis == "kernel_depths":
        return base.replace(kernel_n1=value[0], kernel_n2=value[1])
    return base.replace(**{axis: value})


def sweep(axis: str, values: Sequence, base_config: BenchConfig,
          train_data: Optional[Dataset] = None, test_data: Optional[Dataset] = None,
          parallel: bool = False, workers: Optional[int] = None) -> list[BenchRecord]:
    """One record per value; a failing point yields a record carrying `error`.

    `parallel` is meant for accuracy sweeps only; concurrent points perturb
    each other's timings.
    """
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    configs = [config_at(base_config, axis, v) for v in values]

    def run(cfg: BenchConfig) -> BenchRecord:
        try:
            return measure_throughput(cfg, train_data, test_data)
        except Exception as exc:  # one bad point must not end the sweep
            log.warning("sweep point %s failed: %s", cfg.config_id, exc)
            nan = float("nan")
            return BenchRecord(cfg, nan, nan, nan, nan, nan, error=f"{type(exc).__name__}: {exc}")

    if parallel:
        with ThreadPoolExecutor(max_workers=workers or os.cpu_count()) as pool:
            return list(pool.map(run, configs))
    return [run(c) for c in configs]


def emit_csv(records: Iterable[BenchRecord], path, append: bool = False) -> Path:
    path = Path(path)
    write_header = not (append and path.exists() and path.stat().st_size > 0)
    with open(path, "a" if append else "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        if write_header:
            writer.writeheader()
        for rec in records:
            writer.writerow(rec.row())
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return list(reader)


def plot_csv(path, out, x: str = "batch_size") -> Path:
    """Throughput (and accuracy when present) against column `x`; PNG or SVG by suffix."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_csv(path)
    if x == "kernel_depths":
        xs = [f"{r['kernel_n1']}x{r['kernel_n2']}" for r in rows]
    else:
        xs = [r[x] for r in rows]
    ips = [float(r["images_per_s"] or "nan") for r in rows]
    err = [float(r["wallclock_std_s"] or 0) * float(r["images_per_s"] or 0)
           / max(float(r["repeat_mean_wallclock_s"] or 1), 1e-12) for r in rows]
    acc = [float(r["accuracy"]) if r["accuracy"] else None for r in rows]
    has_acc = any(a is not None for a in acc)
    fig, axes = plt.subplots(1, 2 if has_acc else 1, figsize=(10 if has_acc else 5, 4))
    axes = np.atleast_1d(axes)
    pos = np.arange(len(xs))
    axes[0].errorbar(pos, ips, yerr=err, marker="o", capsize=3)
    axes[0].set_xticks(pos, xs)
    axes[0].set_xlabel(x)
    axes[0].set_ylabel("images / s")
    if has_acc:
        axes[1].plot(pos, [a if a is not None else np.nan for a in acc], marker="o")
        axes[1].set_xticks(pos, xs)
        axes[1].set_xlabel(x)
        axes[1].set_ylabel("accuracy")
    fig.tight_layout()
    out = Path(out)
    fig.savefig(out)
    plt.close(fig)
    return out


def population_trend(train_data: Dataset, test_data: Dataset,
                     populations: Sequence[int] = (10, 100, 500), seeds: Sequence[int] = (0, 1, 2),
                     epochs: int = 5, baseline_steps: int = 25, hidden: int = 1000,
                     batch_size: int = 128) -> dict:
    """Test accuracy per population at T=1, plus the P=10, T=`baseline_steps` baseline.

    Returns {"T1": {P: [acc per seed]}, "baseline": [acc per seed]}.
    """
    input_shape = train_data.sample_shape
    out: dict = {"T1": {}, "baseline": []}
    for p in populations:
        spec = NetworkSpec.dsnn(hidden=hidden, input_shape=input_shape, population=p, time_steps=1)
        out["T1"][p] = [fit(spec, train_data, epochs, batch_size, s, test=test_data)[1][-1]["test_accuracy"]
                        for s in seeds]
        log.info("population %d at T=1: %s", p, out["T1"][p])
    base = NetworkSpec.dsnn(hidden=hidden, input_shape=input_shape, population=10,
                            time_steps=baseline_steps)
    out["baseline"] = [fit(base, train_data, epochs, batch_size, s, test=test_data)[1][-1]["test_accuracy"]
                       for s in seeds]
    return out
