"""Network specs for the dense/convolutional SNNs and their unrolled forward pass."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Union

import numpy as np

from . import autograd as ag
from .autograd import Tape, TimeSplit, Var
from .neuron import (DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_THRESHOLD, STEP,
                     NeuronModel, NeuronParams, initial_state)
from .surrogate import SurrogateKind
from .tensor import Precision, ShapeError, Tensor

MNIST_SHAPE = (1, 28, 28)
CIFAR10_SHAPE = (3, 32, 32)


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class Dense:
    out: int

    def __str__(self) -> str:
        return str(self.out)


@dataclass(frozen=True)
class Conv:
    kernel: int
    channels: int

    def __str__(self) -> str:
        return f"{self.kernel}C{self.channels}"


@dataclass(frozen=True)
class MaxPool2:
    def __str__(self) -> str:
        return "MP2"


Layer = Union[Dense, Conv, MaxPool2]

_CONV_RE = re.compile(r"^(\d+)C(\d+)$", re.IGNORECASE)


def parse_layers(notation: str, input_shape=None) -> tuple[Layer, ...]:
    """Parse '784-1000-10' or '5C12-MP2-5C64-MP2-10'.

    A leading bare integer equal to the flattened input size names the input
    and is dropped.
    """
    tokens = [t.strip() for t in notation.split("-") if t.strip()]
    if not tokens:
        raise SpecError("empty layer notation")
    layers: list[Layer] = []
    for tok in tokens:
        if tok.upper() == "MP2":
            layers.append(MaxPool2())
        elif _CONV_RE.match(tok):
            k, c = _CONV_RE.match(tok).groups()
            layers.append(Conv(int(k), int(c)))
        elif tok.isdigit():
            layers.append(Dense(int(tok)))
        else:
            raise SpecError(f"unrecognised layer token {tok!r}")
    if input_shape is not None and len(layers) > 1 and isinstance(layers[0], Dense):
        if layers[0].out == math.prod(input_shape):
            layers = layers[1:]
    return tuple(layers)


@dataclass(frozen=True)
class NetworkSpec:
    """Declarative architecture: weighted layers, each driving a spiking stage.

    A neuron layer follows every Dense/Conv; when MP2 entries directly follow a
    conv they pool its currents first, so the neurons sit after the pooling.
    The last layer's width is the output population.
    """

    layers: tuple[Layer, ...]
    input_shape: tuple[int, ...] = MNIST_SHAPE
    neuron_model: NeuronModel = NeuronModel.LIF
    time_steps: int = 25
    classes: int = 10
    precision: Precision = Precision.SINGLE
    surrogate: SurrogateKind = SurrogateKind.FAST_SIGMOID
    beta: float = DEFAULT_BETA
    alpha: float = DEFAULT_ALPHA
    u_thr: float = DEFAULT_THRESHOLD
    detach_reset: bool = True
    encoding: str = "constant_current"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "neuron_model", NeuronModel(self.neuron_model))
        object.__setattr__(self, "precision", Precision.parse(self.precision))
        object.__setattr__(self, "surrogate", SurrogateKind.parse(self.surrogate))
        if self.time_steps < 1:
            raise SpecError(f"time_steps must be >= 1, got {self.time_steps}")
        if self.encoding not in ("constant_current", "bernoulli_rate"):
            raise SpecError(f"unknown encoding {self.encoding!r}")
        if not self.layers or not isinstance(self.layers[-1], Dense):
            raise SpecError("the last layer must be dense (the output population)")
        if self.classes < 1 or self.population % self.classes:
            raise SpecError(f"population {self.population} is not a multiple of "
                            f"{self.classes} classes")
        NeuronParams(self.beta, self.alpha, self.u_thr)  # validates ranges
        self.stage_shapes()

    @property
    def population(self) -> int:
        return self.layers[-1].out

    @property
    def neurons_per_class(self) -> int:
        return self.population // self.classes

    def notation(self) -> str:
        parts = [str(layer) for layer in self.layers]
        if isinstance(self.layers[0], Dense):
            parts.insert(0, str(math.prod(self.input_shape)))
        return "-".join(parts)

    def with_(self, **changes) -> "NetworkSpec":
        return replace(self, **changes)

    def with_population(self, population: int) -> "NetworkSpec":
        return replace(self, layers=self.layers[:-1] + (Dense(population),))

    @classmethod
    def dsnn(cls, hidden: int = 1000, input_shape=MNIST_SHAPE, population: int = 10,
             **kw) -> "NetworkSpec":
        return cls(layers=(Dense(hidden), Dense(population)), input_shape=input_shape, **kw)

    @classmethod
    def csnn(cls, n1: int = 12, n2: int = 64, input_shape=MNIST_SHAPE, population: int = 10,
             **kw) -> "NetworkSpec":
        layers = (Conv(5, n1), MaxPool2(), Conv(5, n2), MaxPool2(), Dense(population))
        return cls(layers=layers, input_shape=input_shape, **kw)

    @classmethod
    def from_notation(cls, notation: str, input_shape=MNIST_SHAPE, **kw) -> "NetworkSpec":
        return cls(layers=parse_layers(notation, input_shape), input_shape=input_shape, **kw)

    def plan(self) -> list[tuple[int, int]]:
        """[(layer_index, pools_after), ...] for each spiking stage, in order."""
        steps: list[tuple[int, int]] = []
        i = 0
        while i < len(self.layers):
            layer = self.layers[i]
            if isinstance(layer, MaxPool2):
                raise SpecError("MP2 must directly follow a conv layer")
            j = i + 1
            while isinstance(layer, Conv) and j < len(self.layers) and isinstance(self.layers[j], MaxPool2):
                j += 1
            steps.append((i, j - i - 1))
            i = j
        return steps

    def stage_shapes(self) -> list[tuple[int, ...]]:
        """Per-sample neuron shape of each spiking stage; validates the chain."""
        shape = self.input_shape
        out = []

        def pool(s):
            if len(s) != 3 or s[1] % 2 or s[2] % 2:
                raise SpecError(f"maxpool2 needs even spatial dims, got {s}")
            return (s[0], s[1] // 2, s[2] // 2)

        for idx, pools in self.plan():
            layer = self.layers[idx]
            if isinstance(layer, Dense):
                if layer.out < 1:
                    raise SpecError("dense width must be positive")
                shape = (layer.out,)
            else:
                if len(shape) != 3:
                    raise SpecError(f"conv layer needs [C, H, W] input, got {shape}")
                c, h, w = shape
                if layer.kernel > h or layer.kernel > w:
                    raise SpecError(f"kernel {layer.kernel} larger than input {h}x{w}")
                shape = (layer.channels, h - layer.kernel + 1, w - layer.kernel + 1)
            for _ in range(pools):
                shape = pool(shape)
            out.append(shape)
        return out

    def neuron_params(self, v: Optional[Var] = None) -> NeuronParams:
        return NeuronParams(self.beta, self.alpha, self.u_thr, v, self.surrogate,
                            self.detach_reset)


@dataclass
class ModelParams:
    """Named master weights; single precision unless the network runs in double."""

    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {n: t.shape for n, t in self.tensors.items()}

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def replace(self, **updates: Tensor) -> "ModelParams":
        merged = dict(self.tensors)
        for name, t in updates.items():
            if name not in merged:
                raise KeyError(name)
            if t.shape != merged[name].shape:
                raise ShapeError(f"{name}: {t.shape} != {merged[name].shape}")
            merged[name] = t
        return ModelParams(merged)

    def updated(self, updates: dict[str, Tensor]) -> "ModelParams":
        return self.replace(**updates)


def master_precision(spec: NetworkSpec) -> Precision:
    return Precision.DOUBLE if spec.precision is Precision.DOUBLE else Precision.SINGLE


def build(spec: NetworkSpec, seed: int = 0) -> ModelParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, deterministic in `seed`."""
    rng = np.random.default_rng(seed)
    p = master_precision(spec)
    shapes = spec.stage_shapes()
    tensors: dict[str, Tensor] = {}
    in_shape = spec.input_shape
    for (idx, _pools), out_shape in zip(spec.plan(), shapes):
        layer = spec.layers[idx]
        if isinstance(layer, Dense):
            fan_in = math.prod(in_shape)
            wshape = (fan_in, layer.out)
        else:
            fan_in = in_shape[0] * layer.kernel ** 2
            wshape = (layer.channels, in_shape[0], layer.kernel, layer.kernel)
        bound = 1 / math.sqrt(fan_in)
        tensors[f"{idx}.w"] = Tensor._wrap(rng.uniform(-bound, bound, wshape), p)
        nb = layer.out if isinstance(layer, Dense) else layer.channels
        tensors[f"{idx}.b"] = Tensor.zeros((nb,), p)
        if spec.neuron_model is NeuronModel.RLIF:
            n = math.prod(out_shape)
            rb = 1 / math.sqrt(n)
            tensors[f"{idx}.v"] = Tensor._wrap(rng.uniform(-rb, rb, (n, n)), p)
        in_shape = out_shape
    return ModelParams(tensors)


def forward_unrolled(params: ModelParams, spec: NetworkSpec, batch: Tensor,
                     timer: Optional[TimeSplit] = None) -> tuple[Var, Tape]:
    """Run all T steps on a fresh tape.

    `batch` is [B, *input_shape, T].  Returns the stacked output spikes
    [T, B, P] and the tape; parameter leaves are named on the tape.
    """
    if batch.ndim != len(spec.input_shape) + 2 or batch.shape[1:-1] != spec.input_shape:
        raise ShapeError(f"batch shape {batch.shape} does not match input {spec.input_shape} + [T]")
    if batch.shape[-1] != spec.time_steps:
        raise ShapeError(f"batch has {batch.shape[-1]} time steps, spec needs {spec.time_steps}")
    tape = Tape(timer=timer)
    p = spec.precision
    weights: dict[str, Var] = {}
    for name, t in params.items():
        leaf = tape.leaf(t, requires_grad=True, name=name)
        weights[name] = leaf if t.precision is p else ag.cast(leaf, p)

    b = batch.shape[0]
    stages = spec.plan()
    step = STEP[spec.neuron_model]
    states = [initial_state(tape, (b,) + shape, p, spec.neuron_model)
              for shape in spec.stage_shapes()]
    neuron_params = [spec.neuron_params(weights.get(f"{idx}.v")) for idx, _ in stages]
    xs = batch.data
    outputs = []
    for t in range(spec.time_steps):
        x = tape.leaf(Tensor._wrap(xs[..., t], p))
        for k, (idx, pools) in enumerate(stages):
            layer = spec.layers[idx]
            w, bias = weights[f"{idx}.w"], weights[f"{idx}.b"]
            if isinstance(layer, Dense):
                if x.value.ndim > 2:
                    x = ag.flatten(x)
                cur = ag.bias_add(ag.matmul(x, w), bias)
            else:
                cur = ag.conv2d(x, w, bias)
                for _ in range(pools):
                    cur = ag.maxpool2(cur)
            x, states[k] = step(states[k], cur, neuron_params[k])
        outputs.append(x)
    return ag.stack(outputs), tape
