"""Central finite-difference check of tape gradients in smooth test mode.

Smooth mode replaces the Heaviside forward by the fast sigmoid, whose exact
derivative is the surrogate used in backward, so autodiff and finite
differences must agree.  The reset branch is left attached for the check: a
detached reset is a deliberate gradient approximation and would not match.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Conv, Dense, MaxPool2, ModelParams, NetworkSpec, build, forward_unrolled
from .tensor import Precision, Tensor
from .train import PopulationReadout, loss

TINY_NETS = ("dsnn-tiny", "csnn-tiny")


def tiny_spec(net: str = "dsnn-tiny", time_steps: int = 3, neuron_model: str = "lif") -> NetworkSpec:
    common = dict(neuron_model=neuron_model, time_steps=time_steps, classes=2,
                  precision=Precision.DOUBLE, surrogate="smooth_test_mode", detach_reset=False)
    if net == "dsnn-tiny":
        return NetworkSpec(layers=(Dense(5), Dense(2)), input_shape=(4,), **common)
    if net == "csnn-tiny":
        return NetworkSpec(layers=(Conv(3, 2), MaxPool2(), Dense(2)), input_shape=(1, 6, 6),
                           **common)
    raise ValueError(f"unknown tiny net {net!r}; expected one of {TINY_NETS}")


@dataclass
class GradcheckResult:
    max_rel_error: float
    n_params: int
    per_param: dict[str, float]
    analytic: dict[str, np.ndarray]
    numeric: dict[str, np.ndarray]


def rel_error(a: np.ndarray, n: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def gradcheck(spec: NetworkSpec, seed: int = 0, batch: int = 3, step: float = 1e-4,
              input_scale: float = 2.0) -> GradcheckResult:
    if spec.precision is not Precision.DOUBLE:
        raise ValueError("finite-difference checks need double precision")
    rng = np.random.default_rng(seed + 1)
    params = build(spec, seed)
    x = Tensor(rng.random((batch,) + spec.input_shape + (spec.time_steps,)) * input_scale,
               Precision.DOUBLE)
    labels = rng.integers(0, spec.classes, batch)
    readout = PopulationReadout.for_spec(spec)

    def loss_of(p: ModelParams):
        record, tape = forward_unrolled(p, spec, x)
        return loss(record, labels, readout), tape

    lv, tape = loss_of(params)
    analytic = {n: g.numpy() for n, g in tape.backward(lv).named().items()}
    numeric = {}
    for name, t in params.items():
        base = t.numpy()
        num = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[idx] += step
            minus[idx] -= step
            fp = loss_of(params.replace(**{name: Tensor(plus, Precision.DOUBLE)}))[0].value.item()
            fm = loss_of(params.replace(**{name: Tensor(minus, Precision.DOUBLE)}))[0].value.item()
            num[idx] = (fp - fm) / (2 * step)
        numeric[name] = num
    per = {n: float(rel_error(analytic[n], numeric[n]).max()) for n in numeric}
    return GradcheckResult(max(per.values()), params.count(), per, analytic, numeric)
