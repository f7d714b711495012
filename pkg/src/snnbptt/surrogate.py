"""Spike nonlinearity and its surrogate derivatives.

The forward spike is a strict threshold-shifted Heaviside.  In the backward
pass the zero-almost-everywhere derivative is replaced by either the
fast-sigmoid derivative 1 / (1 + |u_thr - u|)^2 or by the identity
(straight-through).  `smooth_test_mode` swaps the forward itself for the
fast sigmoid (u - u_thr) / (1 + |u - u_thr|), which makes the whole network
differentiable so gradients can be checked against finite differences.
"""

from __future__ import annotations

import enum
from typing import Union

import numpy as np

from .tensor import Precision, Tensor


class SurrogateKind(str, enum.Enum):
    FAST_SIGMOID = "fast_sigmoid"
    STRAIGHT_THROUGH = "straight_through"
    SMOOTH_TEST_MODE = "smooth_test_mode"

    @classmethod
    def parse(cls, value: Union[str, "SurrogateKind"]) -> "SurrogateKind":
        if isinstance(value, SurrogateKind):
            return value
        key = str(value).lower().replace("-", "_")
        aliases = {"ste": "straight_through", "fs": "fast_sigmoid", "smooth": "smooth_test_mode"}
        return cls(aliases.get(key, key))


def heaviside_array(u: np.ndarray, u_thr: float) -> np.ndarray:
    return (u > u_thr).astype(u.dtype)


def fast_sigmoid_array(u: np.ndarray, u_thr: float) -> np.ndarray:
    d = u - u_thr
    return d / (1 + np.abs(d))


def surrogate_grad_array(u: np.ndarray, u_thr: float, kind: SurrogateKind) -> np.ndarray:
    if kind is SurrogateKind.STRAIGHT_THROUGH:
        return np.ones_like(u)
    return 1 / (1 + np.abs(u_thr - u)) ** 2


def surrogate_grad(u: Tensor, u_thr: float, kind=SurrogateKind.FAST_SIGMOID) -> Tensor:
    """d(spike)/du substitute evaluated at `u`.

    Computed in single precision for half inputs, matching gradient precision.
    """
    kind = SurrogateKind.parse(kind)
    p = u.precision if u.precision is Precision.DOUBLE else Precision.SINGLE
    return Tensor._wrap(surrogate_grad_array(u.numpy(p.dtype), u_thr, kind), p)


def smooth_spike(u: Tensor, u_thr: float) -> Tensor:
    return Tensor._wrap(fast_sigmoid_array(u.data, u_thr), u.precision)
