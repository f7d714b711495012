"""Single-time-step transitions for the three spiking neuron models.

All three use reset-by-subtraction: a neuron that spiked at t-1 loses exactly
u_thr at t.  The weighted input enters the membrane unscaled (no (1 - beta)
factor).  With `detach_reset` the reset branch is treated as a constant in
the backward pass.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

from . import autograd as ag
from .autograd import Tag, Var
from .surrogate import SurrogateKind, smooth_spike, surrogate_grad  # noqa: F401
from .tensor import Precision, Tensor

DEFAULT_BETA = 0.9
DEFAULT_ALPHA = 0.8
DEFAULT_THRESHOLD = 1.0


class NeuronModel(str, enum.Enum):
    LIF = "lif"
    CUBA = "cuba"
    RLIF = "rlif"


@dataclass(frozen=True)
class NeuronParams:
    beta: float = DEFAULT_BETA
    alpha: float = DEFAULT_ALPHA
    u_thr: float = DEFAULT_THRESHOLD
    v: Optional[Var] = None
    surrogate: SurrogateKind = SurrogateKind.FAST_SIGMOID
    detach_reset: bool = True

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")
        if not 0 <= self.alpha <= 1:
            # alpha = 0 is the degenerate CuBa -> LIF reduction
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.u_thr <= 0:
            raise ValueError(f"u_thr must be positive, got {self.u_thr}")
        object.__setattr__(self, "surrogate", SurrogateKind.parse(self.surrogate))


@dataclass(frozen=True)
class NeuronState:
    u: Var
    z_prev: Var
    i: Optional[Var] = None


def initial_state(tape: ag.Tape, shape, precision=Precision.SINGLE,
                  model: NeuronModel = NeuronModel.LIF) -> NeuronState:
    zeros = Tensor.zeros(shape, precision)
    u = tape.leaf(zeros)
    z = tape.leaf(zeros)
    i = tape.leaf(zeros) if NeuronModel(model) is NeuronModel.CUBA else None
    return NeuronState(u=u, z_prev=z, i=i)


def _reset(state: NeuronState, params: NeuronParams) -> Var:
    z = ag.detach(state.z_prev) if params.detach_reset else state.z_prev
    return ag.scale(z, params.u_thr)


def lif_step(state: NeuronState, wx: Var, params: NeuronParams):
    """u_t = beta*u_{t-1} + wx_t - z_{t-1}*u_thr;  z_t = H(u_t - u_thr)."""
    _check(state, wx)
    tape = wx.tape
    with tape.scope(Tag.NEURONAL):
        u = ag.sub(ag.add(ag.scale(state.u, params.beta), wx), _reset(state, params))
        z = ag.spike(u, params.u_thr, params.surrogate)
    return z, NeuronState(u=u, z_prev=z)


def cuba_step(state: NeuronState, wx: Var, params: NeuronParams):
    """i_t = alpha*i_{t-1} + wx_t;  u_t = beta*u_{t-1} + i_t - z_{t-1}*u_thr."""
    _check(state, wx)
    if state.i is None:
        raise ValueError("current-based state needs a synaptic current")
    tape = wx.tape
    with tape.scope(Tag.NEURONAL):
        i = ag.add(ag.scale(state.i, params.alpha), wx)
        u = ag.sub(ag.add(ag.scale(state.u, params.beta), i), _reset(state, params))
        z = ag.spike(u, params.u_thr, params.surrogate)
    return z, NeuronState(u=u, z_prev=z, i=i)


def rlif_step(state: NeuronState, wx: Var, params: NeuronParams):
    """u_t = beta*u_{t-1} + wx_t + (z_{t-1} @ V - z_{t-1}*u_thr).

    V is a dense [n, n] recurrent weight over the layer's (flattened) neurons;
    row j holds neuron j's outgoing feedback.  The recurrent product is
    synaptic compute.
    """
    _check(state, wx)
    if params.v is None:
        raise ValueError("recurrent neuron needs a recurrent weight v")
    n = 1
    for d in wx.shape[1:]:
        n *= d
    if params.v.shape != (n, n):
        raise ValueError(f"recurrent weight shape {params.v.shape} != ({n}, {n})")
    tape = wx.tape
    if wx.value.ndim > 2:
        rec = ag.reshape(ag.matmul(ag.flatten(state.z_prev), params.v), wx.shape)
    else:
        rec = ag.matmul(state.z_prev, params.v)
    with tape.scope(Tag.NEURONAL):
        u = ag.add(ag.add(ag.scale(state.u, params.beta), wx),
                   ag.sub(rec, _reset(state, params)))
        z = ag.spike(u, params.u_thr, params.surrogate)
    return z, NeuronState(u=u, z_prev=z)


STEP = {
    NeuronModel.LIF: lif_step,
    NeuronModel.CUBA: cuba_step,
    NeuronModel.RLIF: rlif_step,
}


def _check(state: NeuronState, wx: Var) -> None:
    if state.u.shape != wx.shape:
        raise ValueError(f"state shape {state.u.shape} != input shape {wx.shape}")
