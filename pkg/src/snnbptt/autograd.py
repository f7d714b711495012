"""Define-by-run reverse-mode tape.

Every differentiable op appends one `TapeNode` holding the ids of its inputs,
the id of its output and whatever context its backward rule needs.  Because
ids are handed out in creation order, walking the node list backwards is a
reverse topological order; `Tape.backward` visits each node exactly once.

Each op carries a compute tag (neuronal, synaptic or readout) used by the
time-split instrumentation.  Synaptic and spike ops have an intrinsic tag;
generic elementwise ops take theirs from the enclosing `Tape.scope(...)`, and
running one outside any scope is an error, so no compute goes untimed.

Gradients are accumulated in single precision (double when the loss is
double), whatever the forward precision.
"""

from __future__ import annotations

import enum
import time
from collections.abc import Mapping
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from . import tensor as T
from .surrogate import (SurrogateKind, fast_sigmoid_array, heaviside_array,
                        surrogate_grad_array)
from .tensor import Precision, Tensor


class Tag(str, enum.Enum):
    NEURONAL = "neuronal"
    SYNAPTIC = "synaptic"
    READOUT = "readout"


class TapeError(RuntimeError):
    pass


class UntaggedOpError(TapeError):
    pass


class TimerNestingError(TapeError):
    pass


class TimeSplit:
    """Per-tag accumulating wallclock timers; sections may not nest."""

    def __init__(self):
        self.totals = {tag: 0.0 for tag in Tag}
        self.counts = {tag: 0 for tag in Tag}
        self._active: Optional[Tag] = None

    @contextmanager
    def section(self, tag: Tag):
        if self._active is not None:
            raise TimerNestingError(f"{tag.value} section opened inside {self._active.value}")
        self._active = tag
        start = time.perf_counter()
        try:
            yield
        finally:
            self.totals[tag] += time.perf_counter() - start
            self.counts[tag] += 1
            self._active = None

    @property
    def neuronal(self) -> float:
        return self.totals[Tag.NEURONAL]

    @property
    def synaptic(self) -> float:
        return self.totals[Tag.SYNAPTIC]

    def reset(self) -> None:
        for tag in Tag:
            self.totals[tag] = 0.0
            self.counts[tag] = 0


# rule(context, grad_out, input_values, needs, grad_dtype) -> one grad (or None) per input
Rule = Callable[[dict, np.ndarray, Sequence[Tensor], Sequence[bool], np.dtype], Sequence]

_RULES: dict[str, Rule] = {}
_OP_TAGS: dict[str, Optional[Tag]] = {}


def register(op: str, tag: Optional[Tag] = None):
    """Register the backward rule for `op`; `tag=None` means scope-tagged."""

    def deco(fn: Rule) -> Rule:
        _RULES[op] = fn
        _OP_TAGS[op] = tag
        return fn

    return deco


@dataclass(slots=True)
class TapeNode:
    op: str
    inputs: tuple[int, ...]
    output: int
    context: dict
    tag: Tag


class Var:
    """Handle to a value recorded on a tape."""

    __slots__ = ("tape", "id", "requires_grad")

    def __init__(self, tape: "Tape", vid: int, requires_grad: bool):
        self.tape = tape
        self.id = vid
        self.requires_grad = requires_grad

    @property
    def value(self) -> Tensor:
        return self.tape.values[self.id]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def precision(self) -> Precision:
        return self.value.precision

    def numpy(self, dtype=None) -> np.ndarray:
        return self.value.numpy(dtype)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Var(id={self.id}, shape={self.shape}, precision={self.precision.value})"


class GradStore(Mapping):
    """value-id -> gradient Tensor; also indexable by `Var` or leaf name."""

    def __init__(self, grads: dict[int, Tensor], names: dict[str, int]):
        self._grads = grads
        self._names = names

    def _key(self, key) -> int:
        if isinstance(key, Var):
            return key.id
        if isinstance(key, str):
            return self._names[key]
        return key

    def __getitem__(self, key) -> Tensor:
        return self._grads[self._key(key)]

    def __contains__(self, key) -> bool:
        try:
            return self._key(key) in self._grads
        except KeyError:
            return False

    def __iter__(self):
        return iter(self._grads)

    def __len__(self) -> int:
        return len(self._grads)

    def named(self) -> dict[str, Tensor]:
        return {n: self._grads[i] for n, i in self._names.items() if i in self._grads}


class Tape:
    def __init__(self, timer: Optional[TimeSplit] = None):
        self.values: list[Tensor] = []
        self.requires: list[bool] = []
        self.nodes: list[TapeNode] = []
        self.producer: dict[int, int] = {}
        self.names: dict[str, int] = {}
        self.timer = timer
        self.backward_visits = 0
        self._scopes: list[Tag] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _new_value(self, t: Tensor, requires_grad: bool) -> Var:
        vid = len(self.values)
        self.values.append(t)
        self.requires.append(requires_grad)
        return Var(self, vid, requires_grad)

    def leaf(self, t: Tensor, requires_grad: bool = False, name: Optional[str] = None) -> Var:
        if not isinstance(t, Tensor):
            raise TypeError(f"leaf expects a Tensor, got {type(t).__name__}")
        v = self._new_value(t, requires_grad)
        if name is not None:
            if name in self.names:
                raise TapeError(f"duplicate leaf name {name!r}")
            self.names[name] = v.id
        return v

    def var(self, name: str) -> Var:
        vid = self.names[name]
        return Var(self, vid, self.requires[vid])

    def is_leaf(self, vid: int) -> bool:
        return vid not in self.producer

    @contextmanager
    def scope(self, tag: Tag):
        self._scopes.append(Tag(tag))
        try:
            yield
        finally:
            self._scopes.pop()

    def tag_for(self, op: str) -> Tag:
        if op not in _OP_TAGS:
            raise UntaggedOpError(f"no backward rule registered for op {op!r}")
        tag = _OP_TAGS[op]
        if tag is None:
            if not self._scopes:
                raise UntaggedOpError(f"op {op!r} used outside a neuronal/synaptic/readout scope")
            tag = self._scopes[-1]
        return tag

    @contextmanager
    def timed(self, op: str) -> Iterator[Tag]:
        tag = self.tag_for(op)
        if self.timer is None:
            yield tag
        else:
            with self.timer.section(tag):
                yield tag

    def record(self, op: str, inputs: Sequence[Var], output: Tensor,
               context: Optional[dict] = None, tag: Optional[Tag] = None) -> Var:
        """Append one node; returns the handle of its output (node id in `.tape.producer`)."""
        ids = []
        for v in inputs:
            if v.tape is not self or not 0 <= v.id < len(self.values):
                raise TapeError(f"unknown input id {v.id} for op {op!r}")
            ids.append(v.id)
        if tag is None:
            tag = self.tag_for(op)
        needs = any(self.requires[i] for i in ids)
        out = self._new_value(output, needs)
        self.producer[out.id] = len(self.nodes)
        self.nodes.append(TapeNode(op, tuple(ids), out.id, context or {}, tag))
        return out

    def backward(self, loss: Var, seed: Optional[Tensor] = None) -> GradStore:
        if loss.tape is not self:
            raise TapeError("loss belongs to a different tape")
        lp = loss.precision
        gdtype = np.dtype(np.float64) if lp is Precision.DOUBLE else np.dtype(np.float32)
        gprec = Precision.DOUBLE if lp is Precision.DOUBLE else Precision.SINGLE
        if seed is None:
            if loss.value.size != 1:
                raise TapeError(f"non-scalar loss of shape {loss.shape} needs an explicit seed")
            g0 = np.ones(loss.shape, dtype=gdtype)
        else:
            if seed.shape != loss.shape:
                raise TapeError(f"seed shape {seed.shape} != loss shape {loss.shape}")
            g0 = seed.numpy(gdtype)
        grads: dict[int, np.ndarray] = {loss.id: g0}
        start = self.producer.get(loss.id, -1)
        for node in reversed(self.nodes[: start + 1]):
            self.backward_visits += 1
            g = grads.pop(node.output, None)
            if g is None:
                continue
            needs = [self.requires[i] for i in node.inputs]
            if not any(needs):
                continue
            rule = _RULES[node.op]
            xs = [self.values[i] for i in node.inputs]
            if self.timer is None:
                gin = rule(node.context, g, xs, needs, gdtype)
            else:
                with self.timer.section(node.tag):
                    gin = rule(node.context, g, xs, needs, gdtype)
            for vid, need, gi in zip(node.inputs, needs, gin):
                if not need or gi is None:
                    continue
                gi = np.asarray(gi, dtype=gdtype)
                if gi.shape != self.values[vid].shape:
                    raise TapeError(f"{node.op}: gradient shape {gi.shape} != value shape "
                                    f"{self.values[vid].shape}")
                prev = grads.get(vid)
                grads[vid] = gi if prev is None else prev + gi
        out = {}
        for vid, g in grads.items():
            if self.is_leaf(vid) and self.requires[vid] or vid == loss.id:
                if not np.isfinite(g).all():
                    raise T.NonFiniteError(f"non-finite gradient for value {vid}")
                out[vid] = Tensor._wrap(g, gprec)
        return GradStore(out, dict(self.names))


def _tape_of(*vs) -> Tape:
    tapes = {id(v.tape): v.tape for v in vs if isinstance(v, Var)}
    if len(tapes) != 1:
        raise TapeError("operands must live on exactly one tape")
    return next(iter(tapes.values()))


def _w(t: Tensor, dtype: np.dtype) -> np.ndarray:
    return t.data.astype(dtype, copy=False)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


# ---------------------------------------------------------------- synaptic ops

def cast(x: Var, precision) -> Var:
    precision = Precision.parse(precision)
    tape = _tape_of(x)
    with tape.timed("cast") as tag:
        out = T.cast(x.value, precision)
    return tape.record("cast", (x,), out, tag=tag)


@register("cast", Tag.SYNAPTIC)
def _cast_back(ctx, g, xs, needs, gd):
    return (g,)


def matmul(a: Var, b: Var) -> Var:
    tape = _tape_of(a, b)
    with tape.timed("matmul") as tag:
        out = T.matmul(a.value, b.value)
    return tape.record("matmul", (a, b), out, tag=tag)


@register("matmul", Tag.SYNAPTIC)
def _matmul_back(ctx, g, xs, needs, gd):
    a, b = xs
    ga = g @ _w(b, gd).T if needs[0] else None
    gb = _w(a, gd).T @ g if needs[1] else None
    return ga, gb


def bias_add(x: Var, b: Var) -> Var:
    """x[B, n] + b[n] (or x[B, C, H, W] + b[C])."""
    tape = _tape_of(x, b)
    xv, bv = x.value, b.value
    if bv.ndim != 1 or bv.shape[0] != xv.shape[1]:
        raise T.ShapeError(f"bias shape {bv.shape} does not match input {xv.shape}")
    with tape.timed("bias_add") as tag:
        T._same_precision(xv, bv)
        shape = (1, -1) + (1,) * (xv.ndim - 2)
        out = Tensor._wrap(xv.data + bv.data.reshape(shape), xv.precision)
    return tape.record("bias_add", (x, b), out, tag=tag)


@register("bias_add", Tag.SYNAPTIC)
def _bias_add_back(ctx, g, xs, needs, gd):
    axes = (0,) + tuple(range(2, g.ndim))
    return g, g.sum(axis=axes) if needs[1] else None


def conv2d(x: Var, k: Var, b: Var) -> Var:
    tape = _tape_of(x, k, b)
    with tape.timed("conv2d") as tag:
        out = T.conv2d(x.value, k.value, b.value)
    return tape.record("conv2d", (x, k, b), out, tag=tag)


@register("conv2d", Tag.SYNAPTIC)
def _conv2d_back(ctx, g, xs, needs, gd):
    x, k, _ = xs
    dx, dk, db = T.conv2d_grads(_w(x, gd), _w(k, gd), g, need_input=needs[0],
                                need_kernel=needs[1])
    return dx, dk, db if needs[2] else None


def maxpool2(x: Var) -> Var:
    tape = _tape_of(x)
    with tape.timed("maxpool2") as tag:
        out, idx = T.maxpool2(x.value)
    return tape.record("maxpool2", (x,), out, {"indices": idx}, tag=tag)


@register("maxpool2", Tag.SYNAPTIC)
def _maxpool2_back(ctx, g, xs, needs, gd):
    return (T.maxpool2_grad(g, ctx["indices"], xs[0].shape),)


def flatten(x: Var) -> Var:
    tape = _tape_of(x)
    with tape.timed("flatten") as tag:
        out = x.value.reshape(x.shape[0], -1)
    return tape.record("flatten", (x,), out, tag=tag)


@register("flatten", Tag.SYNAPTIC)
def _flatten_back(ctx, g, xs, needs, gd):
    return (g.reshape(xs[0].shape),)


def reshape(x: Var, shape) -> Var:
    tape = _tape_of(x)
    with tape.timed("reshape") as tag:
        out = x.value.reshape(tuple(shape))
    return tape.record("reshape", (x,), out, tag=tag)


@register("reshape", Tag.SYNAPTIC)
def _reshape_back(ctx, g, xs, needs, gd):
    return (g.reshape(xs[0].shape),)


# ----------------------------------------------------------- scope-tagged ops

def _binary(op: str, a: Var, b) -> Var:
    tape = _tape_of(a, b)
    operand = b.value if isinstance(b, Var) else b
    with tape.timed(op) as tag:
        out = T.elementwise(op, a.value, operand)
    inputs = (a, b) if isinstance(b, Var) else (a,)
    ctx = {} if isinstance(b, Var) else {"scalar": float(b)}
    return tape.record(op, inputs, out, ctx, tag=tag)


def add(a: Var, b) -> Var:
    return _binary("add", a, b)


def sub(a: Var, b) -> Var:
    return _binary("sub", a, b)


def mul(a: Var, b) -> Var:
    return _binary("mul", a, b)


def scale(a: Var, factor: float) -> Var:
    return _binary("scale", a, factor)


@register("add")
def _add_back(ctx, g, xs, needs, gd):
    if len(xs) == 1:
        return (g,)
    return g, _unbroadcast(g, xs[1].shape) if needs[1] else None


@register("sub")
def _sub_back(ctx, g, xs, needs, gd):
    if len(xs) == 1:
        return (g,)
    return g, _unbroadcast(-g, xs[1].shape) if needs[1] else None


@register("mul")
def _mul_back(ctx, g, xs, needs, gd):
    if len(xs) == 1:
        return (g * ctx["scalar"],)
    a, b = xs
    bw = _w(b, gd)
    ga = g * (bw if bw.shape == g.shape else bw.reshape(())) if needs[0] else None
    gb = _unbroadcast(g * _w(a, gd), b.shape) if needs[1] else None
    return ga, gb


@register("scale")
def _scale_back(ctx, g, xs, needs, gd):
    return (g * ctx["scalar"],)


def detach(x: Var) -> Var:
    """Same value, no gradient path back to `x`."""
    tape = _tape_of(x)
    with tape.timed("detach") as tag:
        out = x.value
    return tape.record("detach", (x,), out, tag=tag)


@register("detach")
def _detach_back(ctx, g, xs, needs, gd):
    return (None,)


def sum_all(x: Var) -> Var:
    tape = _tape_of(x)
    with tape.timed("sum_all") as tag:
        acc = T._accum_dtype(x.precision)
        out = Tensor._wrap(np.asarray(x.value.data.sum(dtype=acc)), x.precision)
    return tape.record("sum_all", (x,), out, tag=tag)


@register("sum_all")
def _sum_all_back(ctx, g, xs, needs, gd):
    return (np.broadcast_to(g, xs[0].shape),)


# ------------------------------------------------------------------ spike op

def spike(u: Var, u_thr: float, surrogate=SurrogateKind.FAST_SIGMOID) -> Var:
    """Heaviside(u - u_thr) forward, surrogate derivative backward.

    In smooth_test_mode the forward is the fast sigmoid itself so the
    backward is its exact derivative.
    """
    kind = SurrogateKind.parse(surrogate)
    tape = _tape_of(u)
    with tape.timed("spike") as tag:
        if kind is SurrogateKind.SMOOTH_TEST_MODE:
            z = fast_sigmoid_array(u.value.data, u_thr)
        else:
            z = heaviside_array(u.value.data, u_thr)
        out = Tensor._wrap(z, u.precision)
    return tape.record("spike", (u,), out, {"u_thr": float(u_thr), "kind": kind}, tag=tag)


@register("spike", Tag.NEURONAL)
def _spike_back(ctx, g, xs, needs, gd):
    kind = ctx["kind"]
    if kind is SurrogateKind.STRAIGHT_THROUGH:
        return (g,)
    return (g * surrogate_grad_array(_w(xs[0], gd), ctx["u_thr"], kind),)


# --------------------------------------------------------------- readout ops

def stack(vs: Sequence[Var]) -> Var:
    """[T] list of equal-shape values -> one [T, ...] value."""
    if not vs:
        raise T.ShapeError("stack of zero values")
    tape = _tape_of(*vs)
    with tape.timed("stack") as tag:
        p = T._same_precision(*[v.value for v in vs])
        out = Tensor._wrap(np.stack([v.value.data for v in vs]), p)
    return tape.record("stack", tuple(vs), out, tag=tag)


@register("stack", Tag.READOUT)
def _stack_back(ctx, g, xs, needs, gd):
    return tuple(g[i] if n else None for i, n in enumerate(needs))


def class_scores(record: Var, classes: int) -> Var:
    """[T, B, P] spikes -> [B, classes] counts summed over time and class blocks."""
    tape = _tape_of(record)
    t, b, p = record.shape
    if p % classes:
        raise T.ShapeError(f"population {p} is not a multiple of {classes} classes")
    with tape.timed("class_scores") as tag:
        acc = T._accum_dtype(record.precision)
        blocks = record.value.data.reshape(t, b, classes, p // classes)
        out = Tensor._wrap(blocks.sum(axis=(0, 3), dtype=acc), record.precision)
    return tape.record("class_scores", (record,), out, {"classes": classes}, tag=tag)


@register("class_scores", Tag.READOUT)
def _class_scores_back(ctx, g, xs, needs, gd):
    t, b, p = xs[0].shape
    c = ctx["classes"]
    gb = np.broadcast_to(g[None, :, :, None], (t, b, c, p // c))
    return (gb.reshape(t, b, p),)


def _log_softmax(s: np.ndarray) -> np.ndarray:
    s = s - s.max(axis=1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def softmax_cross_entropy(scores: Var, labels) -> Var:
    """Mean over the batch of -log softmax(scores)[label]."""
    tape = _tape_of(scores)
    labels = np.asarray(labels, dtype=np.int64)
    b, c = scores.shape
    if labels.shape != (b,) or labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must be {b} ints in [0, {c})")
    with tape.timed("softmax_cross_entropy") as tag:
        s = scores.value.data.astype(T._accum_dtype(scores.precision))
        logp = _log_softmax(s)
        loss = -logp[np.arange(b), labels].mean()
        out = Tensor._wrap(np.asarray(loss), scores.precision)
    return tape.record("softmax_cross_entropy", (scores,), out, {"labels": labels}, tag=tag)


@register("softmax_cross_entropy", Tag.READOUT)
def _softmax_ce_back(ctx, g, xs, needs, gd):
    labels = ctx["labels"]
    s = _w(xs[0], gd)
    prob = np.exp(_log_softmax(s))
    prob[np.arange(len(labels)), labels] -= 1
    return (prob * (g / len(labels)),)


def registered_ops() -> dict[str, Optional[Tag]]:
    return dict(_OP_TAGS)
