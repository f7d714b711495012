"""Minimal n-d array with three precision modes.

Storage is a row-major numpy buffer. Every op returns a new, read-only
Tensor; non-finite results raise instead of propagating.  Half precision is
value-level quantization: matmul/conv inputs are widened to float32 for
accumulation and the result is rounded back to float16.
"""

from __future__ import annotations

import enum
from typing import Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

HALF_MAX = 65504.0


class Precision(str, enum.Enum):
    HALF = "half"
    SINGLE = "single"
    DOUBLE = "double"

    @property
    def dtype(self) -> np.dtype:
        return _DTYPES[self]

    @classmethod
    def parse(cls, value: Union[str, "Precision"]) -> "Precision":
        if isinstance(value, Precision):
            return value
        aliases = {"16": "half", "fp16": "half", "32": "single", "fp32": "single",
                   "64": "double", "fp64": "double", "float16": "half",
                   "float32": "single", "float64": "double"}
        return cls(aliases.get(str(value).lower(), str(value).lower()))


_DTYPES = {
    Precision.HALF: np.dtype(np.float16),
    Precision.SINGLE: np.dtype(np.float32),
    Precision.DOUBLE: np.dtype(np.float64),
}


class TensorError(ValueError):
    pass


class ShapeError(TensorError):
    pass


class PrecisionError(TensorError):
    pass


class NonFiniteError(TensorError, ArithmeticError):
    pass


class HalfOverflowError(NonFiniteError):
    pass


def _quantize(arr: np.ndarray, precision: Precision) -> np.ndarray:
    """Round `arr` into `precision`, rejecting NaN/Inf and half overflow."""
    arr = np.asarray(arr)
    if arr.dtype.kind not in "fiub":
        raise TensorError(f"unsupported element type {arr.dtype}")
    with np.errstate(over="ignore"):
        out = arr.astype(precision.dtype, copy=False)
    if not np.isfinite(out).all():
        if precision is Precision.HALF and np.isfinite(arr).all():
            peak = float(np.max(np.abs(arr)))
            raise HalfOverflowError(
                f"value {peak:g} overflows half precision range (±{HALF_MAX:g})")
        raise NonFiniteError("non-finite value in tensor")
    return out


class Tensor:
    """Immutable n-d array tagged with a precision mode."""

    __slots__ = ("_data", "precision")

    def __init__(self, data, precision: Union[Precision, str] = Precision.SINGLE):
        precision = Precision.parse(precision)
        arr = _quantize(np.array(data, copy=True), precision)
        if arr.ndim and 0 in arr.shape:
            raise ShapeError(f"dimensions must be positive, got {arr.shape}")
        arr.flags.writeable = False
        self._data = arr
        self.precision = precision

    @classmethod
    def _wrap(cls, arr: np.ndarray, precision: Precision) -> "Tensor":
        # Internal constructor: takes ownership of `arr` (no defensive copy).
        t = object.__new__(cls)
        arr = _quantize(arr, precision)
        if not arr.flags.c_contiguous:
            arr = arr.copy(order="C")
        arr.flags.writeable = False
        t._data = arr
        t.precision = precision
        return t

    @classmethod
    def zeros(cls, shape: Sequence[int], precision=Precision.SINGLE) -> "Tensor":
        precision = Precision.parse(precision)
        return cls._wrap(np.zeros(tuple(shape), dtype=precision.dtype), precision)

    @classmethod
    def ones(cls, shape: Sequence[int], precision=Precision.SINGLE) -> "Tensor":
        precision = Precision.parse(precision)
        return cls._wrap(np.ones(tuple(shape), dtype=precision.dtype), precision)

    @property
    def data(self) -> np.ndarray:
        """Read-only numpy view of the values."""
        return self._data

    @property
    def flat(self) -> np.ndarray:
        return self._data.reshape(-1)

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def item(self) -> float:
        return float(self._data.item())

    def numpy(self, dtype=None) -> np.ndarray:
        """Writable copy, optionally widened to `dtype`."""
        return np.array(self._data, dtype=dtype, copy=True)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        try:
            return Tensor._wrap(self._data.reshape(shape), self.precision)
        except ValueError as exc:
            raise ShapeError(str(exc)) from None

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, precision={self.precision.value})"

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return (self.precision is other.precision and self.shape == other.shape
                and bool(np.array_equal(self._data, other._data)))

    __hash__ = None


def _same_precision(*ts: Tensor) -> Precision:
    p = ts[0].precision
    for t in ts[1:]:
        if t.precision is not p:
            raise PrecisionError(f"precision mismatch: {p.value} vs {t.precision.value}")
    return p


def _accum_dtype(p: Precision) -> np.dtype:
    return np.dtype(np.float64) if p is Precision.DOUBLE else np.dtype(np.float32)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    p = _same_precision(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    acc = _accum_dtype(p)
    out = np.matmul(a.data.astype(acc, copy=False), b.data.astype(acc, copy=False))
    return Tensor._wrap(out, p)


def _windows(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    # [B, C, Ho, Wo, kh, kw] strided view, no copy
    return sliding_window_view(x, (kh, kw), axis=(2, 3))


def conv2d(input: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Valid (unpadded), stride-1 cross-correlation."""
    p = _same_precision(input, kernel, bias)
    if input.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {input.shape}, {kernel.shape}")
    _, cin, h, w = input.shape
    cout, kcin, kh, kw = kernel.shape
    if kcin != cin:
        raise ShapeError(f"kernel expects {kcin} input channels, input has {cin}")
    if kh > h or kw > w:
        raise ShapeError(f"kernel {kh}x{kw} larger than input {h}x{w}")
    if bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} != ({cout},)")
    acc = _accum_dtype(p)
    win = _windows(input.data.astype(acc, copy=False), kh, kw)
    out = np.tensordot(win, kernel.data.astype(acc, copy=False), axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2) + bias.data.astype(acc)[None, :, None, None]
    return Tensor._wrap(out, p)


def conv2d_grads(x: np.ndarray, kernel: np.ndarray, grad: np.ndarray,
                 need_input: bool = True, need_kernel: bool = True):
    """Gradients of conv2d w.r.t. (input, kernel, bias) given upstream `grad`."""
    _, _, kh, kw = kernel.shape
    ho, wo = grad.shape[2], grad.shape[3]
    dx = dk = None
    if need_kernel:
        dk = np.tensordot(grad, _windows(x, kh, kw), axes=([0, 2, 3], [0, 2, 3]))
    if need_input:
        dx = np.zeros(x.shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                # [B,Cout,Ho,Wo] x [Cout,Cin] -> [B,Ho,Wo,Cin]
                contrib = np.tensordot(grad, kernel[:, :, i, j], axes=([1], [0]))
                dx[:, :, i:i + ho, j:j + wo] += contrib.transpose(0, 3, 1, 2)
    db = grad.sum(axis=(0, 2, 3))
    return dx, dk, db


def maxpool2(input: Tensor) -> tuple[Tensor, np.ndarray]:
    """Non-overlapping 2x2 max pool.

    Returns the pooled tensor and, per output element, the flat index of the
    winning element within its input H*W plane (first maximum wins ties).
    """
    if input.ndim != 4:
        raise ShapeError(f"maxpool2 expects [B,C,H,W], got {input.shape}")
    b, c, h, w = input.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    blocks = input.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(b, c, h // 2, w // 2, 4)
    local = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, local[..., None], axis=-1)[..., 0]
    rows = 2 * np.arange(h // 2)[:, None] + local // 2
    cols = 2 * np.arange(w // 2)[None, :] + local % 2
    return Tensor._wrap(out, input.precision), rows * w + cols


def maxpool2_grad(grad: np.ndarray, indices: np.ndarray, input_shape) -> np.ndarray:
    b, c, h, w = input_shape
    dx = np.zeros((b, c, h * w), dtype=grad.dtype)
    np.put_along_axis(dx, indices.reshape(b, c, -1), grad.reshape(b, c, -1), axis=-1)
    return dx.reshape(b, c, h, w)


Operand = Union[Tensor, float, int]

_ELEMENTWISE = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "scale": np.multiply,
    "compare_gt": np.greater,
}


def elementwise(op: str, a: Tensor, b: Operand) -> Tensor:
    """add/sub/mul/scale/compare_gt with equal shapes or a scalar operand."""
    if op not in _ELEMENTWISE:
        raise TensorError(f"unknown elementwise op {op!r}")
    p = a.precision
    if isinstance(b, Tensor):
        if op == "scale":
            raise TensorError("scale takes a scalar factor")
        _same_precision(a, b)
        if b.shape != a.shape and b.size != 1:
            raise ShapeError(f"elementwise shape mismatch: {a.shape} vs {b.shape}")
        rhs = b.data if b.shape == a.shape else b.data.reshape(())
    else:
        rhs = np.asarray(b, dtype=p.dtype)
    out = _ELEMENTWISE[op](a.data, rhs)
    if op == "compare_gt":
        out = out.astype(p.dtype)
    return Tensor._wrap(out, p)


def add(a: Tensor, b: Operand) -> Tensor:
    return elementwise("add", a, b)


def sub(a: Tensor, b: Operand) -> Tensor:
    return elementwise("sub", a, b)


def mul(a: Tensor, b: Operand) -> Tensor:
    return elementwise("mul", a, b)


def scale(a: Tensor, factor: float) -> Tensor:
    return elementwise("scale", a, factor)


def compare_gt(a: Tensor, b: Operand) -> Tensor:
    return elementwise("compare_gt", a, b)


def cast(t: Tensor, precision: Union[Precision, str]) -> Tensor:
    precision = Precision.parse(precision)
    if precision is t.precision:
        return t
    return Tensor._wrap(t.data, precision)
