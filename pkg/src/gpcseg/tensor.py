"""Dense float tensors with a reverse-mode gradient tape.

A :class:`Tensor` wraps a contiguous row-major numpy array (float32 by
default; float64 is allowed so gradient checks can run a high-precision
shadow evaluation).  Differentiable operations append an entry to a
thread-local :class:`GradTape`; :func:`backward` replays the tape in exact
reverse execution order and accumulates gradients into the ``.grad`` buffer
of every leaf that requires them.  The tape is consumed by ``backward``.

Layers in :mod:`gpcseg.nn` register their own entries through
:func:`record_op`, so this module stays agnostic of convolution details.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import AutodiffError, NonFiniteError, ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)

_state = threading.local()


def _tls():
    if not hasattr(_state, "tape"):
        _state.tape = GradTape()
        _state.recording = True
    return _state


class Tensor:
    """N-dimensional float array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        """Add ``g`` into the gradient buffer (allocating it on first use)."""
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


class TapeEntry:
    """One executed differentiable op: output, inputs, and a pullback."""

    __slots__ = ("out", "inputs", "pullback")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], pullback: Callable):
        self.out = out
        self.inputs = tuple(inputs)
        self.pullback = pullback


class GradTape:
    """Ordered record of executed differentiable operations."""

    __slots__ = ("entries",)

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __len__(self):
        return len(self.entries)

    def clear(self):
        self.entries.clear()


class no_grad:
    """Context manager that suspends tape recording (eval-mode forwards)."""

    def __enter__(self):
        s = _tls()
        self._prev = s.recording
        s.recording = False
        return self

    def __exit__(self, *exc):
        _tls().recording = self._prev
        return False


def is_recording() -> bool:
    return _tls().recording


def active_tape() -> GradTape:
    return _tls().tape


def record_op(out: Tensor, inputs: Sequence[Tensor], pullback: Callable) -> Tensor:
    """Register a differentiable op on the tape.

    ``pullback`` maps the output gradient (ndarray) to a tuple of input
    gradients aligned with ``inputs`` (``None`` for non-differentiable
    inputs).  Recording only happens when enabled and at least one input
    requires a gradient; the output then requires one too.
    """
    s = _tls()
    if s.recording and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        s.tape.entries.append(TapeEntry(out, inputs, pullback))
    return out


def _check_finite(arr: np.ndarray, op: str):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {op}")


# ---------------------------------------------------------------------------
# construction


def create(shape, init: str = "zeros", *, value: float = 0.0, seed: int | None = None,
           fan_in: int | None = None, requires_grad: bool = False) -> Tensor:
    """Create a float32 tensor filled per ``init``.

    init is one of ``zeros``, ``constant`` (uses ``value``) or ``he_normal``
    (normal with variance 2/fan_in; the caller supplies ``fan_in`` and a
    ``seed``).
    """
    shape = tuple(int(d) for d in shape)
    if any(d < 1 for d in shape):
        raise ShapeError(f"all dimensions must be >= 1, got {shape}")
    if init == "zeros":
        data = np.zeros(shape, dtype=np.float32)
    elif init == "constant":
        data = np.full(shape, value, dtype=np.float32)
    elif init == "he_normal":
        if fan_in is None or fan_in < 1:
            raise ShapeError("he_normal requires a positive fan_in")
        rng = np.random.default_rng(seed)
        std = np.sqrt(2.0 / fan_in)
        data = rng.normal(0.0, std, size=shape).astype(np.float32)
    else:
        raise ShapeError(f"unknown init {init!r}")
    return Tensor(data, requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# elementwise and reduction arithmetic


def elementwise(kind: str, a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"elementwise {kind}: shape mismatch {a.shape} vs {b.shape}")
    if kind == "add":
        out_data = a.data + b.data
        pullback = lambda g: (g, g)
    elif kind == "sub":
        out_data = a.data - b.data
        pullback = lambda g: (g, -g)
    elif kind == "mul":
        out_data = a.data * b.data
        pullback = lambda g: (g * b.data, g * a.data)
    else:
        raise ShapeError(f"unknown elementwise kind {kind!r}")
    _check_finite(out_data, f"elementwise {kind}")
    return record_op(Tensor(out_data), (a, b), pullback)


def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("add", a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("sub", a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("mul", a, b)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar (taped)."""
    c = float(c)
    out = Tensor(x.data * np.asarray(c, dtype=x.dtype))
    _check_finite(out.data, "scale")
    return record_op(out, (x,), lambda g: (g * c,))


def reduce(kind: str, x: Tensor) -> Tensor:
    """Full reduction to a scalar tensor (``sum`` or ``mean``).

    Summation order is numpy's fixed sequential/pairwise order, so results
    are bit-reproducible for identical inputs.
    """
    if kind == "sum":
        out_data = x.data.sum()
        pullback = lambda g: (np.full(x.shape, g, dtype=x.dtype),)
    elif kind == "mean":
        out_data = x.data.mean()
        n = x.data.size
        pullback = lambda g: (np.full(x.shape, g / n, dtype=x.dtype),)
    else:
        raise ShapeError(f"unknown reduce kind {kind!r}")
    _check_finite(out_data, f"reduce {kind}")
    return record_op(Tensor(np.asarray(out_data, dtype=x.dtype)), (x,), pullback)


def tsum(x: Tensor) -> Tensor:
    return reduce("sum", x)


def tmean(x: Tensor) -> Tensor:
    return reduce("mean", x)


def abs_sum(x: Tensor) -> Tensor:
    """sum(|x|), used by the L1 weight penalty; subgradient at 0 is 0."""
    out = Tensor(np.asarray(np.abs(x.data).sum(), dtype=x.dtype))
    _check_finite(out.data, "abs_sum")
    return record_op(out, (x,), lambda g: (g * np.sign(x.data),))


def square_sum(x: Tensor) -> Tensor:
    """sum(x^2), used by the L2 weight penalty."""
    out = Tensor(np.asarray((x.data * x.data).sum(), dtype=x.dtype))
    _check_finite(out.data, "square_sum")
    return record_op(out, (x,), lambda g: (g * 2.0 * x.data,))


# ---------------------------------------------------------------------------
# backward


def backward(loss: Tensor):
    """Propagate gradients from a scalar loss back to all requiring leaves.

    Replays the tape in exact reverse execution order and consumes it.
    Every leaf tensor with ``requires_grad`` accumulates (+=) into its
    single ``.grad`` buffer, so calling backward on two separately computed
    losses sums their gradients.
    """
    if loss.data.size != 1:
        raise AutodiffError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = _tls().tape
    idx = None
    for i in range(len(tape.entries) - 1, -1, -1):
        if tape.entries[i].out is loss:
            idx = i
            break
    if idx is None:
        raise AutodiffError("backward on a tensor not produced by taped operations")

    produced = {id(e.out) for e in tape.entries[: idx + 1]}
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
    for entry in reversed(tape.entries[: idx + 1]):
        g = grads.pop(id(entry.out), None)
        if g is None:
            continue  # not on the path to the loss
        input_grads = entry.pullback(g)
        for t, gi in zip(entry.inputs, input_grads):
            if gi is None:
                continue
            if id(t) in produced:
                prev = grads.get(id(t))
                grads[id(t)] = gi if prev is None else prev + gi
            elif t.requires_grad:
                t.accumulate_grad(gi)
    tape.clear()


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(fn: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must map a tensor to a scalar tensor and be deterministic.  The
    check runs on a float64 shadow copy of ``x`` so the finite-difference
    quotient is not drowned by float32 rounding.  Error per element is
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    if eps <= 0:
        raise ShapeError("eps must be positive")
    x64 = Tensor(x.data.astype(np.float64), requires_grad=True)
    out = fn(x64)
    if out.data.size != 1:
        raise ShapeError("grad_check requires a scalar-valued fn")
    backward(out)
    analytic = np.zeros_like(x64.data) if x64.grad is None else x64.grad

    numeric = np.zeros_like(x64.data)
    flat = x64.data.reshape(-1)
    nflat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = fn(x64).item()
            flat[i] = orig - eps
            lo = fn(x64).item()
            flat[i] = orig
            nflat[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


def zero_grads(params: Iterable[Tensor]):
    for p in params:
        p.zero_grad()
