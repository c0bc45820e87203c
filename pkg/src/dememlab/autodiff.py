"""Dense-tensor reverse-mode differentiation and the losses every trainer needs.

Graphs are define-by-run: operations execute eagerly on float64 arrays and,
when their operands live on a :class:`Tape`, append a backward rule to it.
The append order of a define-by-run trace is already topological, so the
backward pass is a single reverse sweep that visits each node once.

Tensors created without a tape act as constants: they participate in the
forward computation but receive no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InputError, NumericError, UsageError

Array = np.ndarray


def _require_finite(arr: Array, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


class Tensor:
    """A float64 array with an optional gradient slot.

    ``grad`` is filled by :meth:`Tape.backward` and always matches the shape
    of ``data``. A tensor belongs to at most one tape; mixing tapes in a
    single operation is a usage error.
    """

    __slots__ = ("data", "grad", "tape", "node_id")

    def __init__(self, data, tape: "Tape | None" = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.tape = tape
        self.node_id = -1 if tape is None else tape._register(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        kind = "const" if self.tape is None else f"node {self.node_id}"
        return f"Tensor({kind}, shape={self.data.shape})"


@dataclass
class TapeEntry:
    """One recorded operation: node ids for introspection, a rule for replay."""

    op: str
    input_ids: tuple[int, ...]
    output_id: int
    backward: Callable[[Array, dict[int, Array]], None]


class Tape:
    """Execution-ordered record of operations for one forward pass.

    Rebuilt per forward pass; never reused across passes. The stored arrays
    in the gradient map are rebound, never mutated, so backward rules may
    alias their output gradient safely.
    """

    def __init__(self) -> None:
        self._entries: list[TapeEntry] = []
        self._tensors: list[Tensor] = []

    def _register(self, tensor: Tensor) -> int:
        self._tensors.append(tensor)
        return len(self._tensors) - 1

    def _record(self, op: str, inputs: Sequence[Tensor], output: Tensor,
                backward: Callable[[Array, dict[int, Array]], None]) -> None:
        ids = tuple(t.node_id for t in inputs)
        self._entries.append(TapeEntry(op, ids, output.node_id, backward))

    def __len__(self) -> int:
        return len(self._entries)

    def backward(self, loss: Tensor) -> None:
        """Fill ``grad`` on every tensor registered on this tape.

        Gradients accumulate additively when a tensor feeds several nodes;
        tensors the loss does not depend on receive exact zeros.
        """
        if loss.tape is not self:
            raise UsageError("loss tensor was not produced on this tape")
        if loss.data.size != 1:
            raise InputError(f"loss must be a scalar, got shape {loss.data.shape}")
        grads: dict[int, Array] = {loss.node_id: np.ones_like(loss.data)}
        for entry in reversed(self._entries):
            out_grad = grads.get(entry.output_id)
            if out_grad is None:
                continue
            entry.backward(out_grad, grads)
        for t in self._tensors:
            g = grads.get(t.node_id)
            t.grad = np.zeros_like(t.data) if g is None else np.reshape(g, t.data.shape)


def _accum(grads: dict[int, Array], node_id: int, value: Array) -> None:
    # Constants carry node_id -1 and receive no gradient.
    if node_id < 0:
        return
    g = grads.get(node_id)
    grads[node_id] = value if g is None else g + value


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _common_tape(*tensors: Tensor) -> Tape | None:
    tape: Tape | None = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise UsageError("operands belong to different tapes")
    return tape


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def matmul(a, b) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise InputError("matmul expects rank-2 operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise InputError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    tape = _common_tape(a, b)
    out = Tensor(a.data @ b.data, tape)
    _require_finite(out.data, "matmul output")
    if tape is not None:
        a_id, b_id, a_data, b_data = a.node_id, b.node_id, a.data, b.data

        def backward(g: Array, grads: dict[int, Array]) -> None:
            if a_id >= 0:
                _accum(grads, a_id, g @ b_data.T)
            if b_id >= 0:
                _accum(grads, b_id, a_data.T @ g)

        tape._record("matmul", (a, b), out, backward)
    return out


def add(a, b) -> Tensor:
    """Elementwise sum; broadcasting limited to what the MLP forward needs."""
    a, b = _lift(a), _lift(b)
    tape = _common_tape(a, b)
    out = Tensor(a.data + b.data, tape)
    _require_finite(out.data, "add output")
    if tape is not None:
        a_id, b_id = a.node_id, b.node_id
        a_shape, b_shape = a.data.shape, b.data.shape

        def backward(g: Array, grads: dict[int, Array]) -> None:
            if a_id >= 0:
                _accum(grads, a_id, _unbroadcast(g, a_shape))
            if b_id >= 0:
                _accum(grads, b_id, _unbroadcast(g, b_shape))

        tape._record("add", (a, b), out, backward)
    return out


def mul(a, b) -> Tensor:
    """Elementwise product of same-shape tensors."""
    a, b = _lift(a), _lift(b)
    if a.data.shape != b.data.shape:
        raise InputError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
    tape = _common_tape(a, b)
    out = Tensor(a.data * b.data, tape)
    _require_finite(out.data, "mul output")
    if tape is not None:
        a_id, b_id, a_data, b_data = a.node_id, b.node_id, a.data, b.data

        def backward(g: Array, grads: dict[int, Array]) -> None:
            if a_id >= 0:
                _accum(grads, a_id, g * b_data)
            if b_id >= 0:
                _accum(grads, b_id, g * a_data)

        tape._record("mul", (a, b), out, backward)
    return out


def scale(a, c: float) -> Tensor:
    """Multiply a tensor by a python scalar constant."""
    a = _lift(a)
    c = float(c)
    tape = a.tape
    out = Tensor(a.data * c, tape)
    _require_finite(out.data, "scale output")
    if tape is not None:
        a_id = a.node_id

        def backward(g: Array, grads: dict[int, Array]) -> None:
            _accum(grads, a_id, g * c)

        tape._record("scale", (a,), out, backward)
    return out


def relu(a) -> Tensor:
    a = _lift(a)
    tape = a.tape
    out = Tensor(np.maximum(a.data, 0.0), tape)
    if tape is not None:
        a_id = a.node_id
        mask = a.data > 0

        def backward(g: Array, grads: dict[int, Array]) -> None:
            _accum(grads, a_id, g * mask)

        tape._record("relu", (a,), out, backward)
    return out


def mean_all(a) -> Tensor:
    """Mean of all entries, as a rank-0 tensor."""
    a = _lift(a)
    if a.data.size == 0:
        raise InputError("mean of an empty tensor")
    tape = a.tape
    out = Tensor(a.data.mean(), tape)
    if tape is not None:
        a_id, n, shape = a.node_id, a.data.size, a.data.shape

        def backward(g: Array, grads: dict[int, Array]) -> None:
            _accum(grads, a_id, np.full(shape, float(g) / n))

        tape._record("mean", (a,), out, backward)
    return out


def batch_variance(values) -> Tensor:
    """Population variance (divide by N) of a vector of per-sample values.

    The gradient is ``(2/N) * (v_i - mean)``, so adding a constant to every
    entry leaves both the value and the gradient unchanged.
    """
    v = _lift(values)
    if v.data.ndim != 1:
        raise InputError(f"batch_variance expects a vector, got shape {v.data.shape}")
    if v.data.size == 0:
        raise InputError("batch_variance of an empty vector")
    _require_finite(v.data, "batch_variance input")
    tape = v.tape
    if np.all(v.data == v.data.flat[0]):
        # A constant vector has exactly zero variance; the float mean would
        # otherwise leave ~1e-32 residue.
        centered = np.zeros_like(v.data)
    else:
        centered = v.data - v.data.mean()
    with np.errstate(over="ignore"):
        out = Tensor(np.mean(centered * centered), tape)
    _require_finite(out.data, "batch_variance output")
    if tape is not None:
        v_id, n = v.node_id, v.data.size

        def backward(g: Array, grads: dict[int, Array]) -> None:
            _accum(grads, v_id, (2.0 / n) * centered * float(g))

        tape._record("batch_variance", (v,), out, backward)
    return out


def _log_softmax(logits: Array) -> Array:
    # Log-sum-exp stabilization: subtract the row max before exponentiation.
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: Array) -> Array:
    """Row-wise softmax of a plain array (no gradient)."""
    m = np.asarray(logits, dtype=np.float64).max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=1, keepdims=True)


def _check_logits(logits: Tensor, what: str) -> None:
    if logits.data.ndim != 2:
        raise InputError(f"{what} expects an N x K logit matrix, got shape {logits.data.shape}")
    if logits.data.shape[1] < 2:
        raise InputError(f"{what} needs at least 2 classes, got {logits.data.shape[1]}")
    _require_finite(logits.data, f"{what} logits")


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Per-sample cross entropy, ``-log softmax(logits)[label]``.

    Returns a vector of length N, differentiable through the tape.
    """
    logits = _lift(logits)
    _check_logits(logits, "softmax_cross_entropy")
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != logits.data.shape[0]:
        raise InputError("labels must be a vector matching the logit rows")
    if not np.issubdtype(y.dtype, np.integer):
        raise InputError("labels must be integers")
    k = logits.data.shape[1]
    if y.size and (y.min() < 0 or y.max() >= k):
        raise InputError(f"label out of range [0, {k})")
    log_p = _log_softmax(logits.data)
    rows = np.arange(y.shape[0])
    tape = logits.tape
    out = Tensor(-log_p[rows, y], tape)
    _require_finite(out.data, "softmax_cross_entropy output")
    if tape is not None:
        l_id = logits.node_id
        probs = np.exp(log_p)

        def backward(g: Array, grads: dict[int, Array]) -> None:
            d = probs.copy()
            d[rows, y] -= 1.0
            _accum(grads, l_id, d * g[:, None])

        tape._record("softmax_cross_entropy", (logits,), out, backward)
    return out


def kl_divergence(p_logits, q_logits) -> Tensor:
    """Per-sample KL(softmax(p) || softmax(q)), differentiable in both operands."""
    p, q = _lift(p_logits), _lift(q_logits)
    _check_logits(p, "kl_divergence")
    _check_logits(q, "kl_divergence")
    if p.data.shape != q.data.shape:
        raise InputError(f"kl_divergence shape mismatch: {p.data.shape} vs {q.data.shape}")
    log_p = _log_softmax(p.data)
    log_q = _log_softmax(q.data)
    p_probs = np.exp(log_p)
    diff = log_p - log_q
    kl = (p_probs * diff).sum(axis=1)
    tape = _common_tape(p, q)
    out = Tensor(kl, tape)
    _require_finite(out.data, "kl_divergence output")
    if tape is not None:
        p_id, q_id = p.node_id, q.node_id
        q_probs = np.exp(log_q)

        def backward(g: Array, grads: dict[int, Array]) -> None:
            gcol = g[:, None]
            if p_id >= 0:
                _accum(grads, p_id, p_probs * (diff - kl[:, None]) * gcol)
            if q_id >= 0:
                _accum(grads, q_id, (q_probs - p_probs) * gcol)

        tape._record("kl_divergence", (p, q), out, backward)
    return out
