"""Dense float64 tensors with reverse-mode automatic differentiation.

Ops executed while a gradient tape is active are recorded and can be
differentiated with :func:`backward`. Outside a tape the same ops run as
plain numpy math, which keeps inference (decoding, evaluation) cheap.

Everything is double precision. Broadcasting is deliberately restricted:
an op either requires exactly matching shapes or supports the one specific
broadcast the model needs (trailing-shape add); anything else raises
``DimensionMismatch`` instead of silently broadcasting.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np


class DimensionMismatch(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteInput(ValueError):
    """An op that assumes finite inputs received NaN or infinity."""


class TargetOutOfRange(ValueError):
    """A cross-entropy target id is outside [0, vocab)."""


class AllPositionsIgnored(ValueError):
    """Every cross-entropy position equals ignore_index; the mean is undefined."""


class NonScalarLoss(ValueError):
    """backward() was called on a tensor that is not a scalar."""


class TapeConsumed(RuntimeError):
    """backward() was already run on this tape, or the loss is not on a tape."""


class Tensor:
    """A dense float64 array plus the gradient bookkeeping the tape needs.

    ``grad`` is populated by :func:`backward` for every tensor with
    ``requires_grad`` that participated in the recorded computation.
    The shape is fixed at construction.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: "ComputationTape | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class ComputationTape:
    """Ordered record of executed ops; execution order is topological order."""

    __slots__ = ("nodes", "consumed")

    def __init__(self):
        # (inputs, output, backward_fn); backward_fn maps the output grad to
        # one grad array (or None) per input, in input order.
        self.nodes: list[tuple[tuple[Tensor, ...], Tensor, Callable]] = []
        self.consumed = False


# The active-tape stack is thread-local so independent training runs may
# execute on worker threads without interleaving their op recordings.
_TAPES = threading.local()


def _active_tapes() -> list[ComputationTape]:
    stack = getattr(_TAPES, "stack", None)
    if stack is None:
        stack = _TAPES.stack = []
    return stack


@contextlib.contextmanager
def tape():
    """Activate a fresh gradient tape for the duration of the block."""
    t = ComputationTape()
    stack = _active_tapes()
    stack.append(t)
    try:
        yield t
    finally:
        stack.pop()


def _returning(out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    """Record the op on the active tape when any input participates in grads."""
    stack = _active_tapes()
    if stack and any(i.requires_grad for i in inputs):
        out.requires_grad = True
        t = stack[-1]
        out._tape = t
        t.nodes.append((inputs, out, backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    The tape the loss was recorded on is walked once, in reverse execution
    order, and is consumed: a second call raises ``TapeConsumed``. Gradient
    accumulation is purely sequential, so two runs over identical tapes
    produce bitwise-identical grads.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    t = loss._tape
    if t is None:
        raise TapeConsumed("loss is not recorded on an active tape")
    if t.consumed:
        raise TapeConsumed("tape has already been differentiated")
    t.consumed = True

    loss.grad = np.ones_like(loss.data)
    for inputs, out, backward_fn in reversed(t.nodes):
        if out.grad is None:
            continue  # this node never influenced the loss
        for inp, g in zip(inputs, backward_fn(out.grad)):
            if g is None or not inp.requires_grad:
                continue
            # never in-place: grad arrays may alias upstream grads
            inp.grad = g if inp.grad is None else inp.grad + g


# ---------------------------------------------------------------------------
# primitive ops


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a + b.

    ``b`` may either match ``a``'s shape exactly or match a trailing slice of
    it (e.g. a per-feature bias ``[d]`` added to ``[n, d]``, or positional
    rows ``[s, d]`` added to ``[b, s, d]``); the trailing form broadcasts
    over the leading axes.
    """
    if a.shape == b.shape:
        out = Tensor(a.data + b.data)

        def bwd(g):
            return g, g

        return _returning(out, (a, b), bwd)
    if b.data.ndim < a.data.ndim and a.shape[a.data.ndim - b.data.ndim :] == b.shape:
        lead = tuple(range(a.data.ndim - b.data.ndim))
        out = Tensor(a.data + b.data)

        def bwd(g):
            return g, g.sum(axis=lead)

        return _returning(out, (a, b), bwd)
    raise DimensionMismatch(f"cannot add shapes {a.shape} and {b.shape}")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; shapes must match exactly."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"cannot multiply shapes {a.shape} and {b.shape}")
    out = Tensor(a.data * b.data)

    def bwd(g):
        return g * b.data, g * a.data

    return _returning(out, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a Python scalar."""
    c = float(c)
    out = Tensor(a.data * c)

    def bwd(g):
        return (g * c,)

    return _returning(out, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: both 2-D, or both higher-rank with equal leading dims."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionMismatch(f"matmul needs rank >= 2, got {a.shape} and {b.shape}")
    if a.data.ndim != b.data.ndim or a.shape[:-2] != b.shape[:-2]:
        raise DimensionMismatch(f"matmul batch dims differ: {a.shape} vs {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionMismatch(f"matmul inner dims differ: {a.shape} vs {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def bwd(g):
        ga = np.matmul(g, b.data.swapaxes(-1, -2)) if a.requires_grad else None
        gb = np.matmul(a.data.swapaxes(-1, -2), g) if b.requires_grad else None
        return ga, gb

    return _returning(out, (a, b), bwd)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))

    def bwd(g):
        return (g * (x.data > 0.0),)

    return _returning(out, (x,), bwd)


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis, computed with max-subtraction."""
    if not np.isfinite(x.data).all():
        raise NonFiniteInput("softmax input contains NaN or infinity")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _returning(out, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-feature normalization over the last axis with learnable gain/bias."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionMismatch(f"gain/bias must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)
    lead = tuple(range(x.data.ndim - 1))

    def bwd(g):
        dgain = (g * xhat).sum(axis=lead) if gain.requires_grad else None
        dbias = g.sum(axis=lead) if bias.requires_grad else None
        dx = None
        if x.requires_grad:
            dxhat = g * gain.data
            dx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        return dx, dgain, dbias

    return _returning(out, (x, gain, bias), bwd)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` ([vocab, d]) for an integer id array."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise TargetOutOfRange(f"id outside [0, {table.shape[0]})")
    out = Tensor(table.data[ids])

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return _returning(out, (table,), bwd)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = Tensor(x.data.reshape(shape))

    def bwd(g):
        return (g.reshape(x.shape),)

    return _returning(out, (x,), bwd)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))

    def bwd(g):
        return (g.transpose(inv),)

    return _returning(out, (x,), bwd)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise DimensionMismatch("concat of zero tensors")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _returning(out, tuple(parts), bwd)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start, stop) along one axis."""
    n = x.shape[axis]
    if not (0 <= start <= stop <= n):
        raise DimensionMismatch(f"slice [{start}:{stop}) outside axis of size {n}")
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = Tensor(x.data[idx])

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return _returning(out, (x,), bwd)


def tensor_sum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = Tensor(x.data.sum())

    def bwd(g):
        return (np.full_like(x.data, float(g)),)

    return _returning(out, (x,), bwd)


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_index: int) -> Tensor:
    """Mean negative log-softmax probability of the target ids.

    ``logits`` is [n, vocab]; ``targets`` is a length-n id sequence.
    Positions whose target equals ``ignore_index`` contribute nothing; the
    mean is taken over the remaining positions.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or targets.shape != (logits.shape[0],):
        raise DimensionMismatch(
            f"expected logits [n, vocab] with n targets, got {logits.shape} and {targets.shape}"
        )
    v = logits.shape[1]
    keep = targets != ignore_index
    n_keep = int(keep.sum())
    if n_keep == 0:
        raise AllPositionsIgnored("every target equals ignore_index")
    kept = targets[keep]
    if kept.min() < 0 or kept.max() >= v:
        raise TargetOutOfRange(f"target id outside [0, {v})")

    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    rows = np.arange(targets.shape[0])
    # sum over the compacted kept entries only: the summation tree must not
    # depend on how many ignored positions surround them, or the same rows
    # padded to different widths would give losses differing in the last ulp
    picked = logp[rows[keep], kept]
    out = Tensor(-picked.sum() / n_keep)

    def bwd(g):
        p = np.exp(logp)
        p[rows[keep], targets[keep]] -= 1.0
        p[~keep] = 0.0
        return (p * (float(g) / n_keep),)

    return _returning(out, (logits,), bwd)
