"""Dense float64 tensors with a reverse-mode gradient tape.

Every operation below computes its result eagerly with numpy and, when any
operand requires gradients, records a node (parent links plus a backward
closure) in an implicit tape. ``backward`` walks the tape in reverse
topological order, accumulates gradients into every reachable tensor that
was created with ``requires_grad=True``, and releases the tape as it goes.

All storage is float64 and row-major. There is no broadcasting beyond
scalars; the few structured patterns the models need (row gathers, row
repeats, per-row scaling, segment pooling) are explicit operations with
hand-written backward rules, each of which is covered by finite-difference
checks in the test suite.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import DimensionError, InputError, UsageError

_grad_stack = [True]


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the context (inference, probes)."""
    _grad_stack.append(False)
    try:
        yield
    finally:
        _grad_stack.pop()


def grad_enabled():
    return _grad_stack[-1]


class Tensor:
    """A float64 ndarray plus an optional node in the gradient tape.

    ``grad`` is lazily allocated: it stays ``None`` until the first
    accumulation during ``backward``. Intermediate nodes have their grad
    buffers and parent links released as soon as they are consumed, so after
    ``backward`` only leaves retain gradients.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise UsageError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data)

    def detach(self):
        """A constant tensor sharing this tensor's values."""
        return Tensor(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def _accumulate(self, g, own=False):
        # own=True donates a freshly allocated array (never a live view),
        # avoiding a zero-fill plus add for the common single-consumer case
        if self.grad is None:
            self.grad = g if own else np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data, parents, backward_fn):
    """Create a result tensor, recording a tape node when gradients flow."""
    if grad_enabled() and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
        return out
    return Tensor(data)


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf.

    The loss must be a scalar (size-1) tensor. Calling backward on a
    constant is a no-op. The visited portion of the tape is consumed.
    """
    if not isinstance(loss, Tensor):
        raise UsageError("backward expects a Tensor")
    if loss.data.size != 1:
        raise UsageError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return

    # iterative post-order; a node may be pushed repeatedly but expands once,
    # which guarantees every consumer finishes before its producer
    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        fn = node._backward_fn
        if fn is not None:
            if node.grad is not None:
                fn(node.grad)
            node._backward_fn = None
            node._parents = ()
            node.grad = None  # only leaves keep their gradient


# ---------------------------------------------------------------------------
# elementwise and scalar operations


def _check_binary_shapes(op, a, b):
    if a.data.shape == b.data.shape:
        return
    if a.data.ndim == 0 or b.data.ndim == 0:
        return
    raise DimensionError(f"{op}: incompatible shapes {a.data.shape} and {b.data.shape}")


def _reduce_to(g, shape):
    return g if g.shape == shape else np.sum(g)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_binary_shapes("add", a, b)
    out = a.data + b.data

    def backward_fn(g):
        # the node's grad buffer dies after this closure, so it can be donated
        # once; a second same-shape use must copy (or alias-and-add correctly)
        if a.requires_grad:
            if g.shape == a.data.shape:
                a._accumulate(g, own=True)
            else:
                a._accumulate(_reduce_to(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(g, b.data.shape))

    return _node(out, (a, b), backward_fn)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_binary_shapes("sub", a, b)
    out = a.data - b.data

    def backward_fn(g):
        if a.requires_grad:
            if g.shape == a.data.shape:
                a._accumulate(g, own=True)
            else:
                a._accumulate(_reduce_to(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(-g, b.data.shape), own=True)

    return _node(out, (a, b), backward_fn)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_binary_shapes("mul", a, b)
    out = a.data * b.data

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g * b.data, a.data.shape), own=True)
        if b.requires_grad:
            b._accumulate(_reduce_to(g * a.data, b.data.shape), own=True)

    return _node(out, (a, b), backward_fn)


def scale(x, c):
    """Multiply by a python scalar."""
    return mul(x, float(c))


def relu(x):
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)

    def backward_fn(g):
        # out > 0 is exactly "input > 0" (an input of 0 maps to output 0)
        x._accumulate(g * (out > 0), own=True)

    return _node(out, (x,), backward_fn)


# sigmoid saturates to exactly 0.0 / 1.0 in float64 for |x| beyond ~745 / ~37;
# clip back inside the open interval so downstream code can rely on (0, 1).
_SIGMOID_LO = np.nextafter(0.0, 1.0)
_SIGMOID_HI = np.nextafter(1.0, 0.0)


def sigmoid(x):
    x = as_tensor(x)
    z = x.data
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    np.clip(out, _SIGMOID_LO, _SIGMOID_HI, out=out)

    def backward_fn(g):
        x._accumulate(g * out * (1.0 - out), own=True)

    return _node(out, (x,), backward_fn)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}"
        )
    out = a.data @ b.data

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T, own=True)
        if b.requires_grad:
            b._accumulate(a.data.T @ g, own=True)

    return _node(out, (a, b), backward_fn)


def linear(x, w, b):
    """Affine map ``x @ w + b`` with a row-broadcast bias."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if (
        x.data.ndim != 2
        or w.data.ndim != 2
        or b.data.ndim != 1
        or x.data.shape[1] != w.data.shape[0]
        or w.data.shape[1] != b.data.shape[0]
    ):
        raise DimensionError(
            f"linear: incompatible shapes {x.data.shape}, {w.data.shape}, {b.data.shape}"
        )
    out = x.data @ w.data
    out += b.data

    def backward_fn(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T, own=True)
        if w.requires_grad:
            w._accumulate(x.data.T @ g, own=True)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0), own=True)

    return _node(out, (x, w, b), backward_fn)


# ---------------------------------------------------------------------------
# reductions and structure


def _check_axis(op, x, axis):
    if not 0 <= axis < x.data.ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for shape {x.data.shape}")
    if x.data.shape[axis] == 0:
        raise DimensionError(f"{op}: empty axis {axis} in shape {x.data.shape}")


def _first_max_mask(values, maxima, axis):
    """Boolean mask selecting the first (lowest-index) maximum per slice."""
    eq = values == np.expand_dims(maxima, axis)
    counter = np.int64 if values.shape[axis] > 32000 else np.int16
    np.logical_and(eq, np.cumsum(eq, axis=axis, dtype=counter) == 1, out=eq)
    return eq


def max_over_axis(x, axis):
    """Maximum along an axis; the gradient routes to the first argmax per slice."""
    x = as_tensor(x)
    _check_axis("max_over_axis", x, axis)
    out = np.max(x.data, axis=axis)

    def backward_fn(g):
        # equality masking beats argmax on strided axes by a wide margin
        mask = _first_max_mask(x.data, out, axis)
        x._accumulate(np.where(mask, np.expand_dims(g, axis), 0.0), own=True)

    return _node(out, (x,), backward_fn)


def mean_over_axis(x, axis):
    x = as_tensor(x)
    _check_axis("mean_over_axis", x, axis)
    n = x.data.shape[axis]
    out = np.mean(x.data, axis=axis)

    def backward_fn(g):
        x._accumulate(np.broadcast_to(np.expand_dims(g / n, axis), x.data.shape))

    return _node(out, (x,), backward_fn)


def sum_all(x):
    x = as_tensor(x)
    out = np.sum(x.data)

    def backward_fn(g):
        x._accumulate(np.broadcast_to(g, x.data.shape))

    return _node(out, (x,), backward_fn)


def concat(parts, axis=0):
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat: need at least one part")
    ndim = parts[0].data.ndim
    for p in parts:
        if p.data.ndim != ndim:
            raise DimensionError(
                f"concat: rank mismatch {[tuple(q.data.shape) for q in parts]}"
            )
        for d in range(ndim):
            if d != axis and p.data.shape[d] != parts[0].data.shape[d]:
                raise DimensionError(
                    f"concat: incompatible shapes {[tuple(q.data.shape) for q in parts]}"
                    f" along non-concat axis {d}"
                )
    if not 0 <= axis < ndim:
        raise DimensionError(f"concat: axis {axis} out of range for rank {ndim}")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]

    def backward_fn(g):
        offset = 0
        for p, s in zip(parts, sizes):
            if p.requires_grad:
                sl = [slice(None)] * ndim
                sl[axis] = slice(offset, offset + s)
                p._accumulate(g[tuple(sl)])
            offset += s

    return _node(out, tuple(parts), backward_fn)


def reshape(x, shape):
    x = as_tensor(x)
    out = x.data.reshape(shape)

    def backward_fn(g):
        x._accumulate(g.reshape(x.data.shape))

    return _node(out, (x,), backward_fn)


class RowGather:
    """A row-index vector for ``take_rows`` with a cached scatter-add plan.

    Building the plan (a stable argsort of the indices) is worth reusing when
    the same index vector is applied every step, e.g. static neighbor tables.
    """

    __slots__ = ("indices", "_order", "_starts", "_rows")

    def __init__(self, indices):
        self.indices = np.ascontiguousarray(np.asarray(indices).ravel(), dtype=np.intp)
        self._order = None
        self._starts = None
        self._rows = None

    def _ensure_plan(self):
        if self._order is None:
            self._order = np.argsort(self.indices, kind="stable")
            srt = self.indices[self._order]
            self._starts = np.flatnonzero(np.r_[True, srt[1:] != srt[:-1]])
            self._rows = srt[self._starts]

    def scatter_add(self, grad, out):
        if self.indices.size == 0:
            return
        self._ensure_plan()
        sums = np.add.reduceat(grad[self._order], self._starts, axis=0)
        out[self._rows] += sums


def take_rows(x, rows):
    """Gather rows of a 2-D tensor; the backward pass scatter-adds."""
    x = as_tensor(x)
    gather = rows if isinstance(rows, RowGather) else RowGather(rows)
    if x.data.ndim != 2:
        raise DimensionError(f"take_rows: expected 2-D input, got {x.data.shape}")
    idx = gather.indices
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise InputError(
            f"take_rows: indices out of range for {x.data.shape[0]} rows"
        )
    out = x.data[idx]

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        gather.scatter_add(g, gx)
        x._accumulate(gx, own=True)

    return _node(out, (x,), backward_fn)


def repeat_rows(x, reps):
    """Repeat each row ``reps`` times consecutively."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"repeat_rows: expected 2-D input, got {x.data.shape}")
    if reps < 1:
        raise InputError(f"repeat_rows: reps must be >= 1, got {reps}")
    n, d = x.data.shape
    out = np.repeat(x.data, reps, axis=0)

    def backward_fn(g):
        x._accumulate(g.reshape(n, reps, d).sum(axis=1), own=True)

    return _node(out, (x,), backward_fn)


def mul_colvec(x, s):
    """Scale row i of ``x`` by the scalar ``s[i, 0]``."""
    x, s = as_tensor(x), as_tensor(s)
    if x.data.ndim != 2 or s.data.shape != (x.data.shape[0], 1):
        raise DimensionError(
            f"mul_colvec: incompatible shapes {x.data.shape} and {s.data.shape}"
        )
    out = x.data * s.data

    def backward_fn(g):
        if x.requires_grad:
            x._accumulate(g * s.data, own=True)
        if s.requires_grad:
            s._accumulate((g * x.data).sum(axis=1, keepdims=True), own=True)

    return _node(out, (x, s), backward_fn)


def segment_max(x, offsets):
    """Columnwise maximum over contiguous row segments of a 2-D tensor.

    ``offsets`` has length B+1 with offsets[0] == 0 and offsets[-1] == n; all
    segments must be non-empty. Gradient routes to the first argmax row of
    each segment, per column.
    """
    x = as_tensor(x)
    offsets = np.asarray(offsets, dtype=np.intp)
    if x.data.ndim != 2:
        raise DimensionError(f"segment_max: expected 2-D input, got {x.data.shape}")
    if (
        offsets.ndim != 1
        or offsets.size < 2
        or offsets[0] != 0
        or offsets[-1] != x.data.shape[0]
        or np.any(np.diff(offsets) <= 0)
    ):
        raise DimensionError("segment_max: offsets must be strictly increasing from 0 to n")
    out = np.maximum.reduceat(x.data, offsets[:-1], axis=0)

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        n_seg, d = out.shape
        cols = np.arange(d)
        for b in range(n_seg):
            lo, hi = offsets[b], offsets[b + 1]
            arg = lo + np.argmax(x.data[lo:hi], axis=0)
            gx[arg, cols] += g[b]
        x._accumulate(gx, own=True)

    return _node(out, (x,), backward_fn)


# ---------------------------------------------------------------------------
# loss


def softmax_cross_entropy(logits, labels):
    """Mean negative log-softmax of the true class, stabilized by max-subtraction."""
    logits = as_tensor(logits)
    if logits.data.ndim != 2:
        raise DimensionError(
            f"softmax_cross_entropy: expected 2-D logits, got {logits.data.shape}"
        )
    labels = np.asarray(labels)
    if labels.shape != (logits.data.shape[0],):
        raise DimensionError(
            f"softmax_cross_entropy: labels shape {labels.shape} does not match "
            f"batch size {logits.data.shape[0]}"
        )
    labels = labels.astype(np.intp)
    n, c = logits.data.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise InputError(f"softmax_cross_entropy: labels out of range [0, {c})")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    logp = z - np.log(denom)
    rows = np.arange(n)
    out = -logp[rows, labels].mean()

    def backward_fn(g):
        grad = ez / denom
        grad[rows, labels] -= 1.0
        grad *= float(g) / n
        logits._accumulate(grad, own=True)

    return _node(out, (logits,), backward_fn)
