"""Dense tensors with reverse-mode automatic differentiation.

numpy supplies the array arithmetic; this module adds the backward graph:
every operation that touches a gradient-requiring tensor records an OpNode,
and Tensor.backward() replays those nodes in reverse topological order,
accumulating gradients on the leaves.

Training runs in float32; gradient-checking oracles should build float64
tensors (pass dtype=np.float64).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class OpNode:
    """One recorded step of the computation tape.

    Holds the input tensors and whatever forward activations the backward
    rule needs. Subclasses implement backward(grad) -> one gradient array
    (or None) per input, in input order.
    """

    __slots__ = ("inputs",)

    def __init__(self, *inputs: "Tensor"):
        self.inputs = inputs

    def backward(self, grad: np.ndarray) -> tuple:
        raise NotImplementedError


class Tensor:
    """n-dimensional value with an optional gradient and backward trace."""

    __slots__ = ("data", "grad", "requires_grad", "op_trace")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.op_trace: Optional[OpNode] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate .grad on every gradient-requiring tensor reachable from
        this scalar. Repeated calls without zero_grad accumulate."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss, got shape "
                             f"{self.data.shape}")
        tape = _topo_order(self)
        flows: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for t in reversed(tape):
            g = flows.pop(id(t), None)
            if g is None:
                continue
            if t.op_trace is None:
                # leaf: this is where gradients are retained
                if t.requires_grad:
                    t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            for inp, gi in zip(t.op_trace.inputs, t.op_trace.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in flows:
                    flows[key] = flows[key] + gi
                else:
                    flows[key] = gi

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return scale(sum_all(self), 1.0 / self.data.size)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes=None):
        return transpose(self, axes)

    def argmax(self, axis: int = -1) -> np.ndarray:
        """Index of the largest entry along axis; ties break to the lowest
        index (numpy contract), which greedy decoding relies on."""
        return np.argmax(self.data, axis=axis)

    def __getitem__(self, key):
        return slice_(self, key)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topo_order(root: Tensor) -> list:
    """Tensors ordered so every node appears after all of its inputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node.op_trace is not None:
            for inp in node.op_trace.inputs:
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
    return order


def _result(data: np.ndarray, node_factory: Callable[[], OpNode],
            *inputs: Tensor) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = _grad_enabled and any(t.requires_grad for t in inputs)
    out.op_trace = node_factory() if out.requires_grad else None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to shape, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise and shape ops ----------------------------------------------


class _AddNode(OpNode):
    __slots__ = ("shapes",)

    def __init__(self, a, b):
        super().__init__(a, b)
        self.shapes = (a.data.shape, b.data.shape)

    def backward(self, grad):
        return (_unbroadcast(grad, self.shapes[0]),
                _unbroadcast(grad, self.shapes[1]))


def add(a: Tensor, b) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    return _result(a.data + b.data, lambda: _AddNode(a, b), a, b)


class _MulNode(OpNode):
    __slots__ = ("a_data", "b_data")

    def __init__(self, a, b):
        super().__init__(a, b)
        self.a_data, self.b_data = a.data, b.data

    def backward(self, grad):
        return (_unbroadcast(grad * self.b_data, self.a_data.shape),
                _unbroadcast(grad * self.a_data, self.b_data.shape))


def mul(a: Tensor, b) -> Tensor:
    """Elementwise (Hadamard) product with broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    return _result(a.data * b.data, lambda: _MulNode(a, b), a, b)


class _ScaleNode(OpNode):
    __slots__ = ("c",)

    def __init__(self, a, c):
        super().__init__(a)
        self.c = c

    def backward(self, grad):
        return (grad * self.c,)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar."""
    a = _as_tensor(a)
    c = float(c)
    return _result(a.data * c, lambda: _ScaleNode(a, c), a)


class _ReluNode(OpNode):
    __slots__ = ("mask",)

    def __init__(self, a, mask):
        super().__init__(a)
        self.mask = mask

    def backward(self, grad):
        return (grad * self.mask,)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _result(a.data * mask, lambda: _ReluNode(a, mask), a)


class _SumNode(OpNode):
    __slots__ = ("shape",)

    def __init__(self, a):
        super().__init__(a)
        self.shape = a.data.shape

    def backward(self, grad):
        return (np.broadcast_to(grad, self.shape).copy(),)


def sum_all(a: Tensor) -> Tensor:
    """Sum of every element, as a scalar tensor."""
    a = _as_tensor(a)
    return _result(np.asarray(a.data.sum(), dtype=a.data.dtype),
                   lambda: _SumNode(a), a)


class _ReshapeNode(OpNode):
    __slots__ = ("shape",)

    def __init__(self, a):
        super().__init__(a)
        self.shape = a.data.shape

    def backward(self, grad):
        return (grad.reshape(self.shape),)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    return _result(a.data.reshape(shape), lambda: _ReshapeNode(a), a)


class _TransposeNode(OpNode):
    __slots__ = ("axes",)

    def __init__(self, a, axes):
        super().__init__(a)
        self.axes = axes

    def backward(self, grad):
        if self.axes is None:
            return (grad.transpose(),)
        return (grad.transpose(np.argsort(self.axes)),)


def transpose(a: Tensor, axes=None) -> Tensor:
    """Permute axes (reversed when axes is None)."""
    a = _as_tensor(a)
    return _result(np.ascontiguousarray(a.data.transpose(axes)),
                   lambda: _TransposeNode(a, axes), a)


class _SliceNode(OpNode):
    __slots__ = ("key", "shape")

    def __init__(self, a, key):
        super().__init__(a)
        self.key = key
        self.shape = a.data.shape

    def backward(self, grad):
        out = np.zeros(self.shape, dtype=grad.dtype)
        np.add.at(out, self.key, grad)
        return (out,)


def slice_(a: Tensor, key) -> Tensor:
    """Basic indexing (ints/slices); gradient scatters back into place."""
    a = _as_tensor(a)
    return _result(np.ascontiguousarray(a.data[key]),
                   lambda: _SliceNode(a, key), a)


class _ConcatNode(OpNode):
    __slots__ = ("axis", "sizes")

    def __init__(self, tensors, axis):
        super().__init__(*tensors)
        self.axis = axis
        self.sizes = [t.data.shape[axis] for t in tensors]

    def backward(self, grad):
        splits = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, splits, axis=self.axis))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _result(data, lambda: _ConcatNode(tensors, axis), *tensors)


class _DropoutNode(OpNode):
    __slots__ = ("mask",)

    def __init__(self, a, mask):
        super().__init__(a)
        self.mask = mask

    def backward(self, grad):
        return (grad * self.mask,)


def dropout(a: Tensor, p: float = 0.0,
            rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout; p=0 is the identity (default, deterministic)."""
    a = _as_tensor(a)
    if p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if rng is None:
        raise ValueError("dropout with p > 0 needs an explicit rng")
    keep = (rng.random(a.data.shape) >= p) / np.asarray(1.0 - p, a.data.dtype)
    keep = keep.astype(a.data.dtype)
    return _result(a.data * keep, lambda: _DropoutNode(a, keep), a)


# -- linear algebra -----------------------------------------------------------


class _MatMulNode(OpNode):
    __slots__ = ("a_data", "b_data")

    def __init__(self, a, b):
        super().__init__(a, b)
        self.a_data, self.b_data = a.data, b.data

    def backward(self, grad):
        ga = grad @ self.b_data.swapaxes(-1, -2)
        gb = self.a_data.swapaxes(-1, -2) @ grad
        return (_unbroadcast(ga, self.a_data.shape),
                _unbroadcast(gb, self.b_data.shape))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading axes are treated as a stack of matrices."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul inner dimensions disagree: "
                         f"{a.data.shape} @ {b.data.shape}")
    return _result(a.data @ b.data, lambda: _MatMulNode(a, b), a, b)


class _EmbeddingNode(OpNode):
    __slots__ = ("indices", "table_shape")

    def __init__(self, table, indices):
        super().__init__(table)
        self.indices = indices
        self.table_shape = table.data.shape

    def backward(self, grad):
        out = np.zeros(self.table_shape, dtype=grad.dtype)
        np.add.at(out, self.indices, grad)
        return (out,)


def embedding_lookup(table: Tensor, indices: np.ndarray) -> Tensor:
    """Rows of table gathered by an integer index array."""
    table = _as_tensor(table)
    indices = np.asarray(indices)
    if indices.size and (indices.min() < 0 or indices.max() >= table.data.shape[0]):
        raise ValueError("embedding index out of range")
    return _result(table.data[indices],
                   lambda: _EmbeddingNode(table, indices), table)


# -- normalization, attention, loss ------------------------------------------


class _MaskedSoftmaxNode(OpNode):
    __slots__ = ("probs",)

    def __init__(self, a, probs):
        super().__init__(a)
        self.probs = probs

    def backward(self, grad):
        # dL/dx = p * (g - sum(g * p)); zero where p is zero, so masked
        # positions receive no gradient.
        inner = (grad * self.probs).sum(axis=-1, keepdims=True)
        return (self.probs * (grad - inner),)


def masked_softmax(logits: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over the last axis with optional key masking.

    mask is boolean, broadcastable to logits, True where attention is
    allowed. Masked entries get exactly 0 probability; every row must keep
    at least one valid entry.
    """
    logits = _as_tensor(logits)
    x = logits.data
    if mask is None:
        z = x
    else:
        mask = np.asarray(mask, dtype=bool)
        bmask = np.broadcast_to(mask, x.shape)
        if not bmask.any(axis=-1).all():
            raise ValueError("masked_softmax: a row is fully masked "
                             "(empty input sequence)")
        z = np.where(bmask, x, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=-1, keepdims=True)
    return _result(probs, lambda: _MaskedSoftmaxNode(logits, probs), logits)


class _LayerNormNode(OpNode):
    __slots__ = ("xhat", "inv_std", "gain_data")

    def __init__(self, x, gain, bias, xhat, inv_std):
        super().__init__(x, gain, bias)
        self.xhat = xhat
        self.inv_std = inv_std
        self.gain_data = gain.data

    def backward(self, grad):
        d = self.xhat.shape[-1]
        dxhat = grad * self.gain_data
        s1 = dxhat.sum(axis=-1, keepdims=True)
        s2 = (dxhat * self.xhat).sum(axis=-1, keepdims=True)
        dx = (self.inv_std / d) * (d * dxhat - s1 - self.xhat * s2)
        axes = tuple(range(grad.ndim - 1))
        dgain = (grad * self.xhat).sum(axis=axes)
        dbias = grad.sum(axis=axes)
        return (dx, dgain, dbias)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance over the last axis, then affine by gain/bias."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + np.asarray(eps, x.data.dtype))
    xhat = centered * inv_std
    out = gain.data * xhat + bias.data
    return _result(out, lambda: _LayerNormNode(x, gain, bias, xhat, inv_std),
                   x, gain, bias)


class _CrossEntropyNode(OpNode):
    __slots__ = ("probs", "targets", "kept")

    def __init__(self, logits, probs, targets, kept):
        super().__init__(logits)
        self.probs = probs
        self.targets = targets
        self.kept = kept

    def backward(self, grad):
        n_kept = int(self.kept.sum())
        dx = self.probs.copy()
        rows = np.arange(dx.shape[0])
        dx[rows, self.targets] -= 1.0
        dx *= (self.kept / n_kept)[:, None]
        return (dx * grad,)


def cross_entropy(logits: Tensor, targets: np.ndarray,
                  ignore_index: Optional[int] = None) -> Tensor:
    """Mean negative log-softmax of the target class over non-ignored rows.

    logits: (N, V); targets: (N,) integer class ids. Rows whose target
    equals ignore_index contribute neither loss nor gradient.
    """
    logits = _as_tensor(logits)
    x = logits.data
    if x.ndim != 2:
        raise ValueError(f"cross_entropy expects (N, V) logits, got {x.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    kept = np.ones(len(targets), dtype=x.dtype)
    if ignore_index is not None:
        kept = (targets != ignore_index).astype(x.dtype)
    if kept.sum() == 0:
        raise ValueError("cross_entropy: every position is ignored")
    safe_targets = np.where(kept > 0, targets, 0)
    if safe_targets.max(initial=0) >= x.shape[1]:
        raise ValueError("cross_entropy: target index out of range")
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    sums = e.sum(axis=-1)
    logp_target = z[np.arange(len(targets)), safe_targets] - np.log(sums)
    loss = -(logp_target * kept).sum() / kept.sum()
    probs = e / sums[:, None]
    return _result(np.asarray(loss, dtype=x.dtype),
                   lambda: _CrossEntropyNode(logits, probs, safe_targets, kept),
                   logits)


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Plain softmax on a raw array (no graph); used for reporting."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
