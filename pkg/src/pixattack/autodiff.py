"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is implicit: every operation returns a new :class:`Tensor` that
records its parent tensors and a closure pushing gradients to them.  Calling
``backward`` on a scalar walks the graph once in reverse topological order and
accumulates gradients on every reachable tensor with ``requires_grad`` set.

Graphs are single-use.  Running ``backward`` marks the visited operation nodes
as consumed; a second ``backward`` through any of them raises
:class:`~pixattack.errors.GraphError`.  Leaves (inputs, parameters) are never
consumed and can take part in any number of graphs.

Broadcasting is restricted to scalars: binary operands must have equal shapes
or one of them must hold a single element.
"""

from __future__ import annotations

import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DomainError, GraphError, ShapeError

_node_counter = itertools.count()


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse-mode autodiff.

    Attributes
    ----------
    data : np.ndarray
        The values, always float64 and C-contiguous.
    grad : np.ndarray | None
        Accumulated gradient of the last backward pass, same shape as data.
    requires_grad : bool
        Whether gradients flow into (or through) this tensor.
    node_id : int
        Creation-ordered identity, unique within a process.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id",
                 "_parents", "_backward_fn", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        # asarray with order="C" keeps 0-d shapes; ascontiguousarray would
        # silently promote them to shape (1,)
        arr = np.asarray(data, dtype=np.float64, order="C")
        if not np.all(np.isfinite(arr)):
            raise DomainError("tensor values must be finite")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_counter)
        self._parents = ()
        self._backward_fn = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing ----------------------------------------------------

    def detach(self) -> "Tensor":
        """A new leaf sharing this tensor's values, cut off from the graph."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out.node_id = next(_node_counter)
        out._parents = ()
        out._backward_fn = None
        out._consumed = False
        return out

    def backward(self) -> None:
        backward(self)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def clamp(self, lo, hi):
        return clamp(self, lo, hi)

    def sign(self):
        return sign(self)

    def abs(self):
        return abs_(self)

    def sqrt(self):
        return sqrt(self)

    def sum(self, axes=None):
        return reduce_sum(self, axes)

    def mean(self, axes=None):
        return reduce_mean(self, axes)

    def max(self, axes=None):
        return reduce_max(self, axes)


def graph_node(data: np.ndarray, parents, backward_fn) -> Tensor:
    """Build an operation node directly.

    Extension point for fused operations defined outside this module: `data`
    is the forward result, `parents` the input tensors, and `backward_fn` a
    closure taking the output gradient and calling :func:`accumulate_grad` on
    each parent.
    """
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64, order="C")
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out.node_id = next(_node_counter)
    out._parents = tuple(parents)
    out._backward_fn = backward_fn if out.requires_grad else None
    out._consumed = False
    return out


def accumulate_grad(t: Tensor, g: np.ndarray) -> None:
    """Add `g` into `t.grad`, reducing scalar-broadcast shapes as needed."""
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=np.float64)
    if g.shape != t.data.shape:
        # only scalar broadcast is ever produced by the ops in this package
        g = np.full(t.data.shape, g.sum()) if t.data.shape else np.asarray(g.sum())
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _check_binary_shapes(a: Tensor, b: Tensor) -> None:
    if a.data.shape == b.data.shape:
        return
    if a.data.size == 1 or b.data.size == 1:
        return
    raise ShapeError(
        f"operand shapes {a.data.shape} and {b.data.shape} are neither equal "
        "nor scalar-broadcastable")


# -- backward pass ---------------------------------------------------------


def _topo_order(root: Tensor) -> list:
    """Reverse post-order DFS over the grad-relevant subgraph."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def backward(loss: Tensor) -> None:
    """Run reverse-mode differentiation from a scalar loss.

    Raises ShapeError when the loss is not a single element and GraphError
    when any operation node on the path has already been consumed by an
    earlier backward pass.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any gradient-requiring tensor")
    order = _topo_order(loss)
    for node in order:
        if node._backward_fn is not None and node._consumed:
            raise GraphError("graph already consumed by a previous backward pass")
    loss.grad = np.ones_like(loss.data)
    for node in order:
        if node._backward_fn is not None:
            node._backward_fn(node.grad if node.grad is not None
                              else np.zeros_like(node.data))
            node._consumed = True


# -- elementwise operations ------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_binary_shapes(a, b)

    def _bwd(g):
        accumulate_grad(a, g)
        accumulate_grad(b, g)

    return graph_node(a.data + b.data, (a, b), _bwd)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_binary_shapes(a, b)

    def _bwd(g):
        accumulate_grad(a, g)
        accumulate_grad(b, -g)

    return graph_node(a.data - b.data, (a, b), _bwd)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_binary_shapes(a, b)

    def _bwd(g):
        accumulate_grad(a, g * b.data)
        accumulate_grad(b, g * a.data)

    return graph_node(a.data * b.data, (a, b), _bwd)


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_binary_shapes(a, b)
    if np.any(b.data == 0.0):
        raise DomainError("division by zero")
    out = a.data / b.data

    def _bwd(g):
        accumulate_grad(a, g / b.data)
        accumulate_grad(b, -g * a.data / (b.data * b.data))

    return graph_node(out, (a, b), _bwd)


def neg(a) -> Tensor:
    a = _coerce(a)

    def _bwd(g):
        accumulate_grad(a, -g)

    return graph_node(-a.data, (a,), _bwd)


def exp(a) -> Tensor:
    a = _coerce(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    if not np.all(np.isfinite(out)):
        raise DomainError("exp overflowed to a non-finite value")

    def _bwd(g):
        accumulate_grad(a, g * out)

    return graph_node(out, (a,), _bwd)


def log(a) -> Tensor:
    a = _coerce(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log requires strictly positive inputs")

    def _bwd(g):
        accumulate_grad(a, g / a.data)

    return graph_node(np.log(a.data), (a,), _bwd)


def relu(a) -> Tensor:
    a = _coerce(a)

    def _bwd(g):
        # zero gradient at and below the kink
        accumulate_grad(a, g * (a.data > 0.0))

    return graph_node(np.maximum(a.data, 0.0), (a,), _bwd)


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def _bwd(g):
        accumulate_grad(a, g * out * (1.0 - out))

    return graph_node(out, (a,), _bwd)


def clamp(a, lo: float, hi: float) -> Tensor:
    a = _coerce(a)
    lo, hi = float(lo), float(hi)
    if not lo <= hi:
        raise DomainError(f"clamp bounds out of order: [{lo}, {hi}]")

    def _bwd(g):
        # boundary counts as inactive, like relu at zero
        accumulate_grad(a, g * ((a.data > lo) & (a.data < hi)))

    return graph_node(np.clip(a.data, lo, hi), (a,), _bwd)


def sign(a) -> Tensor:
    a = _coerce(a)

    def _bwd(g):
        pass  # derivative zero almost everywhere, zero adopted at jumps

    return graph_node(np.sign(a.data), (a,), _bwd)


def abs_(a) -> Tensor:
    a = _coerce(a)

    def _bwd(g):
        accumulate_grad(a, g * np.sign(a.data))

    return graph_node(np.abs(a.data), (a,), _bwd)


def sqrt(a) -> Tensor:
    a = _coerce(a)
    if np.any(a.data < 0.0):
        raise DomainError("sqrt requires non-negative inputs")
    out = np.sqrt(a.data)

    def _bwd(g):
        scale = np.zeros_like(out)
        nz = out > 0.0
        scale[nz] = 0.5 / out[nz]  # subgradient 0 at x == 0
        accumulate_grad(a, g * scale)

    return graph_node(out, (a,), _bwd)


# -- reductions --------------------------------------------------------------


def _normalize_axes(axes, ndim: int):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    result = []
    for ax in axes:
        ax = int(ax)
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank-{ndim} tensor")
        ax %= ndim
        if ax in result:
            raise ShapeError(f"duplicate reduction axis {ax}")
        result.append(ax)
    return tuple(sorted(result))


def _expand(arr: np.ndarray, axes, shape) -> np.ndarray:
    for ax in axes:
        arr = np.expand_dims(arr, ax)
    return np.broadcast_to(arr, shape)


def reduce_sum(a, axes=None) -> Tensor:
    a = _coerce(a)
    axes = _normalize_axes(axes, a.data.ndim)

    def _bwd(g):
        accumulate_grad(a, np.ascontiguousarray(_expand(g, axes, a.data.shape)))

    return graph_node(a.data.sum(axis=axes), (a,), _bwd)


def reduce_mean(a, axes=None) -> Tensor:
    a = _coerce(a)
    axes = _normalize_axes(axes, a.data.ndim)
    n = 1
    for ax in axes:
        n *= a.data.shape[ax]
    if n == 0:
        raise DomainError("mean over zero elements")

    def _bwd(g):
        accumulate_grad(a, _expand(g, axes, a.data.shape) / n)

    return graph_node(a.data.sum(axis=axes) / n, (a,), _bwd)


def reduce_max(a, axes=None) -> Tensor:
    a = _coerce(a)
    axes = _normalize_axes(axes, a.data.ndim)
    if a.data.size == 0:
        raise DomainError("max over zero elements")
    out = a.data.max(axis=axes)

    def _bwd(g):
        hit = a.data == _expand(out, axes, a.data.shape)
        ties = _expand(hit.sum(axis=axes), axes, a.data.shape)
        accumulate_grad(a, _expand(g, axes, a.data.shape) * hit / ties)

    return graph_node(out, (a,), _bwd)


# -- structured operations ---------------------------------------------------


def conv2d(x, kernel, bias) -> Tensor:
    """3x3 convolution, stride 1, zero padding 1, on a [C_in, H, W] tensor.

    kernel is [C_out, C_in, 3, 3] and bias [C_out]; the output keeps the
    spatial size.  Implemented as im2col + matmul; the naive nested-loop
    definition is the test oracle.
    """
    x, kernel, bias = _coerce(x), _coerce(kernel), _coerce(bias)
    if x.data.ndim != 3:
        raise ShapeError(f"conv2d input must be [C,H,W], got {x.data.shape}")
    if kernel.data.ndim != 4 or kernel.data.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d kernel must be [C_out,C_in,3,3], got {kernel.data.shape}")
    ci, h, w = x.data.shape
    co = kernel.data.shape[0]
    if kernel.data.shape[1] != ci:
        raise ShapeError(
            f"kernel expects {kernel.data.shape[1]} input channels, input has {ci}")
    if bias.data.shape != (co,):
        raise ShapeError(f"bias must be [{co}], got {bias.data.shape}")

    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))          # (ci,h,w,3,3)
    cols = win.transpose(1, 2, 0, 3, 4).reshape(h * w, ci * 9)  # copies
    kd = kernel.data
    out = (cols @ kd.reshape(co, ci * 9).T).T.reshape(co, h, w) + bias.data[:, None, None]

    def _bwd(g):
        if bias.requires_grad:
            accumulate_grad(bias, g.sum(axis=(1, 2)))
        if kernel.requires_grad:
            accumulate_grad(kernel, (g.reshape(co, h * w) @ cols).reshape(co, ci, 3, 3))
        if x.requires_grad:
            gp = np.pad(g, ((0, 0), (1, 1), (1, 1)))
            gwin = sliding_window_view(gp, (3, 3), axis=(1, 2))
            gcols = gwin.transpose(1, 2, 0, 3, 4).reshape(h * w, co * 9)
            krot = kd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(ci, co * 9)
            accumulate_grad(x, (gcols @ krot.T).T.reshape(ci, h, w))

    return graph_node(out, (x, kernel, bias), _bwd)


def channel_slice(x, index: int) -> Tensor:
    """Select one channel of a [C, H, W] tensor, keeping the channel axis."""
    x = _coerce(x)
    if x.data.ndim != 3:
        raise ShapeError(f"channel_slice needs a [C,H,W] tensor, got {x.data.shape}")
    c = x.data.shape[0]
    if not 0 <= index < c:
        raise ShapeError(f"channel {index} out of range for {c} channels")

    def _bwd(g):
        full = np.zeros_like(x.data)
        full[index] = g[0]
        accumulate_grad(x, full)

    return graph_node(x.data[index:index + 1].copy(), (x,), _bwd)


def per_pixel_cross_entropy(logits, labels) -> Tensor:
    """Per-pixel multi-class cross entropy from raw logits.

    logits is [M, H, W]; labels an integer [H, W] array with values in
    [0, M).  Returns the [H, W] map of -log softmax(logits)[label], computed
    with the log-sum-exp shift so it stays finite for logits up to 1e4.
    """
    logits = _coerce(logits)
    if logits.data.ndim != 3:
        raise ShapeError(f"logits must be [M,H,W], got {logits.data.shape}")
    m = logits.data.shape[0]
    if m < 2:
        raise ShapeError("cross entropy needs at least 2 classes")
    labels = np.asarray(labels)
    if labels.shape != logits.data.shape[1:]:
        raise ShapeError(
            f"labels shape {labels.shape} does not match spatial size {logits.data.shape[1:]}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise DomainError("labels must be integers")
    if labels.min() < 0 or labels.max() >= m:
        raise DomainError(f"labels must lie in [0, {m})")

    shift = logits.data.max(axis=0)
    ez = np.exp(logits.data - shift[None])
    total = ez.sum(axis=0)
    lse = shift + np.log(total)
    picked = np.take_along_axis(logits.data, labels[None], axis=0)[0]
    softmax = ez / total[None]
    onehot = np.zeros_like(logits.data)
    np.put_along_axis(onehot, labels[None], 1.0, axis=0)

    def _bwd(g):
        accumulate_grad(logits, (softmax - onehot) * g[None])

    return graph_node(lse - picked, (logits,), _bwd)


def per_pixel_epe(pred, target) -> Tensor:
    """Per-pixel endpoint error: the channel-wise L2 distance of [C, H, W] maps.

    Gradient convention: zero where the error is exactly zero.
    """
    pred, target = _coerce(pred), _coerce(target)
    if pred.data.ndim != 3:
        raise ShapeError(f"pred must be [C,H,W], got {pred.data.shape}")
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"pred shape {pred.data.shape} does not match target {target.data.shape}")

    diff = pred.data - target.data
    out = np.sqrt((diff * diff).sum(axis=0))

    def _bwd(g):
        scale = np.zeros_like(out)
        nz = out > 0.0
        scale[nz] = g[nz] / out[nz]
        accumulate_grad(pred, diff * scale[None])
        accumulate_grad(target, -diff * scale[None])

    return graph_node(out, (pred, target), _bwd)


def masked_mean(values, mask: np.ndarray) -> Tensor:
    """Mean of a [H, W] tensor over the pixels where `mask` is set.

    Invalid pixels contribute nothing to the numerator and are excluded from
    the denominator.  Raises DomainError when no pixel is valid.
    """
    values = _coerce(values)
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != values.data.shape:
        raise ShapeError(f"mask shape {m.shape} does not match values {values.data.shape}")
    count = float(m.sum())
    if count == 0.0:
        raise DomainError("masked_mean over an all-invalid mask")
    return mul(reduce_sum(mul(values, Tensor(m))), 1.0 / count)
