"""Dense float32 tensors with reverse-mode automatic differentiation.

Every operation that sees a gradient-requiring operand records itself on
the implicit computation graph (parent links plus a backward closure);
``backward`` replays the recorded adjoints in reverse topological order.
Gradients are write-once per pass: an optimizer step (or ``zero_grads``)
must clear them before the next backward.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DomainError, ShapeError

DTYPE = np.float32


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _check_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ShapeError(f"extents must be >= 1, got {shape}")
    return shape


class Tensor:
    """An n-dimensional float32 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype != np.float64:  # float64 only for the finite-difference oracle
            arr = arr.astype(DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() requires a scalar, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return add(self, neg(_coerce(other)))

    def __rsub__(self, other):
        return add(_coerce(other), neg(self))

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise ContractError("division only supports a python scalar divisor")
        return mul(self, _coerce(1.0 / float(scalar)))

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        if exponent != 2:
            raise ContractError("only squaring is supported")
        return mul(self, self)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- elementwise nonlinearities ---------------------------------------

    def relu(self):
        return relu(self)

    def leaky_relu(self, slope: float):
        return leaky_relu(self, slope)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def sqrt(self):
        return sqrt(self)

    def abs(self):
        return absolute(self)

    # -- reshaping and reductions -----------------------------------------

    def reshape(self, *shape):
        return reshape(self, shape)

    def sum(self, axis: int | None = None):
        return reduce_sum(self, axis)

    def mean(self):
        return reduce_mean(self)

    def backward(self):
        backward(self)


def _coerce(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=DTYPE))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True).reshape(t.shape)
    else:
        t.grad += g.reshape(t.shape)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- factories -------------------------------------------------------------


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(_check_shape(shape), dtype=DTYPE), requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(_check_shape(shape), dtype=DTYPE), requires_grad)


def full(shape, value: float, requires_grad: bool = False) -> Tensor:
    return Tensor(np.full(_check_shape(shape), value, dtype=DTYPE), requires_grad)


def uniform(shape, lo: float, hi: float, seed, requires_grad: bool = False) -> Tensor:
    shape = _check_shape(shape)
    if not lo < hi:
        raise DomainError(f"uniform requires lo < hi, got [{lo}, {hi})")
    rng = _as_rng(seed)
    return Tensor(rng.uniform(lo, hi, shape).astype(DTYPE), requires_grad)


def gaussian(shape, mu: float, sigma: float, seed, requires_grad: bool = False) -> Tensor:
    shape = _check_shape(shape)
    if sigma < 0:
        raise DomainError(f"gaussian requires sigma >= 0, got {sigma}")
    rng = _as_rng(seed)
    return Tensor((mu + sigma * rng.standard_normal(shape)).astype(DTYPE), requires_grad)


# -- computation graph ------------------------------------------------------


class Graph:
    """The recorded operations behind a tensor, in topological order.

    ``nodes`` lists every tensor reachable from the root through parent
    links, with each producer appearing before its consumers.
    """

    __slots__ = ("nodes",)

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        nodes: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                nodes.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(nodes)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every gradient-requiring tensor behind ``loss``."""
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, shape is {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any gradient-requiring tensor")
    graph = Graph.trace(loss)
    for node in graph.nodes:
        if node.requires_grad and node.grad is not None:
            raise ContractError(
                "gradients are write-once per pass; clear them "
                "(optimizer step or zero_grads) before another backward"
            )
    loss.grad = np.ones_like(loss.data)
    for node in reversed(graph.nodes):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


# -- elementwise operations --------------------------------------------------

_BROADCAST_ERR = "operands of shape {} and {} do not broadcast"


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(_BROADCAST_ERR.format(a.shape, b.shape)) from None

    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), back)


def neg(a: Tensor) -> Tensor:
    def back(g):
        _accum(a, -g)

    return _make(-a.data, (a,), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(_BROADCAST_ERR.format(a.shape, b.shape)) from None

    def back(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), back)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def back(g):
        _accum(a, g * (a.data > 0))

    return _make(data, (a,), back)


def leaky_relu(a: Tensor, slope: float) -> Tensor:
    if not 0 < slope < 1:
        raise DomainError(f"leaky_relu slope must be in (0,1), got {slope}")
    data = np.where(a.data > 0, a.data, slope * a.data)

    def back(g):
        _accum(a, g * np.where(a.data > 0, 1.0, slope).astype(a.data.dtype))

    return _make(data, (a,), back)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x)))).astype(x.dtype)

    def back(g):
        _accum(a, g * data * (1.0 - data))

    return _make(data, (a,), back)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def back(g):
        _accum(a, g * (1.0 - data * data))

    return _make(data, (a,), back)


ACTIVATIONS = ("relu", "leaky_relu", "sigmoid", "tanh")


def activation(a: Tensor, kind: str, slope: float = 0.01) -> Tensor:
    """Elementwise nonlinearity dispatch; ``slope`` applies to leaky_relu."""
    if kind == "relu":
        return relu(a)
    if kind == "leaky_relu":
        return leaky_relu(a, slope)
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "tanh":
        return tanh(a)
    raise DomainError(f"unknown activation {kind!r}, expected one of {ACTIVATIONS}")


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise DomainError("sqrt requires nonnegative input")
    data = np.sqrt(a.data)

    def back(g):
        _accum(a, g * 0.5 / np.maximum(data, np.finfo(DTYPE).tiny))

    return _make(data, (a,), back)


def absolute(a: Tensor) -> Tensor:
    data = np.abs(a.data)

    def back(g):
        _accum(a, g * np.sign(a.data))

    return _make(data, (a,), back)


def rsqrt(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("rsqrt requires strictly positive input")
    data = 1.0 / np.sqrt(a.data)

    def back(g):
        _accum(a, g * (-0.5) * data / a.data)

    return _make(data, (a,), back)


def bce_with_logits(logits: Tensor, target: float) -> Tensor:
    """Elementwise binary cross-entropy against a constant 0/1 target.

    Computed from logits in the numerically stable form
    ``max(z,0) - z*t + log1p(exp(-|z|))`` so saturated sigmoids never
    produce log(0).
    """
    if target not in (0.0, 1.0, 0, 1):
        raise DomainError(f"target must be 0 or 1, got {target}")
    z = logits.data
    t = float(target)
    data = (np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))).astype(z.dtype)
    sig = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                   np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

    def back(g):
        _accum(logits, g * (sig - t).astype(z.dtype))

    return _make(data, (logits,), back)


# -- linear algebra ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul requires 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} x {b.shape}")
    data = a.data @ b.data

    def back(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(data, (a, b), back)


# -- convolution and pooling -------------------------------------------------


def _conv_windows(padded: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    win = sliding_window_view(padded, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]  # N,C,Ho,Wo,kh,kw


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation (no kernel flip) with zero padding.

    x: [N,C,H,W], kernel: [O,C,kh,kw], bias: [O] or None.
    Output spatial extent is floor((H + 2*padding - kh) / stride) + 1.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d requires 4-d input/kernel, got {x.shape}/{kernel.shape}")
    n, c, h, w = x.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"kernel expects {kc} channels, input has {c}")
    if stride < 1 or padding < 0:
        raise DomainError(f"stride must be >= 1 and padding >= 0, got {stride}/{padding}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"kernel {kh}x{kw} exceeds padded input {h + 2 * padding}x{w + 2 * padding}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"bias shape {bias.shape} does not match {o} output channels")

    if padding:
        padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        padded = x.data
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    windows = _conv_windows(padded, kh, kw, stride)
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    kmat = kernel.data.reshape(o, c * kh * kw)
    out = cols @ kmat.T
    if bias is not None:
        out += bias.data
    data = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    data = np.ascontiguousarray(data)

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        if kernel.requires_grad:
            _accum(kernel, (g2.T @ cols).reshape(kernel.shape))
        if bias is not None and bias.requires_grad:
            _accum(bias, g2.sum(axis=0))
        if x.requires_grad:
            dpad = np.zeros_like(padded)
            for i in range(kh):
                for j in range(kw):
                    # scatter each kernel tap's contribution back onto the input
                    contrib = np.tensordot(g, kernel.data[:, :, i, j], axes=([1], [0]))
                    dpad[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        contrib.transpose(0, 3, 1, 2)
            if padding:
                dpad = dpad[:, :, padding:padding + h, padding:padding + w]
            _accum(x, dpad)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(data, parents, back)


def max_pool2d(x: Tensor, window: int, stride: int) -> Tensor:
    """Per-window maximum; ties route the gradient to the first occurrence
    in row-major window order."""
    if x.data.ndim != 4:
        raise ShapeError(f"max_pool2d requires a 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    if window < 1 or stride < 1:
        raise DomainError(f"window and stride must be >= 1, got {window}/{stride}")
    if window > h or window > w:
        raise ShapeError(f"window {window} exceeds spatial extent {h}x{w}")
    win = _conv_windows(x.data, window, window, stride)
    n_, c_, ho, wo = win.shape[:4]
    flat = win.reshape(n, c, ho, wo, window * window)
    arg = flat.argmax(axis=-1)
    data = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    data = np.ascontiguousarray(data)

    def back(g):
        dx = np.zeros_like(x.data)
        ni, ci, hi, wi = np.indices((n, c, ho, wo), sparse=False)
        rows = hi * stride + arg // window
        cols = wi * stride + arg % window
        np.add.at(dx, (ni, ci, rows, cols), g)
        _accum(x, dx)

    return _make(data, (x,), back)


def upsample2d(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour spatial upsampling by an integer factor."""
    if x.data.ndim != 4:
        raise ShapeError(f"upsample2d requires a 4-d input, got {x.shape}")
    if factor < 1:
        raise DomainError(f"factor must be >= 1, got {factor}")
    n, c, h, w = x.shape
    data = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def back(g):
        _accum(x, g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)))

    return _make(data, (x,), back)


# -- shape ops ----------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from None

    def back(g):
        _accum(x, g.reshape(x.shape))

    return _make(data, (x,), back)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DomainError("concat requires at least one tensor")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat shapes {[t.shape for t in tensors]} differ off axis {axis}") from None
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _make(data, tuple(tensors), back)


# -- reductions ----------------------------------------------------------------


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    if x.data.size == 0:
        raise DomainError("cannot reduce an empty tensor")
    if axis is None:
        data = x.data.sum().reshape(1)

        def back(g):
            _accum(x, np.broadcast_to(g, x.shape))
    else:
        reduced = x.data.sum(axis=axis)
        reduced_shape = reduced.shape
        data = reduced.reshape(1) if reduced.ndim == 0 else reduced

        def back(g):
            _accum(x, np.broadcast_to(np.expand_dims(g.reshape(reduced_shape), axis), x.shape))

    return _make(np.ascontiguousarray(data), (x,), back)


def reduce_mean(x: Tensor) -> Tensor:
    if x.data.size == 0:
        raise DomainError("cannot reduce an empty tensor")
    n = x.data.size
    data = (x.data.sum() / n).reshape(1)

    def back(g):
        _accum(x, np.broadcast_to(g / n, x.shape).astype(x.data.dtype))

    return _make(data, (x,), back)


def reduce(x: Tensor, kind: str) -> Tensor:
    if kind == "sum":
        return reduce_sum(x)
    if kind == "mean":
        return reduce_mean(x)
    raise DomainError(f"unknown reduction {kind!r}, expected 'sum' or 'mean'")


# -- optimizers ----------------------------------------------------------------


class SGD:
    """Plain stochastic gradient descent: w <- w - lr * g."""

    kind = "sgd"

    def __init__(self, params, lr: float = 1e-2):
        if lr < 0:
            raise DomainError(f"learning rate must be >= 0, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.t = 0

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise ContractError("optimizer step with a missing gradient")
        for p in self.params:
            p.data -= DTYPE(self.lr) * p.grad
            p.grad = None
        self.t += 1


class Adam:
    """Adam with bias-corrected first and second moments."""

    kind = "adam"

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr < 0:
            raise DomainError(f"learning rate must be >= 0, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise ContractError("optimizer step with a missing gradient")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(DTYPE)
            p.grad = None


def optimizer_step(optimizer) -> None:
    optimizer.step()


def set_requires_grad(params, flag: bool) -> None:
    for p in params:
        p.requires_grad = flag


# -- gradient verification ------------------------------------------------------


def grad_check(f, inputs, eps: float = 1e-3) -> float:
    """Max relative error between backward gradients and central differences.

    ``f`` maps the input tensors to a scalar Tensor. Relative error uses
    max(|analytic|, |numeric|, 1e-8) as the denominator. The numerical side
    is evaluated on float64 copies of the inputs so the oracle is more
    precise than the float32 path it verifies.
    """
    if eps <= 0:
        raise DomainError(f"eps must be positive, got {eps}")
    inputs = list(inputs)
    zero_grads(inputs)
    loss = f(*inputs)
    backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    zero_grads(inputs)

    worst = 0.0
    for t, ana in zip(inputs, analytic):
        saved = t.data
        t.data = saved.astype(np.float64)  # in place, so closures over t see it
        try:
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = f(*inputs).item()
                flat[i] = orig - eps
                fm = f(*inputs).item()
                flat[i] = orig
                num = (fp - fm) / (2.0 * eps)
                a = float(ana.reshape(-1)[i])
                err = abs(num - a) / max(abs(num), abs(a), 1e-8)
                worst = max(worst, err)
        finally:
            t.data = saved
    return worst
