"""Dense float64 tensors with a dynamic reverse-mode tape, plus Adam.

The operation set is exactly what the fusion model needs: 2-D matrix
multiplication, same-shape and row-broadcast addition, elementwise product,
scalar scaling, transposition, row softmax, layer normalization, GELU/ReLU,
row/column concatenation, single-row slicing, full reduction, and softmax
cross-entropy. There is no general broadcasting and no view aliasing: every
op allocates its output.

Gradients are accumulated additively on the tape's leaves, so a tensor used
twice receives both contributions. Training runs in 64-bit; 32-bit floats
appear only at file boundaries (see data.py).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import FiniteDifferenceError, ShapeError, ValidationError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A dense float64 array plus an optional accumulated gradient.

    ``data`` always owns its buffer (row-major). ``grad`` is lazily
    allocated with the same shape on first accumulation. Tensors are
    immutable values after creation except for gradient accumulation;
    parameter updates (Adam) rewrite ``data`` in place on leaves only.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self):
        """Flat row-major view of the values (len == product of shape)."""
        return self.data.reshape(-1)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; the real work lives in the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def sum(self):
        return sum_all(self)

    def backward(self):
        backward(self)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        # Copy: g may be borrowed (e.g. passed to two parents by add's
        # backward) and later accumulations must not leak across tensors.
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _make(data: np.ndarray, parents, backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _need_2d(t: Tensor, op: str) -> None:
    if t.data.ndim != 2:
        raise ShapeError(f"{op} expects a 2-D tensor, got shape {t.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of an (m, p) and a (p, n) tensor."""
    a, b = _as_tensor(a), _as_tensor(b)
    _need_2d(a, "matmul")
    _need_2d(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(out_data, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    _need_2d(a, "transpose")
    out_data = np.ascontiguousarray(a.data.T)

    def bwd(g):
        _accum(a, g.T)

    return _make(out_data, (a,), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Same-shape elementwise sum."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    out_data = a.data + b.data

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    return _make(out_data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub shapes differ: {a.shape} vs {b.shape}")
    out_data = a.data - b.data

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(out_data, (a, b), bwd)


def add_row(a: Tensor, v: Tensor) -> Tensor:
    """Add a length-n vector to every row of an (m, n) tensor."""
    a, v = _as_tensor(a), _as_tensor(v)
    _need_2d(a, "add_row")
    if v.data.ndim != 1 or v.shape[0] != a.shape[1]:
        raise ShapeError(f"add_row vector shape {v.shape} does not match {a.shape}")
    out_data = a.data + v.data

    def bwd(g):
        _accum(a, g)
        _accum(v, g.sum(axis=0))

    return _make(out_data, (a, v), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Same-shape elementwise product."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")
    out_data = a.data * b.data

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(out_data, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)
    out_data = a.data * s

    def bwd(g):
        _accum(a, g * s)

    return _make(out_data, (a,), bwd)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with max-subtraction; rows sum to 1."""
    x = _as_tensor(x)
    _need_2d(x, "softmax_rows")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        # dL/dx = y * (g - sum_j g_j y_j) per row
        dot = (g * y).sum(axis=1, keepdims=True)
        _accum(x, y * (g - dot))

    return _make(y, (x,), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization to zero mean / unit population variance, then affine.

    eps acts as a variance floor (not an additive fudge): rows whose
    variance exceeds eps come out with exactly unit variance, while
    (near-)constant rows degrade gracefully to zeros instead of dividing
    by zero.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    _need_2d(x, "layer_norm")
    n = x.shape[1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match width {n}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(np.maximum(var, eps))
    xhat = centered * inv_std
    out_data = xhat * gamma.data + beta.data

    def bwd(g):
        _accum(gamma, (g * xhat).sum(axis=0))
        _accum(beta, g.sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
            # Below the floor inv_std is constant, so the variance term
            # contributes nothing there.
            active = (var > eps).astype(np.float64)
            _accum(x, inv_std * (dxhat - m1 - active * xhat * m2))

    return _make(out_data, (x, gamma, beta), bwd)


def gelu(x: Tensor) -> Tensor:
    """Exact erf-based GELU."""
    x = _as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out_data = x.data * cdf

    def bwd(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        _accum(x, g * (cdf + x.data * pdf))

    return _make(out_data, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    out_data = np.where(mask, x.data, 0.0)

    def bwd(g):
        _accum(x, g * mask)

    return _make(out_data, (x,), bwd)


def concat_cols(tensors) -> Tensor:
    """Concatenate 2-D tensors with equal row counts along the feature axis."""
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ValidationError("concat_cols needs at least one tensor")
    for t in ts:
        _need_2d(t, "concat_cols")
    rows = ts[0].shape[0]
    if any(t.shape[0] != rows for t in ts):
        raise ShapeError(f"concat_cols row counts differ: {[t.shape for t in ts]}")
    out_data = np.concatenate([t.data for t in ts], axis=1)
    widths = [t.shape[1] for t in ts]
    bounds = np.cumsum([0] + widths)

    def bwd(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            _accum(t, g[:, lo:hi])

    return _make(out_data, ts, bwd)


def concat_rows(tensors) -> Tensor:
    """Concatenate 2-D tensors with equal widths along the row axis."""
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ValidationError("concat_rows needs at least one tensor")
    for t in ts:
        _need_2d(t, "concat_rows")
    width = ts[0].shape[1]
    if any(t.shape[1] != width for t in ts):
        raise ShapeError(f"concat_rows widths differ: {[t.shape for t in ts]}")
    out_data = np.concatenate([t.data for t in ts], axis=0)
    counts = [t.shape[0] for t in ts]
    bounds = np.cumsum([0] + counts)

    def bwd(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            _accum(t, g[lo:hi, :])

    return _make(out_data, ts, bwd)


def take_row(x: Tensor, i: int) -> Tensor:
    """Slice row i of an (m, n) tensor as a (1, n) tensor."""
    x = _as_tensor(x)
    _need_2d(x, "take_row")
    if not 0 <= i < x.shape[0]:
        raise ShapeError(f"take_row index {i} out of range for shape {x.shape}")
    out_data = x.data[i : i + 1].copy()

    def bwd(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[i : i + 1] = g
            _accum(x, full)

    return _make(out_data, (x,), bwd)


def ravel(x: Tensor) -> Tensor:
    """Flatten to 1-D (row-major copy)."""
    x = _as_tensor(x)
    out_data = x.data.reshape(-1).copy()

    def bwd(g):
        _accum(x, g.reshape(x.data.shape))

    return _make(out_data, (x,), bwd)


def sum_all(x: Tensor) -> Tensor:
    """Sum every element into a scalar (0-d) tensor."""
    x = _as_tensor(x)
    out_data = np.asarray(x.data.sum())

    def bwd(g):
        _accum(x, np.broadcast_to(g, x.data.shape).copy())

    return _make(out_data, (x,), bwd)


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.data.size)


def cross_entropy_logits(logits: Tensor, label: int) -> Tensor:
    """Softmax cross-entropy of one logit row against an integer label.

    Accepts a (C,) or (1, C) tensor. Computed as logsumexp(z) - z[label]
    with max-subtraction, so large logits do not overflow.
    """
    logits = _as_tensor(logits)
    flat = logits.data.reshape(-1)
    c = flat.shape[0]
    if logits.data.ndim > 2 or (logits.data.ndim == 2 and logits.shape[0] != 1):
        raise ShapeError(f"cross_entropy_logits expects one row, got {logits.shape}")
    if not 0 <= label < c:
        raise ValidationError(f"label {label} out of range for {c} classes")
    m = flat.max()
    z = flat - m
    e = np.exp(z)
    se = e.sum()
    loss = np.asarray(math.log(se) - z[label])
    probs = e / se

    def bwd(g):
        d = probs.copy()
        d[label] -= 1.0
        _accum(logits, (g * d).reshape(logits.data.shape))

    return _make(loss, (logits,), bwd)


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss.

    Populates ``grad`` on every reachable tensor with requires_grad set,
    accumulating additively across multiple uses.
    """
    if loss.data.size != 1:
        raise ValidationError(f"backward needs a scalar loss, got shape {loss.shape}")
    # Iterative post-order: children appear before their consumers.
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


class Parameter:
    """A named leaf tensor with requires_grad fixed on."""

    __slots__ = ("name", "tensor")

    def __init__(self, name: str, tensor: Tensor):
        tensor.requires_grad = True
        self.name = name
        self.tensor = tensor

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


def add_param(params: dict, name: str, data) -> Parameter:
    """Register a new Parameter in a model's name->Parameter dict."""
    if name in params:
        raise ValidationError(f"duplicate parameter name: {name}")
    p = Parameter(name, Tensor(data, requires_grad=True))
    params[name] = p
    return p


@dataclass
class AdamState:
    """Optimizer state shared by one parameter set."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0:
            raise ValidationError("lr must be non-negative")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValidationError("betas must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValidationError("epsilon must be positive")


def adam_step(params: dict, state: AdamState, zero_grads_after: bool = False) -> None:
    """One bias-corrected Adam update over a name->Parameter dict.

    Iterates names in sorted order so updates are reproducible regardless of
    construction order. Grads are left in place unless zero_grads_after.
    """
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name in sorted(params):
        p = params[name]
        g = p.tensor.grad
        if g is None:
            raise ValidationError(f"parameter {name} has no gradient")
        m = state.first_moment.get(name)
        if m is None:
            m = np.zeros_like(p.tensor.data)
            state.first_moment[name] = m
            v = np.zeros_like(p.tensor.data)
            state.second_moment[name] = v
        else:
            v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.tensor.data -= state.lr * mhat / (np.sqrt(vhat) + state.epsilon)
    if zero_grads_after:
        zero_grads(params)


def zero_grads(params: dict) -> None:
    for p in params.values():
        p.tensor.grad = None


def finite_diff_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if h <= 0:
        raise ValidationError("step size h must be positive")
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    work = x.copy()
    for i in range(x.size):
        orig = work[i]
        work[i] = orig + h
        fp = float(f(work))
        work[i] = orig - h
        fm = float(f(work))
        work[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise FiniteDifferenceError(
                f"non-finite evaluation at coordinate {i}: f(+h)={fp}, f(-h)={fm}"
            )
        out[i] = (fp - fm) / (2.0 * h)
    return out
