"""Small define-by-run reverse-mode autodiff over real and complex arrays.

Gradient convention
-------------------
For a real scalar loss ``J``:

* a real node stores ``dJ/dx``;
* a complex node stores the conjugate Wirtinger derivative ``dJ/dz*``, so
  ``z - lr * grad`` is a steepest-descent step and the derivatives with respect
  to the real and imaginary parts are ``2 Re(grad)`` and ``2 Im(grad)``.

Every value carries leading batch axes; matrix operators act on the trailing
two axes and broadcast like ``numpy.matmul``. Gradients flowing into a
broadcast operand are summed back to its shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import KinkCrossed, NonScalarOutput, ZeroColumn
from .numerics import herm as _herm
from .numerics import hpd_inverse


class Tensor:
    """A node of the computation graph."""

    __slots__ = ("value", "grad", "parents", "op", "backward_fn", "requires_grad", "name",
                 "meta")

    def __init__(self, value, parents: Sequence["Tensor"] = (), op: str = "const",
                 backward_fn: Callable | None = None, requires_grad: bool = False,
                 name: str | None = None):
        self.value = np.asarray(value)
        if not np.iscomplexobj(self.value):
            self.value = self.value.astype(np.float64, copy=False)
        self.grad = None
        self.parents = tuple(parents)
        self.op = op
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name
        self.meta = None        # op constants needed to inspect the graph later

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.value)

    def __repr__(self):
        kind = "complex" if self.is_complex else "real"
        return f"Tensor(op={self.op!r}, shape={self.shape}, {kind})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate ``grad`` on every node reachable from this scalar output."""
        if self.value.size != 1 or self.is_complex:
            raise NonScalarOutput(
                f"backward needs a real scalar output, got shape {self.shape}")
        order = _topological(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value, dtype=np.float64)
        for node in reversed(order):
            if node.backward_fn is None or node.grad is None:
                continue
            grads = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                _accumulate(parent, g)

    # operator sugar
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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def param(value, name: str | None = None) -> Tensor:
    return Tensor(np.array(value, copy=True), requires_grad=True, name=name)


def const(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
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
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _accumulate(node: Tensor, g: np.ndarray):
    g = _unbroadcast(np.asarray(g), node.value.shape)
    if not node.is_complex and np.iscomplexobj(g):
        # real input promoted into a holomorphic op
        g = 2.0 * g.real
    node.grad = g.copy() if node.grad is None else node.grad + g


def _make(value, parents, op, backward_fn) -> Tensor:
    parents = tuple(parents)
    needs = any(p.requires_grad for p in parents)
    return Tensor(value, parents, op, backward_fn if needs else None, needs)


def _real_or_complex_dtype(*arrays):
    return np.result_type(*arrays, np.float64)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = const(a), const(b)
    return _make(a.value + b.value, (a, b), "add", lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = const(a), const(b)
    return _make(a.value - b.value, (a, b), "sub", lambda g: (g, -g))


def mul(a, b) -> Tensor:
    """Hadamard product with broadcasting."""
    a, b = const(a), const(b)
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), "mul",
                 lambda g: (g * np.conj(bv), g * np.conj(av)))


def scale(a, c: float) -> Tensor:
    a = const(a)
    return _make(a.value * c, (a,), "scale", lambda g: (g * np.conj(c),))


def relu(a) -> Tensor:
    a = const(a)
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), (a,), "relu", lambda g: (g * mask,))


def sqrt(a) -> Tensor:
    a = const(a)
    out = np.sqrt(a.value)
    return _make(out, (a,), "sqrt", lambda g: (g / (2.0 * out),))


def log(a) -> Tensor:
    """Natural log of a positive real tensor."""
    a = const(a)
    return _make(np.log(a.value), (a,), "log", lambda g: (g / a.value,))


def reciprocal(a) -> Tensor:
    """1 / a for a real tensor with no zeros."""
    a = const(a)
    out = 1.0 / a.value
    return _make(out, (a,), "reciprocal", lambda g: (-g * out * out,))


def clip(a, lo: float, hi: float) -> Tensor:
    """Elementwise clip of a real tensor; zero gradient outside [lo, hi]."""
    a = const(a)
    inside = (a.value > lo) & (a.value < hi)
    out = _make(np.clip(a.value, lo, hi), (a,), "clip", lambda g: (g * inside,))
    out.meta = (lo, hi)
    return out


def abs2(a) -> Tensor:
    """Elementwise squared magnitude (real output)."""
    a = const(a)
    v = a.value
    if np.iscomplexobj(v):
        return _make(v.real ** 2 + v.imag ** 2, (a,), "abs2", lambda g: (g * v,))
    return _make(v * v, (a,), "abs2", lambda g: (2.0 * g * v,))


def conj(a) -> Tensor:
    a = const(a)
    return _make(np.conj(a.value), (a,), "conj", lambda g: (np.conj(g),))


def dropout(a, rate: float, rng: np.random.Generator | None) -> Tensor:
    a = const(a)
    if rate <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _make(a.value * keep, (a,), "dropout", lambda g: (g * keep,))


def stop_gradient(a) -> Tensor:
    a = const(a)
    return Tensor(a.value, op="stop_gradient")


# ------------------------------------------------------------------ structure

def reshape(a, shape) -> Tensor:
    a = const(a)
    old = a.shape
    return _make(a.value.reshape(shape), (a,), "reshape", lambda g: (g.reshape(old),))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = const(a)
    old = a.shape
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, old),)

    return _make(out, (a,), "sum", back)


def mean(a, axis=None) -> Tensor:
    a = const(a)
    count = a.value.size if axis is None else np.prod(
        [a.shape[ax] for ax in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis), 1.0 / float(count))


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [const(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.value for t in ts], axis=axis)
    return _make(out, ts, "concat", lambda g: tuple(np.split(g, splits, axis=axis)))


def transpose(a) -> Tensor:
    a = const(a)
    return _make(np.swapaxes(a.value, -1, -2), (a,), "transpose",
                 lambda g: (np.swapaxes(g, -1, -2),))


def herm(a) -> Tensor:
    """Conjugate transpose of the trailing matrix axes."""
    a = const(a)
    return _make(_herm(a.value), (a,), "herm", lambda g: (_herm(g),))


def reim(a) -> Tensor:
    """Complex (...) -> real (..., 2) holding [Re, Im]."""
    a = const(a)
    v = a.value
    return _make(np.stack([v.real, v.imag], axis=-1), (a,), "reim",
                 lambda g: (0.5 * (g[..., 0] + 1j * g[..., 1]),))


def from_reim(a) -> Tensor:
    """Real (..., 2) -> complex (...)."""
    a = const(a)
    v = a.value
    return _make(v[..., 0] + 1j * v[..., 1], (a,), "from_reim",
                 lambda g: (2.0 * np.stack([g.real, g.imag], axis=-1),))


def pack_complex(u, tau: int, k: int) -> Tensor:
    """Real (..., 2*tau*k) -> complex (..., tau, k).

    The first ``tau*k`` entries are real parts and the rest imaginary parts,
    each in column-major order of the ``tau x k`` matrix.
    """
    u = const(u)
    n = tau * k
    lead = u.shape[:-1]

    def to_mat(flat):
        return np.swapaxes(flat.reshape(lead + (k, tau)), -1, -2)

    def to_flat(mat):
        return np.swapaxes(mat, -1, -2).reshape(lead + (n,))

    z = to_mat(u.value[..., :n]) + 1j * to_mat(u.value[..., n:])

    def back(g):
        return (np.concatenate([to_flat(2.0 * g.real), to_flat(2.0 * g.imag)], axis=-1),)

    return _make(z, (u,), "pack_complex", back)


# -------------------------------------------------------------------- algebra

def matmul(a, b) -> Tensor:
    a, b = const(a), const(b)
    av, bv = a.value, b.value
    return _make(av @ bv, (a, b), "matmul",
                 lambda g: (g @ _herm(bv), _herm(av) @ g))


def inv_hpd(a) -> Tensor:
    """Inverse of Hermitian positive-definite matrices (Cholesky based)."""
    a = const(a)
    w = hpd_inverse(a.value, check=False)
    wh = _herm(w)
    return _make(w, (a,), "inv_hpd", lambda g: (-(wh @ g @ wh),))


def trace_re(a) -> Tensor:
    """Real part of the trace over the trailing two axes."""
    a = const(a)
    v = a.value
    n = v.shape[-1]
    out = np.trace(v, axis1=-2, axis2=-1).real
    factor = 0.5 if np.iscomplexobj(v) else 1.0
    eye = np.eye(n)

    def back(g):
        return (factor * np.asarray(g)[..., None, None] * eye,)

    return _make(out, (a,), "trace_re", back)


def fro2(a) -> Tensor:
    """Squared Frobenius norm over the trailing two axes."""
    return sum(abs2(a), axis=(-2, -1))


def affine(x, w, b) -> Tensor:
    """Dense layer ``x @ w.T + b`` with ``w`` of shape (out, in)."""
    x, w, b = const(x), const(w), const(b)
    xv, wv = x.value, w.value
    out = xv @ wv.T + b.value

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = xv.reshape(-1, xv.shape[-1])
        return (g @ wv, g2.T @ x2, g2.sum(axis=0))

    return _make(out, (x, w, b), "affine", back)


def conv2d(x, w, b) -> Tensor:
    """3x3 stride-1 zero-padded convolution, channels last."""
    x, w, b = const(x), const(w), const(b)
    xv, wv = x.value, w.value
    out = kernels.conv3x3_forward(xv, wv, b.value)

    def back(g):
        gx = kernels.conv3x3_grad_input(g, wv) if x.requires_grad else None
        gw = kernels.conv3x3_grad_weight(xv, g) if w.requires_grad else None
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if b.requires_grad else None
        return (gx, gw, gb)

    return _make(out, (x, w, b), "conv2d", back)


def normalize_power(x, p_max) -> Tensor:
    """Scale each column (axis -2 indexes pilot symbols) down to power ``p_max``.

    Columns already within budget pass through unchanged.
    """
    x = const(x)
    v = x.value
    norm2 = np.sum(np.abs(v) ** 2, axis=-2, keepdims=True)
    if np.any(norm2 == 0.0):
        raise ZeroColumn("pilot column with zero norm")
    p_max = np.asarray(p_max, dtype=float)
    over = norm2 > p_max
    s = np.where(over, np.sqrt(p_max / norm2), 1.0)
    out = v * s

    def back(g):
        proj = np.sum(np.conj(v) * g, axis=-2, keepdims=True).real
        gs = s * (g - np.where(over, proj / norm2, 0.0) * v)
        return (gs,)

    out = _make(out, (x,), "normalize_power", back)
    out.meta = p_max
    return out


# ------------------------------------------------------------------ optimizer

@dataclass
class Adam:
    """Adam with bias correction; complex parameters use |g|^2 second moments."""

    params: list
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p.value) for p in self.params]
            self.v = [np.zeros(p.value.shape) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, grads: Sequence[np.ndarray] | None = None):
        if grads is None:
            grads = [p.grad for p in self.params]
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for idx, (p, g) in enumerate(zip(self.params, grads)):
            if g is None:
                g = np.zeros_like(p.value)
            self.m[idx] = self.beta1 * self.m[idx] + (1.0 - self.beta1) * g
            self.v[idx] = self.beta2 * self.v[idx] + (1.0 - self.beta2) * np.abs(g) ** 2
            m_hat = self.m[idx] / c1
            v_hat = self.v[idx] / c2
            p.value = p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> dict:
        out = {}
        for idx, p in enumerate(self.params):
            out[f"m{idx}"] = self.m[idx]
            out[f"v{idx}"] = self.v[idx]
        return out


# ----------------------------------------------------------------- grad check

def piece_signature(root: Tensor) -> bytes:
    """Which side of every kink in the graph the current values sit on.

    Two evaluations with equal signatures lie in the same smooth piece: the
    same ReLU units active, the same clip entries inside their bounds and the
    same pilot columns over budget.
    """
    masks = []
    for node in _topological(root):
        v = node.parents[0].value if node.parents else None
        if node.op == "relu":
            masks.append(v > 0)
        elif node.op == "clip":
            lo, hi = node.meta
            masks.append((v > lo) & (v < hi))
        elif node.op == "normalize_power":
            masks.append(np.sum(np.abs(v) ** 2, axis=-2) > node.meta)
    return np.packbits(np.concatenate([m.ravel() for m in masks])).tobytes() if masks else b""


def grad_check(loss_builder: Callable[[], Tensor], params: Sequence[Tensor],
               h: float = 1e-5, max_components: int | None = None,
               rng: np.random.Generator | None = None, order: int = 2,
               same_piece: bool = False) -> float:
    """Max relative error between backward gradients and finite differences.

    ``loss_builder`` must rebuild the graph from the current ``params`` values
    and return a real scalar. Each real and imaginary component is perturbed;
    ``max_components`` optionally subsamples components per parameter.
    ``order`` selects the central stencil: 2 (two points) or 4 (four points,
    truncation error O(h^4), which allows a larger ``h`` and so less roundoff).
    With ``same_piece`` every stencil point must share the base point's
    ``piece_signature``, otherwise ``KinkCrossed`` is raised, since differences
    across a kink say nothing about the gradient.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    loss = loss_builder()
    base = piece_signature(loss) if same_piece else None
    for p in params:
        p.grad = None
    loss.backward()
    analytic = [np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in params]
    # (offset, weight) of symmetric differences f(x + o h) - f(x - o h); differencing
    # first keeps an exactly flat direction at an exact zero
    stencil = {2: ((1.0, 0.5),), 4: ((1.0, 8.0 / 12), (2.0, -1.0 / 12))}[order]

    worst = 0.0
    for p, g in zip(params, analytic):
        orig = p.value.copy()
        flat_orig = orig.reshape(-1)
        gflat = g.reshape(-1)
        idxs = np.arange(flat_orig.size)
        if max_components is not None and flat_orig.size > max_components:
            picker = rng if rng is not None else np.random.default_rng(0)
            idxs = np.sort(picker.choice(flat_orig.size, max_components, replace=False))
        parts = (1.0, 1j) if p.is_complex else (1.0,)
        for i in idxs:
            for unit in parts:
                fd = 0.0
                for offset, weight in stencil:
                    diff = 0.0
                    for sign in (1.0, -1.0):
                        bumped = flat_orig.copy()
                        bumped[i] = bumped[i] + sign * offset * h * unit
                        p.value = bumped.reshape(orig.shape)
                        bumped_loss = loss_builder()
                        if same_piece and piece_signature(bumped_loss) != base:
                            p.value = orig
                            raise KinkCrossed(f"stencil point crosses a kink (component {i})")
                        diff += sign * float(bumped_loss.value)
                    fd += weight * diff
                p.value = orig
                fd /= h
                if p.is_complex:
                    a = 2.0 * (gflat[i].real if unit == 1.0 else gflat[i].imag)
                else:
                    a = float(gflat[i])
                denom = max(abs(a), abs(fd), 1e-8)
                worst = max(worst, abs(a - fd) / denom)
    return worst
