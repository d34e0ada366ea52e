"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything here is desk-scale: tensors are plain numpy arrays, the autodiff
graph is a throwaway per-sample structure of closures, and all math runs in
64-bit so finite-difference gradient checks are clean.  Tensors are immutable
after construction (training code rebinds parameter data explicitly through
the optimizer, never through graph ops).

Construction rejects NaN/Inf, so a diverging computation raises
NonFiniteError at the op that produced it instead of propagating garbage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import ConfigError, ContractError, NonFiniteError, ShapeError
from .rng import RngStream

__all__ = [
    "Tensor",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "power",
    "matmul",
    "transpose",
    "permute_axes",
    "reshape",
    "concat",
    "slice_cols",
    "gather_rows",
    "scatter_rows",
    "tsum",
    "tmean",
    "gelu",
    "softmax",
    "layer_norm",
    "AttentionParams",
    "softmax_attention",
    "sinusoid_table",
    "backward",
    "zero_grad",
    "draw_gaussian",
]


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_consumed")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjp=None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor construction rejected non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents  # tuple of parent Tensors
        self._vjp = _vjp  # fn(upstream grad ndarray) -> tuple of parent grads (or None)
        self._consumed = False

    # -- introspection ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        """A constant view of this tensor's values, cut from the graph."""
        return Tensor(self.data)

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, shape):
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce an upstream gradient back to the shape of a broadcast operand."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _make(data, parents, vjp) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _vjp=vjp)
    return Tensor(data)


# -- elementwise arithmetic ---------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _make(out, (a, b), vjp)


def power(a, p: float) -> Tensor:
    """Elementwise a**p for a scalar exponent."""
    a = as_tensor(a)
    p = float(p)
    out = a.data**p

    def vjp(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(out, (a,), vjp)


# -- structural ops -----------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _make(out, (a, b), vjp)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {a.shape}")
    out = a.data.T.copy()

    def vjp(g):
        return (g.T,)

    return _make(out, (a,), vjp)


def permute_axes(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    out = a.data.transpose(axes).copy()
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inv),)

    return _make(out, (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.shape),)

    return _make(out, (a,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.array_split(g, splits, axis=axis))

    return _make(out, tuple(ts), vjp)


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("slice_cols expects a 2-D tensor")
    out = a.data[:, start:stop].copy()

    def vjp(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _make(out, (a,), vjp)


def gather_rows(a, idx) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    out = a.data[idx].copy()

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(out, (a,), vjp)


def scatter_rows(src, idx, num_rows: int) -> Tensor:
    """Place row i of src at row idx[i] of a zero matrix with num_rows rows.

    Duplicate indices are a contract violation (every destination row is
    written at most once).
    """
    src = as_tensor(src)
    idx = np.asarray(idx, dtype=np.intp)
    if src.ndim != 2 or len(idx) != src.shape[0]:
        raise ContractError(f"scatter_rows: {src.shape} rows vs {len(idx)} indices")
    if len(np.unique(idx)) != len(idx):
        raise ContractError("scatter_rows: duplicate destination indices")
    if len(idx) and (idx.min() < 0 or idx.max() >= num_rows):
        raise ContractError("scatter_rows: destination index out of range")
    out = np.zeros((num_rows, src.shape[1]), dtype=np.float64)
    out[idx] = src.data

    def vjp(g):
        return (g[idx],)

    return _make(out, (src,), vjp)


# -- reductions ---------------------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), vjp)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.size if axis is None else a.shape[axis]

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape) / n,)

    return _make(out, (a,), vjp)


# -- nonlinearities -----------------------------------------------------------

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a) -> Tensor:
    """Gaussian error linear unit, exact erf form: x * Phi(x)."""
    a = as_tensor(a)
    phi_cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    out = a.data * phi_cdf

    def vjp(g):
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT_2PI
        return (g * (phi_cdf + a.data * pdf),)

    return _make(out, (a,), vjp)


def softmax(a) -> Tensor:
    """Row-stabilized softmax over the last axis."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (a,), vjp)


def layer_norm(x, gain, bias, eps: float = 1e-6) -> Tensor:
    """Normalize each row of x to zero mean / unit variance, then scale+shift.

    Composite of primitives, so gradients come for free.  eps > 0 guards
    zero-variance rows (a constant row maps to the bias).
    """
    if eps <= 0:
        raise ContractError("layer_norm requires eps > 0")
    x = as_tensor(x)
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    inv = power(add(var, eps), -0.5)
    return add(mul(mul(centered, inv), gain), bias)


# -- attention ----------------------------------------------------------------


@dataclass
class AttentionParams:
    """Learned Q/K/V and output projections of one attention layer."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor

    @staticmethod
    def init(dim: int, rng: RngStream, scale: float | None = None) -> "AttentionParams":
        s = scale if scale is not None else 1.0 / math.sqrt(dim)
        mats = {}
        for name in ("wq", "wk", "wv", "wo"):
            mats[name] = Tensor(rng.normal((dim, dim), std=s), requires_grad=True)
            mats["b" + name[1]] = Tensor(np.zeros(dim), requires_grad=True)
        return AttentionParams(**mats)

    def tensors(self) -> dict:
        return {
            "wq": self.wq, "bq": self.bq, "wk": self.wk, "bk": self.bk,
            "wv": self.wv, "bv": self.bv, "wo": self.wo, "bo": self.bo,
        }


def softmax_attention(q, k, v, params: AttentionParams, num_heads: int,
                      return_weights: bool = False):
    """Multi-head scaled dot-product attention with learned projections.

    q, k, v are [L x d] sequences sharing d; heads split d evenly and each
    head applies softmax(Q Kᵀ / sqrt(d_head)) V; concatenated heads go
    through the output projection.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.shape[1]
    if k.shape[1] != d or v.shape[1] != d:
        raise ShapeError("q, k, v must share the model dimension")
    if q.shape[0] != k.shape[0] or k.shape[0] != v.shape[0]:
        raise ShapeError("q, k, v must share the sequence length")
    if d % num_heads != 0:
        raise ConfigError(f"model dim {d} not divisible by {num_heads} heads")
    hd = d // num_heads
    inv_sqrt_hd = 1.0 / math.sqrt(hd)

    qp = add(matmul(q, params.wq), params.bq)
    kp = add(matmul(k, params.wk), params.bk)
    vp = add(matmul(v, params.wv), params.bv)

    head_outs = []
    weights = []
    for h in range(num_heads):
        lo, hi = h * hd, (h + 1) * hd
        qh = slice_cols(qp, lo, hi)
        kh = slice_cols(kp, lo, hi)
        vh = slice_cols(vp, lo, hi)
        scores = mul(matmul(qh, transpose(kh)), inv_sqrt_hd)
        attn = softmax(scores)
        weights.append(attn)
        head_outs.append(matmul(attn, vh))

    merged = concat(head_outs, axis=1) if num_heads > 1 else head_outs[0]
    out = add(matmul(merged, params.wo), params.bo)
    if return_weights:
        return out, weights
    return out


def sinusoid_table(num_positions: int, dim: int) -> np.ndarray:
    """Fixed sinusoidal positional encodings: sin on even columns, cos on odd."""
    pos = np.arange(num_positions, dtype=np.float64)[:, None]
    i = np.arange((dim + 1) // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / dim)
    table = np.zeros((num_positions, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : dim // 2])
    return table


# -- backward pass ------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad tensor reachable from loss.

    loss must be scalar; calling backward twice on the same loss is
    rejected.  Gradients accumulate across separate losses (used for
    mini-batch accumulation), so callers zero them between steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise ContractError("backward called twice on the same loss")
    loss._consumed = True

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            # leaf: fold into the persistent gradient slot (accumulates
            # across losses, e.g. mini-batch accumulation)
            node.grad = g.copy() if node.grad is None else node.grad + g
        else:
            for parent, pg in zip(node._parents, node._vjp(g)):
                if not parent.requires_grad or pg is None:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None


def draw_gaussian(stream: RngStream, n: int, mean: float = 0.0, std: float = 1.0) -> Tensor:
    """n i.i.d. Gaussian samples as a constant tensor; advances the stream."""
    if std < 0:
        raise ContractError("draw_gaussian requires std >= 0")
    return Tensor(stream.normal((n,), mean=mean, std=std))
