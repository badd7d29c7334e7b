"""Dense float64 tensors with reverse-mode automatic differentiation.

Values live in numpy arrays (row-major). Each op records its inputs and a
vector-Jacobian product on a dynamic tape; ``Tensor.backward()`` replays the
tape from a scalar loss and accumulates gradients into ``.grad``. Everything
runs at 64-bit precision so gradient checks and acceptance tests are
deterministic.

Producing a NaN or Inf from any documented op raises ``FloatingPointError``
immediately rather than propagating silently.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .rng import Rng

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")


class Tensor:
    """N-dimensional float64 array with an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_inputs", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        # tape edges: ((parent, vjp), ...) where vjp maps d(out) -> d(parent)
        self._inputs: tuple = ()
        self._op = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(param) into .grad of every reachable tensor.

        Repeated calls keep accumulating until grads are zeroed.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        # gradients propagate through a per-pass map so that calling
        # backward() again re-derives (and accumulates) from scratch
        flowing: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flowing.pop(id(node))
            node.grad = _accum(node.grad, g)
            for parent, vjp in node._inputs:
                pg = vjp(g)
                key = id(parent)
                flowing[key] = pg if key not in flowing else flowing[key] + pg

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op})"

    # operator sugar; non-Tensor operands are wrapped as constants
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
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not an op; divide by scalars")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _accum(old: np.ndarray | None, new: np.ndarray) -> np.ndarray:
    return np.array(new, dtype=np.float64, copy=True) if old is None else old + new


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _node(data: np.ndarray, op: str, edges) -> Tensor:
    """Build the result tensor and record tape edges for parents that need grad."""
    out = Tensor(data)
    _check_finite(out.data, op)
    if _grad_enabled:
        live = tuple((p, vjp) for p, vjp in edges if p.requires_grad)
        if live:
            out.requires_grad = True
            out._inputs = live
            out._op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g over axes that were broadcast to reach the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    loss.backward()


# ---------------------------------------------------------------------------
# elementwise and shape ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _node(
        a.data + b.data,
        "add",
        ((a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(g, b.shape))),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _node(
        a.data - b.data,
        "sub",
        ((a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(-g, b.shape))),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _node(
        a.data * b.data,
        "mul",
        (
            (a, lambda g: _unbroadcast(g * b.data, a.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.shape)),
        ),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a: (..., n) or (..., m, n); b: 2-D (n, p)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.ndim != 2:
        raise ValueError(f"matmul rhs must be 2-D, got shape {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul dim mismatch: {a.shape} @ {b.shape}")

    def vjp_a(g):
        return g @ b.data.T

    def vjp_b(g):
        a2 = a.data.reshape(-1, a.shape[-1])
        g2 = g.reshape(-1, b.shape[1])
        return a2.T @ g2

    return _node(a.data @ b.data, "matmul", ((a, vjp_a), (b, vjp_b)))


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ValueError("transpose expects a 2-D tensor")
    return _node(a.data.T.copy(), "transpose", ((a, lambda g: g.T),))


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    return _node(a.data.reshape(shape), "reshape", ((a, lambda g: g.reshape(old)),))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        def vjp(g):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(idx)]

        return vjp

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _node(data, "concat", tuple((t, make_vjp(i)) for i, t in enumerate(tensors)))


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]

    def make_vjp(i):
        return lambda g: np.take(g, i, axis=axis)

    data = np.stack([t.data for t in tensors], axis=axis)
    return _node(data, "stack", tuple((t, make_vjp(i)) for i, t in enumerate(tensors)))


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    """a[..., start:stop] with gradient scattered back into place."""
    a = _as_tensor(a)

    def vjp(g):
        out = np.zeros(a.shape)
        out[..., start:stop] = g
        return out

    return _node(np.ascontiguousarray(a.data[..., start:stop]), "slice_last", ((a, vjp),))


def sum_(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _node(
        np.asarray(a.data.sum()), "sum", ((a, lambda g: np.broadcast_to(g, a.shape).copy()),)
    )


def mean_(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    n = a.size
    return _node(
        np.asarray(a.data.mean()),
        "mean",
        ((a, lambda g: np.broadcast_to(g / n, a.shape).copy()),),
    )


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at 0 is 0."""
    a = _as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), "relu", ((a, lambda g: g * mask),))


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    # split by sign to avoid overflow in exp
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _node(out, "sigmoid", ((a, lambda g: g * out * (1.0 - out)),))


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, "tanh", ((a, lambda g: g * (1.0 - out * out)),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted stable softmax along ``axis``."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return out * (g - (g * out).sum(axis=axis, keepdims=True))

    return _node(out, "softmax", ((a, vjp),))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def vjp(g):
        return g - np.exp(out) * g.sum(axis=axis, keepdims=True)

    return _node(out, "log_softmax", ((a, vjp),))


# ---------------------------------------------------------------------------
# linear algebra layers


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last dimension, broadcast over leading dims."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input dim {x.shape[-1]} != weight rows {weight.shape[0]}")
    out = matmul(x, weight)
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise ValueError(f"linear: bias shape {bias.shape} != ({weight.shape[1]},)")
        out = add(out, bias)
    return out


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup; gradient scatter-adds into the table."""
    table = _as_tensor(table)
    idx = np.asarray(ids, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range [0, {table.shape[0]})")

    def vjp(g):
        out = np.zeros(table.shape)
        np.add.at(out, idx, g)
        return out

    return _node(table.data[idx], "embedding", ((table, vjp),))


# ---------------------------------------------------------------------------
# temporal convolution


def _conv_time_core(x: Tensor, weight: Tensor, bias: Tensor, stride: int, padding: int) -> Tensor:
    """Shared conv kernel on rank-4 input (B, T, w, c_in); kernel spans time only."""
    k, c_in, c_out = weight.shape
    b_dim, t_in, w_dim, c = x.shape
    if c != c_in:
        raise ValueError(f"conv: input channels {c} != weight in-channels {c_in}")
    if bias.shape != (c_out,):
        raise ValueError(f"conv: bias shape {bias.shape} != ({c_out},)")
    if stride < 1 or padding < 0:
        raise ValueError("conv: stride must be >= 1 and padding >= 0")
    t_out = (t_in + 2 * padding - k) // stride + 1
    if t_out < 1:
        raise ValueError(f"conv: output length {t_out} < 1 (T={t_in}, k={k}, stride={stride})")

    xp = np.pad(x.data, ((0, 0), (padding, padding), (0, 0), (0, 0)))
    out = np.broadcast_to(bias.data, (b_dim, t_out, w_dim, c_out)).copy()
    segs = []
    for tap in range(k):
        seg = xp[:, tap : tap + stride * (t_out - 1) + 1 : stride]
        segs.append(seg)
        out += seg @ weight.data[tap]

    def vjp_x(g):
        gp = np.zeros_like(xp)
        for tap in range(k):
            gp[:, tap : tap + stride * (t_out - 1) + 1 : stride] += g @ weight.data[tap].T
        return gp[:, padding : padding + t_in] if padding else gp

    def vjp_w(g):
        gw = np.empty((k, c_in, c_out))
        g2 = g.reshape(-1, c_out)
        for tap in range(k):
            gw[tap] = segs[tap].reshape(-1, c_in).T @ g2
        return gw

    def vjp_b(g):
        return g.sum(axis=(0, 1, 2))

    return _node(out, "conv2d_time", ((x, vjp_x), (weight, vjp_w), (bias, vjp_b)))


def conv2d_time(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution over time with k x 1 kernels.

    x: (T, w, c_in); weight: (k, c_in, c_out); bias: (c_out,). Every output
    channel sums the k-tap temporal convolution over all input channels; the
    width axis is untouched, so the learnable weight count is k*c_in*c_out.
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.ndim != 3:
        raise ValueError(f"conv2d_time expects rank-3 input, got shape {x.shape}")
    if weight.ndim != 3:
        raise ValueError(f"conv2d_time expects (k, c_in, c_out) weight, got {weight.shape}")
    out = _conv_time_core(reshape(x, (1,) + x.shape), weight, bias, stride, padding)
    return reshape(out, out.shape[1:])


def conv2d_time_batch(
    x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0
) -> Tensor:
    """Batched variant of conv2d_time on (B, T, w, c_in)."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.ndim != 4:
        raise ValueError(f"conv2d_time_batch expects rank-4 input, got shape {x.shape}")
    return _conv_time_core(x, weight, bias, stride, padding)


# ---------------------------------------------------------------------------
# normalization


def layer_norm_example(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize one example over ALL of its dimensions (time included).

    gain and bias are scalars; eps guards the zero-variance case.
    """
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if gain.size != 1 or bias.size != 1:
        raise ValueError("layer_norm_example gain/bias must be scalars")
    mu = x.data.mean()
    var = x.data.var()
    inv = 1.0 / math.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    g0 = gain.data.reshape(())
    out = g0 * xhat + bias.data.reshape(())

    def vjp_x(g):
        gm = g.mean()
        gxm = (g * xhat).mean()
        return (g0 * inv) * (g - gm - xhat * gxm)

    def vjp_gain(g):
        return np.asarray((g * xhat).sum()).reshape(gain.shape)

    def vjp_bias(g):
        return np.asarray(g.sum()).reshape(bias.shape)

    return _node(out, "layer_norm_example", ((x, vjp_x), (gain, vjp_gain), (bias, vjp_bias)))


def layer_norm_masked(
    x: Tensor, gain: Tensor, bias: Tensor, mask: np.ndarray, eps: float = 1e-8
) -> Tensor:
    """Per-example layer norm for a padded batch (B, T, ...).

    mask: bool (B, T); statistics use valid frames only and padded frames are
    zeroed on output so they cannot leak into later layers.
    """
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    b, t = mask.shape
    if x.shape[:2] != (b, t):
        raise ValueError(f"mask shape {mask.shape} does not match input {x.shape}")
    trail = int(np.prod(x.shape[2:])) if x.ndim > 2 else 1
    m = mask.reshape((b, t) + (1,) * (x.ndim - 2)).astype(np.float64)
    n = mask.sum(axis=1).astype(np.float64) * trail  # valid elements per example
    if np.any(n < 1):
        raise ValueError("layer_norm_masked: every example needs at least one valid frame")
    nshape = (b,) + (1,) * (x.ndim - 1)
    n = n.reshape(nshape)
    axes = tuple(range(1, x.ndim))
    xm = x.data * m
    mu = xm.sum(axis=axes, keepdims=True) / n
    var = (((x.data - mu) ** 2) * m).sum(axis=axes, keepdims=True) / n
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv * m
    g0 = gain.data.reshape(())
    out = (g0 * xhat + bias.data.reshape(())) * m

    def vjp_x(g):
        gm_ = g * m
        gmean = gm_.sum(axis=axes, keepdims=True) / n
        gxmean = (gm_ * xhat).sum(axis=axes, keepdims=True) / n
        return (g0 * inv) * (gm_ - gmean - xhat * gxmean) * m

    def vjp_gain(g):
        return np.asarray((g * xhat).sum()).reshape(gain.shape)

    def vjp_bias(g):
        return np.asarray((g * m).sum()).reshape(bias.shape)

    return _node(out, "layer_norm_masked", ((x, vjp_x), (gain, vjp_gain), (bias, vjp_bias)))


# ---------------------------------------------------------------------------
# recurrence and regularization


@dataclass
class GRUParams:
    """Weights for one gated recurrent unit cell.

    Convention: h = (1 - z) * h_prev + z * cand, with the reset gate applied
    to h_prev before the candidate's recurrent matmul. Fixed here so saved
    checkpoints stay portable.
    """

    w_z: Tensor
    u_z: Tensor
    b_z: Tensor
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_h: Tensor
    u_h: Tensor
    b_h: Tensor

    def tensors(self) -> dict[str, Tensor]:
        return {name: getattr(self, name) for name in
                ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h")}


def gru_cell(x: Tensor, h_prev: Tensor, params: GRUParams) -> Tensor:
    """One GRU step; x: (n_in,) or (B, n_in), h_prev: (n_h,) or (B, n_h)."""
    x, h_prev = _as_tensor(x), _as_tensor(h_prev)
    if x.shape[-1] != params.w_z.shape[0] or h_prev.shape[-1] != params.u_z.shape[0]:
        raise ValueError(f"gru_cell shape mismatch: x {x.shape}, h {h_prev.shape}")
    z = sigmoid(add(add(matmul(x, params.w_z), matmul(h_prev, params.u_z)), params.b_z))
    r = sigmoid(add(add(matmul(x, params.w_r), matmul(h_prev, params.u_r)), params.b_r))
    cand = tanh(add(add(matmul(x, params.w_h), matmul(mul(r, h_prev), params.u_h)), params.b_h))
    return add(mul(sub(1.0, z), h_prev), mul(z, cand))


def dropout(x: Tensor, p: float, rng: Rng, training: bool) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p).

    Identity at inference or p == 0 (no rng draw, so streams stay aligned
    with the p=0 configuration).
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = _as_tensor(x)
    if not training or p == 0.0:
        return x
    keep = (rng.uniform(size=x.shape) >= p).astype(np.float64) / (1.0 - p)
    return mul(x, Tensor(keep))
