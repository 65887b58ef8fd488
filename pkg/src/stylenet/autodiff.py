"""Minimal reverse-mode differentiable tensor engine.

Supplies exactly the primitives the network needs: elementwise arithmetic,
batched matmul, 2D convolution over (N, C, T, V) maps, batch normalization,
softmax, relu, dropout, fully-connected layers and a finite-difference
gradient checker. Backed by numpy; no broadcasting beyond what these ops use.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """Value node in a dynamically built computation graph."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype if dtype is not None else None)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Reverse-mode sweep from a scalar; gradients accumulate additively."""
        if self.data.size != 1:
            raise ValueError("backward requires a scalar tensor")
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        self._accumulate(np.ones_like(self.data))
        for t in reversed(topo):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Trainable tensor with a unique name; may opt out of weight decay."""

    def __init__(self, data, name: str, weight_decay_exempt: bool = False, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.weight_decay_exempt = weight_decay_exempt

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def _as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _needs_grad(*ts):
    return any(t.requires_grad for t in ts)


def _make(data, parents, backward, requires_grad):
    out = Tensor(data, requires_grad=requires_grad)
    if requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Reduce a broadcasted gradient back to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise --------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    rg = _needs_grad(a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw, rg)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a._accumulate(-g)

    return _make(-a.data, (a,), bw, a.requires_grad)


def mul(a: Tensor, b: Tensor) -> Tensor:
    rg = _needs_grad(a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw, rg)


def square(a: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a._accumulate(2.0 * a.data * g)

    return _make(a.data * a.data, (a,), bw, a.requires_grad)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bw(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg, a.shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw, a.requires_grad)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), _as_tensor(np.asarray(1.0 / n, dtype=a.dtype)))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape

    def bw(g):
        if a.requires_grad:
            a._accumulate(g.reshape(old))

    return _make(a.data.reshape(shape), (a,), bw, a.requires_grad)


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), bw, a.requires_grad)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return _make(a.data * mask, (a,), bw, a.requires_grad)


def dropout(a: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-p); identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        def bw_id(g):
            if a.requires_grad:
                a._accumulate(g)

        return _make(a.data.copy(), (a,), bw_id, a.requires_grad)
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(a.shape) >= p).astype(a.dtype) / (1.0 - p)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return _make(a.data * mask, (a,), bw, a.requires_grad)


# -- contractions -------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """np.matmul semantics: contraction over the last/second-last dims, batched."""
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    rg = _needs_grad(a, b)

    def bw(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.shape))

    return _make(np.matmul(a.data, b.data), (a, b), bw, rg)


def fully_connected(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w.T + b over the last dimension."""
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"fc shape mismatch: x {x.shape} vs w {w.shape}")
    rg = _needs_grad(x, w, b)
    out_data = x.data @ w.data.T + b.data

    def bw(g):
        if x.requires_grad:
            x._accumulate(g @ w.data)
        if w.requires_grad:
            gf = g.reshape(-1, g.shape[-1])
            xf = x.data.reshape(-1, x.shape[-1])
            w._accumulate(gf.T @ xf)
        if b.requires_grad:
            b._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _make(out_data, (x, w, b), bw, rg)


def conv2d(x: Tensor, w: Tensor, stride_t: int = 1, pad_t: int = 0) -> Tensor:
    """Cross-correlation of an (N, C, T, V) map with a (Cout, Cin, kt, kv) kernel.

    Stride and zero padding apply to the temporal axis only; the vertex axis is
    convolved valid (kernels here are kt x 1 in practice).
    """
    n, c, t, v = x.shape
    cout, cin, kt, kv = w.shape
    if c != cin:
        raise ValueError(f"conv2d channel mismatch: input {c} vs kernel {cin}")
    if kt % 2 != 1:
        raise ValueError("temporal kernel extent must be odd")
    t_out = (t + 2 * pad_t - kt) // stride_t + 1
    v_out = v - kv + 1
    if t_out < 1 or v_out < 1:
        raise ValueError("conv2d output would be empty")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad_t, pad_t), (0, 0))) if pad_t else x.data
    out = np.zeros((n, cout, t_out, v_out), dtype=x.dtype)
    for i in range(kt):
        for j in range(kv):
            seg = xp[:, :, i : i + stride_t * t_out : stride_t, j : j + v_out]
            out += np.tensordot(w.data[:, :, i, j], seg, axes=([1], [1])).transpose(1, 0, 2, 3)
    rg = _needs_grad(x, w)

    def bw(g):
        if w.requires_grad:
            gw = np.zeros_like(w.data)
            for i in range(kt):
                for j in range(kv):
                    seg = xp[:, :, i : i + stride_t * t_out : stride_t, j : j + v_out]
                    gw[:, :, i, j] = np.tensordot(g, seg, axes=([0, 2, 3], [0, 2, 3]))
            w._accumulate(gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kt):
                for j in range(kv):
                    contrib = np.tensordot(w.data[:, :, i, j], g, axes=([0], [1])).transpose(1, 0, 2, 3)
                    gxp[:, :, i : i + stride_t * t_out : stride_t, j : j + v_out] += contrib
            x._accumulate(gxp[:, :, pad_t : pad_t + t, :] if pad_t else gxp)

    return _make(out, (x, w), bw, rg)


# -- normalization / activation ----------------------------------------

class BatchNormState:
    """Running mean/var buffers for one batch-norm site."""

    def __init__(self, num_features: int, dtype=np.float64):
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    axis: int = 1,
) -> Tensor:
    """Normalize per channel over every other axis; track running stats.

    Works for (N, C, T, V) maps (axis=1) and flat (M, F) activations (axis=1
    with x 2-D). Running variance stores the biased batch variance.
    """
    c = x.shape[axis]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError("batch_norm affine parameter shape mismatch")
    red = tuple(i for i in range(x.data.ndim) if i != axis)
    bshape = [1] * x.data.ndim
    bshape[axis] = c
    if training:
        mu = x.data.mean(axis=red)
        var = x.data.var(axis=red)
        state.running_mean += momentum * (mu - state.running_mean)
        state.running_var += momentum * (var - state.running_var)
    else:
        mu = state.running_mean.astype(x.dtype)
        var = state.running_var.astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)
    rg = _needs_grad(x, gamma, beta)

    def bw(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=red))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=red))
        if x.requires_grad:
            gs = gamma.data.reshape(bshape) * g
            if training:
                gmean = gs.mean(axis=red).reshape(bshape)
                gdot = (gs * xhat).mean(axis=red).reshape(bshape)
                gx = inv_std.reshape(bshape) * (gs - gmean - xhat * gdot)
            else:
                gx = inv_std.reshape(bshape) * gs
            x._accumulate(gx)

    return _make(out, (x, gamma, beta), bw, rg)


def softmax_axis(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along one axis; slices sum to 1."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        if x.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True)
            x._accumulate(y * (g - dot))

    return _make(y, (x,), bw, x.requires_grad)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log softmax probability of the true class."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels must have shape ({n},)")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError("label out of range")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(n), labels].mean()

    def bw(g):
        if logits.requires_grad:
            grad = np.exp(logp)
            grad[np.arange(n), labels] -= 1.0
            logits._accumulate(g * grad / n)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), bw, logits.requires_grad)


def backward(loss: Tensor):
    loss.backward()


# -- verification -------------------------------------------------------

def grad_check(f, x: Tensor, eps: float = 1e-5, indices=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps the tensor to a scalar Tensor. ``indices`` optionally restricts
    the finite-difference probe to a subset of flat coordinates (the analytic
    gradient is always full).
    """
    x.requires_grad = True
    x.zero_grad()
    out = f(x)
    out.backward()
    analytic = x.grad.reshape(-1).copy()
    flat = x.data.reshape(-1)
    probe = range(flat.size) if indices is None else indices
    worst = 0.0
    for i in probe:
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x).data)
        flat[i] = orig - eps
        fm = float(f(x).data)
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * eps)
        denom = max(abs(analytic[i]), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst


def grad_check_multi(
    f,
    tensors,
    eps: float = 1e-5,
    max_coords: int = 8,
    rng=None,
    min_grad: float = 1e-6,
) -> float:
    """Gradient check of a scalar function against several tensors at once.

    Probes at most ``max_coords`` random coordinates per tensor among those
    with meaningful analytic gradient, which keeps whole-network checks
    tractable. Coordinates whose one-sided difference quotients disagree are
    skipped: there the probe straddles a relu kink and central differences
    measure nothing (same policy as excluding relu's point of
    non-differentiability).
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.requires_grad = True
        t.zero_grad()
    f0 = float(f().data)
    for t in tensors:
        t.zero_grad()
    f().backward()
    grads = [
        (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1).copy()
        for t in tensors
    ]
    worst = 0.0
    for t, analytic in zip(tensors, grads):
        flat = t.data.reshape(-1)
        candidates = np.flatnonzero(np.abs(analytic) > min_grad)
        if candidates.size == 0:
            continue
        k = min(max_coords, candidates.size)
        idx = rng.choice(candidates, size=k, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f().data)
            flat[i] = orig - eps
            fm = float(f().data)
            flat[i] = orig + 0.5 * eps
            fp2 = float(f().data)
            flat[i] = orig - 0.5 * eps
            fm2 = float(f().data)
            flat[i] = orig
            slope_p = (fp2 - f0) / (0.5 * eps)
            slope_m = (f0 - fm2) / (0.5 * eps)
            numeric = (fp - fm) / (2.0 * eps)
            refined = (fp2 - fm2) / eps
            # the analytic gradient is compared against the half-step central
            # difference; a kink inside that probe interval shows up as
            # one-sided difference quotients that disagree, and a kink just
            # outside it as a central difference that moves between step
            # sizes. smooth coordinates change by O(eps^2) only.
            if abs(slope_p - slope_m) > 0.002 * max(abs(slope_p), abs(slope_m), 1e-8):
                continue
            if abs(numeric - refined) > 0.002 * max(abs(numeric), abs(refined), 1e-8):
                continue
            denom = max(abs(analytic[i]), abs(refined), 1e-8)
            worst = max(worst, abs(analytic[i] - refined) / denom)
    return worst
