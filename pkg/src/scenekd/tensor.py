"""Dense float32 tensors with reverse-mode automatic differentiation.

Ops record themselves on an implicit tape (a per-output backward closure plus
a global execution index); ``backward(loss)`` replays the closures in exact
reverse execution order. Forward math lives in plain ``*_forward`` functions
that follow the dtype of their inputs, so tests can re-execute them in
float64 for finite-difference oracles while the tape itself stays float32.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_op_counter = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (eval / export paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense float32 array, optionally participating in the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "_op_index", "_done")

    def __init__(self, data, requires_grad=False):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float32))
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._prev = ()
        self._backward = None
        self._op_index = None
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False)

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _record(out, parents, backward_fn):
    """Attach a backward closure to ``out`` if recording is active."""
    if not _grad_enabled:
        return out
    grad_parents = tuple(p for p in parents if p.requires_grad)
    if not grad_parents:
        return out
    out.requires_grad = True
    out._prev = grad_parents
    out._backward = backward_fn
    out._op_index = next(_op_counter)
    return out


def _accum(t, g):
    if t.grad is None:
        t.grad = g.astype(np.float32, copy=False)
    else:
        t.grad = t.grad + g


def backward(loss):
    """Populate ``grad`` on every requires_grad leaf that influences ``loss``.

    ``loss`` must be a scalar produced by a taped op. Calling this twice on
    the same loss without rebuilding the graph is an error.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.data.shape}")
    if loss._backward is None:
        raise ValueError("backward() on a detached loss: no op produced it on the tape")
    if loss._done:
        raise RuntimeError("backward() already called on this loss; rebuild the graph first")

    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._backward is not None:
            nodes.append(t)
        stack.extend(t._prev)
    # execution order is a topological order, so its exact reverse is valid
    nodes.sort(key=lambda t: t._op_index, reverse=True)

    loss.grad = np.ones_like(loss.data)
    for t in nodes:
        if t.grad is not None:
            t._backward(t.grad)
    loss._done = True


def assert_finite(data, context):
    """Raise if ``data`` contains NaN/Inf; guards checkpoints and loss values."""
    arr = data.data if isinstance(data, Tensor) else data
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite values in {context}")


# ---------------------------------------------------------------------------
# raw forward kernels (dtype-generic, used by ops and by float64 FD oracles)
# ---------------------------------------------------------------------------

def _pair(v):
    return (v, v) if np.isscalar(v) else tuple(v)


def conv2d_forward(x, w, b=None, stride=1, padding=0, groups=1):
    """Cross-correlation of [N,C,F,T] with [O,C/groups,kF,kT] kernels."""
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and weight, got {x.shape} and {w.shape}")
    n, c, f, t = x.shape
    o, cpg, kf, kt = w.shape
    sf, st = _pair(stride)
    pf, pt = _pair(padding)
    if c % groups or o % groups:
        raise ValueError(f"channels ({c} in, {o} out) not divisible by groups={groups}")
    if cpg != c // groups:
        raise ValueError(
            f"weight expects {cpg} channels/group but input has {c // groups} ({c} over {groups} groups)")
    fo = (f + 2 * pf - kf) // sf + 1
    to = (t + 2 * pt - kt) // st + 1
    if fo <= 0 or to <= 0:
        raise ValueError(
            f"conv2d output would be {fo}x{to} for input {f}x{t}, kernel {kf}x{kt}, "
            f"stride ({sf},{st}), padding ({pf},{pt})")

    if groups > 1 and not (groups == c and o == c and cpg == 1):
        cg, og = c // groups, o // groups
        parts = [
            conv2d_forward(x[:, g * cg:(g + 1) * cg], w[g * og:(g + 1) * og],
                           None, (sf, st), (pf, pt), 1)
            for g in range(groups)
        ]
        out = np.concatenate(parts, axis=1)
        if b is not None:
            out = out + b.reshape(1, o, 1, 1)
        return out

    xp = np.pad(x, ((0, 0), (0, 0), (pf, pf), (pt, pt))) if (pf or pt) else x

    if groups == c and o == c:  # depthwise: accumulate per kernel position
        out = np.zeros((n, c, fo, to), dtype=x.dtype)
        for i in range(kf):
            for j in range(kt):
                out += xp[:, :, i:i + sf * fo:sf, j:j + st * to:st] \
                    * w[:, 0, i, j].reshape(1, c, 1, 1)
    elif kf == 1 and kt == 1:
        xs = xp[:, :, ::sf, ::st]
        out = np.matmul(w[:, :, 0, 0], xs.reshape(n, c, fo * to)).reshape(n, o, fo, to)
    else:
        win = sliding_window_view(xp, (kf, kt), axis=(2, 3))[:, :, ::sf, ::st]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * fo * to, c * kf * kt)
        out = (cols @ w.reshape(o, -1).T).reshape(n, fo, to, o).transpose(0, 3, 1, 2)

    if b is not None:
        out = out + b.reshape(1, o, 1, 1)
    return np.ascontiguousarray(out)


def batch_norm_forward(x, gamma, beta, mean, var, eps=1e-5):
    """Normalize [N,C,F,T] with the given per-channel statistics."""
    istd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(1, -1, 1, 1)) * istd.reshape(1, -1, 1, 1)
    return gamma.reshape(1, -1, 1, 1) * xhat + beta.reshape(1, -1, 1, 1)


def batch_norm_train_forward(x, gamma, beta, eps=1e-5):
    """Training-mode batch norm: statistics computed from the batch itself."""
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    return batch_norm_forward(x, gamma, beta, mean, var, eps)


def relu_forward(x):
    return np.maximum(x, 0)


def linear_forward(x, w, b=None):
    """[N,in] @ [out,in]^T (+ bias)."""
    out = x @ w.T
    if b is not None:
        out = out + b
    return out


def global_avg_pool_forward(x):
    if x.ndim != 4:
        raise ValueError(f"global_avg_pool expects [N,C,F,T], got {x.shape}")
    return x.mean(axis=(2, 3))


def softmax_t_forward(z, tau):
    """Temperature softmax over the last axis, max-subtracted for stability."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    zt = z / tau
    zt = zt - zt.max(axis=-1, keepdims=True)
    e = np.exp(zt)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# taped ops
# ---------------------------------------------------------------------------

def conv2d(x, w, b=None, stride=1, padding=0, groups=1):
    """2-d cross-correlation; depthwise when groups == in channels."""
    bias = b.data if b is not None else None
    out = Tensor(conv2d_forward(x.data, w.data, bias, stride, padding, groups))
    n, c, f, t = x.data.shape
    o, cpg, kf, kt = w.data.shape
    sf, st = _pair(stride)
    pf, pt = _pair(padding)
    _, _, fo, to = out.data.shape

    def back(g):
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=(0, 2, 3)))
        if groups > 1 and not (groups == c and o == c and cpg == 1):
            cg, og = c // groups, o // groups
            if w.requires_grad:
                dw = np.empty_like(w.data)
            if x.requires_grad:
                dx = np.empty_like(x.data)
            for gi in range(groups):
                xs = x.data[:, gi * cg:(gi + 1) * cg]
                ws = w.data[gi * og:(gi + 1) * og]
                gs = g[:, gi * og:(gi + 1) * og]
                dxg, dwg = _conv2d_grads(xs, ws, gs, (sf, st), (pf, pt),
                                         x.requires_grad, w.requires_grad)
                if w.requires_grad:
                    dw[gi * og:(gi + 1) * og] = dwg
                if x.requires_grad:
                    dx[:, gi * cg:(gi + 1) * cg] = dxg
            if w.requires_grad:
                _accum(w, dw)
            if x.requires_grad:
                _accum(x, dx)
        else:
            dx, dw = _conv2d_grads(x.data, w.data, g, (sf, st), (pf, pt),
                                   x.requires_grad, w.requires_grad)
            if w.requires_grad:
                _accum(w, dw)
            if x.requires_grad:
                _accum(x, dx)

    parents = (x, w) if b is None else (x, w, b)
    return _record(out, parents, back)


def _conv2d_grads(x, w, g, stride, padding, need_dx, need_dw):
    """Input/weight gradients for a groups==1 or depthwise convolution."""
    n, c, f, t = x.shape
    o, cpg, kf, kt = w.shape
    sf, st = stride
    pf, pt = padding
    _, _, fo, to = g.shape
    depthwise = (cpg == 1 and o == c and c > 1)
    xp = np.pad(x, ((0, 0), (0, 0), (pf, pf), (pt, pt))) if (pf or pt) else x

    dw = np.zeros_like(w) if need_dw else None
    dxp = np.zeros_like(xp) if need_dx else None
    g2 = g.reshape(n, o, fo * to)
    for i in range(kf):
        for j in range(kt):
            xs = xp[:, :, i:i + sf * fo:sf, j:j + st * to:st]
            if need_dw:
                if depthwise:
                    dw[:, 0, i, j] = (g * xs).sum(axis=(0, 2, 3))
                else:
                    dw[:, :, i, j] = np.tensordot(g, xs, axes=([0, 2, 3], [0, 2, 3]))
            if need_dx:
                if depthwise:
                    dxp[:, :, i:i + sf * fo:sf, j:j + st * to:st] += \
                        g * w[:, 0, i, j].reshape(1, c, 1, 1)
                else:
                    dxs = np.matmul(w[:, :, i, j].T, g2).reshape(n, c, fo, to)
                    dxp[:, :, i:i + sf * fo:sf, j:j + st * to:st] += dxs
    dx = None
    if need_dx:
        dx = dxp[:, :, pf:pf + f, pt:pt + t] if (pf or pt) else dxp
    return dx, dw


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=0.1, eps=1e-5):
    """Batch normalization over (N,F,T) per channel.

    Training mode normalizes by batch statistics and updates the running
    buffers in place by exponential moving average; eval mode uses the
    running buffers. ``running_mean``/``running_var`` are plain arrays.
    """
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ValueError(
            f"batch_norm affine params must have shape ({c},), got "
            f"{gamma.data.shape} and {beta.data.shape}")

    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean, var = running_mean, running_var

    istd = (1.0 / np.sqrt(var + eps)).astype(np.float32)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * istd.reshape(1, c, 1, 1)
    out = Tensor(gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1))

    def back(g):
        if beta.requires_grad:
            _accum(beta, g.sum(axis=(0, 2, 3)))
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gg = g * gamma.data.reshape(1, c, 1, 1)
            if training:
                m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
                s1 = gg.sum(axis=(0, 2, 3), keepdims=True)
                s2 = (gg * xhat).sum(axis=(0, 2, 3), keepdims=True)
                dx = (istd.reshape(1, c, 1, 1) / m) * (m * gg - s1 - xhat * s2)
            else:
                dx = gg * istd.reshape(1, c, 1, 1)
            _accum(x, dx)

    return _record(out, (x, gamma, beta), back)


def relu(x):
    out = Tensor(relu_forward(x.data))
    mask = x.data > 0

    def back(g):
        _accum(x, g * mask)

    return _record(out, (x,), back)


def linear(x, w, b=None):
    """Affine map of [N,in] rows by a [out,in] weight."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ValueError(f"linear shape mismatch: input {x.data.shape}, weight {w.data.shape}")
    out = Tensor(linear_forward(x.data, w.data, b.data if b is not None else None))

    def back(g):
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=0))
        if w.requires_grad:
            _accum(w, g.T @ x.data)
        if x.requires_grad:
            _accum(x, g @ w.data)

    parents = (x, w) if b is None else (x, w, b)
    return _record(out, parents, back)


def global_avg_pool(x):
    """[N,C,F,T] -> [N,C] mean over the spatial axes."""
    out = Tensor(global_avg_pool_forward(x.data))
    n, c, f, t = x.data.shape

    def back(g):
        _accum(x, np.broadcast_to(g.reshape(n, c, 1, 1) / (f * t), x.data.shape))

    return _record(out, (x,), back)


def add(a, b):
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data)

    def back(g):
        if a.requires_grad:
            _accum(a, g)
        if b.requires_grad:
            _accum(b, g)

    return _record(out, (a, b), back)


def mul(a, b):
    """Elementwise product; ``b`` may be a Tensor of the same shape or a scalar."""
    if isinstance(b, Tensor):
        if a.data.shape != b.data.shape:
            raise ValueError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
        out = Tensor(a.data * b.data)

        def back(g):
            if a.requires_grad:
                _accum(a, g * b.data)
            if b.requires_grad:
                _accum(b, g * a.data)

        return _record(out, (a, b), back)

    s = float(b)
    out = Tensor(a.data * s)

    def back_s(g):
        _accum(a, g * s)

    return _record(out, (a,), back_s)


def tsum(x):
    """Sum of all elements, as a scalar tensor."""
    out = Tensor(x.data.sum())

    def back(g):
        _accum(x, np.broadcast_to(g, x.data.shape))

    return _record(out, (x,), back)


def softmax_t(logits, tau=1.0):
    """Row-wise temperature softmax of [N,K] logits."""
    p = softmax_t_forward(logits.data, tau)
    out = Tensor(p)

    def back(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        _accum(logits, p * (g - dot) / tau)

    return _record(out, (logits,), back)
