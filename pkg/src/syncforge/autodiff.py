"""Minimal reverse-mode gradient engine over the toolkit's operation set.

Every value is a float64 numpy array wrapped in a Var. Operations build a
DAG of Vars; backward(loss) accumulates exact gradients into Var.grad.
A Var created by stop_gradient carries its input's value but blocks the
backward traversal, so nothing upstream of it receives gradient through
that edge. Only the operations used by the offset predictor and its
losses are provided; this is not a general-purpose autodiff.
"""

import math

import numpy as np

from . import sync as _k  # shared forward kernels
from . import correction as _c


class Var:
    """A value plus a same-shape gradient accumulator and graph links."""

    __slots__ = ("value", "grad", "parents", "_backward", "stop_gradient")

    def __init__(self, value, parents=(), backward=None, stop_gradient=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.parents = tuple(parents)
        self._backward = backward
        self.stop_gradient = stop_gradient

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, stop={self.stop_gradient})"


def stop_gradient(x):
    """A copy of x through which backward never propagates."""
    return Var(x.value, parents=(x,), stop_gradient=True)


def _toposort(root):
    order = []
    state = {}  # 0 in progress, 1 done
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            state[id(node)] = 1
            order.append(node)
            continue
        if id(node) in state:
            if state[id(node)] == 0:
                raise ValueError("cycle detected in computation graph")
            continue
        state[id(node)] = 0
        stack.append((node, True))
        if not node.stop_gradient:
            for p in node.parents:
                if id(p) not in state:
                    stack.append((p, False))
                elif state[id(p)] == 0:
                    raise ValueError("cycle detected in computation graph")
    return order


def backward(loss):
    """Accumulate dloss/dnode into node.grad for every reachable Var."""
    if loss.value.size != 1:
        raise ValueError("backward requires a scalar loss")
    order = _toposort(loss)
    loss.grad = loss.grad + np.ones_like(loss.value)
    for node in reversed(order):
        if node.stop_gradient or node._backward is None:
            continue
        node._backward(node.grad)


# ---------------------------------------------------------------------------
# operations

def add(a, b):
    out = Var(a.value + b.value, parents=(a, b))

    def _bw(g):
        a.grad += g
        b.grad += g
    out._backward = _bw
    return out


def scale(a, c):
    c = float(c)
    out = Var(a.value * c, parents=(a,))

    def _bw(g):
        a.grad += g * c
    out._backward = _bw
    return out


def vsum(a):
    out = Var(a.value.sum(), parents=(a,))

    def _bw(g):
        a.grad += np.full_like(a.value, float(g))
    out._backward = _bw
    return out


def matmul(a, b):
    out = Var(a.value @ b.value, parents=(a, b))

    def _bw(g):
        a.grad += g @ b.value.T
        b.grad += a.value.T @ g
    out._backward = _bw
    return out


def add_bias(x, b):
    """Row-wise bias add: (T, D) + (D,)."""
    out = Var(x.value + b.value[None, :], parents=(x, b))

    def _bw(g):
        x.grad += g
        b.grad += g.sum(axis=0)
    out._backward = _bw
    return out


def conv1d_same(x, w, b):
    """Same-padding convolution over time; w has shape (k, d_in, d_out), k in {1, 3}."""
    k = w.value.shape[0]
    if k not in (1, 3):
        raise ValueError("conv1d_same supports kernel sizes 1 and 3")
    out = Var(_k.conv1d_same(x.value, w.value, b.value), parents=(x, w, b))
    c = k // 2
    t = x.value.shape[0]

    def _bw(g):
        b.grad += g.sum(axis=0)
        for j in range(k):
            lo = max(0, c - j)
            hi = min(t, t + c - j)
            x.grad[lo + j - c:hi + j - c] += g[lo:hi] @ w.value[j].T
            w.grad[j] += x.value[lo + j - c:hi + j - c].T @ g[lo:hi]
    out._backward = _bw
    return out


def standardize_affine(x, scale_v, shift_v, eps=_k.NORM_EPS):
    xv = x.value
    mu = xv.mean(axis=0)
    var = ((xv - mu) ** 2).mean(axis=0)
    sdev = np.sqrt(var + eps)
    xhat = (xv - mu) / sdev
    out = Var(xhat * scale_v.value + shift_v.value, parents=(x, scale_v, shift_v))

    def _bw(g):
        shift_v.grad += g.sum(axis=0)
        scale_v.grad += (g * xhat).sum(axis=0)
        gx = g * scale_v.value
        x.grad += (gx - gx.mean(axis=0) - xhat * (gx * xhat).mean(axis=0)) / sdev
    out._backward = _bw
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x):
    xv = x.value
    t = np.tanh(_GELU_C * (xv + 0.044715 * xv ** 3))
    out = Var(0.5 * xv * (1.0 + t), parents=(x,))

    def _bw(g):
        d = 0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t ** 2) * _GELU_C * (1.0 + 3 * 0.044715 * xv ** 2)
        x.grad += g * d
    out._backward = _bw
    return out


def l2_normalize_rows(x, floor=_k.ROW_NORM_FLOOR):
    xv = x.value
    norms = np.sqrt((xv ** 2).sum(axis=1))
    live = norms >= floor
    safe = np.where(live, norms, 1.0)
    yv = xv / safe[:, None]
    yv[~live] = 0.0
    out = Var(yv, parents=(x,))

    def _bw(g):
        dots = (g * yv).sum(axis=1, keepdims=True)
        dx = (g - yv * dots) / safe[:, None]
        dx[~live] = 0.0
        x.grad += dx
    out._backward = _bw
    return out


def upsample_linear(x, factor=4):
    idx0, idx1, w1 = _k.upsample_positions(x.value.shape[0], factor)
    out = Var(x.value[idx0] * (1.0 - w1)[:, None] + x.value[idx1] * w1[:, None],
              parents=(x,))

    def _bw(g):
        np.add.at(x.grad, idx0, g * (1.0 - w1)[:, None])
        np.add.at(x.grad, idx1, g * w1[:, None])
    out._backward = _bw
    return out


def sync_correlate(v, u, mask, radius, normalized=True):
    """Masked sliding cross-correlation; returns a length 2*radius+1 Var."""
    mask = np.asarray(mask, dtype=np.float64)
    values, counts = _k.sync_values(v.value, u.value, mask, radius, normalized)
    out = Var(values, parents=(v, u))
    t = v.value.shape[0]
    vm = v.value * mask[:, None]
    um = u.value * mask[:, None]

    def _bw(g):
        for k in range(-radius, radius + 1):
            lo = max(0, k)
            hi = t + min(0, k)
            if hi <= lo:
                continue
            gk = g[k + radius]
            if normalized:
                cnt = counts[k + radius]
                if cnt <= 0:
                    continue
                gk = gk / cnt
            v.grad[lo:hi] += gk * um[lo - k:hi - k] * mask[lo:hi, None]
            u.grad[lo - k:hi - k] += gk * vm[lo:hi] * mask[lo - k:hi - k, None]
    out._backward = _bw
    return out


def softmax_temp(s, temperature):
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    p = _k.softmax_with_temperature(s.value, temperature)
    out = Var(p, parents=(s,))

    def _bw(g):
        s.grad += (g - float(g @ p)) * p / temperature
    out._backward = _bw
    return out


def soft_shift_mix(probs, frames):
    """Probability-weighted blend of delayed copies: the soft correction."""
    radius = (probs.value.shape[0] - 1) // 2
    out = Var(_c.soft_combine(probs.value, frames.value, radius), parents=(probs, frames))
    t = frames.value.shape[0]

    def _bw(g):
        for k in range(-radius, radius + 1):
            lo = max(0, k)
            hi = t + min(0, k)
            if hi <= lo:
                continue
            probs.grad[k + radius] += float(
                np.einsum("td,td->", g[lo:hi], frames.value[lo - k:hi - k]))
            frames.grad[lo - k:hi - k] += probs.value[k + radius] * g[lo:hi]
    out._backward = _bw
    return out


def masked_mse(pred, target, valid=None):
    """Mean squared error over valid frames, all channels."""
    if valid is None:
        valid = np.ones(pred.value.shape[0], dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    n = int(valid.sum())
    if n == 0:
        raise ValueError("no valid frames to compare")
    diff = (pred.value - target.value) * valid[:, None]
    denom = n * pred.value.shape[1]
    out = Var((diff * diff).sum() / denom, parents=(pred, target))

    def _bw(g):
        d = 2.0 * float(g) * diff / denom
        pred.grad += d
        target.grad -= d
    out._backward = _bw
    return out


def neg_log_at(p, index):
    """-log(p[index]); the self-synchronization loss uses index = radius."""
    val = p.value[index]
    out = Var(-np.log(val), parents=(p,))

    def _bw(g):
        p.grad[index] += -float(g) / val
    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# finite-difference verification

def fd_check(fn, params, h=1e-6):
    """Compare analytic gradients of fn against central finite differences.

    fn maps a dict of Vars (rebuilt on every call) to a scalar Var. Returns
    the maximum relative error over all coordinates, where the relative
    error divides by max(|analytic|, |numeric|, 1e-8).
    """
    center = {name: Var(v) for name, v in params.items()}
    loss = fn(center)
    backward(loss)
    analytic = {name: center[name].grad.copy() for name in params}

    worst = 0.0
    for name, base in params.items():
        flat = np.asarray(base, dtype=np.float64).ravel()
        for i in range(flat.size):
            bumped = {n: np.array(v, dtype=np.float64, copy=True) for n, v in params.items()}
            bumped[name].ravel()[i] = flat[i] + h
            up = fn({n: Var(v) for n, v in bumped.items()}).value
            bumped[name].ravel()[i] = flat[i] - h
            down = fn({n: Var(v) for n, v in bumped.items()}).value
            numeric = float(up - down) / (2.0 * h)
            a = analytic[name].ravel()[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
