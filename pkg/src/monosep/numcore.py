"""Dense numerical substrate: layers with hand-written backward passes,
a Jacobi symmetric eigensolver and the Adam optimizer.

Tensors are plain :class:`numpy.ndarray` objects. Every layer caches what
its ``backward`` needs during ``forward``; a layer instance therefore
serves one forward/backward pair at a time.
"""

from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes disagree."""


class NumericError(ArithmeticError):
    """Raised on non-finite values or solver failure."""


def check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")
    return x


# ---------------------------------------------------------------------------
# functional convolution


def conv1d_forward(x, kernels, stride=1, dilation=1, padding=0):
    """Cross-correlate ``x`` (in, T) with ``kernels`` (out, in, k).

    Returns ``(out, cache)`` where ``out`` has shape (out, T') with
    ``T' = (T + 2*padding - dilation*(k-1) - 1) // stride + 1``.
    """
    x = np.asarray(x)
    kernels = np.asarray(kernels)
    if x.ndim != 2:
        raise DimensionError(f"input must be channels x time, got ndim={x.ndim}")
    if kernels.ndim != 3:
        raise DimensionError(f"kernels must be out x in x k, got ndim={kernels.ndim}")
    if kernels.shape[1] != x.shape[0]:
        raise DimensionError(
            f"axis 0 of input ({x.shape[0]}) != axis 1 of kernels ({kernels.shape[1]})"
        )
    k = kernels.shape[2]
    if k < 1 or stride < 1 or dilation < 1 or padding < 0:
        raise ValueError("need k >= 1, stride >= 1, dilation >= 1, padding >= 0")
    t_in = x.shape[1]
    span = dilation * (k - 1) + 1
    t_out = (t_in + 2 * padding - span) // stride + 1
    if t_out < 1:
        raise DimensionError(
            f"axis 1 of input ({t_in}) too short for window span {span} with padding {padding}"
        )
    xp = np.pad(x, ((0, 0), (padding, padding))) if padding else x
    cols = _gather(xp, k, stride, dilation, t_out)
    out = np.einsum("oik,ikt->ot", kernels, cols, optimize=True)
    cache = (cols, kernels, x.shape, stride, dilation, padding)
    return out, cache


def conv1d_backward(cache, upstream):
    """Gradients of :func:`conv1d_forward` w.r.t. input and kernels."""
    cols, kernels, in_shape, stride, dilation, padding = cache
    upstream = np.asarray(upstream)
    if upstream.shape != (kernels.shape[0], cols.shape[2]):
        raise DimensionError(
            f"upstream shape {upstream.shape} != forward output shape "
            f"{(kernels.shape[0], cols.shape[2])}"
        )
    grad_k = np.einsum("ot,ikt->oik", upstream, cols, optimize=True)
    grad_cols = np.einsum("oik,ot->ikt", kernels, upstream, optimize=True)
    t_pad = in_shape[1] + 2 * padding
    grad_xp = np.zeros((in_shape[0], t_pad), dtype=grad_cols.dtype)
    t_out = cols.shape[2]
    for j in range(kernels.shape[2]):
        start = j * dilation
        grad_xp[:, start : start + stride * (t_out - 1) + 1 : stride] += grad_cols[:, j, :]
    grad_x = grad_xp[:, padding : padding + in_shape[1]] if padding else grad_xp
    return grad_x, grad_k


def _gather(xp, k, stride, dilation, t_out):
    cols = np.empty((xp.shape[0], k, t_out), dtype=xp.dtype)
    for j in range(k):
        start = j * dilation
        cols[:, j, :] = xp[:, start : start + stride * (t_out - 1) + 1 : stride]
    return cols


# ---------------------------------------------------------------------------
# layers


class Layer:
    """Base class: ``params`` and ``grads`` are dicts of same-shaped arrays."""

    def __init__(self):
        self.params = {}
        self.grads = {}

    def zero_grad(self):
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)

    def _accumulate(self, name, g):
        if name in self.grads:
            self.grads[name] += g
        else:
            self.grads[name] = g.copy()


def uniform_init(rng, shape, fan_in, dtype=np.float32):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv1d(Layer):
    """Strided/dilated 1-D convolution without bias."""

    def __init__(self, kernels, stride=1, dilation=1, padding=0):
        super().__init__()
        self.params["w"] = kernels
        self.stride, self.dilation, self.padding = stride, dilation, padding

    def forward(self, x):
        out, self._cache = conv1d_forward(
            x, self.params["w"], self.stride, self.dilation, self.padding
        )
        return out

    def backward(self, g):
        gx, gw = conv1d_backward(self._cache, g)
        self._accumulate("w", gw)
        return gx


class Pointwise(Layer):
    """1x1 convolution, ``W @ x + b`` over a channels x time input."""

    def __init__(self, w, b=None):
        super().__init__()
        self.params["w"] = w
        if b is not None:
            self.params["b"] = b

    def forward(self, x):
        if x.shape[0] != self.params["w"].shape[1]:
            raise DimensionError(
                f"axis 0 of input ({x.shape[0]}) != fan-in ({self.params['w'].shape[1]})"
            )
        self._x = x
        out = self.params["w"] @ x
        if "b" in self.params:
            out = out + self.params["b"][:, None]
        return out

    def backward(self, g):
        self._accumulate("w", g @ self._x.T)
        if "b" in self.params:
            self._accumulate("b", g.sum(axis=1))
        return self.params["w"].T @ g


class DepthwiseConv(Layer):
    """Per-channel dilated convolution with symmetric zero "same" padding."""

    def __init__(self, w, b, dilation=1):
        super().__init__()
        if w.shape[1] % 2 != 1:
            raise ValueError("depthwise kernel size must be odd for same padding")
        self.params["w"] = w
        self.params["b"] = b
        self.dilation = dilation

    def forward(self, x):
        c, t = x.shape
        if c != self.params["w"].shape[0]:
            raise DimensionError(f"axis 0 of input ({c}) != channels ({self.params['w'].shape[0]})")
        k = self.params["w"].shape[1]
        pad = self.dilation * (k - 1) // 2
        xp = np.pad(x, ((0, 0), (pad, pad)))
        self._xp, self._pad = xp, pad
        w = self.params["w"]
        out = np.repeat(self.params["b"][:, None], t, axis=1).astype(x.dtype)
        for j in range(k):
            s = j * self.dilation
            out += w[:, j : j + 1] * xp[:, s : s + t]
        return out

    def backward(self, g):
        c, t = g.shape
        w, xp, pad = self.params["w"], self._xp, self._pad
        k = w.shape[1]
        gw = np.empty_like(w)
        gxp = np.zeros_like(xp)
        for j in range(k):
            s = j * self.dilation
            gw[:, j] = np.sum(g * xp[:, s : s + t], axis=1)
            gxp[:, s : s + t] += w[:, j : j + 1] * g
        self._accumulate("w", gw)
        self._accumulate("b", g.sum(axis=1))
        return gxp[:, pad : pad + t]


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, g):
        return g * self._mask


class Sigmoid(Layer):
    def forward(self, x):
        self._y = sigmoid(x)
        return self._y

    def backward(self, g):
        return g * self._y * (1 - self._y)


class Softmax(Layer):
    def __init__(self, axis=-1):
        super().__init__()
        self.axis = axis

    def forward(self, x):
        self._y = softmax(x, self.axis)
        return self._y

    def backward(self, g):
        y = self._y
        return y * (g - np.sum(g * y, axis=self.axis, keepdims=True))


class Mean(Layer):
    """Mean over one axis (the axis is removed)."""

    def __init__(self, axis=-1):
        super().__init__()
        self.axis = axis

    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=self.axis)

    def backward(self, g):
        n = self._shape[self.axis]
        g = np.expand_dims(g, self.axis)
        return np.broadcast_to(g / n, self._shape).copy()


class MatMul(Layer):
    """Parameter-free product ``a @ b`` of two 2-D inputs."""

    def forward(self, a, b):
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"axis 1 of a ({a.shape[1]}) != axis 0 of b ({b.shape[0]})")
        self._a, self._b = a, b
        return a @ b

    def backward(self, g):
        return g @ self._b.T, self._a.T @ g


class GlobalLayerNorm(Layer):
    """Normalize a channels x time map over both axes, then per-channel affine."""

    def __init__(self, gain, bias, eps=1e-8):
        super().__init__()
        self.params["gain"] = gain
        self.params["bias"] = bias
        self.eps = eps

    def forward(self, x):
        mu = x.mean()
        xc = x - mu
        var = np.mean(xc * xc)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv
        self._xhat, self._inv = xhat, inv
        return self.params["gain"][:, None] * xhat + self.params["bias"][:, None]

    def backward(self, g):
        xhat, inv = self._xhat, self._inv
        self._accumulate("gain", np.sum(g * xhat, axis=1))
        self._accumulate("bias", g.sum(axis=1))
        gx_hat = g * self.params["gain"][:, None]
        return inv * (gx_hat - gx_hat.mean() - xhat * np.mean(gx_hat * xhat))


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


# ---------------------------------------------------------------------------
# eigendecomposition


def sym_eig(a, tol=1e-12, max_sweeps=100):
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Pairs are visited in round-robin (tournament) order so each round
    rotates n/2 disjoint planes at once. Returns eigenvalues sorted
    descending and the matching orthonormal eigenvectors as columns.
    Convergence: off-diagonal Frobenius norm <= ``tol * ||A||_F``.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    check_finite(a, "sym_eig input")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if scale == 0.0 or n == 1:
        return _sorted_pairs(np.diag(a).copy(), v)
    rounds = _tournament(n)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= tol * scale:
            return _sorted_pairs(np.diag(a).copy(), v)
        for p, q in rounds:
            apq = a[p, q]
            live = np.abs(apq) > 1e-300
            if not np.any(live):
                continue
            p, q, apq = p[live], q[live], apq[live]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            sgn = np.where(theta >= 0, 1.0, -1.0)
            # huge theta overflows to t = 0, the correct limit
            with np.errstate(over="ignore"):
                t = sgn / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            j = np.eye(n)
            j[p, p] = c
            j[q, q] = c
            j[p, q] = s
            j[q, p] = -s
            a = j.T @ a @ j
            a[p, q] = 0.0
            a[q, p] = 0.0
            v = v @ j
    raise NumericError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")


def _tournament(n):
    """Round-robin schedule covering every index pair once per sweep."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            x, y = players[i], players[m - 1 - i]
            if x < n and y < n:
                ps.append(min(x, y))
                qs.append(max(x, y))
        rounds.append((np.array(ps), np.array(qs)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _sorted_pairs(w, v):
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with bias correction over a dict of named parameter arrays.

    Parameters are updated in place so layers holding references see the
    new values.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p) for k, p in params.items()}
        self.v = {k: np.zeros_like(p) for k, p in params.items()}

    def step(self, grads):
        for name, g in grads.items():
            if name not in self.params:
                raise KeyError(f"gradient for unknown parameter {name!r}")
            if g.shape != self.params[name].shape:
                raise DimensionError(
                    f"gradient shape {g.shape} != parameter shape {self.params[name].shape} for {name!r}"
                )
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for name, g in grads.items():
            p = self.params[name]
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)

    def state_dict(self):
        out = {"adam.step": np.array([self.step_count], dtype=np.int64)}
        for k in self.params:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state_dict(self, state):
        self.step_count = int(state["adam.step"][0])
        for k in self.params:
            self.m[k][...] = state[f"adam.m.{k}"]
            self.v[k][...] = state[f"adam.v.{k}"]


def adam_step(state, params, grads):
    """Functional form: advance ``state`` (an :class:`Adam`) by one step."""
    if state.params is not params:
        raise ValueError("Adam state is bound to a different parameter dict")
    state.step(grads)
    return params


def clip_grad_norm(grads, max_norm):
    total = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return total


# ---------------------------------------------------------------------------
# finite-difference checking


def numeric_grad(f, x, h=1e-4, index=None):
    """Central-difference gradient of scalar ``f()`` w.r.t. entries of ``x``.

    ``x`` is perturbed in place and restored. ``index`` selects flat entries
    to probe; default is all of them.
    """
    flat = x.reshape(-1)
    idx = range(flat.size) if index is None else index
    out = np.zeros(len(idx) if index is not None else flat.size)
    for i, j in enumerate(idx):
        old = flat[j]
        flat[j] = old + h
        fp = f()
        flat[j] = old - h
        fm = f()
        flat[j] = old
        out[i] = (fp - fm) / (2 * h)
    return out


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-30)
    return float(np.linalg.norm(a - b) / denom)
