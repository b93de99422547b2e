"""Layers with hand-written backward passes.

Activations inside the convolutional stage are kept feature-major,
``(depth, channels, batch, time)``, so that every heavy product is a single
matrix multiply on contiguous memory. Each layer caches what its backward
pass needs during ``forward`` and consumes it in ``backward``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    params: dict
    grads: dict

    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x, train=True):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError


class TemporalConv(Layer):
    """Valid 1-D convolution along time, shared across EEG channels.

    Input ``(C, B, T)``, output ``(D, C, B, T - K + 1)``. Implemented as
    cross-correlation, as is usual for learned filters.
    """

    def __init__(self, weight, bias, input_grad=False):
        super().__init__()
        self.params = {"weight": weight, "bias": bias}
        self.input_grad = input_grad

    def forward(self, x, train=True):
        w = self.params["weight"]
        d, k = w.shape
        c, b, t = x.shape
        length = t - k + 1
        win = np.ascontiguousarray(sliding_window_view(x, k, axis=2)).reshape(-1, k)
        self._cache = (win, x.shape)
        out = w @ win.T
        out += self.params["bias"][:, None]
        return out.reshape(d, c, b, length)

    def backward(self, g):
        win, xshape = self._cache
        d = g.shape[0]
        g2 = g.reshape(d, -1)
        self.grads = {"weight": g2 @ win, "bias": g2.sum(axis=1)}
        if not self.input_grad:
            return None
        k = self.params["weight"].shape[1]
        gwin = (g2.T @ self.params["weight"]).reshape(xshape[:2] + (-1, k))
        gx = np.zeros(xshape, dtype=g.dtype)
        length = gwin.shape[2]
        for j in range(k):
            gx[:, :, j:j + length] += gwin[:, :, :, j]
        return gx


class SpatialConv(Layer):
    """Convolution across all channels at once (kernel = channel count).

    Input ``(D_in, C, B, L)``, output ``(D_out, 1, B, L)``; weight
    ``(D_out, D_in, C)``.
    """

    def __init__(self, weight, bias):
        super().__init__()
        self.params = {"weight": weight, "bias": bias}

    def forward(self, x, train=True):
        w = self.params["weight"]
        o = w.shape[0]
        di, c, b, length = x.shape
        if w.shape[1:] != (di, c):
            raise ValueError(f"spatial kernel {w.shape[1:]} does not match input {(di, c)}")
        flat = x.reshape(di * c, b * length)
        self._cache = (flat, x.shape)
        out = w.reshape(o, -1) @ flat
        out += self.params["bias"][:, None]
        return out.reshape(o, 1, b, length)

    def backward(self, g):
        flat, xshape = self._cache
        w = self.params["weight"]
        o = w.shape[0]
        g2 = g.reshape(o, -1)
        self.grads = {"weight": (g2 @ flat.T).reshape(w.shape), "bias": g2.sum(axis=1)}
        return (w.reshape(o, -1).T @ g2).reshape(xshape)


class BatchNorm(Layer):
    """Per-feature normalisation over every axis but the first."""

    def __init__(self, scale, shift, running_mean, running_var, momentum=0.1, eps=1e-5):
        super().__init__()
        self.params = {"scale": scale, "shift": shift}
        self.running_mean = running_mean
        self.running_var = running_var
        self.momentum = momentum
        self.eps = eps

    def forward(self, x, train=True):
        shape = x.shape
        x2 = x.reshape(shape[0], -1)
        m = x2.shape[1]
        if train:
            mean = x2.mean(axis=1)
            xc = x2 - mean[:, None]
            var = np.einsum("ij,ij->i", xc, xc) / m
            if m > 1:
                mom = self.momentum
                self.running_mean *= 1 - mom
                self.running_mean += mom * mean
                self.running_var *= 1 - mom
                self.running_var += mom * var * (m / (m - 1))
        else:
            mean, var = self.running_mean, self.running_var
            xc = x2 - mean[:, None]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv[:, None].astype(x.dtype, copy=False)
        self._cache = (xhat, inv, train)
        out = xhat * self.params["scale"][:, None] + self.params["shift"][:, None]
        return out.reshape(shape)

    def backward(self, g):
        xhat, inv, train = self._cache
        shape = g.shape
        g2 = g.reshape(shape[0], -1)
        self.grads = {
            "shift": g2.sum(axis=1),
            "scale": np.einsum("ij,ij->i", g2, xhat),
        }
        gx = g2 * self.params["scale"][:, None]
        if train:
            m = g2.shape[1]
            gmean = gx.mean(axis=1)
            proj = np.einsum("ij,ij->i", gx, xhat) / m
            gx = gx - gmean[:, None] - xhat * proj[:, None]
        gx = gx * inv[:, None].astype(g.dtype, copy=False)
        return gx.reshape(shape)


class Elu(Layer):
    def __init__(self, alpha=1.0):
        super().__init__()
        self.alpha = alpha

    def forward(self, x, train=True):
        neg = np.expm1(np.minimum(x, 0))
        neg *= self.alpha
        out = np.maximum(x, 0)
        out += neg  # neg is 0 wherever x > 0
        if not train:
            return out
        # derivative cached in the input dtype: alpha * exp(x) below 0, 1 above
        deriv = neg
        deriv += self.alpha
        np.copyto(deriv, 1, where=x > 0)
        self._deriv = deriv
        return out

    def backward(self, g):
        return g * self._deriv


class AvgPool(Layer):
    """Non-overlapping mean pooling along the last axis; a ragged tail is dropped."""

    def __init__(self, kernel):
        super().__init__()
        self.kernel = kernel

    def forward(self, x, train=True):
        k = self.kernel
        p = x.shape[-1] // k
        self._shape = x.shape
        return x[..., : p * k].reshape(x.shape[:-1] + (p, k)).mean(axis=-1)

    def backward(self, g):
        k = self.kernel
        gx = np.zeros(self._shape, dtype=g.dtype)
        p = g.shape[-1]
        gx[..., : p * k] = np.repeat(g / k, k, axis=-1)
        return gx


class Flatten(Layer):
    """``(D, 1, B, P)`` feature-major maps to ``(B, D * P)`` trial rows."""

    def forward(self, x, train=True):
        self._shape = x.shape
        d, c, b, p = x.shape
        return np.ascontiguousarray(x.transpose(2, 0, 1, 3)).reshape(b, d * c * p)

    def backward(self, g):
        d, c, b, p = self._shape
        return np.ascontiguousarray(g.reshape(b, d, c, p).transpose(1, 2, 0, 3))


class Dense(Layer):
    def __init__(self, weight, bias):
        super().__init__()
        self.params = {"weight": weight, "bias": bias}

    def forward(self, x, train=True):
        self._x = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, g):
        self.grads = {"weight": self._x.T @ g, "bias": g.sum(axis=0)}
        return g @ self.params["weight"].T


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean categorical cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    n = logits.shape[0]
    rows = np.arange(n)
    loss = float(np.mean(logsum - z[rows, labels]))
    grad = softmax(logits)
    grad[rows, labels] -= 1.0
    return loss, grad / n
