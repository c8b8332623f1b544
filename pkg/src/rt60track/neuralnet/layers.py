"""Layers with explicit forward and backward passes.

Tensors follow the ``(batch, channels, freq, time)`` layout until the
recurrent stage, which is time-major ``(time, sequences, features)``.
Every layer caches what its backward pass needs during ``forward`` and
raises :class:`StateError` if ``backward`` is called without it.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ArgumentError, StateError


class Layer:
    params: dict
    grads: dict

    def __init__(self):
        self.params = {}
        self.grads = {}
        self._cache = None

    def _take_cache(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called before forward")
        return self._cache

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)


class Conv2d(Layer):
    """Strided 2-D convolution over (freq, time), zero padding on freq only."""

    def __init__(self, cin, cout, kf, kt, sf, st, pad_f, rng):
        super().__init__()
        self.kf, self.kt, self.sf, self.st, self.pad_f = kf, kt, sf, st, pad_f
        fan_in = cin * kf * kt
        bound = np.sqrt(6.0 / fan_in)
        self.params["weight"] = rng.uniform(-bound, bound, (cout, cin, kf, kt))
        self.params["bias"] = np.zeros(cout)
        self.zero_grad()

    def out_shape(self, f, t):
        fo = (f + 2 * self.pad_f - self.kf) // self.sf + 1
        to = (t - self.kt) // self.st + 1
        return fo, to

    def forward(self, x, train=True):
        b, c, f, t = x.shape
        fo, to = self.out_shape(f, t)
        if fo < 1 or to < 1:
            raise ArgumentError(f"input ({f}x{t}) too small for conv kernel ({self.kf}x{self.kt})")
        p = self.pad_f
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (0, 0))) if p else x
        win = sliding_window_view(xp, (self.kf, self.kt), axis=(2, 3))
        win = win[:, :, :: self.sf, :: self.st][:, :, :fo, :to]
        # im2col rows ordered (b, fo, to), columns (cin, kf, kt)
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * fo * to, -1)
        w = self.params["weight"].reshape(self.params["weight"].shape[0], -1)
        out = (cols @ w.T + self.params["bias"]).reshape(b, fo, to, -1)
        self._cache = (cols, xp.shape, (fo, to))
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(self, dout, input_grad=True):
        cols, xp_shape, (fo, to) = self._take_cache()
        w = self.params["weight"]
        cout, cin = w.shape[:2]
        d = dout.transpose(0, 2, 3, 1).reshape(-1, cout)
        self.grads["weight"] += (d.T @ cols).reshape(w.shape)
        self.grads["bias"] += d.sum(axis=0)
        if not input_grad:
            return None
        b, _, fpad, t = xp_shape
        dxp = np.zeros((b, fpad, t, cin))
        fs_end, ts_end = self.sf * (fo - 1) + 1, self.st * (to - 1) + 1
        for i in range(self.kf):
            for j in range(self.kt):
                tap = (d @ w[:, :, i, j]).reshape(b, fo, to, cin)
                dxp[:, i : i + fs_end : self.sf, j : j + ts_end : self.st] += tap
        p = self.pad_f
        dxp = dxp.transpose(0, 3, 1, 2)
        return np.ascontiguousarray(dxp[:, :, p : fpad - p] if p else dxp)


class ReLU(Layer):
    def forward(self, x, train=True):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, dout):
        return dout * self._take_cache()


class BatchNorm(Layer):
    """Per-channel batch normalization with running statistics."""

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.zero_grad()

    def forward(self, x, train=True):
        g = self.params["gamma"][None, :, None, None]
        bt = self.params["beta"][None, :, None, None]
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mean
            self.running_var = (1 - m) * self.running_var + m * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self._cache = (xhat, inv_std, train)
        return g * xhat + bt

    def backward(self, dout):
        xhat, inv_std, train = self._take_cache()
        gamma = self.params["gamma"]
        self.grads["gamma"] += np.sum(dout * xhat, axis=(0, 2, 3))
        self.grads["beta"] += dout.sum(axis=(0, 2, 3))
        dxhat = dout * gamma[None, :, None, None]
        k = inv_std[None, :, None, None]
        if not train:
            return dxhat * k
        n = dout.shape[0] * dout.shape[2] * dout.shape[3]
        s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        s2 = np.sum(dxhat * xhat, axis=(0, 2, 3), keepdims=True)
        return k * (dxhat - s1 / n - xhat * s2 / n)


class Dropout(Layer):
    """Inverted dropout; identity outside training."""

    def __init__(self, p):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ArgumentError(f"dropout probability {p} outside [0, 1)")
        self.p = p

    def forward(self, x, train=True, rng=None):
        if not train or self.p == 0.0:
            self._cache = 1.0
            return x
        if rng is None:
            raise ArgumentError("dropout in training mode needs a random generator")
        mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        self._cache = mask
        return x * mask

    def backward(self, dout):
        return dout * self._take_cache()


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class LSTM(Layer):
    """Single-layer LSTM over a time-major sequence ``(T, N, I)``.

    Gate order in the stacked weight matrix is input, forget, cell, output.
    """

    def __init__(self, n_in, n_hidden, rng):
        super().__init__()
        self.n_in, self.n_hidden = n_in, n_hidden
        bound = 1.0 / np.sqrt(n_hidden)
        self.params["weight"] = rng.uniform(-bound, bound, (4 * n_hidden, n_in + n_hidden))
        bias = np.zeros(4 * n_hidden)
        bias[n_hidden : 2 * n_hidden] = 1.0
        self.params["bias"] = bias
        self.zero_grad()

    def forward(self, x, train=True):
        t_len, n, _ = x.shape
        hs = self.n_hidden
        w, b = self.params["weight"], self.params["bias"]
        h = np.zeros((n, hs))
        c = np.zeros((n, hs))
        out = np.empty((t_len, n, hs))
        cache = []
        for t in range(t_len):
            z = np.concatenate([x[t], h], axis=1)
            a = z @ w.T + b
            i = _sigmoid(a[:, :hs])
            f = _sigmoid(a[:, hs : 2 * hs])
            g = np.tanh(a[:, 2 * hs : 3 * hs])
            o = _sigmoid(a[:, 3 * hs :])
            c_prev = c
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            out[t] = h
            cache.append((z, i, f, g, o, c_prev, tc))
        self._cache = cache
        return out

    def backward(self, dout):
        cache = self._take_cache()
        hs = self.n_hidden
        w = self.params["weight"]
        t_len, n, _ = dout.shape
        dx = np.empty((t_len, n, self.n_in))
        dh_next = np.zeros((n, hs))
        dc_next = np.zeros((n, hs))
        dw = np.zeros_like(w)
        db = np.zeros(4 * hs)
        for t in reversed(range(t_len)):
            z, i, f, g, o, c_prev, tc = cache[t]
            dh = dout[t] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            da = np.concatenate(
                [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1
            )
            dw += da.T @ z
            db += da.sum(axis=0)
            dz = da @ w
            dx[t] = dz[:, : self.n_in]
            dh_next = dz[:, self.n_in :]
            dc_next = dc * f
        self.grads["weight"] += dw
        self.grads["bias"] += db
        return dx


class FreqMaxPool(Layer):
    """Max pooling along the frequency axis of ``(T, B, F, H)``; a trailing
    partial window is kept (ceil mode)."""

    def __init__(self, factor=2):
        super().__init__()
        self.factor = factor

    def forward(self, x, train=True):
        t_len, b, f, h = x.shape
        k = self.factor
        n_out = -(-f // k)
        padded = np.full((t_len, b, n_out * k, h), -np.inf)
        padded[:, :, :f] = x
        grouped = padded.reshape(t_len, b, n_out, k, h)
        idx = grouped.argmax(axis=3)
        out = np.take_along_axis(grouped, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
        self._cache = (idx, x.shape, n_out)
        return out

    def backward(self, dout):
        idx, shape, n_out = self._take_cache()
        t_len, b, f, h = shape
        k = self.factor
        grad = np.zeros((t_len, b, n_out, k, h))
        np.put_along_axis(grad, idx[:, :, :, None, :], dout[:, :, :, None, :], axis=3)
        return grad.reshape(t_len, b, n_out * k, h)[:, :, :f]


class Dense(Layer):
    """Affine map on the last axis."""

    def __init__(self, n_in, n_out, rng, bias_init=0.0):
        super().__init__()
        bound = 1.0 / np.sqrt(n_in)
        self.params["weight"] = rng.uniform(-bound, bound, (n_out, n_in))
        self.params["bias"] = np.full(n_out, float(bias_init))
        self.zero_grad()

    def forward(self, x, train=True):
        self._cache = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, dout):
        x = self._take_cache()
        lead = x.reshape(-1, x.shape[-1])
        d = dout.reshape(-1, dout.shape[-1])
        self.grads["weight"] += d.T @ lead
        self.grads["bias"] += d.sum(axis=0)
        return dout @ self.params["weight"]
