"""Layers with hand-written backward passes (NHWC tensors).

Each layer's ``forward`` returns the output plus whatever it needs to cache;
``backward`` takes that cache and the output gradient, accumulates parameter
gradients into ``grads`` and returns the input gradient. A network is a list
of layers replayed in reverse, i.e. a tape.
"""

from __future__ import annotations

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LEAKY_SLOPE = 0.01


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _acc(grads, name, value):
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value


class Conv2D:
    """Stride-1 'same' convolution; weights are (k, k, cin, cout)."""

    def __init__(self, name, cin, cout, k=3, bias=False):
        self.name, self.cin, self.cout, self.k, self.bias = name, cin, cout, k, bias

    def init(self, rng, dtype):
        k = self.k
        out = {f"{self.name}.w": glorot_uniform(
            rng, (k, k, self.cin, self.cout), k * k * self.cin, k * k * self.cout, dtype)}
        if self.bias:
            out[f"{self.name}.b"] = np.zeros(self.cout, dtype)
        return out

    def forward(self, p, x, train, updates):
        w = p[f"{self.name}.w"]
        n, h, wd, c = x.shape
        k = self.k
        if k == 1:
            y = x.reshape(-1, c) @ w[0, 0]
            xp = None
        else:
            pad = k // 2
            xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
            y = np.zeros((n * h * wd, self.cout), dtype=x.dtype)
            for dy in range(k):
                for dx in range(k):
                    y += xp[:, dy:dy + h, dx:dx + wd, :].reshape(-1, c) @ w[dy, dx]
        if self.bias:
            y += p[f"{self.name}.b"]
        return y.reshape(n, h, wd, self.cout), (x, xp)

    def backward(self, p, cache, gy, grads):
        x, xp = cache
        w = p[f"{self.name}.w"]
        n, h, wd, c = x.shape
        g2 = gy.reshape(-1, self.cout)
        if self.bias:
            _acc(grads, f"{self.name}.b", g2.sum(axis=0))
        if self.k == 1:
            _acc(grads, f"{self.name}.w", (x.reshape(-1, c).T @ g2)[None, None])
            return (g2 @ w[0, 0].T).reshape(x.shape)
        k, pad = self.k, self.k // 2
        gw = np.empty_like(w)
        gxp = np.zeros_like(xp)
        for dy in range(k):
            for dx in range(k):
                patch = xp[:, dy:dy + h, dx:dx + wd, :].reshape(-1, c)
                gw[dy, dx] = patch.T @ g2
                gxp[:, dy:dy + h, dx:dx + wd, :] += (g2 @ w[dy, dx].T).reshape(n, h, wd, c)
        _acc(grads, f"{self.name}.w", gw)
        return gxp[:, pad:pad + h, pad:pad + wd, :]


class BatchNorm:
    """Per-channel batch norm; batch statistics in training, running ones otherwise."""

    def __init__(self, name, c):
        self.name, self.c = name, c

    def init(self, rng, dtype):
        n = self.name
        return {
            f"{n}.gamma": np.ones(self.c, dtype),
            f"{n}.beta": np.zeros(self.c, dtype),
            f"{n}.running_mean": np.zeros(self.c, dtype),
            f"{n}.running_var": np.ones(self.c, dtype),
        }

    @staticmethod
    def buffers(name):
        return (f"{name}.running_mean", f"{name}.running_var")

    def forward(self, p, x, train, updates):
        n = self.name
        gamma, beta = p[f"{n}.gamma"], p[f"{n}.beta"]
        if train:
            m = x.shape[0] * x.shape[1] * x.shape[2]
            mu = x.mean(axis=(0, 1, 2))
            xc = x - mu
            var = (xc * xc).mean(axis=(0, 1, 2))
            if updates is not None:
                unbiased = var * (m / (m - 1)) if m > 1 else var
                mom = BN_MOMENTUM
                updates[f"{n}.running_mean"] = (1 - mom) * p[f"{n}.running_mean"] + mom * mu
                updates[f"{n}.running_var"] = (1 - mom) * p[f"{n}.running_var"] + mom * unbiased
        else:
            xc = x - p[f"{n}.running_mean"]
            var = p[f"{n}.running_var"]
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = xc * inv
        return xhat * gamma + beta, (xhat, inv, train)

    def backward(self, p, cache, gy, grads):
        n = self.name
        xhat, inv, train = cache
        _acc(grads, f"{n}.gamma", (gy * xhat).sum(axis=(0, 1, 2)))
        _acc(grads, f"{n}.beta", gy.sum(axis=(0, 1, 2)))
        gxhat = gy * p[f"{n}.gamma"]
        if not train:
            return gxhat * inv
        m = xhat.shape[0] * xhat.shape[1] * xhat.shape[2]
        s1 = gxhat.sum(axis=(0, 1, 2))
        s2 = (gxhat * xhat).sum(axis=(0, 1, 2))
        return (inv / m) * (m * gxhat - s1 - xhat * s2)


class LeakyReLU:
    def __init__(self, slope=LEAKY_SLOPE):
        self.slope = slope

    def forward(self, p, x, train, updates):
        pos = x > 0
        return np.where(pos, x, x * self.slope), pos

    def backward(self, p, pos, gy, grads):
        return np.where(pos, gy, gy * self.slope)


class ReLU:
    def forward(self, p, x, train, updates):
        pos = x > 0
        return np.where(pos, x, 0).astype(x.dtype, copy=False), pos

    def backward(self, p, pos, gy, grads):
        return np.where(pos, gy, 0).astype(gy.dtype, copy=False)


class MaxPool2:
    def forward(self, p, x, train, updates):
        n, h, w, c = x.shape
        blocks = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
        idx = blocks.argmax(axis=-1)
        y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        return y, (idx, x.shape)

    def backward(self, p, cache, gy, grads):
        idx, shape = cache
        n, h, w, c = shape
        g = np.zeros((n, h // 2, w // 2, c, 4), dtype=gy.dtype)
        np.put_along_axis(g, idx[..., None], gy[..., None], axis=-1)
        return g.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(shape)


class Upsample2:
    """Nearest-neighbour x2."""

    def forward(self, p, x, train, updates):
        return x.repeat(2, axis=1).repeat(2, axis=2), x.shape

    def backward(self, p, shape, gy, grads):
        n, h, w, c = shape
        return gy.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4))


class Dense:
    """Fully connected layer on flattened input, reshaping output to ``out_shape``."""

    def __init__(self, name, din, out_shape):
        self.name, self.din = name, din
        self.out_shape = tuple(out_shape)
        self.dout = int(np.prod(out_shape))

    def init(self, rng, dtype):
        return {
            f"{self.name}.w": glorot_uniform(rng, (self.din, self.dout), self.din, self.dout, dtype),
            f"{self.name}.b": np.zeros(self.dout, dtype),
        }

    def forward(self, p, x, train, updates):
        flat = x.reshape(x.shape[0], -1)
        y = flat @ p[f"{self.name}.w"] + p[f"{self.name}.b"]
        return y.reshape((x.shape[0],) + self.out_shape), (flat, x.shape)

    def backward(self, p, cache, gy, grads):
        flat, shape = cache
        g2 = gy.reshape(gy.shape[0], -1)
        _acc(grads, f"{self.name}.w", flat.T @ g2)
        _acc(grads, f"{self.name}.b", g2.sum(axis=0))
        return (g2 @ p[f"{self.name}.w"].T).reshape(shape)


def run_forward(layers, p, x, train, updates=None):
    tape = []
    for layer in layers:
        x, cache = layer.forward(p, x, train, updates)
        tape.append(cache)
    return x, tape


def run_backward(layers, p, tape, gy, grads):
    for layer, cache in zip(reversed(layers), reversed(tape)):
        gy = layer.backward(p, cache, gy, grads)
    return gy
