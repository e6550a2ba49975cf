"""Stateful layers with explicit backward rules.

A layer owns its parameters (``params``), the gradients of the last
backward pass (``grads``) and non-trainable state (``buffers``).  ``forward``
stores what ``backward`` needs; calling ``backward`` before ``forward``
is an error.
"""
from __future__ import annotations

import numpy as np

from . import functional as F


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError(f"{type(self).__name__} has no backward rule")

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called before forward")
        return self._cache

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def spec(self) -> dict:
        return {"kind": self.kind}

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.spec().items() if k != "kind")
        return f"{type(self).__name__}({args})"


def _uniform(rng, bound, shape, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, c_in, c_out, kernel=(3, 3), rng=None, dtype=np.float32):
        super().__init__()
        if kernel[0] % 2 == 0 or kernel[1] % 2 == 0:
            raise ValueError(f"kernel sizes must be odd, got {kernel}")
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(c_in * kernel[0] * kernel[1])
        self.c_in, self.c_out, self.kernel = c_in, c_out, tuple(kernel)
        self.params["weight"] = _uniform(rng, bound, (c_out, c_in, *kernel), dtype)
        self.params["bias"] = _uniform(rng, bound, (c_out,), dtype)
        self.need_input_grad = True

    def forward(self, x, training=False):
        y, self._cache = F.conv2d(x, self.params["weight"], self.params["bias"])
        return y

    def backward(self, g):
        dx, dw, db = F.conv2d_backward(g, self._need_cache(), self.need_input_grad)
        self.grads = {"weight": dw, "bias": db}
        return dx

    def spec(self):
        return {"kind": self.kind, "c_in": self.c_in, "c_out": self.c_out, "kernel": list(self.kernel)}


class BatchNorm2d(Layer):
    kind = "batchnorm"

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def forward(self, x, training=False):
        y, self._cache = F.batchnorm(
            x, self.params["gamma"], self.params["beta"],
            self.buffers["running_mean"], self.buffers["running_var"],
            training, self.momentum, self.eps)
        return y

    def backward(self, g):
        dx, dgamma, dbeta = F.batchnorm_backward(g, self._need_cache())
        self.grads = {"gamma": dgamma, "beta": dbeta}
        return dx

    def spec(self):
        return {"kind": self.kind, "channels": self.channels}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False):
        y, self._cache = F.relu(x)
        return y

    def backward(self, g):
        return F.relu_backward(g, self._need_cache())


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, training=False):
        y = F.sigmoid(x)
        self._cache = y
        return y

    def backward(self, g):
        y = self._need_cache()
        return g * y * (1.0 - y)


class MaxPool2d(Layer):
    kind = "maxpool2d"

    def __init__(self, pool=(2, 2)):
        super().__init__()
        self.pool = tuple(pool)

    def forward(self, x, training=False):
        y, self._cache = F.maxpool2d(x, self.pool)
        return y

    def backward(self, g):
        return F.maxpool2d_backward(g, self._need_cache())

    def spec(self):
        return {"kind": self.kind, "pool": list(self.pool)}


class Dense(Layer):
    kind = "dense"

    def __init__(self, d_in, d_out, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(d_in)
        self.d_in, self.d_out = d_in, d_out
        self.params["weight"] = _uniform(rng, bound, (d_out, d_in), dtype)
        self.params["bias"] = _uniform(rng, bound, (d_out,), dtype)

    def forward(self, x, training=False):
        y, self._cache = F.dense(x, self.params["weight"], self.params["bias"])
        return y

    def backward(self, g):
        dx, dw, db = F.dense_backward(g, self._need_cache(), self.params["weight"])
        self.grads = {"weight": dw, "bias": db}
        return dx

    def spec(self):
        return {"kind": self.kind, "d_in": self.d_in, "d_out": self.d_out}


class BiGRU(Layer):
    kind = "bigru"
    _names = ("w_ih", "w_hh", "b_ih", "b_hh")

    def __init__(self, d_in, hidden, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(hidden)
        self.d_in, self.hidden = d_in, hidden
        shapes = {"w_ih": (3 * hidden, d_in), "w_hh": (3 * hidden, hidden),
                  "b_ih": (3 * hidden,), "b_hh": (3 * hidden,)}
        for direction in ("fwd", "bwd"):
            for name in self._names:
                self.params[f"{direction}.{name}"] = _uniform(rng, bound, shapes[name], dtype)

    def _direction(self, direction):
        return tuple(self.params[f"{direction}.{n}"] for n in self._names)

    def forward(self, x, training=False):
        y, self._cache = F.bigru(x, self._direction("fwd"), self._direction("bwd"))
        return y

    def backward(self, g):
        dx, gf, gb = F.bigru_backward(g, self._need_cache())
        self.grads = {}
        for direction, grads in (("fwd", gf), ("bwd", gb)):
            for name, value in zip(self._names, grads):
                self.grads[f"{direction}.{name}"] = value
        return dx

    def spec(self):
        return {"kind": self.kind, "d_in": self.d_in, "hidden": self.hidden}


class ToSequence(Layer):
    """[B, C, T, F] -> [B, T, C*F]: hands CNN features to the recurrent head."""

    kind = "to_sequence"

    def forward(self, x, training=False):
        self._cache = x.shape
        n, c, t, f = x.shape
        return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(n, t, c * f)

    def backward(self, g):
        n, c, t, f = self._need_cache()
        return np.ascontiguousarray(g.reshape(n, t, c, f).transpose(0, 2, 1, 3))


class Sequential(Layer):
    """Plain chain of layers; parameters are namespaced by position."""

    kind = "sequential"

    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def named_params(self, prefix=""):
        for i, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                yield f"{prefix}{i}.{name}", layer, name, value

    def named_buffers(self, prefix=""):
        for i, layer in enumerate(self.layers):
            for name, value in layer.buffers.items():
                yield f"{prefix}{i}.{name}", layer, name, value

    def n_params(self):
        return sum(layer.n_params() for layer in self.layers)
