"""Central finite differences for checking backward rules."""
from __future__ import annotations

import numpy as np


def relative_error(analytic, numeric, floor=1e-8):
    """Max absolute deviation scaled by the larger of the two gradients' max magnitude."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0), floor)
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / scale)


def numeric_grad(fn, array, step=1e-4):
    """d fn() / d array by central differences; ``array`` is perturbed in place and restored."""
    grad = np.zeros(array.shape, dtype=float)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = fn()
        flat[i] = orig - step
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def check_layer(layer, x, rng, training=True, step=1e-4):
    """Finite-difference check of a layer's input and parameter gradients.

    Uses the scalar objective ``sum(w * layer(x))`` with fixed random ``w``.
    Returns ``{name: relative_error}`` including ``"input"``.
    """
    y = layer.forward(x, training)
    w = rng.standard_normal(y.shape)
    snapshot = {k: v.copy() for k, v in layer.buffers.items()}

    def objective():
        for k, v in snapshot.items():
            layer.buffers[k][...] = v
        return float(np.sum(w * layer.forward(x, training)))

    objective()
    dx = layer.backward(w)
    analytic = dict(layer.grads)
    errors = {}
    if dx is not None:
        errors["input"] = relative_error(dx, numeric_grad(objective, x, step))
    for name, value in layer.params.items():
        errors[name] = relative_error(analytic[name], numeric_grad(objective, value, step))
    for k, v in snapshot.items():
        layer.buffers[k][...] = v
    return errors
