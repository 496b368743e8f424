"""Shared fixtures and independent oracle helpers."""
from __future__ import annotations

import numpy as np
import pytest

from edgeagentx.nets import Mlp, flatten, forward, unflatten, FlatParams


def straight_line_forward(weights, biases, x, output_activation="tanh"):
    """Naive re-implementation of the MLP forward pass (loop arithmetic)."""
    h = list(x)
    for layer, (w, b) in enumerate(zip(weights, biases)):
        n_in, n_out = w.shape
        z = [sum(h[i] * w[i, j] for i in range(n_in)) + b[j] for j in range(n_out)]
        if layer < len(weights) - 1 or output_activation == "tanh":
            h = [np.tanh(v) for v in z]
        else:
            h = z
    return np.array(h)


def finite_diff_grad(mlp: Mlp, x, upstream, h=1e-5):
    """Central finite differences of f(theta) = upstream . forward(theta, x)."""
    flat = flatten(mlp)
    theta = flat.values
    grad = np.zeros_like(theta)
    for k in range(theta.size):
        for sign, slot in ((+1, 0), (-1, 1)):
            bumped = theta.copy()
            bumped[k] += sign * h
            m = unflatten(FlatParams(flat.shapes, bumped), mlp.output_activation)
            val = float(np.dot(upstream, forward(m, x)))
            if slot == 0:
                plus = val
            else:
                minus = val
        grad[k] = (plus - minus) / (2.0 * h)
    return grad


def scalar_adam(theta0, grad_fn, steps, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Textbook scalar Adam recurrence, used as an optimizer oracle."""
    theta, m, v = theta0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        theta -= lr * (m / (1 - beta1 ** t)) / (np.sqrt(v / (1 - beta2 ** t)) + eps)
    return theta


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
