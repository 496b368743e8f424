"""Minimal dense feed-forward networks with hand-derived gradients.

Everything here is plain numpy with 64-bit floats. The flat-parameter
codec (`flatten` / `unflatten`) defines the canonical parameter order
used by federated aggregation and by the checkpoint file format:
layer-major, weight matrix in row-major (C) order, then the bias vector.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"EAXCKPT1"

ACTIVATIONS = ("tanh", "identity")


class ShapeError(ValueError):
    """Layer shapes that do not chain, or mismatched parameter layouts."""


@dataclass
class Mlp:
    """Dense network: tanh hidden layers, tanh or identity output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_activation: str = "tanh"

    @property
    def layer_shapes(self) -> tuple[tuple[int, int], ...]:
        return tuple((w.shape[0], w.shape[1]) for w in self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights],
                   [b.copy() for b in self.biases],
                   self.output_activation)


@dataclass(frozen=True)
class FlatParams:
    """Contiguous view of a network's parameters in canonical order."""

    shapes: tuple[tuple[int, int], ...]
    values: np.ndarray

    def __post_init__(self):
        expected = param_count(self.shapes)
        if self.values.shape != (expected,):
            raise ShapeError(
                f"flat parameter length {self.values.shape} does not match "
                f"shapes {self.shapes} (expected {expected})")


@dataclass
class OptState:
    """Adam accumulator state for one parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def param_count(shapes) -> int:
    return int(sum(i * o + o for i, o in shapes))


def _check_chain(shapes) -> None:
    if not shapes:
        raise ShapeError("at least one layer required")
    for k in range(len(shapes) - 1):
        if shapes[k][1] != shapes[k + 1][0]:
            raise ShapeError(
                f"layer shapes do not chain at layer {k}: "
                f"{shapes[k]} -> {shapes[k + 1]}")


def init_mlp(shapes, seed: int, output_activation: str = "tanh") -> Mlp:
    """Build a network with weights uniform in [-1/sqrt(in), +1/sqrt(in)].

    Deterministic: the same (shapes, seed) always yields the same network.
    """
    shapes = tuple((int(i), int(o)) for i, o in shapes)
    _check_chain(shapes)
    if output_activation not in ACTIVATIONS:
        raise ValueError(f"unknown output activation {output_activation!r}")
    rng = np.random.Generator(np.random.PCG64(seed))
    weights, biases = [], []
    for n_in, n_out in shapes:
        bound = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return Mlp(weights, biases, output_activation)


def _apply_activation(z: np.ndarray, kind: str) -> np.ndarray:
    return np.tanh(z) if kind == "tanh" else z


def forward(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a single vector or a (batch, dim) array."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != mlp.in_dim:
        raise ShapeError(f"input dim {x.shape[-1]} != network in dim {mlp.in_dim}")
    h = x
    last = len(mlp.weights) - 1
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = h @ w + b
        h = _apply_activation(z, "tanh" if k < last else mlp.output_activation)
    return h


def backward(mlp: Mlp, x: np.ndarray,
             upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reverse-mode gradients of sum(upstream * output).

    Accepts single vectors or (batch, dim) arrays; batch contributions are
    summed into the parameter gradient. Returns (flat parameter gradient
    in canonical order, gradient with respect to the input).
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    ub = upstream[None, :] if single else upstream
    if xb.shape[-1] != mlp.in_dim:
        raise ShapeError(f"input dim {xb.shape[-1]} != network in dim {mlp.in_dim}")
    if ub.shape != (xb.shape[0], mlp.out_dim):
        raise ShapeError(f"upstream shape {upstream.shape} does not match "
                         f"batch {xb.shape[0]} x out dim {mlp.out_dim}")

    last = len(mlp.weights) - 1
    pre_acts = [xb]  # layer inputs
    h = xb
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = h @ w + b
        h = _apply_activation(z, "tanh" if k < last else mlp.output_activation)
        pre_acts.append(h)

    w_grads: list[np.ndarray] = [None] * len(mlp.weights)  # type: ignore[list-item]
    b_grads: list[np.ndarray] = [None] * len(mlp.biases)  # type: ignore[list-item]
    g = ub
    for k in range(last, -1, -1):
        act = "tanh" if k < last else mlp.output_activation
        out_k = pre_acts[k + 1]
        if act == "tanh":
            g = g * (1.0 - out_k * out_k)
        w_grads[k] = pre_acts[k].T @ g
        b_grads[k] = g.sum(axis=0)
        g = g @ mlp.weights[k].T

    flat = np.concatenate(
        [np.concatenate([w.ravel(), b]) for w, b in zip(w_grads, b_grads)])
    input_grad = g[0] if single else g
    return flat, input_grad


def make_opt_state(mlp: Mlp, lr: float) -> OptState:
    n = param_count(mlp.layer_shapes)
    return OptState(m=np.zeros(n), v=np.zeros(n), lr=lr)


def apply_update(mlp: Mlp, grad: np.ndarray,
                 opt: OptState) -> tuple[Mlp, OptState]:
    """One Adam step (with bias correction) in the descent direction."""
    grad = np.asarray(grad, dtype=np.float64)
    theta = flatten(mlp).values
    if grad.shape != theta.shape:
        raise ShapeError(f"gradient length {grad.shape} != parameters {theta.shape}")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient components")
    t = opt.step + 1
    m = opt.beta1 * opt.m + (1.0 - opt.beta1) * grad
    v = opt.beta2 * opt.v + (1.0 - opt.beta2) * grad * grad
    m_hat = m / (1.0 - opt.beta1 ** t)
    v_hat = v / (1.0 - opt.beta2 ** t)
    theta = theta - opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    new_opt = OptState(m=m, v=v, step=t, lr=opt.lr,
                       beta1=opt.beta1, beta2=opt.beta2, eps=opt.eps)
    new_mlp = unflatten(FlatParams(mlp.layer_shapes, theta), mlp.output_activation)
    return new_mlp, new_opt


def flatten(mlp: Mlp) -> FlatParams:
    values = np.concatenate(
        [np.concatenate([w.ravel(), b]) for w, b in zip(mlp.weights, mlp.biases)])
    return FlatParams(mlp.layer_shapes, values)


def unflatten(flat: FlatParams, output_activation: str = "tanh") -> Mlp:
    _check_chain(flat.shapes)
    if output_activation not in ACTIVATIONS:
        raise ValueError(f"unknown output activation {output_activation!r}")
    weights, biases = [], []
    pos = 0
    for n_in, n_out in flat.shapes:
        w = flat.values[pos:pos + n_in * n_out].reshape(n_in, n_out).copy()
        pos += n_in * n_out
        b = flat.values[pos:pos + n_out].copy()
        pos += n_out
        weights.append(w)
        biases.append(b)
    return Mlp(weights, biases, output_activation)


def save_checkpoint(path, flat: FlatParams) -> None:
    """Write magic, u32-LE shape header, then float64-LE values."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(flat.shapes)))
        for n_in, n_out in flat.shapes:
            f.write(struct.pack("<II", n_in, n_out))
        f.write(np.ascontiguousarray(flat.values, dtype="<f8").tobytes())


def load_checkpoint(path) -> FlatParams:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {data[:8]!r}")
    (n_layers,) = struct.unpack_from("<I", data, 8)
    pos = 12
    shapes = []
    for _ in range(n_layers):
        n_in, n_out = struct.unpack_from("<II", data, pos)
        shapes.append((n_in, n_out))
        pos += 8
    shapes = tuple(shapes)
    values = np.frombuffer(data[pos:], dtype="<f8").astype(np.float64)
    if values.size != param_count(shapes):
        raise ShapeError(
            f"{path}: {values.size} values but header implies "
            f"{param_count(shapes)}")
    return FlatParams(shapes, values)
