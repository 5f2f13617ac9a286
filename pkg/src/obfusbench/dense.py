"""Small fully connected networks with hand-written backprop and Adam.

Weights are stored ``(fan_in, fan_out)`` so a batch ``x`` of shape
``(n, fan_in)`` maps through ``x @ W + b``. Hidden layers use tanh; the
output layer is identity or tanh.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import FormatError, InvalidArchitecture, InvalidCache, ShapeMismatch, UnsupportedVersion

NETWORK_FORMAT_VERSION = 1
_ACTIVATIONS = ("identity", "tanh")
_ids = itertools.count()


@dataclass(eq=False)
class DenseNetwork:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_activation: str = "identity"
    # bumped by every in-place update so stale caches can be detected
    version: int = 0
    uid: int = field(default_factory=lambda: next(_ids))

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        _check_sizes(self.layer_sizes)
        if self.output_activation not in _ACTIVATIONS:
            raise InvalidArchitecture(f"unknown output activation {self.output_activation!r}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise InvalidArchitecture("parameter count does not match layer sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if w.shape != expect or b.shape != (expect[1],):
                raise InvalidArchitecture(f"layer {i}: got {w.shape}/{b.shape}, expected {expect}")
        # all parameters live in one buffer so the optimizer can update them in a single pass
        self._flat, views = _pack_views([np.asarray(a, dtype=float) for a in self.parameters()])
        self.weights, self.biases = views[0::2], views[1::2]

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in the canonical order ``W0, b0, W1, b1, ...``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "DenseNetwork":
        return DenseNetwork(
            self.layer_sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.output_activation,
        )

    def __call__(self, x):
        return forward(self, x)[0]

    def to_document(self) -> dict:
        return {
            "version": NETWORK_FORMAT_VERSION,
            "layer_sizes": list(self.layer_sizes),
            "activation": "tanh",
            "output_activation": self.output_activation,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_document(cls, doc: dict) -> "DenseNetwork":
        if not isinstance(doc, dict) or "version" not in doc:
            raise FormatError("network document lacks a version tag")
        if doc["version"] != NETWORK_FORMAT_VERSION:
            raise UnsupportedVersion(f"network document version {doc['version']!r}")
        try:
            if doc["activation"] != "tanh":
                raise FormatError(f"unsupported hidden activation {doc['activation']!r}")
            return cls(
                tuple(doc["layer_sizes"]),
                [np.array(w, dtype=float).reshape(a, b) for w, a, b in
                 zip(doc["weights"], doc["layer_sizes"][:-1], doc["layer_sizes"][1:])],
                [np.array(b, dtype=float) for b in doc["biases"]],
                doc["output_activation"],
            )
        except (KeyError, TypeError, ValueError, InvalidArchitecture) as exc:
            raise FormatError(f"malformed network document: {exc}") from exc


def _pack_views(arrays):
    flat = np.concatenate([a.reshape(-1) for a in arrays]) if arrays else np.zeros(0)
    views, start = [], 0
    for a in arrays:
        views.append(flat[start:start + a.size].reshape(a.shape))
        start += a.size
    return flat, views


def _is_packed(arrays, flat) -> bool:
    return all(a.base is flat for a in arrays)


def _check_sizes(sizes):
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise InvalidArchitecture(f"need >= 2 layers of size >= 1, got {list(sizes)}")


def init_network(layer_sizes, seed: int, output_activation: str = "identity") -> DenseNetwork:
    sizes = tuple(int(s) for s in layer_sizes)
    _check_sizes(sizes)
    rng = np.random.default_rng(seed)
    weights = [rng.standard_normal((a, b)) / np.sqrt(a) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    return DenseNetwork(sizes, weights, biases, output_activation)


@dataclass
class ForwardCache:
    net_uid: int
    net_version: int
    inputs: list[np.ndarray]  # input to each layer
    outputs: list[np.ndarray]  # post-activation output of each layer
    squeeze: bool


def forward(net: DenseNetwork, x):
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != net.n_inputs:
        raise ShapeMismatch(f"network expects {net.n_inputs} inputs, got shape {x.shape}")
    inputs, outputs = [], []
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        a = h @ w + b
        if i < last or net.output_activation == "tanh":
            a = np.tanh(a)
        outputs.append(a)
        h = a
    return (h[0] if squeeze else h), ForwardCache(net.uid, net.version, inputs, outputs, squeeze)


def backward(net: DenseNetwork, cache: ForwardCache, output_gradient):
    """Reverse-mode pass. Returns ``(parameter_gradients, input_gradient)``.

    ``parameter_gradients`` follows :meth:`DenseNetwork.parameters` order and
    is summed over the batch.
    """
    if cache.net_uid != net.uid or cache.net_version != net.version:
        raise InvalidCache("cache does not belong to the current state of this network")
    g = np.asarray(output_gradient, dtype=float)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != cache.outputs[-1].shape:
        raise ShapeMismatch(f"output gradient shape {g.shape} != {cache.outputs[-1].shape}")
    grads: list[np.ndarray] = [None] * (2 * len(net.weights))  # type: ignore[list-item]
    last = len(net.weights) - 1
    for i in range(last, -1, -1):
        if i < last or net.output_activation == "tanh":
            y = cache.outputs[i]
            g = g * (1.0 - y * y)
        grads[2 * i] = cache.inputs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ net.weights[i].T
    return grads, (g[0] if cache.squeeze else g)


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self._m_flat, self.m = _pack_views([np.asarray(a, dtype=float) for a in self.m])
        self._v_flat, self.v = _pack_views([np.asarray(a, dtype=float) for a in self.v])

    @classmethod
    def for_network(cls, net: DenseNetwork, **hyper) -> "OptimizerState":
        params = net.parameters()
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)


def optimizer_step(net: DenseNetwork, gradients, state: OptimizerState):
    """One bias-corrected Adam update, applied in place. Returns ``(net, state)``."""
    params = net.parameters()
    if len(gradients) != len(params):
        raise ShapeMismatch(f"got {len(gradients)} gradient arrays for {len(params)} parameters")
    for p, g in zip(params, gradients):
        if p.shape != np.shape(g):
            raise ShapeMismatch(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    if _is_packed(params, net._flat) and _is_packed(state.m, state._m_flat) and _is_packed(state.v, state._v_flat):
        # same elementwise arithmetic as the loop below, applied to the whole buffer at once
        triples = [(net._flat, np.concatenate([np.reshape(g, -1) for g in gradients]), (state._m_flat, state._v_flat))]
    else:
        triples = [(p, np.asarray(g), mv) for p, g, mv in zip(params, gradients, zip(state.m, state.v))]
    for p, g, (m, v) in triples:
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    net.version += 1
    return net, state


def finite_diff_check(
    net: DenseNetwork,
    loss_function: Callable[[DenseNetwork], tuple[float, list]],
    h: float = 1e-5,
    n_samples: int = 100,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_function(net)`` must return ``(loss, gradients)`` with gradients in
    parameter order. At least ``n_samples`` coordinates are probed (all of
    them when the network is smaller). The relative error of one coordinate
    is ``|a - n| / max(|a|, |n|, floor)``.
    """
    _, analytic = loss_function(net)
    params = net.parameters()
    coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    rng = np.random.default_rng(seed)
    if len(coords) > n_samples:
        coords = [coords[k] for k in rng.choice(len(coords), size=n_samples, replace=False)]
    worst = 0.0
    for i, j in coords:
        flat = params[i].reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        up, _ = loss_function(net)
        flat[j] = orig - h
        down, _ = loss_function(net)
        flat[j] = orig
        numeric = (up - down) / (2 * h)
        a = np.asarray(analytic[i]).reshape(-1)[j]
        worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
    return float(worst)
