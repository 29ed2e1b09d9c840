"""Small dense networks with hand-written backprop and Adam.

Everything runs in float64. A network is a stack of :class:`DenseLayer`
objects with a shared hidden activation and a linear output head. The same
weights are applied to every row of the input, so an episode of ``T`` steps
is just a ``(T, in_dim)`` matrix.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

LEAKY_SLOPE = 0.01


class ShapeError(ValueError):
    pass


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out_dim, in_dim)
    biases: np.ndarray  # (out_dim,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"inconsistent layer shapes {self.weights.shape} / {self.biases.shape}")

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]


class MLP:
    """Feed-forward network: hidden layers share one activation, output is linear.

    ``activation`` is ``"leaky_relu"`` or ``"relu"``. Dropout is inverted
    dropout on hidden activations and is only active when ``train=True``.
    """

    def __init__(self, layers, activation="leaky_relu", dropout=0.0,
                 negative_slope=LEAKY_SLOPE):
        if activation not in ("leaky_relu", "relu"):
            raise ValueError(f"unknown activation {activation!r}")
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        layers = list(layers)
        if not layers:
            raise ValueError("an MLP needs at least one layer")
        for a, b in zip(layers[:-1], layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
        self.layers = layers
        self.activation = activation
        self.dropout = float(dropout)
        self.negative_slope = negative_slope if activation == "leaky_relu" else 0.0

    @classmethod
    def create(cls, sizes, rng, activation="leaky_relu", dropout=0.0):
        """He-uniform initialised network with layer widths ``sizes``.

        ``sizes = [in_dim, h1, ..., out_dim]``; biases start at zero.
        """
        layers = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            layers.append(DenseLayer(w, np.zeros(fan_out)))
        return cls(layers, activation=activation, dropout=dropout)

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    @property
    def n_params(self):
        return sum(p.size for p in self.params())

    def params(self):
        """Flat list ``[W0, b0, W1, b1, ...]`` (live references)."""
        out = []
        for layer in self.layers:
            out.append(layer.weights)
            out.append(layer.biases)
        return out

    def copy(self):
        return copy.deepcopy(self)

    def load_params_from(self, other):
        for dst, src in zip(self.params(), other.params()):
            if dst.shape != src.shape:
                raise ShapeError("parameter shapes differ")
            dst[...] = src

    def _act(self, z):
        if self.negative_slope:
            # valid for slopes below 1
            return np.maximum(z, self.negative_slope * z)
        return np.maximum(z, 0.0)

    def _act_backward(self, z, g):
        if self.negative_slope:
            return np.where(z > 0, g, self.negative_slope * g)
        return np.where(z > 0, g, 0.0)

    def forward_cached(self, x, train=False, rng=None):
        """Forward pass that also returns what :meth:`backward` needs."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"expected input dim {self.in_dim}, got {x.shape[-1]}")
        use_dropout = train and self.dropout > 0.0
        if use_dropout and rng is None:
            raise ValueError("train-mode dropout needs an rng")
        keep = 1.0 - self.dropout
        h = x
        cache = []
        for i, layer in enumerate(self.layers):
            z = h @ layer.weights.T + layer.biases
            if i == len(self.layers) - 1:
                cache.append((h, None, None))
                h = z
                break
            a = self._act(z)
            mask = None
            if use_dropout:
                mask = (rng.random(a.shape) < keep) / keep
                a = a * mask
            cache.append((h, z, mask))
            h = a
        return h, cache

    def forward(self, x, train=False, rng=None):
        return self.forward_cached(x, train=train, rng=rng)[0]

    __call__ = forward

    def backward(self, cache, grad_out):
        """Backprop ``dL/d(output)`` through the cached pass.

        Returns a :class:`GradientBuffer` summed over all input rows.
        """
        grads = []
        g = np.asarray(grad_out, dtype=np.float64)
        single = g.ndim == 1
        if single:
            g = g[None, :]
        for i in range(len(self.layers) - 1, -1, -1):
            h, z, mask = cache[i]
            if i < len(self.layers) - 1:
                if mask is not None:
                    g = g * mask
                g = self._act_backward(z, g)
            hh = h[None, :] if h.ndim == 1 else h
            grads.append(g.sum(axis=0))
            grads.append(g.T @ hh)
            if i > 0:
                g = g @ self.layers[i].weights
        grads.reverse()
        return GradientBuffer(grads)


@dataclass
class GradientBuffer:
    """Per-parameter gradient arrays, ordered like :meth:`MLP.params`."""

    arrays: list

    @classmethod
    def zeros_like(cls, model):
        return cls([np.zeros_like(p) for p in model.params()])

    def zero(self):
        for a in self.arrays:
            a[...] = 0.0

    def add_(self, other, scale=1.0):
        for a, b in zip(self.arrays, other.arrays):
            a += scale * b
        return self

    def scale_(self, factor):
        for a in self.arrays:
            a *= factor
        return self

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays])

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self):
        return len(self.arrays)


def forward(model, x, mode="eval", rng=None):
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return model.forward(x, train=(mode == "train"), rng=rng)


def episode_loss_gradient(model, episode_inputs, delayed_reward, train=False, rng=None):
    """Squared error between the delayed reward and the summed per-step outputs.

    Returns ``(loss, grads)`` where ``loss = (R - sum_t f(x_t))**2``.
    """
    x = np.asarray(episode_inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None] if model.in_dim == 1 else x[None, :]
    if x.shape[0] == 0:
        raise ValueError("episode has no steps")
    if not np.isfinite(delayed_reward):
        raise ValueError("delayed reward must be finite")
    if model.output_dim != 1:
        raise ShapeError("episode loss needs a scalar-output model")
    out, cache = model.forward_cached(x, train=train, rng=rng)
    residual = float(delayed_reward) - out[:, 0].sum()
    grad_out = np.full((x.shape[0], 1), -2.0 * residual)
    return residual * residual, model.backward(cache, grad_out)


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    @classmethod
    def for_model(cls, model, learning_rate=1e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(learning_rate, beta1, beta2, epsilon, 0,
                   [np.zeros_like(p) for p in model.params()],
                   [np.zeros_like(p) for p in model.params()])


def adam_step(model, state, grads):
    """One bias-corrected Adam update, in place. Returns ``(model, state)``."""
    params = model.params()
    grads = list(grads)
    if len(grads) != len(params) or len(state.first_moment) != len(params):
        raise ShapeError("gradient/moment list does not match model parameters")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    lr_t = state.learning_rate * np.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    # epsilon is applied to the bias-corrected second moment
    eps_t = state.epsilon * np.sqrt(1.0 - b2 ** t)
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"shape mismatch {g.shape} vs {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr_t * m / (np.sqrt(v) + eps_t)
    return model, state
