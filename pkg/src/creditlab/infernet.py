"""Reward redistribution: learn per-step rewards whose episode sum matches
the delayed reward.

A shared-weight MLP maps each encoded (state, action) pair to a scalar. It is
trained on whole episodes with the squared error between the observed
episodic reward and the sum of the per-step outputs.
"""
from __future__ import annotations

import dataclasses
import json
import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import nn

CHECKPOINT_VERSION = 1


def delayed_from_immediate(rewards):
    """Exact (correctly rounded) sum of a non-empty reward sequence."""
    rewards = list(rewards)
    if not rewards:
        raise ValueError("cannot form a delayed reward from an empty episode")
    return math.fsum(rewards)


@dataclass(frozen=True)
class Step:
    state: object
    action: int
    immediate_reward: float
    next_state: object
    # noise-free reward, kept for evaluation; defaults to immediate_reward
    true_reward: float | None = None

    @property
    def clean_reward(self):
        return self.immediate_reward if self.true_reward is None else self.true_reward


@dataclass(eq=False)
class Episode:
    steps: list
    delayed_reward: float
    terminated: bool = False
    truncated: bool = False

    def __post_init__(self):
        if not self.steps:
            raise ValueError("an episode needs at least one step")

    @classmethod
    def from_steps(cls, steps, terminated=False, truncated=False):
        """Build an episode whose delayed reward is the sum of observed rewards."""
        steps = list(steps)
        return cls(steps, delayed_from_immediate(s.immediate_reward for s in steps),
                   terminated, truncated)

    def __len__(self):
        return len(self.steps)

    @cached_property
    def states(self):
        return np.array([s.state for s in self.steps])

    @cached_property
    def next_states(self):
        return np.array([s.next_state for s in self.steps])

    @cached_property
    def actions(self):
        return np.array([s.action for s in self.steps], dtype=np.int64)

    @cached_property
    def rewards(self):
        return np.array([s.immediate_reward for s in self.steps], dtype=np.float64)

    @cached_property
    def true_rewards(self):
        return np.array([s.clean_reward for s in self.steps], dtype=np.float64)

    def with_rewards(self, rewards):
        """Copy with per-step rewards replaced; the delayed reward is kept."""
        rewards = np.asarray(rewards, dtype=np.float64)
        if rewards.shape != (len(self.steps),):
            raise ValueError("reward vector length does not match the episode")
        steps = [dataclasses.replace(s, immediate_reward=float(r), true_reward=s.clean_reward)
                 for s, r in zip(self.steps, rewards)]
        return Episode(steps, self.delayed_reward, self.terminated, self.truncated)


class GridOneHotEncoder:
    """One-hot cell followed by one-hot action; states are cell ids or (col, row)."""

    scheme = "grid_onehot"

    def __init__(self, width, height, n_actions):
        self.width, self.height, self.n_actions = width, height, n_actions
        self.n_cells = width * height
        self.dim = self.n_cells + n_actions
        self.n_keys = self.n_cells * n_actions

    def _cell(self, state):
        if isinstance(state, (tuple, list)):
            col, row = state
            if not (0 <= col < self.width and 0 <= row < self.height):
                raise ValueError(f"cell {state!r} outside the grid")
            return row * self.width + col
        cell = int(state)
        if not 0 <= cell < self.n_cells:
            raise ValueError(f"cell {cell} outside the grid")
        return cell

    def encode(self, state, action):
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} out of range")
        v = np.zeros(self.dim)
        v[self._cell(state)] = 1.0
        v[self.n_cells + action] = 1.0
        return v

    def encode_batch(self, states, actions):
        states = np.asarray(states, dtype=np.int64)
        actions = np.asarray(actions, dtype=np.int64)
        if states.size and (states.min() < 0 or states.max() >= self.n_cells):
            raise ValueError("cell id outside the grid")
        if actions.size and (actions.min() < 0 or actions.max() >= self.n_actions):
            raise ValueError("action out of range")
        x = np.zeros((states.size, self.dim))
        rows = np.arange(states.size)
        x[rows, states] = 1.0
        x[rows, self.n_cells + actions] = 1.0
        return x

    def keys(self, states, actions):
        """Integer id per (cell, action); equal keys mean equal encodings."""
        return np.asarray(states, dtype=np.int64) * self.n_actions + np.asarray(actions)

    def unkey(self, keys):
        keys = np.asarray(keys, dtype=np.int64)
        return keys // self.n_actions, keys % self.n_actions

    def config(self):
        return {"scheme": self.scheme, "width": self.width, "height": self.height,
                "n_actions": self.n_actions}


class ContinuousConcatEncoder:
    """Raw state vector followed by a one-hot action."""

    scheme = "continuous_concat"

    def __init__(self, state_dim, n_actions):
        self.state_dim, self.n_actions = state_dim, n_actions
        self.dim = state_dim + n_actions

    def encode(self, state, action):
        state = np.asarray(state, dtype=np.float64)
        if state.shape != (self.state_dim,):
            raise ValueError(f"expected state of length {self.state_dim}")
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} out of range")
        v = np.zeros(self.dim)
        v[:self.state_dim] = state
        v[self.state_dim + action] = 1.0
        return v

    def encode_batch(self, states, actions):
        states = np.asarray(states, dtype=np.float64).reshape(-1, self.state_dim)
        actions = np.asarray(actions, dtype=np.int64)
        if actions.size and (actions.min() < 0 or actions.max() >= self.n_actions):
            raise ValueError("action out of range")
        onehot = np.zeros((actions.size, self.n_actions))
        onehot[np.arange(actions.size), actions] = 1.0
        return np.hstack([states, onehot])

    def keys(self, states, actions):
        return None

    def config(self):
        return {"scheme": self.scheme, "state_dim": self.state_dim,
                "n_actions": self.n_actions}


def encoder_from_config(cfg):
    cfg = dict(cfg)
    scheme = cfg.pop("scheme")
    if scheme == "grid_onehot":
        return GridOneHotEncoder(**cfg)
    if scheme == "continuous_concat":
        return ContinuousConcatEncoder(**cfg)
    raise ValueError(f"unknown encoder scheme {scheme!r}")


def encode(encoder, state, action):
    return encoder.encode(state, action)


class EpisodeBuffer:
    """Bounded FIFO of episodes; the oldest episode is evicted first."""

    def __init__(self, capacity=500):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.storage = deque(maxlen=capacity)

    def add(self, episode):
        self.storage.append(episode)

    def extend(self, episodes):
        for ep in episodes:
            self.add(ep)

    def sample(self, batch_size, rng):
        if not self.storage:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, len(self.storage), size=batch_size)
        return [self.storage[i] for i in idx]

    def __len__(self):
        return len(self.storage)

    def __iter__(self):
        return iter(self.storage)


@dataclass
class TrainConfig:
    batch_episodes: int = 32
    learning_rate: float = 1e-4
    total_train_steps: int = 500_000


class InferNet:
    """Shared-weight reward model trained on episode sums.

    ``dedupe`` evaluates each distinct encoded input once per minibatch and
    scatters the gradient back by multiplicity. It gives the same loss and
    gradient as the row-by-row computation and is only used without dropout.
    """

    def __init__(self, net, encoder, train_config=None, adam=None, dedupe=True):
        if net.in_dim != encoder.dim:
            raise nn.ShapeError(
                f"encoder emits {encoder.dim} features, network expects {net.in_dim}")
        if net.output_dim != 1:
            raise nn.ShapeError("reward network must have a scalar output")
        self.net = net
        self.encoder = encoder
        self.train_config = train_config or TrainConfig()
        self.adam = adam or nn.AdamState.for_model(net, self.train_config.learning_rate)
        self.dedupe = dedupe
        self.steps_trained = 0
        self._features = {}
        self._table = None

    @classmethod
    def create(cls, encoder, rng, hidden_layers=3, units=256, activation="leaky_relu",
               dropout=0.0, learning_rate=1e-4, batch_episodes=32,
               total_train_steps=500_000, **adam_kwargs):
        sizes = [encoder.dim] + [units] * hidden_layers + [1]
        net = nn.MLP.create(sizes, rng, activation=activation, dropout=dropout)
        cfg = TrainConfig(batch_episodes, learning_rate, total_train_steps)
        adam = nn.AdamState.for_model(net, learning_rate, **adam_kwargs)
        return cls(net, encoder, cfg, adam)

    def features(self, episode):
        cached = self._features.get(id(episode))
        if cached is not None and cached[0] is episode:
            return cached[1], cached[2]
        x = self.encoder.encode_batch(episode.states, episode.actions)
        keys = self.encoder.keys(episode.states, episode.actions)
        if len(self._features) > 20_000:
            self._features.clear()
        self._features[id(episode)] = (episode, x, keys)
        return x, keys

    def batch_loss_gradient(self, episodes, rng=None, train=True):
        """Mean episode loss over ``episodes`` and its gradient."""
        feats = [self.features(ep) for ep in episodes]
        n_ep = len(episodes)
        lengths = np.array([len(ep) for ep in episodes])
        seg = np.repeat(np.arange(n_ep), lengths)
        targets = np.array([ep.delayed_reward for ep in episodes], dtype=np.float64)
        if not np.all(np.isfinite(targets)):
            raise ValueError("delayed rewards must be finite")
        use_dropout = train and self.net.dropout > 0.0
        if self.dedupe and not use_dropout and feats[0][1] is not None:
            keys = np.concatenate([f[1] for f in feats])
            uniq, inverse = np.unique(keys, return_inverse=True)
            x = self.encoder.encode_batch(*self.encoder.unkey(uniq))
            out, cache = self.net.forward_cached(x)
            per_step = out[inverse, 0]
        else:
            inverse = None
            x = np.concatenate([f[0] for f in feats])
            out, cache = self.net.forward_cached(x, train=use_dropout, rng=rng)
            per_step = out[:, 0]
        sums = np.bincount(seg, weights=per_step, minlength=n_ep)
        residual = targets - sums
        loss = float(np.mean(residual ** 2))
        g_step = -2.0 * residual[seg] / n_ep
        if inverse is not None:
            g_out = np.bincount(inverse, weights=g_step, minlength=out.shape[0])[:, None]
        else:
            g_out = g_step[:, None]
        return loss, self.net.backward(cache, g_out)

    def train_minibatch(self, buffer, batch_size=None, rng=None):
        """Sample episodes with replacement, take one Adam step, return mean loss."""
        if len(buffer) == 0:
            raise ValueError("episode buffer is empty")
        batch_size = batch_size or self.train_config.batch_episodes
        batch = buffer.sample(batch_size, rng)
        loss, grads = self.batch_loss_gradient(batch, rng=rng)
        nn.adam_step(self.net, self.adam, grads)
        self.steps_trained += 1
        return loss

    def infer_rewards(self, episode):
        """Per-step rewards in eval mode.

        Identical inputs always get bit-identical outputs: discrete encoders
        read from a table over every input, others evaluate distinct rows once.
        """
        x, keys = self.features(episode)
        if keys is not None and hasattr(self.encoder, "n_keys"):
            return self._reward_table()[keys]
        uniq, inverse = np.unique(x, axis=0, return_inverse=True)
        return self.net.forward(uniq)[:, 0][inverse.ravel()]

    def _reward_table(self):
        fingerprint = tuple(float(p.sum()) for p in self.net.params())
        if self._table is None or self._table[0] != fingerprint:
            all_keys = np.arange(self.encoder.n_keys)
            x = self.encoder.encode_batch(*self.encoder.unkey(all_keys))
            self._table = (fingerprint, self.net.forward(x)[:, 0])
        return self._table[1]

    def episode_loss(self, episode):
        return (episode.delayed_reward - float(np.sum(self.infer_rewards(episode)))) ** 2

    def relabel(self, episode):
        return episode.with_rewards(self.infer_rewards(episode))

    # checkpoints ---------------------------------------------------------

    def save(self, path):
        meta = {
            "version": CHECKPOINT_VERSION,
            "encoder": self.encoder.config(),
            "activation": self.net.activation,
            "dropout": self.net.dropout,
            "negative_slope": self.net.negative_slope,
            "layers": [[l.out_dim, l.in_dim] for l in self.net.layers],
            "train_config": dataclasses.asdict(self.train_config),
            "adam": {k: getattr(self.adam, k) for k in
                     ("learning_rate", "beta1", "beta2", "epsilon", "step_count")},
            "steps_trained": self.steps_trained,
        }
        arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
        for i, layer in enumerate(self.net.layers):
            arrays[f"w{i}"] = layer.weights
            arrays[f"b{i}"] = layer.biases
            arrays[f"m_w{i}"] = self.adam.first_moment[2 * i]
            arrays[f"m_b{i}"] = self.adam.first_moment[2 * i + 1]
            arrays[f"v_w{i}"] = self.adam.second_moment[2 * i]
            arrays[f"v_b{i}"] = self.adam.second_moment[2 * i + 1]
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            if meta["version"] != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta['version']}")
            n = len(meta["layers"])
            layers = [nn.DenseLayer(data[f"w{i}"].copy(), data[f"b{i}"].copy()) for i in range(n)]
            m, v = [], []
            for i in range(n):
                m += [data[f"m_w{i}"].copy(), data[f"m_b{i}"].copy()]
                v += [data[f"v_w{i}"].copy(), data[f"v_b{i}"].copy()]
        net = nn.MLP(layers, activation=meta["activation"], dropout=meta["dropout"])
        net.negative_slope = meta["negative_slope"]
        adam = nn.AdamState(**meta["adam"], first_moment=m, second_moment=v)
        model = cls(net, encoder_from_config(meta["encoder"]),
                    TrainConfig(**meta["train_config"]), adam)
        model.steps_trained = meta["steps_trained"]
        return model


def train_minibatch(model, buffer, batch_size, rng):
    return model.train_minibatch(buffer, batch_size, rng)


def infer_rewards(model, episode):
    return model.infer_rewards(episode)


def relabel(model, episode):
    return model.relabel(episode)


def rmse(predicted, target):
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return float(np.sqrt(np.mean((predicted - target) ** 2)))


def dataset_rmse(model, episodes):
    """Per-step RMSE of a reward model against the episodes' clean rewards."""
    pred = np.concatenate([model.infer_rewards(ep) for ep in episodes])
    true = np.concatenate([ep.true_rewards for ep in episodes])
    return rmse(pred, true)
