"""Tabular Q-learning, SARSA(lambda) with eligibility traces, and a small DQN."""
from __future__ import annotations

import hashlib

import numpy as np

from . import nn


def epsilon_greedy(values, epsilon, rng):
    """Greedy action with uniform random tie-breaking; uniform with prob. epsilon."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("no action values given")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(values.size))
    best = np.flatnonzero(values == values.max())
    if best.size == 1:
        return int(best[0])
    return int(best[rng.integers(best.size)])


class LinearSchedule:
    """Linear interpolation from ``start`` to ``end`` over ``horizon`` ticks, then flat."""

    def __init__(self, start=1.0, end=0.05, horizon=1000):
        self.start, self.end, self.horizon = start, end, max(int(horizon), 1)

    def __call__(self, t):
        frac = min(max(t, 0) / self.horizon, 1.0)
        return self.start + frac * (self.end - self.start)


class QTable:
    """Tabular action values over integer states; unvisited entries read as 0."""

    def __init__(self, n_states, n_actions, alpha=0.1, gamma=0.9):
        self.values = np.zeros((n_states, n_actions))
        self.alpha = alpha
        self.gamma = gamma

    def update(self, s, a, r, s2, done):
        """One Q-learning backup; returns the TD error."""
        bootstrap = 0.0 if done else self.gamma * self.values[s2].max()
        delta = r + bootstrap - self.values[s, a]
        self.values[s, a] += self.alpha * delta
        return delta

    def batch_update(self, s, a, r, s2, done):
        """Minibatch backup: TD errors use the table as it was before the batch.

        Repeated pairs in the batch accumulate their updates.
        """
        s, a, s2 = (np.asarray(v, dtype=np.int64) for v in (s, a, s2))
        done = np.asarray(done, dtype=np.float64)
        target = np.asarray(r, dtype=np.float64) + \
            self.gamma * (1.0 - done) * self.values[s2].max(axis=1)
        delta = target - self.values[s, a]
        np.add.at(self.values, (s, a), self.alpha * delta)
        return delta

    def act(self, s, epsilon, rng):
        return epsilon_greedy(self.values[s], epsilon, rng)

    def greedy(self, s, rng):
        return epsilon_greedy(self.values[s], 0.0, rng)

    def dump(self):
        """Text dump: one ``state action value`` triple per line (repr floats)."""
        lines = []
        for s in range(self.values.shape[0]):
            for a in range(self.values.shape[1]):
                lines.append(f"{s} {a} {float(self.values[s, a])!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dump(cls, text, alpha=0.1, gamma=0.9):
        rows = [line.split() for line in text.strip().splitlines()]
        n_s = max(int(r[0]) for r in rows) + 1
        n_a = max(int(r[1]) for r in rows) + 1
        table = cls(n_s, n_a, alpha, gamma)
        for s, a, v in rows:
            table.values[int(s), int(a)] = float(v)
        return table


def q_update(table, s, a, r, s2, done):
    table.update(s, a, r, s2, done)
    return table


class TDLambda:
    """On-policy action-value TD(lambda) (SARSA(lambda)) with a choice of traces.

    Dutch traces follow ``e <- g*l*e + (1 - alpha*g*l*e(s,a)) * x(s,a)`` where
    ``x`` is the indicator of the visited pair; the decay is applied once per
    step before the visited pair is bumped.
    """

    TRACE_KINDS = ("dutch", "accumulating", "replacing")

    def __init__(self, n_states, n_actions, lam=0.91, alpha=0.1, gamma=0.9, trace="dutch"):
        if trace not in self.TRACE_KINDS:
            raise ValueError(f"unknown trace kind {trace!r}")
        self.values = np.zeros((n_states, n_actions))
        self.traces = np.zeros((n_states, n_actions))
        self.lam, self.alpha, self.gamma, self.trace = lam, alpha, gamma, trace

    def begin_episode(self):
        self.traces[...] = 0.0

    def step(self, s, a, r, s2, a2, done):
        decay = self.gamma * self.lam
        old = self.traces[s, a]
        self.traces *= decay
        if self.trace == "dutch":
            self.traces[s, a] += 1.0 - self.alpha * decay * old
        elif self.trace == "accumulating":
            self.traces[s, a] += 1.0
        else:
            self.traces[s, a] = 1.0
        bootstrap = 0.0 if done else self.gamma * self.values[s2, a2]
        delta = r + bootstrap - self.values[s, a]
        self.values += self.alpha * delta * self.traces
        return delta

    def act(self, s, epsilon, rng):
        return epsilon_greedy(self.values[s], epsilon, rng)

    def greedy(self, s, rng):
        return epsilon_greedy(self.values[s], 0.0, rng)


def td_lambda_step(state, s, a, r, s2, a2, done):
    state.step(s, a, r, s2, a2, done)
    return state


class ReplayBuffer:
    """Ring buffer of (s, a, r, s', done) transitions."""

    def __init__(self, capacity, state_dim):
        self.capacity = int(capacity)
        self.states = np.zeros((self.capacity, state_dim))
        self.next_states = np.zeros((self.capacity, state_dim))
        self.actions = np.zeros(self.capacity, dtype=np.int64)
        self.rewards = np.zeros(self.capacity)
        self.dones = np.zeros(self.capacity)
        self.size = 0
        self._next = 0

    def add(self, s, a, r, s2, done):
        i = self._next
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_states[i] = s2
        self.dones[i] = float(done)
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size, rng):
        idx = rng.integers(0, self.size, size=batch_size)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.dones[idx])

    def __len__(self):
        return self.size


class DQNAgent:
    """Plain DQN: online/target MLPs, uniform replay, periodic hard target sync."""

    def __init__(self, state_dim, n_actions, rng, hidden_layers=2, units=32,
                 learning_rate=2.5e-4, gamma=0.99, batch_size=32, buffer_size=500_000,
                 target_sync=500):
        sizes = [state_dim] + [units] * hidden_layers + [n_actions]
        self.online = nn.MLP.create(sizes, rng, activation="relu")
        self.target = self.online.copy()
        self.adam = nn.AdamState.for_model(self.online, learning_rate)
        self.replay = ReplayBuffer(buffer_size, state_dim)
        self.n_actions = n_actions
        self.gamma = gamma
        self.batch_size = batch_size
        self.target_sync = target_sync
        self.train_steps = 0

    def q_values(self, state):
        return self.online.forward(np.asarray(state, dtype=np.float64))

    def act(self, state, epsilon, rng):
        if epsilon > 0.0 and rng.random() < epsilon:
            return int(rng.integers(self.n_actions))
        return epsilon_greedy(self.q_values(state), 0.0, rng)

    def train_step(self, rng):
        """One Adam step on the mean squared TD error; returns the loss."""
        if len(self.replay) < self.batch_size:
            raise ValueError(
                f"replay holds {len(self.replay)} transitions, need {self.batch_size}")
        s, a, r, s2, done = self.replay.sample(self.batch_size, rng)
        q_next = self.target.forward(s2).max(axis=1)
        y = r + self.gamma * q_next * (1.0 - done)
        q, cache = self.online.forward_cached(s)
        rows = np.arange(self.batch_size)
        err = q[rows, a] - y
        grad_out = np.zeros_like(q)
        grad_out[rows, a] = 2.0 * err / self.batch_size
        nn.adam_step(self.online, self.adam, self.online.backward(cache, grad_out))
        self.train_steps += 1
        if self.train_steps % self.target_sync == 0:
            self.target.load_params_from(self.online)
        return float(np.mean(err ** 2))


def dqn_train_step(agent, rng):
    return agent.train_step(rng)


def param_hash(model):
    h = hashlib.sha256()
    for p in model.params():
        h.update(np.ascontiguousarray(p).tobytes())
    return h.hexdigest()
