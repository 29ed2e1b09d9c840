"""GridWorld and CartPole environments, reward noise, and reward views.

Both environments return ``(next_state, reward, done)`` from ``step`` and
expose ``truncated`` so callers can tell a step-cap stop from a real
terminal state.
"""
from __future__ import annotations

import enum
import math

import numpy as np


class EpisodeOver(RuntimeError):
    """Raised when stepping an environment whose episode has finished."""


UP, LEFT, DOWN = 0, 1, 2
GRID_ACTIONS = ("up", "left", "down")
_MOVES = {UP: (0, -1), LEFT: (-1, 0), DOWN: (0, 1)}


def make_layout(width, height, n_positive, n_negative, seed):
    """Random reward-cell placement, excluding the start and terminal cells."""
    start = (height - 1) * width + (width - 1)
    terminal = 0
    candidates = np.array([c for c in range(width * height) if c not in (start, terminal)])
    rng = np.random.default_rng(seed)
    chosen = rng.choice(candidates, size=n_positive + n_negative, replace=False)
    cells = {int(c): 1.0 for c in chosen[:n_positive]}
    cells.update({int(c): -1.0 for c in chosen[n_positive:]})
    return cells


class GridWorld:
    """14x7 grid; start bottom-right, terminal top-left, actions up/left/down.

    States are integer cell ids ``row * width + col`` with the origin at the
    top-left. Reward cells pay out once per episode. Moves off the grid leave
    the agent in place.
    """

    n_actions = 3

    def __init__(self, width=14, height=7, layout_seed=7, max_steps=100,
                 n_positive=5, n_negative=4, reward_cells=None):
        if max_steps < 1:
            raise ValueError("max_steps must be positive")
        self.width = width
        self.height = height
        self.layout_seed = layout_seed
        self.max_steps = max_steps
        if reward_cells is None:
            reward_cells = make_layout(width, height, n_positive, n_negative, layout_seed)
        self.reward_cells = dict(reward_cells)
        self.start = self.cell(width - 1, height - 1)
        self.terminal = self.cell(0, 0)
        if self.start in self.reward_cells or self.terminal in self.reward_cells:
            raise ValueError("start/terminal cells cannot hold rewards")
        self.n_states = width * height
        self.consumed = set()
        self._pos = self.start
        self._t = 0
        self.done = True
        self.truncated = False

    def cell(self, col, row):
        return row * self.width + col

    def coords(self, cell):
        return cell % self.width, cell // self.width

    @property
    def position(self):
        return self.coords(self._pos)

    @property
    def steps_taken(self):
        return self._t

    def reset(self):
        self._pos = self.start
        self._t = 0
        self.consumed = set()
        self.done = False
        self.truncated = False
        return self._pos

    def next_cell(self, cell, action):
        if action not in _MOVES:
            raise ValueError(f"invalid action {action!r}")
        col, row = self.coords(cell)
        dc, dr = _MOVES[action]
        c2, r2 = col + dc, row + dr
        if not (0 <= c2 < self.width and 0 <= r2 < self.height):
            return cell
        return self.cell(c2, r2)

    def step(self, action):
        if self.done:
            raise EpisodeOver("step() called on a finished episode; call reset()")
        nxt = self.next_cell(self._pos, action)
        reward = 0.0
        if nxt != self._pos and nxt in self.reward_cells and nxt not in self.consumed:
            reward = self.reward_cells[nxt]
            self.consumed.add(nxt)
        self._pos = nxt
        self._t += 1
        if nxt == self.terminal:
            self.done = True
        elif self._t >= self.max_steps:
            self.done = True
            self.truncated = True
        return nxt, reward, self.done

    def layout_map(self):
        """Text map: ``.`` empty, ``+``/``-`` reward cells, ``S`` start, ``T`` terminal."""
        rows = []
        for r in range(self.height):
            line = []
            for c in range(self.width):
                cell = self.cell(c, r)
                if cell == self.start:
                    line.append("S")
                elif cell == self.terminal:
                    line.append("T")
                elif cell in self.reward_cells:
                    line.append("+" if self.reward_cells[cell] > 0 else "-")
                else:
                    line.append(".")
            rows.append("".join(line))
        return "\n".join(rows)

    @classmethod
    def from_layout_map(cls, text, max_steps=100):
        rows = [r for r in text.strip().splitlines()]
        height, width = len(rows), len(rows[0])
        cells = {}
        for r, line in enumerate(rows):
            for c, ch in enumerate(line):
                if ch in "+-":
                    cells[r * width + c] = 1.0 if ch == "+" else -1.0
        return cls(width, height, max_steps=max_steps, reward_cells=cells, layout_seed=None)


def optimal_value(env, gamma=0.9, tol=1e-12, max_iter=10_000):
    """Value iteration over the augmented (cell, consumed-set) state space.

    Returns ``(value, path_return, actions)``: the optimal discounted return
    from the start, the undiscounted reward collected by following the
    optimal policy, and the action sequence it takes.
    """
    cells = sorted(env.reward_cells)
    bit = {c: i for i, c in enumerate(cells)}
    n_masks = 1 << len(cells)
    n_s, n_a = env.n_states, env.n_actions
    masks = np.arange(n_masks)
    nxt = np.array([[env.next_cell(s, a) for a in range(n_a)] for s in range(n_s)])
    # reward and successor mask for each (s, a, mask)
    rew = np.zeros((n_s, n_a, n_masks))
    m2 = np.broadcast_to(masks, (n_s, n_a, n_masks)).copy()
    for s in range(n_s):
        for a in range(n_a):
            c = nxt[s, a]
            if c != s and c in bit:
                fresh = (masks >> bit[c]) & 1 == 0
                rew[s, a, fresh] = env.reward_cells[c]
                m2[s, a, fresh] = masks[fresh] | (1 << bit[c])
    nonterminal = (nxt != env.terminal).astype(float)[:, :, None]
    v = np.zeros((n_s, n_masks))
    for _ in range(max_iter):
        q = rew + gamma * nonterminal * v[nxt[:, :, None], m2]
        v_new = q.max(axis=1)
        v_new[env.terminal] = 0.0
        if np.max(np.abs(v_new - v)) < tol:
            v = v_new
            break
        v = v_new
    q = rew + gamma * nonterminal * v[nxt[:, :, None], m2]
    s, mask, total, actions = env.start, 0, 0.0, []
    for _ in range(env.max_steps):
        if s == env.terminal:
            break
        a = int(np.argmax(q[s, :, mask]))
        actions.append(a)
        total += rew[s, a, mask]
        s, mask = int(nxt[s, a]), int(m2[s, a, mask])
    return float(v[env.start, 0]), float(total), actions


class CartPole:
    """Classic cart-pole with Euler integration.

    Reward is 1.0 for each step after which the pole is still within limits
    and 0.0 on the failing step. Reaching ``max_steps`` truncates.
    """

    n_actions = 2
    state_dim = 4

    def __init__(self, max_steps=200, seed=None):
        self.gravity = 9.8
        self.masscart = 1.0
        self.masspole = 0.1
        self.total_mass = self.masscart + self.masspole
        self.length = 0.5  # half the pole length
        self.polemass_length = self.masspole * self.length
        self.force_mag = 10.0
        self.tau = 0.02
        self.theta_threshold = 12 * 2 * math.pi / 360
        self.x_threshold = 2.4
        self.max_steps = max_steps
        self.rng = np.random.default_rng(seed)
        self.state = np.zeros(4)
        self._t = 0
        self.done = True
        self.truncated = False

    def reset(self, state=None):
        if state is None:
            state = self.rng.uniform(-0.05, 0.05, size=4)
        self.state = np.array(state, dtype=np.float64)
        self._t = 0
        self.done = False
        self.truncated = False
        return self.state.copy()

    def step(self, action):
        if self.done:
            raise EpisodeOver("step() called on a finished episode; call reset()")
        if action not in (0, 1):
            raise ValueError(f"invalid action {action!r}")
        x, x_dot, theta, theta_dot = self.state
        force = self.force_mag if action == 1 else -self.force_mag
        cos, sin = math.cos(theta), math.sin(theta)
        temp = (force + self.polemass_length * theta_dot ** 2 * sin) / self.total_mass
        theta_acc = (self.gravity * sin - cos * temp) / (
            self.length * (4.0 / 3.0 - self.masspole * cos ** 2 / self.total_mass))
        x_acc = temp - self.polemass_length * theta_acc * cos / self.total_mass
        x = x + self.tau * x_dot
        x_dot = x_dot + self.tau * x_acc
        theta = theta + self.tau * theta_dot
        theta_dot = theta_dot + self.tau * theta_acc
        self.state = np.array([x, x_dot, theta, theta_dot])
        self._t += 1
        failed = abs(x) > self.x_threshold or abs(theta) > self.theta_threshold
        reward = 0.0 if failed else 1.0
        if failed:
            self.done = True
        elif self._t >= self.max_steps:
            self.done = True
            self.truncated = True
        return self.state.copy(), reward, self.done


class NoiseModel:
    """Adds independent N(0, sigma^2) noise to each reward."""

    def __init__(self, sigma, rng=None):
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        self.sigma = float(sigma)
        self.rng = rng if rng is not None else np.random.default_rng()

    def apply(self, reward):
        if self.sigma == 0.0:
            return reward
        return reward + self.rng.normal(0.0, self.sigma)

    __call__ = apply


def apply_noise(noise, reward):
    return noise.apply(reward)


class RewardMode(str, enum.Enum):
    IMMEDIATE = "immediate"
    DELAYED = "delayed"
    INFERRED = "inferred"
    # offline-only: rewards inferred by the aggregated GP
    GP = "gp"


def delayed_stream(rewards):
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.zeros_like(rewards)
    if rewards.size:
        out[-1] = math.fsum(rewards)
    return out


def wrap_rewards(mode, episode, model=None):
    """Per-step reward stream the agent sees for ``episode`` under ``mode``.

    ``model`` is anything with ``infer_rewards(episode)`` (an InferNet or a
    fitted GP wrapper) and is required for the inferred modes.
    """
    mode = RewardMode(mode)
    if mode is RewardMode.IMMEDIATE:
        return episode.rewards.copy()
    if mode is RewardMode.DELAYED:
        out = np.zeros(len(episode))
        out[-1] = episode.delayed_reward
        return out
    if model is None:
        raise ValueError(f"reward mode {mode.value!r} needs a reward model")
    return np.asarray(model.infer_rewards(episode), dtype=np.float64)
