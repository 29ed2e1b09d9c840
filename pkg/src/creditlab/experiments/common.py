"""Shared plumbing for the experiment runners: seeding, rollouts, evaluation."""
from __future__ import annotations

import zlib

import numpy as np

from .. import __version__
from ..envs import CartPole, GridWorld, NoiseModel, optimal_value
from ..infernet import Episode, GridOneHotEncoder, InferNet, Step


def stream(seed, name):
    """Independent generator for one purpose within one seeded run.

    Keyed by name, so adding a new stream never shifts existing ones.
    """
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def make_gridworld(cfg):
    return GridWorld(width=cfg["env.width"], height=cfg["env.height"],
                     layout_seed=cfg["layout_seed"], max_steps=cfg["env.max_steps"])


def grid_encoder(env):
    return GridOneHotEncoder(env.width, env.height, env.n_actions)


def make_infernet(cfg, encoder, rng):
    return InferNet.create(
        encoder, rng,
        hidden_layers=cfg["infernet.hidden_layers"], units=cfg["infernet.units"],
        activation=cfg["infernet.activation"], dropout=cfg["infernet.dropout"],
        learning_rate=cfg["infernet.lr"], batch_episodes=cfg["infernet.batch_episodes"],
        total_train_steps=cfg.get("infernet.train_steps", 0),
        beta1=cfg["infernet.adam_beta1"], beta2=cfg["infernet.adam_beta2"],
        epsilon=cfg["infernet.adam_epsilon"])


def play_episode(env, choose, noise=None, on_step=None):
    """Run one episode with ``choose(state) -> action``.

    Observed rewards pass through ``noise``; the clean reward is kept on each
    step. ``on_step()`` is called after every environment step.
    """
    steps = []
    s = env.reset()
    done = False
    while not done:
        a = choose(s)
        s2, r, done = env.step(a)
        observed = noise(r) if noise is not None else r
        steps.append(Step(_freeze(s), a, float(observed), _freeze(s2), float(r)))
        if on_step is not None:
            on_step()
        s = s2
    return Episode.from_steps(steps, terminated=not env.truncated, truncated=env.truncated)


def _freeze(s):
    return s if isinstance(s, (int, np.integer)) else tuple(float(v) for v in s)


def random_episodes(env, n, rng, noise=None):
    return [play_episode(env, lambda s: int(rng.integers(env.n_actions)), noise)
            for _ in range(n)]


def evaluate(env, greedy, episodes):
    """Undiscounted noise-free returns of ``greedy(state) -> action``."""
    returns = np.empty(episodes)
    for i in range(episodes):
        s = env.reset()
        total, done = 0.0, False
        while not done:
            s, r, done = env.step(greedy(s))
            total += r
        returns[i] = total
    return returns


def grid_reference(env, rng, episodes=2000):
    """Optimal and uniform-random returns used as reference lines."""
    v_star, best_return, _ = optimal_value(env, gamma=0.9)
    rand = evaluate(env, lambda s: int(rng.integers(env.n_actions)), episodes)
    return {"optimal_discounted_value": v_star, "optimal_return": best_return,
            "random_return_mean": float(rand.mean()), "random_return_std": float(rand.std()),
            "random_return_episodes": episodes}


def manifest(cfg, env=None, **extra):
    out = {"config": cfg.resolved(), "config_hash": cfg.hash(), "seeds": cfg.seeds,
           "code_version": __version__, "experiment": cfg.kind}
    if isinstance(env, GridWorld):
        out["layout_seed"] = env.layout_seed
        out["layout"] = env.layout_map()
    elif isinstance(env, CartPole):
        out["environment"] = "cartpole"
    out.update(extra)
    return out


def noise_model(cfg, seed):
    return NoiseModel(cfg.get("noise.sigma", 0.0), stream(seed, "noise"))
