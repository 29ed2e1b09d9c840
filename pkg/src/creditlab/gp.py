"""Exact GP reward inference when only episode sums are observed.

Latent per-step rewards ``f ~ GP(0, k)``; each episode contributes one
observation ``y_e = sum_{t in e} f(x_t) + noise``. With ``A`` the E x n 0/1
episode-membership matrix the posterior mean at a query ``q`` is

    m(q) = k(q, X) A^T (A K A^T + s_n^2 I)^{-1} y.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    lengthscale: float = 1.0
    signal_variance: float = 1.0
    noise_variance: float = 0.1
    jitter: float = 1e-8
    kind: str = "rbf"

    def __post_init__(self):
        if self.kind != "rbf":
            raise ValueError(f"unsupported kernel {self.kind!r}")
        if self.lengthscale <= 0 or self.signal_variance <= 0:
            raise ValueError("lengthscale and signal variance must be positive")
        if self.noise_variance < 0 or self.jitter < 0:
            raise ValueError("noise variance and jitter must be non-negative")


def rbf_kernel(a, b, config):
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    sq = (np.einsum("ij,ij->i", a, a)[:, None] + np.einsum("ij,ij->i", b, b)[None, :]
          - 2.0 * a @ b.T)
    np.maximum(sq, 0.0, out=sq)
    return config.signal_variance * np.exp(-0.5 * sq / config.lengthscale ** 2)


@dataclass
class AggregatedGP:
    config: KernelConfig
    inputs: np.ndarray  # (n, d)
    episode_index: np.ndarray  # (n,) episode id of each input
    observations: np.ndarray  # (E,)
    solved_dual: np.ndarray  # (E,)
    jitter_used: float = 0.0

    @property
    def step_weights(self):
        # A^T alpha: each step inherits its episode's dual weight
        return self.solved_dual[self.episode_index]

    def predict(self, queries):
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        return rbf_kernel(q, self.inputs, self.config) @ self.step_weights

    def infer_rewards(self, episode, encoder):
        return self.predict(encoder.encode_batch(episode.states, episode.actions))


def aggregation_matrix(episode_index, n_episodes):
    a = np.zeros((n_episodes, episode_index.size))
    a[episode_index, np.arange(episode_index.size)] = 1.0
    return a


def _solve(system, y, config):
    system = system.copy()
    system[np.diag_indices_from(system)] += config.noise_variance
    jitter = 0.0
    try:
        factor = linalg.cho_factor(system, lower=True)
    except linalg.LinAlgError:
        jitter = config.jitter
        system[np.diag_indices_from(system)] += jitter
        try:
            factor = linalg.cho_factor(system, lower=True)
        except linalg.LinAlgError as exc:
            eig = np.linalg.eigvalsh(system)
            raise NumericalError(
                f"aggregated system not positive definite after jitter {jitter:g}: "
                f"min eigenvalue {eig[0]:.3e}, max {eig[-1]:.3e}, size {len(y)}") from exc
    return linalg.cho_solve(factor, y), jitter


def gp_fit(config, episodes, encoder, grouped=False):
    """Condition the GP on the delayed rewards of ``episodes``.

    The default builds the full n x n kernel. ``grouped=True`` needs an
    encoder with integer ``keys`` and works with the distinct inputs only:
    ``A K A^T = C K_u C^T`` with ``C`` the per-episode count of each distinct
    input. Both give the same posterior; the grouped form needs O(u^2) memory.
    """
    episodes = list(episodes)
    if not episodes:
        raise ValueError("gp_fit needs at least one episode")
    idx = np.repeat(np.arange(len(episodes)), [len(ep) for ep in episodes])
    y = np.array([ep.delayed_reward for ep in episodes], dtype=np.float64)
    if grouped:
        keys = np.concatenate([encoder.keys(ep.states, ep.actions) for ep in episodes])
        uniq, inverse = np.unique(keys, return_inverse=True)
        x_u = encoder.encode_batch(*encoder.unkey(uniq))
        counts = np.zeros((len(episodes), uniq.size))
        np.add.at(counts, (idx, inverse), 1.0)
        k_u = rbf_kernel(x_u, x_u, config)
        dual, jitter = _solve(counts @ k_u @ counts.T, y, config)
        return GroupedGP(config, x_u, counts, y, dual, jitter)
    x = np.concatenate([encoder.encode_batch(ep.states, ep.actions) for ep in episodes])
    k = rbf_kernel(x, x, config)
    a = aggregation_matrix(idx, len(episodes))
    dual, jitter = _solve(a @ k @ a.T, y, config)
    return AggregatedGP(config, x, idx, y, dual, jitter)


@dataclass
class GroupedGP:
    """Posterior from :func:`gp_fit` with ``grouped=True``; same predictions."""

    config: KernelConfig
    inputs: np.ndarray  # (u, d) distinct inputs
    counts: np.ndarray  # (E, u)
    observations: np.ndarray
    solved_dual: np.ndarray
    jitter_used: float = 0.0

    def predict(self, queries):
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        return rbf_kernel(q, self.inputs, self.config) @ (self.counts.T @ self.solved_dual)

    def infer_rewards(self, episode, encoder):
        return self.predict(encoder.encode_batch(episode.states, episode.actions))


def gp_predict(model, query):
    if model is None or model.solved_dual is None:
        raise ValueError("GP has not been fitted")
    return float(model.predict(query)[0])


def gp_infer_episode(model, episode, encoder):
    return model.infer_rewards(episode, encoder)


class GPRewardModel:
    """Adapter giving a fitted GP the ``infer_rewards(episode)`` interface."""

    def __init__(self, gp, encoder):
        self.gp, self.encoder = gp, encoder

    def infer_rewards(self, episode):
        return self.gp.infer_rewards(episode, self.encoder)
