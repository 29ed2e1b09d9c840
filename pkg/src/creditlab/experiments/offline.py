"""Offline experiments on fixed random-policy GridWorld datasets.

Covers policy learning from relabeled data, reward-recovery RMSE, the
fit-time benchmark, and the objective-vs-true loss diagnostic.
"""
from __future__ import annotations

import math
import time

import numpy as np
from scipy import stats

from ..agents import QTable
from ..envs import NoiseModel, RewardMode, delayed_stream
from ..gp import GPRewardModel, KernelConfig, gp_fit
from ..infernet import Episode, EpisodeBuffer, dataset_rmse
from .common import (evaluate, grid_encoder, grid_reference, make_gridworld, make_infernet,
                     manifest, noise_model, random_episodes, stream)
from .config import ConfigError
from .results import MetricSeries, Point, RunResult, aggregate


def _require(cfg, kind):
    if cfg.kind != kind:
        raise ConfigError(f"expected a {kind} config, got {cfg.kind!r}")


def kernel_config(cfg):
    return KernelConfig(lengthscale=cfg["gp.lengthscale"],
                        signal_variance=cfg["gp.signal_variance"],
                        noise_variance=cfg["gp.noise_variance"], jitter=cfg["gp.jitter"])


def fit_infernet(cfg, episodes, encoder, seed, tag, on_step=None):
    """Train a fresh reward model on a fixed episode set for the configured budget."""
    model = make_infernet(cfg, encoder, stream(seed, f"infernet-init/{tag}"))
    buffer = EpisodeBuffer(len(episodes))
    buffer.extend(episodes)
    rng = stream(seed, f"infernet-train/{tag}")
    if on_step is not None:
        on_step(0, None, model)
    for i in range(cfg["infernet.train_steps"]):
        loss = model.train_minibatch(buffer, rng=rng)
        if on_step is not None:
            on_step(i + 1, loss, model)
    return model


def fit_gp(cfg, episodes, encoder):
    # grouped exact solve: identical posterior, memory scales with distinct inputs
    return GPRewardModel(gp_fit(kernel_config(cfg), episodes, encoder, grouped=True), encoder)


def transitions(episodes, rewards):
    s = np.concatenate([ep.states for ep in episodes])
    a = np.concatenate([ep.actions for ep in episodes])
    s2 = np.concatenate([ep.next_states for ep in episodes])
    done = np.concatenate([np.r_[np.zeros(len(ep) - 1), float(ep.terminated)]
                           for ep in episodes])
    return s, a, np.concatenate(rewards), s2, done


def offline_q_learning(cfg, env, episodes, rewards, rng):
    """Minibatch tabular Q-learning on a fixed transition set."""
    table = QTable(env.n_states, env.n_actions, alpha=cfg["agent.lr"], gamma=cfg["agent.gamma"])
    s, a, r, s2, done = transitions(episodes, rewards)
    batch = cfg["agent.batch"]
    for _ in range(cfg["agent.train_steps"]):
        idx = rng.integers(0, s.size, size=batch)
        table.batch_update(s[idx], a[idx], r[idx], s2[idx], done[idx])
    return table


def _reward_views(cfg, mode, episodes, encoder, seed, n):
    """Per-episode reward vectors for ``mode`` plus the fitted model (if any)."""
    if mode is RewardMode.IMMEDIATE:
        return [ep.rewards for ep in episodes], None
    if mode is RewardMode.DELAYED:
        return [delayed_stream(ep.rewards) for ep in episodes], None
    if mode is RewardMode.INFERRED:
        model = fit_infernet(cfg, episodes, encoder, seed, f"n{n}")
    else:
        model = fit_gp(cfg, episodes, encoder)
    return [model.infer_rewards(ep) for ep in episodes], model


def run_offline(cfg):
    """Greedy return of policies learned offline, against dataset size."""
    _require(cfg, "offline_gridworld")
    env = make_gridworld(cfg)
    encoder = grid_encoder(env)
    sizes = cfg["dataset_sizes"]
    returns = {m: {} for m in cfg["reward_mode"]}
    errors = {m: {} for m in cfg["reward_mode"] if m in ("inferred", "gp")}
    artifacts = {}
    for seed in cfg.seeds:
        data = random_episodes(env, sizes[-1], stream(seed, "data"), noise_model(cfg, seed))
        eval_rng = stream(seed, "eval")
        for mode_name in cfg["reward_mode"]:
            returns[mode_name][seed] = {}
            if mode_name in errors:
                errors[mode_name][seed] = {}
        for n in sizes:
            subset = data[:n]
            for mode_name in cfg["reward_mode"]:
                mode = RewardMode(mode_name)
                rewards, model = _reward_views(cfg, mode, subset, encoder, seed, n)
                table = offline_q_learning(cfg, env, subset, rewards,
                                           stream(seed, f"agent/{mode_name}/n{n}"))
                ret = evaluate(env, lambda s: table.greedy(s, eval_rng), cfg["eval.episodes"])
                returns[mode_name][seed][n] = ret.mean()
                if model is not None:
                    errors[mode_name][seed][n] = dataset_rmse(model, subset)
                if n == sizes[-1]:
                    artifacts[f"qtable/{mode_name}/seed{seed}"] = table.dump()
    series = [aggregate(f"return/{m}", returns[m]) for m in cfg["reward_mode"]]
    series += [aggregate(f"rmse/{m}", errors[m]) for m in errors]
    extra = {"reference": grid_reference(env, stream(0, "reference"))}
    return RunResult(manifest(cfg, env, **extra), series, artifacts)


def rmse_curve(cfg):
    """Per-step reward-recovery RMSE of both inference methods vs dataset size."""
    _require(cfg, "rmse_curve")
    env = make_gridworld(cfg)
    encoder = grid_encoder(env)
    sizes = cfg["dataset_sizes"]
    per = {}
    for sigma in cfg["noise_levels"]:
        for seed in cfg.seeds:
            noise = NoiseModel(sigma, stream(seed, "noise"))
            data = random_episodes(env, sizes[-1], stream(seed, "data"), noise)
            for n in sizes:
                subset = data[:n]
                for mode_name in cfg["reward_mode"]:
                    mode = RewardMode(mode_name)
                    _, model = _reward_views(cfg, mode, subset, encoder, seed,
                                             f"{n}/sigma{sigma}")
                    key = f"rmse/{mode_name}/sigma={sigma:g}"
                    per.setdefault(key, {}).setdefault(seed, {})[n] = dataset_rmse(model, subset)
    series = [aggregate(name, per[name]) for name in per]
    return RunResult(manifest(cfg, env), series, {})


def exact_size_dataset(env, n_steps, rng):
    """Random-policy episodes holding exactly ``n_steps`` steps.

    The last episode is cut short if needed; its delayed reward is the sum
    over the steps it keeps.
    """
    episodes, total = [], 0
    while total < n_steps:
        ep = random_episodes(env, 1, rng)[0]
        keep = min(len(ep), n_steps - total)
        if keep < len(ep):
            ep = Episode.from_steps(ep.steps[:keep], terminated=False, truncated=True)
        episodes.append(ep)
        total += keep
    return episodes


def loglog_slope(ns, seconds):
    slope, _ = np.polyfit(np.log(ns), np.log(seconds), 1)
    return float(slope)


def time_bench(cfg):
    """Wall-clock fit time of the GP (dense) and the reward network against n.

    The network is trained for a fixed number of epochs, so its step count
    grows linearly with the data. Each timing is the minimum over repeats.
    """
    _require(cfg, "time_bench")
    env = make_gridworld(cfg)
    encoder = grid_encoder(env)
    seed = cfg.seeds[0]
    kernel = kernel_config(cfg)
    gp_times, net_times = {}, {}
    for n in cfg["bench.sizes"]:
        data = exact_size_dataset(env, n, stream(seed, f"bench-data/{n}"))
        gp_best = net_best = math.inf
        batch = cfg["infernet.batch_episodes"]
        steps = max(1, math.ceil(cfg["bench.infernet_epochs"] * len(data) / batch))
        for r in range(cfg["bench.repeats"]):
            t0 = time.perf_counter()
            gp_fit(kernel, data, encoder)
            gp_best = min(gp_best, time.perf_counter() - t0)
            model = make_infernet(cfg, encoder, stream(seed, f"bench-init/{n}/{r}"))
            buffer = EpisodeBuffer(len(data))
            buffer.extend(data)
            rng = stream(seed, f"bench-train/{n}/{r}")
            t0 = time.perf_counter()
            for _ in range(steps):
                model.train_minibatch(buffer, rng=rng)
            net_best = min(net_best, time.perf_counter() - t0)
        gp_times[n], net_times[n] = gp_best, net_best
    ns = np.array(cfg["bench.sizes"], dtype=float)
    slopes = {"gp": loglog_slope(ns, [gp_times[n] for n in cfg["bench.sizes"]]),
              "inferred": loglog_slope(ns, [net_times[n] for n in cfg["bench.sizes"]])}
    series = [MetricSeries("seconds/gp", [Point(n, gp_times[n], 0.0, 1) for n in gp_times]),
              MetricSeries("seconds/inferred",
                           [Point(n, net_times[n], 0.0, 1) for n in net_times])]
    return RunResult(manifest(cfg, env, loglog_slopes=slopes), series, {})


def loss_diag(cfg):
    """Objective loss and true per-step MSE recorded at evenly spaced checkpoints."""
    _require(cfg, "loss_diag")
    env = make_gridworld(cfg)
    encoder = grid_encoder(env)
    total = cfg["infernet.train_steps"]
    marks = set(np.linspace(0, total, cfg["diag.checkpoints"] + 1).round().astype(int)[1:])
    objective, true_mse = {}, {}
    correlations = {}
    for seed in cfg.seeds:
        data = random_episodes(env, cfg["diag.episodes"], stream(seed, "data"),
                               noise_model(cfg, seed))
        objective[seed], true_mse[seed] = {}, {}

        def record(step, _loss, model, seed=seed, data=data):
            if step == 0 or step in marks:
                objective[seed][step] = objective_loss(model, data)
                true_mse[seed][step] = dataset_rmse(model, data) ** 2

        fit_infernet(cfg, data, encoder, seed, "diag", on_step=record)
        xs = sorted(objective[seed])
        rho = stats.spearmanr([objective[seed][x] for x in xs], [true_mse[seed][x] for x in xs])
        correlations[seed] = float(rho.statistic if hasattr(rho, "statistic") else rho[0])
    series = [aggregate("objective_loss", objective), aggregate("true_mse", true_mse)]
    return RunResult(manifest(cfg, env, spearman=correlations), series, {})


def objective_loss(model, episodes):
    """Mean squared gap between each episode's delayed reward and its inferred sum."""
    gaps = [ep.delayed_reward - float(np.sum(model.infer_rewards(ep))) for ep in episodes]
    return float(np.mean(np.square(gaps)))
