"""Online training: reward model and agent learn side by side.

Phase 1 fills the episode buffer with random-policy episodes and pretrains
the reward model. Phase 2 alternates acting, reward-model updates, and agent
learning. A finished episode's rewards are relabeled once, at episode end,
and only then handed to the agent.
"""
from __future__ import annotations

from pathlib import Path

from ..agents import DQNAgent, LinearSchedule, QTable, TDLambda
from ..envs import CartPole, RewardMode, wrap_rewards
from ..infernet import ContinuousConcatEncoder, EpisodeBuffer
from .common import (evaluate, grid_encoder, grid_reference, make_gridworld, make_infernet,
                     manifest, noise_model, play_episode, stream)
from .config import ConfigError
from .results import RunResult, aggregate


class _RewardModelTrainer:
    """Owns the reward model, its episode buffer, and the update budget."""

    def __init__(self, cfg, encoder, seed):
        self.model = make_infernet(cfg, encoder, stream(seed, "infernet-init"))
        self.buffer = EpisodeBuffer(cfg["infernet.buffer"])
        self.rng = stream(seed, "infernet-train")
        self.budget = cfg["infernet.train_steps"]
        self.every = cfg["infernet.train_every"]
        self.ticks = 0
        self.losses = []

    def update(self):
        if self.model.steps_trained < self.budget and len(self.buffer):
            self.losses.append(self.model.train_minibatch(self.buffer, rng=self.rng))

    def tick(self):
        self.ticks += 1
        if self.ticks % self.every == 0:
            self.update()

    def pretrain(self, env, cfg, noise, rng):
        k = cfg["infernet.pretrain_episodes"]
        n_updates = min(cfg["infernet.pretrain_steps"], self.budget)
        for i in range(k):
            self.buffer.add(play_episode(env, lambda s: int(rng.integers(env.n_actions)), noise))
            # spread the pretraining updates evenly, at least one per episode
            todo = max(1, n_updates * (i + 1) // k - n_updates * i // k)
            for _ in range(todo):
                self.update()


def _tabular_agent(cfg, env):
    if cfg["agent"] == "q_learning":
        return QTable(env.n_states, env.n_actions, alpha=cfg["agent.lr"],
                      gamma=cfg["agent.gamma"])
    return TDLambda(env.n_states, env.n_actions, lam=cfg["td.lambda"], alpha=cfg["td.alpha"],
                    gamma=cfg["agent.gamma"], trace=cfg["td.traces"])


def learn_episode(agent, episode, rewards, epsilon, rng):
    """Replay one finished episode through a tabular agent's update rule.

    ``done`` is only set on a real terminal transition; a step-cap stop
    bootstraps from the final state.
    """
    states, actions, nxt = episode.states, episode.actions, episode.next_states
    last = len(episode) - 1
    if isinstance(agent, QTable):
        for t in range(len(episode)):
            done = t == last and episode.terminated
            agent.update(states[t], actions[t], rewards[t], nxt[t], done)
        return
    agent.begin_episode()
    for t in range(len(episode)):
        done = t == last and episode.terminated
        if t < last:
            a2 = actions[t + 1]
        else:
            a2 = 0 if done else agent.act(nxt[t], epsilon, rng)
        agent.step(states[t], actions[t], rewards[t], nxt[t], a2, done)


def gridworld_seed(cfg, mode, seed):
    """One seed of one reward mode. Returns ``(curve, agent, trainer)``."""
    mode = RewardMode(mode)
    env = make_gridworld(cfg)
    eval_env = make_gridworld(cfg)
    act_rng = stream(seed, "policy")
    eval_rng = stream(seed, "eval")
    noise = noise_model(cfg, seed)
    agent = _tabular_agent(cfg, env)
    trainer = None
    if mode is RewardMode.INFERRED:
        trainer = _RewardModelTrainer(cfg, grid_encoder(env), seed)
        trainer.pretrain(env, cfg, noise, stream(seed, "pretrain-policy"))
    n_episodes = cfg["agent.episodes"]
    schedule = LinearSchedule(cfg["agent.eps_start"], cfg["agent.eps_end"],
                              cfg["agent.eps_decay_fraction"] * n_episodes)
    curve = {}
    for m in range(n_episodes):
        eps = schedule(m)
        episode = play_episode(env, lambda s: agent.act(s, eps, act_rng), noise,
                               trainer.tick if trainer else None)
        rewards = wrap_rewards(mode, episode, trainer.model if trainer else None)
        learn_episode(agent, episode, rewards, eps, act_rng)
        if trainer:
            trainer.buffer.add(episode)
        if (m + 1) % cfg["eval.interval"] == 0 or m + 1 == n_episodes:
            curve[m + 1] = evaluate(eval_env, lambda s: agent.greedy(s, eval_rng),
                                    cfg["eval.episodes"]).mean()
    return curve, agent, trainer


def cartpole_seed(cfg, mode, seed):
    """One DQN run on CartPole. Returns ``(curve, agent, trainer)``."""
    mode = RewardMode(mode)
    env = CartPole(cfg["env.max_steps"], seed=stream(seed, "env"))
    eval_env = CartPole(cfg["env.max_steps"], seed=stream(seed, "eval-env"))
    act_rng = stream(seed, "policy")
    dqn_rng = stream(seed, "dqn-train")
    noise = noise_model(cfg, seed)
    agent = DQNAgent(CartPole.state_dim, CartPole.n_actions, stream(seed, "dqn-init"),
                     hidden_layers=cfg["agent.hidden_layers"], units=cfg["agent.units"],
                     learning_rate=cfg["agent.lr"], gamma=cfg["agent.gamma"],
                     batch_size=cfg["agent.batch"], buffer_size=cfg["agent.buffer"],
                     target_sync=cfg["agent.target_sync"])
    trainer = None
    if mode is RewardMode.INFERRED:
        encoder = ContinuousConcatEncoder(CartPole.state_dim, CartPole.n_actions)
        trainer = _RewardModelTrainer(cfg, encoder, seed)
        trainer.pretrain(env, cfg, noise, stream(seed, "pretrain-policy"))
    total = cfg["agent.train_steps"]
    schedule = LinearSchedule(cfg["agent.eps_start"], cfg["agent.eps_end"],
                              cfg["agent.eps_decay_fraction"] * total)
    warmup = max(cfg["agent.batch"], cfg["agent.learning_starts"])
    curve = {}
    t = 0

    def greedy(s):
        return agent.act(s, 0.0, act_rng)

    def on_step():
        nonlocal t
        t += 1
        if len(agent.replay) >= warmup:
            agent.train_step(dqn_rng)
        if trainer:
            trainer.tick()
        if t % cfg["eval.interval"] == 0 or t == total:
            curve[t] = evaluate(eval_env, greedy, cfg["eval.episodes"]).mean()

    while t < total:
        eps = schedule(t)
        episode = play_episode(env, lambda s: agent.act(s, eps, act_rng), noise, on_step)
        rewards = wrap_rewards(mode, episode, trainer.model if trainer else None)
        last = len(episode) - 1
        for i, step in enumerate(episode.steps):
            agent.replay.add(step.state, step.action, rewards[i], step.next_state,
                             i == last and episode.terminated)
        if trainer:
            trainer.buffer.add(episode)
    return curve, agent, trainer


def run_online(cfg):
    """Online learning curves for every configured reward mode and seed."""
    if cfg.kind not in ("online_gridworld", "cartpole"):
        raise ConfigError(f"run_online cannot run experiment kind {cfg.kind!r}")
    grid = cfg.kind == "online_gridworld"
    per_mode, artifacts, extra = {}, {}, {}
    if grid:
        env = make_gridworld(cfg)
        extra["reference"] = grid_reference(env, stream(0, "reference"))
    else:
        env = CartPole(cfg["env.max_steps"])
    for mode in cfg["reward_mode"]:
        per_mode[mode] = {}
        for seed in cfg.seeds:
            runner = gridworld_seed if grid else cartpole_seed
            curve, agent, trainer = runner(cfg, mode, seed)
            per_mode[mode][seed] = curve
            if grid:
                artifacts[f"qtable/{mode}/seed{seed}"] = _dump(agent)
            if trainer is not None:
                artifacts[f"infernet_updates/{mode}/seed{seed}"] = trainer.model.steps_trained
                if cfg.out_dir is not None:
                    path = f"checkpoints/infernet_{mode}_seed{seed}.npz"
                    _save_checkpoint(trainer.model, cfg.out_dir, path)
                    artifacts[f"checkpoint/{mode}/seed{seed}"] = path
    series = [aggregate(f"return/{mode}", per_mode[mode]) for mode in per_mode]
    finals = {mode: {seed: curve[max(curve)] for seed, curve in runs.items()}
              for mode, runs in per_mode.items()}
    extra["final_returns"] = {mode: [finals[mode][s] for s in cfg.seeds] for mode in finals}
    return RunResult(manifest(cfg, env, **extra), series, artifacts)


def _dump(agent):
    table = agent if isinstance(agent, QTable) else QTable(*agent.values.shape)
    if not isinstance(agent, QTable):
        table.values[...] = agent.values
    return table.dump()


def _save_checkpoint(model, out_dir, rel):
    path = Path(out_dir) / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    model.save(path)
