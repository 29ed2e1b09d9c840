"""A short DQN run on CartPole with relabeled rewards.

Episode totals stand in for the per-step +1 signal; the reward network
spreads them back over the steps before they enter the replay buffer.
This is a taste run of a few thousand steps; the full study uses
demos/configs/cartpole.yaml and takes hours.

    python demos/04_cartpole_dqn.py
"""
from creditlab.experiments.config import RunConfig
from creditlab.experiments.online import run_online

cfg = RunConfig("cartpole", {
    "seeds": [0],
    "reward_mode": ["immediate", "inferred"],
    "agent.train_steps": 6000,
    "agent.eps_decay_fraction": 0.5,
    "eval.interval": 2000,
    "infernet.train_steps": 1500,
    "infernet.train_every": 4,
})
result = run_online(cfg)
for series in result.series:
    points = ", ".join(f"{int(p.x)}: {p.mean:.0f}" for p in series.points)
    print(f"{series.name:>18}  {points}")
