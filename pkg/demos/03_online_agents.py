"""Tabular agents learning online under three reward views.

The same Q-learning agent trains with per-step rewards, with only the
episode total at the final step, and with rewards relabeled by a reward
network that learns alongside it. Budgets are small so this finishes in
seconds; the full profile lives in demos/configs/online_q.yaml.

    python demos/03_online_agents.py
"""
from creditlab.experiments.config import RunConfig
from creditlab.experiments.online import run_online

cfg = RunConfig("online_gridworld", {
    "seeds": [0],
    "agent.episodes": 600,
    "eval.interval": 100,
    "eval.episodes": 5,
    "infernet.units": 64,
    "infernet.pretrain_episodes": 200,
    "infernet.pretrain_steps": 1000,
    "infernet.train_every": 10,
    "infernet.train_steps": 3000,
})
result = run_online(cfg)
ref = result.manifest["reference"]
print(f"optimal return {ref['optimal_return']:.0f}, "
      f"random policy {ref['random_return_mean']:.2f}\n")
print("greedy return after N training episodes")
xs = result.get("return/immediate").xs
print(f"{'mode':>10} " + " ".join(f"{int(x):>5}" for x in xs))
for series in result.series:
    print(f"{series.name.split('/')[1]:>10} " + " ".join(f"{m:5.1f}" for m in series.means))
