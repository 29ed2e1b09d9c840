"""Turn one delayed reward per episode into per-step rewards.

A random policy wanders the 14x7 GridWorld. We keep only each episode's
total, fit the reward network to those totals, and then look at what it
assigns to the individual steps of a fresh episode.

    python demos/01_redistribute_rewards.py
"""
import numpy as np

from creditlab.envs import GridWorld
from creditlab.experiments.common import random_episodes, stream
from creditlab.infernet import EpisodeBuffer, GridOneHotEncoder, InferNet, dataset_rmse

env = GridWorld()
print("layout (S start, T terminal, + and - one-off rewards):")
print(env.layout_map(), "\n")

episodes = random_episodes(env, 200, stream(0, "demo-data"))
print(f"{len(episodes)} episodes, {sum(map(len, episodes))} steps; the learner only sees "
      "each episode's total")

encoder = GridOneHotEncoder(env.width, env.height, env.n_actions)
model = InferNet.create(encoder, stream(0, "demo-init"), learning_rate=1e-3)
buffer = EpisodeBuffer(len(episodes))
buffer.extend(episodes)
rng = stream(0, "demo-train")
for step in range(1, 2001):
    loss = model.train_minibatch(buffer, rng=rng)
    if step % 500 == 0:
        print(f"  step {step:5d}  batch loss {loss:.4f}  "
              f"per-step RMSE {dataset_rmse(model, episodes):.3f}")

probe = next(ep for ep in random_episodes(env, 50, stream(1, "demo-probe"))
             if np.any(ep.rewards != 0))
inferred = model.infer_rewards(probe)
print(f"\nunseen episode with total {probe.delayed_reward:+.0f}; "
      f"inferred steps sum to {inferred.sum():+.2f}")
print("steps where something happened (true reward or |inferred| > 0.3):")
for t, (step, r_hat) in enumerate(zip(probe.steps, inferred)):
    if step.immediate_reward != 0 or abs(r_hat) > 0.3:
        col, row = env.coords(step.next_state)
        print(f"  t={t:3d} -> ({col:2d},{row})  true {step.immediate_reward:+.0f}  "
              f"inferred {r_hat:+.2f}")
