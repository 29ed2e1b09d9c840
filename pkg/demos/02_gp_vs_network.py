"""Compare the reward network with exact GP inference as data grows.

Both methods see the same episode totals. The GP solves one linear system
over episodes, so its cost grows quickly with data; the network's cost is
set by its training budget.

    python demos/02_gp_vs_network.py
"""
import time

from creditlab.envs import GridWorld, NoiseModel
from creditlab.experiments.common import grid_encoder, random_episodes, stream
from creditlab.gp import GPRewardModel, KernelConfig, gp_fit
from creditlab.infernet import EpisodeBuffer, InferNet, dataset_rmse

env = GridWorld()
encoder = grid_encoder(env)

for sigma in (0.0, 0.3):
    data = random_episodes(env, 200, stream(0, "demo-data"),
                           NoiseModel(sigma, stream(0, "demo-noise")))
    print(f"\nreward noise sigma={sigma}")
    print(f"{'episodes':>9} {'GP rmse':>8} {'GP s':>6} {'net rmse':>9} {'net s':>6}")
    for n in (25, 50, 100, 200):
        subset = data[:n]
        t0 = time.perf_counter()
        gp = gp_fit(KernelConfig(), subset, encoder)
        gp_s = time.perf_counter() - t0
        gp_rmse = dataset_rmse(GPRewardModel(gp, encoder), subset)
        model = InferNet.create(encoder, stream(n, "demo-init"), learning_rate=1e-3)
        buffer = EpisodeBuffer(n)
        buffer.extend(subset)
        rng = stream(n, "demo-train")
        t0 = time.perf_counter()
        for _ in range(1000):
            model.train_minibatch(buffer, rng=rng)
        net_s = time.perf_counter() - t0
        print(f"{n:9d} {gp_rmse:8.3f} {gp_s:6.2f} {dataset_rmse(model, subset):9.3f} "
              f"{net_s:6.2f}")
