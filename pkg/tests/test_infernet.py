import numpy as np
import pytest

from creditlab import nn
from creditlab.envs import GridWorld
from creditlab.experiments.common import random_episodes, stream
from creditlab.infernet import (ContinuousConcatEncoder, Episode, EpisodeBuffer,
                                GridOneHotEncoder, InferNet, Step, dataset_rmse,
                                delayed_from_immediate, encode, encoder_from_config,
                                infer_rewards, relabel, rmse, train_minibatch)

ENC = GridOneHotEncoder(14, 7, 3)


def episode(pairs, rewards):
    steps = [Step(s, a, r, s) for (s, a), r in zip(pairs, rewards)]
    return Episode.from_steps(steps)


def small_net(rng, encoder=ENC, units=16, lr=1e-2, batch=8):
    return InferNet.create(encoder, rng, hidden_layers=2, units=units, learning_rate=lr,
                           batch_episodes=batch)


def zero_out(model):
    for p in model.net.params():
        p[...] = 0.0
    return model


class TestDelayedReward:
    @pytest.mark.parametrize("rewards, total", [([1, 0, -1], 0.0), ([0, 0, 0], 0.0)])
    def test_sums(self, rewards, total):
        assert delayed_from_immediate(rewards) == total

    def test_many_small_rewards(self):
        assert delayed_from_immediate([0.2] * 25) == pytest.approx(5.0, abs=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            delayed_from_immediate([])

    def test_episode_delayed_reward_is_sum(self):
        ep = episode([(0, 0), (1, 1), (2, 2)], [1.0, -1.0, 0.5])
        assert ep.delayed_reward == 0.5
        assert np.array_equal(ep.rewards, [1.0, -1.0, 0.5])

    def test_empty_episode(self):
        with pytest.raises(ValueError):
            Episode([], 0.0)


class TestEncoders:
    def test_grid_onehot_origin(self):
        v = encode(ENC, 0, 0)
        assert v.shape == (101,)
        assert np.flatnonzero(v).tolist() == [0, 98]

    def test_grid_accepts_coordinates(self):
        assert np.array_equal(ENC.encode((13, 6), 2), ENC.encode(97, 2))

    def test_continuous_concat(self):
        enc = ContinuousConcatEncoder(4, 2)
        v = encode(enc, [0.1, -0.2, 0.3, 0.0], 1)
        assert v.tolist() == [0.1, -0.2, 0.3, 0.0, 0.0, 1.0]

    def test_grid_injective(self):
        codes = {tuple(ENC.encode(c, a)) for c in range(98) for a in range(3)}
        assert len(codes) == 294
        for code in codes:
            assert sum(code) == 2.0

    def test_batch_matches_single(self):
        states, actions = [0, 5, 97, 40], [2, 1, 0, 1]
        single = np.array([ENC.encode(s, a) for s, a in zip(states, actions)])
        assert np.array_equal(ENC.encode_batch(states, actions), single)
        cont = ContinuousConcatEncoder(2, 3)
        xs = np.array([[0.5, 1.0], [-1.0, 2.0]])
        assert np.array_equal(cont.encode_batch(xs, [2, 0]),
                              np.array([cont.encode(xs[0], 2), cont.encode(xs[1], 0)]))

    def test_keys_round_trip(self):
        cells, actions = ENC.unkey(ENC.keys([3, 97], [2, 0]))
        assert cells.tolist() == [3, 97] and actions.tolist() == [2, 0]

    @pytest.mark.parametrize("state, action", [(98, 0), (-1, 0), (0, 3), ((14, 0), 0),
                                               (0, -1)])
    def test_grid_out_of_range(self, state, action):
        with pytest.raises(ValueError):
            ENC.encode(state, action)

    def test_batch_out_of_range(self):
        with pytest.raises(ValueError):
            ENC.encode_batch([0, 98], [0, 0])
        with pytest.raises(ValueError):
            ContinuousConcatEncoder(2, 2).encode_batch([[0, 0]], [2])

    def test_config_round_trip(self):
        for enc in (ENC, ContinuousConcatEncoder(4, 2)):
            again = encoder_from_config(enc.config())
            assert type(again) is type(enc) and again.dim == enc.dim


class TestEpisodeBuffer:
    def test_fifo_eviction(self):
        buf = EpisodeBuffer(3)
        eps = [episode([(0, 0)], [float(i)]) for i in range(5)]
        buf.extend(eps)
        assert len(buf) == 3
        assert [e.delayed_reward for e in buf] == [2.0, 3.0, 4.0]

    def test_sampling_with_replacement(self):
        buf = EpisodeBuffer(5)
        buf.add(episode([(0, 0)], [1.0]))
        batch = buf.sample(4, np.random.default_rng(0))
        assert len(batch) == 4 and all(b is batch[0] for b in batch)

    def test_empty(self):
        with pytest.raises(ValueError):
            EpisodeBuffer(2).sample(1, np.random.default_rng(0))
        with pytest.raises(ValueError):
            EpisodeBuffer(0)


class TestTraining:
    def test_already_fitted_episode_is_fixed_point(self):
        model = zero_out(small_net(np.random.default_rng(0)))
        buf = EpisodeBuffer(4)
        buf.add(episode([(5, 1), (6, 2)], [1.0, -1.0]))
        before = [p.copy() for p in model.net.params()]
        assert train_minibatch(model, buf, 4, np.random.default_rng(1)) == 0.0
        assert all(np.array_equal(a, b) for a, b in zip(before, model.net.params()))
        assert model.adam.step_count == 1

    def test_empty_buffer(self):
        with pytest.raises(ValueError):
            small_net(np.random.default_rng(0)).train_minibatch(EpisodeBuffer(2), 1,
                                                                np.random.default_rng(0))

    def test_deterministic_loss_sequence(self):
        data = random_episodes(GridWorld(), 20, np.random.default_rng(3))

        def run():
            model = small_net(np.random.default_rng(7))
            buf = EpisodeBuffer(50)
            buf.extend(data)
            rng = np.random.default_rng(8)
            return [model.train_minibatch(buf, rng=rng) for _ in range(15)]
        assert run() == run()

    def test_dedupe_matches_row_by_row(self):
        data = random_episodes(GridWorld(), 6, np.random.default_rng(4))
        model = small_net(np.random.default_rng(5))
        loss_a, g_a = model.batch_loss_gradient(data)
        model.dedupe = False
        loss_b, g_b = model.batch_loss_gradient(data)
        assert loss_a == pytest.approx(loss_b, rel=1e-12)
        assert np.allclose(g_a.flat(), g_b.flat(), rtol=1e-9, atol=1e-12)

    def test_batch_gradient_is_mean_of_episode_gradients(self):
        data = random_episodes(GridWorld(), 4, np.random.default_rng(6))
        model = small_net(np.random.default_rng(9))
        loss, grads = model.batch_loss_gradient(data)
        parts = [nn.episode_loss_gradient(model.net, ENC.encode_batch(e.states, e.actions),
                                          e.delayed_reward) for e in data]
        assert loss == pytest.approx(np.mean([p[0] for p in parts]), rel=1e-12)
        mean_grad = np.mean([p[1].flat() for p in parts], axis=0)
        assert np.allclose(grads.flat(), mean_grad, rtol=1e-9, atol=1e-12)

    def test_loss_falls_on_small_dataset(self):
        data = random_episodes(GridWorld(), 30, np.random.default_rng(10))
        model = small_net(np.random.default_rng(11), units=32, lr=3e-3)
        buf = EpisodeBuffer(30)
        buf.extend(data)
        rng = np.random.default_rng(12)
        first = np.mean([np.mean([model.episode_loss(e) for e in data])])
        for _ in range(1500):
            model.train_minibatch(buf, rng=rng)
        last = np.mean([model.episode_loss(e) for e in data])
        assert last < 0.01 * first

    def test_dropout_training_path(self):
        enc = ContinuousConcatEncoder(2, 2)
        model = InferNet.create(enc, np.random.default_rng(0), hidden_layers=2, units=8,
                                activation="relu", dropout=0.2, learning_rate=1e-2)
        steps = [Step((0.1 * i, -0.1), i % 2, 1.0, (0.0, 0.0)) for i in range(5)]
        buf = EpisodeBuffer(3)
        buf.add(Episode.from_steps(steps))
        losses = [model.train_minibatch(buf, 2, np.random.default_rng(i)) for i in range(3)]
        assert all(np.isfinite(losses))


class TestInference:
    def test_zero_network_infers_zero(self):
        model = zero_out(small_net(np.random.default_rng(0)))
        ep = episode([(1, 0), (2, 1)], [1.0, 0.0])
        assert np.array_equal(infer_rewards(model, ep), [0.0, 0.0])

    def test_duplicated_step_duplicates_reward(self):
        model = small_net(np.random.default_rng(1))
        r = model.infer_rewards(episode([(10, 2), (11, 0), (10, 2)], [0.0, 0.0, 0.0]))
        assert r[0] == r[2]

    def test_per_step_independence(self):
        model = small_net(np.random.default_rng(2))
        a = model.infer_rewards(episode([(10, 2), (11, 0)], [0, 0]))
        b = model.infer_rewards(episode([(50, 1), (11, 0), (70, 2)], [0, 0, 0]))
        assert a[1] == b[1]

    def test_relabel_keeps_delayed_reward(self):
        model = small_net(np.random.default_rng(3))
        ep = episode([(1, 0), (2, 1), (3, 2)], [1.0, 0.0, -1.0])
        new = relabel(model, ep)
        assert new.delayed_reward == ep.delayed_reward
        assert np.array_equal(new.rewards, model.infer_rewards(ep))
        assert np.array_equal(new.true_rewards, ep.rewards)
        assert new.actions.tolist() == ep.actions.tolist()

    def test_encoder_mismatch(self):
        net = nn.MLP.create([10, 4, 1], np.random.default_rng(0))
        with pytest.raises(nn.ShapeError):
            InferNet(net, ENC)
        net = nn.MLP.create([101, 4, 2], np.random.default_rng(0))
        with pytest.raises(nn.ShapeError):
            InferNet(net, ENC)


class TestRmse:
    def test_identical(self):
        assert rmse([1.0, -1.0, 0.5], [1.0, -1.0, 0.5]) == 0.0

    @pytest.mark.parametrize("delta", [0.1, 0.37, 2.0])
    def test_constant_offset(self, delta):
        true = np.random.default_rng(0).normal(size=50)
        assert rmse(true + delta, true) == pytest.approx(delta, rel=1e-12)

    def test_dataset_rmse_uses_clean_rewards(self):
        model = zero_out(small_net(np.random.default_rng(0)))
        steps = [Step(1, 0, 5.0, 2, true_reward=1.0), Step(2, 0, 0.0, 3, true_reward=-1.0)]
        assert dataset_rmse(model, [Episode.from_steps(steps)]) == pytest.approx(1.0)


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, tmp_path):
        data = random_episodes(GridWorld(), 10, stream(0, "data"))
        model = small_net(np.random.default_rng(0))
        buf = EpisodeBuffer(10)
        buf.extend(data)
        rng = np.random.default_rng(1)
        for _ in range(5):
            model.train_minibatch(buf, rng=rng)
        path = tmp_path / "model.npz"
        model.save(path)
        loaded = InferNet.load(path)
        for a, b in zip(model.net.params(), loaded.net.params()):
            assert a.dtype == b.dtype and np.array_equal(a, b)
        for a, b in zip(model.adam.first_moment + model.adam.second_moment,
                        loaded.adam.first_moment + loaded.adam.second_moment):
            assert np.array_equal(a, b)
        assert loaded.adam.step_count == model.adam.step_count
        assert loaded.encoder.config() == model.encoder.config()
        # training continues identically
        r1, r2 = np.random.default_rng(5), np.random.default_rng(5)
        seq_a = [model.train_minibatch(buf, rng=r1) for _ in range(3)]
        seq_b = [loaded.train_minibatch(buf, rng=r2) for _ in range(3)]
        assert seq_a == seq_b

    def test_rejects_unknown_version(self, tmp_path):
        import json
        model = small_net(np.random.default_rng(0))
        path = tmp_path / "m.npz"
        model.save(path)
        with np.load(path) as data:
            arrays = dict(data)
        meta = json.loads(bytes(arrays["meta"]).decode())
        meta["version"] = 99
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        np.savez(path, **arrays)
        with pytest.raises(ValueError):
            InferNet.load(path)
