"""Tests for the reaching environments, oracle tables and replay buffer"""

import numpy as np
import pytest

from core.envs import (
    Batch,
    NuisanceChannelEnv,
    ReplayBuffer,
    SpriteReacherEnv,
    Transition,
    make_env,
    oracle_q,
    oracle_return,
    oracle_rollout,
)
from core.errors import EmptyBufferError, InvalidInputError
from utils.rng import make_stream


class TestSpriteReacher:

    def test_reset_shapes_and_pixel_grid(self):
        env = SpriteReacherEnv()
        obs = env.reset(make_stream(0, "env"))
        assert obs.shape == (3, 24, 24)
        # pixels are exact multiples of 1/255
        np.testing.assert_allclose(obs * 255.0, np.rint(obs * 255.0), atol=1e-4)
        assert set(np.unique(np.rint(obs * 255))) <= {0, 128, 255}

    def test_margin_stays_blank(self):
        env = SpriteReacherEnv()
        env.reset(make_stream(0, "env"), position=[0.0, 0.0], goal=[1.0, 1.0])
        frame = env.render_frame()
        assert frame[:2].max() == 0 and frame[-2:].max() == 0
        assert frame[:, :2].max() == 0 and frame[:, -2:].max() == 0
        assert frame[3, 3] == 255 and frame[-4, -4] == 128

    def test_step_dynamics_and_reward(self):
        env = SpriteReacherEnv()
        env.reset(make_stream(0, "env"), position=[0.5, 0.5], goal=[0.7, 0.5])
        _, reward, done = env.step([1.0, 0.0])
        np.testing.assert_allclose(env.position, [0.6, 0.5])
        assert reward == pytest.approx(1.0 - 0.1 / np.sqrt(2.0))
        assert not done

    def test_position_clipped_at_border(self):
        env = SpriteReacherEnv()
        env.reset(make_stream(0, "env"), position=[0.95, 0.0], goal=[0.5, 0.5])
        env.step([1.0, -1.0])
        np.testing.assert_allclose(env.position, [1.0, 0.0])

    def test_out_of_range_action_clamped(self):
        env = SpriteReacherEnv()
        env.reset(make_stream(0, "env"), position=[0.5, 0.5], goal=[0.5, 0.5])
        env.step([3.0, 0.0])
        np.testing.assert_allclose(env.position, [0.6, 0.5])

    def test_episode_ends_at_horizon(self):
        env = SpriteReacherEnv(horizon=5)
        env.reset(make_stream(0, "env"))
        for t in range(5):
            _, _, done = env.step([0.0, 0.0])
        assert done and env.steps_to_go == 0
        with pytest.raises(InvalidInputError):
            env.step([0.0, 0.0])

    def test_frame_stack_shifts(self):
        env = SpriteReacherEnv(frame_stack=2)
        first = env.reset(make_stream(0, "env"), position=[0.2, 0.2], goal=[0.8, 0.8])
        second, _, _ = env.step([1.0, 1.0])
        np.testing.assert_array_equal(second[0], first[1])
        assert not np.array_equal(second[1], first[1])

    def test_trace(self, tmp_path):
        env = SpriteReacherEnv(horizon=3)
        env.reset(make_stream(0, "env"))
        for _ in range(3):
            env.step([0.5, -0.5])
        trace = env.trace()
        assert list(trace.columns) == ["t", "px", "py", "ax", "ay", "r"]
        assert len(trace) == 3
        env.export_trace(tmp_path / "trace.csv")
        assert (tmp_path / "trace.csv").exists()


class TestNuisanceChannel:

    def test_payload_matches_plain_env(self):
        plain = make_env("sprite_reacher", size=24)
        noisy = make_env("nuisance_channel", size=24, nuisance_width=6)
        a = plain.reset(make_stream(1, "env"))
        b = noisy.reset(make_stream(1, "env"))
        assert b.shape == (3, 24, 30)
        np.testing.assert_array_equal(a, b[:, :, :24])
        assert isinstance(noisy, NuisanceChannelEnv)
        assert noisy.nuisance_region == (0, 24, 24, 30)

    def test_unknown_env(self):
        with pytest.raises(InvalidInputError):
            make_env("cartpole")


class TestOracle:

    def test_value_when_sitting_on_goal(self):
        env = SpriteReacherEnv(horizon=10)
        env.reset(make_stream(0, "env"), position=[0.5, 0.5], goal=[0.5, 0.5])
        oracle = oracle_q(env, gamma=0.9)
        expected = (1 - 0.9 ** 10) / (1 - 0.9)
        assert oracle.value([0.5, 0.5], 10) == pytest.approx(expected)
        np.testing.assert_array_equal(oracle.greedy_action([0.5, 0.5], 10), [0.0, 0.0])

    def test_greedy_moves_toward_goal(self):
        env = SpriteReacherEnv(horizon=10)
        env.reset(make_stream(0, "env"), position=[0.1, 0.9], goal=[0.9, 0.1])
        oracle = oracle_q(env, gamma=0.9)
        np.testing.assert_array_equal(oracle.greedy_action([0.1, 0.9], 10), [1.0, -1.0])

    def test_bellman_consistency(self):
        env = SpriteReacherEnv(horizon=6)
        env.reset(make_stream(0, "env"), goal=[0.3, 0.6])
        oracle = oracle_q(env, gamma=0.95)
        np.testing.assert_allclose(oracle.values[1:], oracle.q.max(axis=-1))
        np.testing.assert_array_equal(oracle.values[0], 0.0)

    def test_boltzmann_values_below_optimal(self):
        env = SpriteReacherEnv(horizon=6)
        env.reset(make_stream(0, "env"), goal=[0.3, 0.6])
        greedy = oracle_q(env, gamma=0.95)
        soft = oracle_q(env, gamma=0.95, temperature=0.5)
        assert np.all(soft.values <= greedy.values + 1e-12)
        np.testing.assert_allclose(soft.policy_table().sum(axis=-1), 1.0)

    def test_next_index_clipped(self):
        env = SpriteReacherEnv(horizon=4)
        env.reset(make_stream(0, "env"), goal=[0.5, 0.5])
        oracle = oracle_q(env, gamma=0.9)
        atom = int(np.flatnonzero((oracle.atoms == [1.0, 1.0]).all(axis=1))[0])
        i, j = oracle.next_index(np.array([39]), np.array([0]), atom)
        assert (int(i[0]), int(j[0])) == (40, 4)

    def test_step_must_fit_lattice(self):
        env = SpriteReacherEnv(step_size=0.013)
        env.reset(make_stream(0, "env"))
        with pytest.raises(InvalidInputError):
            oracle_q(env, gamma=0.9)

    def test_rollout_matches_value_on_lattice(self):
        env = SpriteReacherEnv(horizon=8)
        env.reset(make_stream(0, "env"), position=[0.2, 0.3], goal=[0.6, 0.7])
        oracle = oracle_q(env, gamma=0.9)
        assert oracle_rollout(env, oracle) == pytest.approx(oracle.value([0.2, 0.3], 8))

    def test_oracle_return_bounds(self):
        env = SpriteReacherEnv(horizon=20)
        total = oracle_return(env, make_stream(0, "eval"), gamma=0.99)
        assert 0.0 < total <= 20.0


class TestReplayBuffer:

    def _transition(self, rng, value, shape=(1, 4, 4)):
        obs = np.full(shape, value / 255.0)
        return Transition(obs, rng.uniform(-1, 1, 2), value, obs, done=False,
                          state=np.array([0.1, 0.2, 0.3, 0.4, 5.0]))

    def test_empty_sample_raises(self, rng):
        with pytest.raises(EmptyBufferError):
            ReplayBuffer(4, (1, 4, 4), 2).sample(1, rng)

    def test_ring_overwrites_oldest(self, rng):
        buffer = ReplayBuffer(3, (1, 4, 4), 2)
        for v in range(5):
            buffer.push(self._transition(rng, float(v)))
        assert len(buffer) == 3
        assert set(buffer.reward.tolist()) == {2.0, 3.0, 4.0}

    def test_sample_restores_pixels(self, rng):
        buffer = ReplayBuffer(4, (1, 4, 4), 2)
        buffer.push(self._transition(rng, 77.0))
        batch = buffer.sample(2, rng, np.float64)
        np.testing.assert_allclose(batch.obs, 77.0 / 255.0)
        assert batch.states.shape == (2, 5)

    def test_sampling_is_stream_deterministic(self, rng):
        buffer = ReplayBuffer(10, (1, 4, 4), 2)
        for v in range(10):
            buffer.push(self._transition(rng, float(v)))
        a = buffer.sample(5, make_stream(4, "buffer"))
        b = buffer.sample(5, make_stream(4, "buffer"))
        np.testing.assert_array_equal(a.reward, b.reward)

    def test_batch_from_transitions_and_subset(self, rng):
        batch = Batch.from_transitions([self._transition(rng, float(v)) for v in range(4)])
        assert len(batch) == 4
        sub = batch.subset([1, 3])
        np.testing.assert_array_equal(sub.reward, [1.0, 3.0])
        assert sub.states.shape == (2, 5)
