"""Tests for the statistics recorder, complexity probe and the training loop"""

import numpy as np
import pandas as pd
import pytest
import torch.nn as nn

from config.schema import TrainConfig, parse_config
from config.settings import COMPLEX_UPDATES, EVAL_FILE, MANIFEST_FILE, METRICS_COLUMNS, METRICS_FILE, STATS_FILE
from core.augment import ParamDistribution, TransformChain, TransformSpec
from core.envs import SpriteReacherEnv, Transition
from core.fixtures import random_batch, tiny_loss_config
from core.losses import chain_from_name
from core.trainer import (
    OracleCache,
    StatsRecord,
    Trainer,
    complexity_score,
    parameter_pool,
    record_stats,
    replicate_draws,
    schedule_updates,
    similarity_score,
    train,
)
from storage.run_store import RunManifest, get_run_store
from utils.rng import make_stream

TINY_RUN = {
    "train.total_steps": 12,
    "train.batch_size": 8,
    "train.seed_steps": 4,
    "train.eval_interval": 6,
    "train.eval_episodes": 1,
    "train.record_interval": 6,
    "train.replay_capacity": 64,
    "env.size": 12,
    "env.horizon": 5,
    "env.frame_stack": 2,
    "network.feature_dim": 8,
    "network.channels": 4,
    "network.hidden_dim": 16,
    "augment.max_pad": 1,
}


def tiny_run_config(**overrides) -> TrainConfig:
    return parse_config({**TINY_RUN, **overrides})


class TestPools:

    def test_finite_chain_enumerates(self, rng):
        chain = TransformChain(dists=(ParamDistribution.uniform(TransformSpec(kind="shift", max_pad=1)),))
        params, weights = parameter_pool(chain, rng)
        assert len(params) == 9
        assert weights.sum() == pytest.approx(1.0)

    def test_continuous_chain_samples(self, rng):
        chain = TransformChain(dists=(ParamDistribution.uniform(TransformSpec(kind="blur")),))
        params, weights = parameter_pool(chain, rng, sampled=5)
        assert len(params) == 5
        np.testing.assert_allclose(weights, 0.2)

    def test_exact_product_law(self, rng):
        (first, second), probs = replicate_draws([np.array([0.25, 0.75]), np.array([1.0])], [2, 1], rng)
        assert first.shape == (4, 2) and second.shape == (4, 1)
        assert probs.sum() == pytest.approx(1.0)
        both_second = np.flatnonzero((first == 1).all(axis=1))[0]
        assert probs[both_second] == pytest.approx(0.5625)

    def test_large_law_falls_back_to_replicates(self, rng):
        weights = np.full(10, 0.1)
        (idx,), probs = replicate_draws([weights], [4], rng, limit=100, replicates=32)
        assert idx.shape == (32, 4)
        np.testing.assert_allclose(probs, 1.0 / 32)


class TestRecordStats:

    def test_identity_augmentation_has_no_spread(self, nets, rng):
        config = tiny_loss_config(augment={"nu": ["none"], "mu": "none"})
        stats = record_stats(nets, random_batch(rng, 4), config, rng)
        assert stats.std_critic_loss == pytest.approx(0.0, abs=1e-12)
        assert stats.std_target_q == pytest.approx(0.0, abs=1e-12)
        assert stats.std_actor_loss == pytest.approx(0.0, abs=1e-12)
        assert stats.kl_aug == pytest.approx(0.0, abs=1e-12)
        assert stats.cos_sim_critic == pytest.approx(1.0)
        assert stats.target_var == pytest.approx(0.0, abs=1e-12)

    def test_more_target_views_reduce_target_spread(self, nets):
        batch = random_batch(make_stream(3, "buffer"), 4)
        one = record_stats(nets, batch, tiny_loss_config(K=1), make_stream(3, "stats"))
        two = record_stats(nets, batch, tiny_loss_config(K=2), make_stream(3, "stats"))
        assert two.std_target_q <= one.std_target_q + 1e-12
        assert one.target_var == pytest.approx(two.target_var)

    def test_averaging_views_lowers_critic_spread(self, nets):
        batch = random_batch(make_stream(5, "buffer"), 6)
        rad = record_stats(nets, batch, tiny_loss_config(M=1, K=1), make_stream(5, "stats"))
        drq = record_stats(nets, batch, tiny_loss_config(M=2, K=2), make_stream(5, "stats"))
        assert drq.std_critic_loss < rad.std_critic_loss
        assert drq.std_target_q < rad.std_target_q

    def test_row_fields(self, nets, rng):
        row = record_stats(nets, random_batch(rng, 3), tiny_loss_config(), rng, step=7).to_row()
        assert row["step"] == 7
        assert set(StatsRecord.__dataclass_fields__) == set(row)
        assert np.isnan(row["target_bias"])
        assert -1.0 <= row["cos_sim_actor"] <= 1.0


class TestComplexity:

    def test_identity_scores_one(self, nets, rng):
        chain = chain_from_name("none", tiny_loss_config().augment)
        states = rng.random((4, 2, 8, 8))
        assert similarity_score(nets.encoder, chain, states, rng) == pytest.approx(1.0)

    def test_identity_encoder_flags_heavy_overlay(self, rng):
        augment = tiny_loss_config().augment.model_copy(update={"max_pad": 0, "overlay_beta": 1.0})
        states = np.zeros((6, 1, 8, 8))
        states[:, :, 3:5, 3:5] = 1.0
        result = complexity_score(nn.Flatten(), chain_from_name("overlay", augment), states, rng,
                                  baseline=chain_from_name("shift", augment))
        assert result.baseline == pytest.approx(1.0)
        assert result.complex

    def test_schedule_updates(self):
        config = TrainConfig()
        assert schedule_updates(config, {"shift": False}) == config.train.updates_per_step
        assert schedule_updates(config, {"shift": True}) == COMPLEX_UPDATES

    def test_explicit_critic_targets_ignore_complexity(self):
        config = parse_config({"loss.critic_mode": "explicit_sg", "augment.mu": "overlay"})
        assert config.loss.target_chain_name() == "none"
        assert schedule_updates(config, {"overlay": True}) == config.train.updates_per_step


class TestOracleCache:

    def test_q_star_on_goal(self):
        env = SpriteReacherEnv(horizon=4)
        env.reset(make_stream(0, "env"), position=[0.5, 0.5], goal=[0.5, 0.5])
        cache = OracleCache(env, gamma=0.9)
        batch = random_batch(make_stream(0, "buffer"), 1)
        batch.states = np.array([[0.5, 0.5, 0.5, 0.5, 4.0]])
        batch.action = np.zeros((1, 2))
        batch.reward = np.array([1.0])
        expected = 1.0 + 0.9 * (1 - 0.9 ** 3) / (1 - 0.9)
        assert cache.q_star(batch)[0] == pytest.approx(expected)
        assert cache.get([0.5, 0.5]) is cache.get([0.5, 0.5])


class TestSchedules:

    def test_actor_cadence_counts_critic_updates(self, tmp_path):
        config = tiny_run_config(**{"train.actor_update_freq": 2, "train.updates_per_step": 4})
        trainer = Trainer(config, get_run_store(tmp_path / "schedule"))
        obs = trainer.env.reset(make_stream(0, "env"))
        for step in range(4):
            action = trainer.act(obs, step)
            next_obs, reward, _ = trainer.env.step(action)
            trainer.buffer.push(Transition(obs, action, reward, next_obs))
            obs = next_obs
        # one env step worth of updates moves the actor twice
        outs = [trainer.update() for _ in range(config.train.updates_per_step)]
        assert ["actor_loss" in out for out in outs] == [False, True, False, True]
        assert trainer.update_count == 4


class TestTrain:

    def test_tiny_run_writes_outputs(self, tmp_path):
        result = train(tiny_run_config(), tmp_path / "run")
        root = tmp_path / "run"
        assert result.steps == 12
        assert result.updates == 8
        metrics = pd.read_csv(root / METRICS_FILE)
        assert list(metrics.columns) == METRICS_COLUMNS
        assert metrics["step"].tolist() == [6, 12]
        assert len(pd.read_csv(root / STATS_FILE)) == 2
        assert set(pd.read_csv(root / EVAL_FILE).columns) >= {"return", "oracle_return"}
        manifest = RunManifest.from_json((root / MANIFEST_FILE).read_text())
        assert manifest.status == "finished"
        assert get_run_store(root).list_checkpoints()
        assert np.isfinite(result.final_eval)

    def test_same_seed_same_metrics(self, tmp_path):
        train(tiny_run_config(seed=4), tmp_path / "a")
        train(tiny_run_config(seed=4), tmp_path / "b")
        assert (tmp_path / "a" / METRICS_FILE).read_bytes() == (tmp_path / "b" / METRICS_FILE).read_bytes()
        assert (tmp_path / "a" / STATS_FILE).read_bytes() == (tmp_path / "b" / STATS_FILE).read_bytes()

    @pytest.mark.parametrize("preset", ["rad", "drac", "svea", "ours"])
    def test_presets_train(self, tmp_path, preset):
        result = train(tiny_run_config(preset=preset), tmp_path / preset)
        assert result.updates > 0

    def test_ddpg_and_autotune(self, tmp_path):
        train(tiny_run_config(**{"loss.base_algo": "ddpg"}), tmp_path / "ddpg")
        train(tiny_run_config(**{"train.autotune_temperature": True}), tmp_path / "auto")
        checkpoint = get_run_store(tmp_path / "auto").load_checkpoint()
        assert "log_alpha" in checkpoint

    def test_update_more_probes_targets(self, tmp_path):
        config = tiny_run_config(**{"train.update_more": True, "augment.mu": "overlay"})
        result = train(config, tmp_path / "probe")
        assert set(result.complexity) == {"overlay"}
        assert result.updates_per_step in (1, COMPLEX_UPDATES)

    def test_complexity_scores_ignore_record_interval(self, tmp_path):
        scores = []
        for interval in (1, 12):
            config = tiny_run_config(**{"train.update_more": True, "augment.mu": "overlay",
                                        "train.record_interval": interval})
            result = train(config, tmp_path / f"record_{interval}")
            scores.append((result.complexity["overlay"].score, result.complexity["overlay"].baseline))
        assert scores[0] == scores[1]

    def test_nuisance_env_trains(self, tmp_path):
        config = tiny_run_config(**{"env.name": "nuisance_channel", "env.nuisance_width": 6})
        assert config.loss.augment.region == [0, 12, 12, 18]
        assert train(config, tmp_path / "nuisance").steps == 12


@pytest.mark.slow
def test_default_drq_learns_reacher(tmp_path):
    config = parse_config({"preset": "drq", "train.total_steps": 5000, "train.eval_interval": 1000})
    result = train(config, tmp_path / "drq")
    evals = pd.read_csv(tmp_path / "drq" / EVAL_FILE)
    first = evals[evals["step"] == evals["step"].min()]["return"].mean()
    assert result.final_eval > first


@pytest.mark.slow
def test_variance_ordering_across_seeds(tmp_path):
    def final_stats(preset, seed):
        config = parse_config({"preset": preset, "seed": seed, "train.total_steps": 30000})
        train(config, tmp_path / f"{preset}_{seed}")
        return pd.read_csv(tmp_path / f"{preset}_{seed}" / STATS_FILE).iloc[-5:].mean()

    seeds = range(5)
    rad = pd.DataFrame([final_stats("rad", s) for s in seeds])
    drq = pd.DataFrame([final_stats("drq", s) for s in seeds])
    drq_kl = pd.DataFrame([final_stats("drq_kl", s) for s in seeds])

    def separated(low, high, column):
        gap = high[column].mean() - low[column].mean()
        error = np.sqrt(low[column].var() / len(low) + high[column].var() / len(high))
        return gap > error

    assert separated(drq, rad, "std_critic_loss")
    assert separated(drq_kl, drq, "kl_aug")
