"""Tests for critic/actor losses, targets, KL helpers and tangent prop"""

import copy

import numpy as np
import pytest
import torch

from core.approximators import PolicyDistribution
from core.augment import ShiftParam
from core.errors import ConfigError, InvalidInputError
from core.fixtures import make_loss_fixture, tiny_loss_config
from core.losses import (
    _average_views,
    actor_loss,
    all_pairs_critic_loss,
    averaged_policy,
    build_plan,
    compute_targets,
    critic_loss,
    draw_params,
    kl_diag_gaussian,
    policy_kl,
    tangent_prop_penalty,
    temperature_loss,
)
from utils.rng import make_stream


def _dist(mean, log_std):
    return PolicyDistribution(torch.tensor(mean, dtype=torch.float64), torch.tensor(log_std, dtype=torch.float64))


class TestPlanAndDraws:

    def test_draw_layouts(self, loss_fixture):
        cfg, draws = loss_fixture.config, loss_fixture.draws
        assert len(draws["nu_params"]) == 1
        assert [len(row) for row in draws["nu_params"][0]] == [cfg.M] * 3
        assert [len(row) for row in draws["mu_params"]] == [cfg.K] * 3
        assert [len(row) for row in draws["actor_mu"]] == [cfg.J] * 3
        assert "tp_params" in draws

    def test_explicit_modes_bootstrap_from_raw_states(self):
        plan = build_plan(tiny_loss_config(critic_mode="explicit_y"))
        assert plan.target.name == "none"

    def test_svea_rejects_complex_targets(self):
        config = tiny_loss_config(critic_mode="svea_asym", augment={"target": "overlay"})
        with pytest.raises(ConfigError):
            build_plan(config)

    def test_svea_builds_two_views(self):
        plan = build_plan(tiny_loss_config(critic_mode="svea_asym", augment={"complex": "randconv"}))
        assert [c.name for c in plan.nu] == ["shift", "shift+randconv"]
        assert plan.nu_weights == (0.5, 0.5)

    def test_tangent_prop_needs_capable_transform(self):
        with pytest.raises(ConfigError):
            build_plan(tiny_loss_config(alpha_tp=0.1, augment={"tp": "rotation"}))


class TestTargets:

    def test_terminal_target_is_reward(self, rng):
        f = make_loss_fixture(rng, n_items=4)
        f.batch.done[:] = 1.0
        y = compute_targets(f.config, f.nets, f.batch, f.draws["mu_params"], rng, f.plan)
        expected = np.repeat(f.batch.reward[:, None], f.config.K, axis=1)
        np.testing.assert_allclose(y.numpy(), expected, rtol=0, atol=0)

    def test_targets_read_target_critics_only(self, rng):
        f = make_loss_fixture(rng, n_items=3, base_algo="ddpg", ddpg_target_noise=0.0)
        before = compute_targets(f.config, f.nets, f.batch, f.draws["mu_params"], make_stream(0, "policy"), f.plan)
        with torch.no_grad():
            for p in f.nets.critics.parameters():
                p.add_(1.0)
        after = compute_targets(f.config, f.nets, f.batch, f.draws["mu_params"], make_stream(0, "policy"), f.plan)
        torch.testing.assert_close(before, after)

    def test_targets_have_no_graph(self, loss_fixture, rng):
        f = loss_fixture
        y = compute_targets(f.config, f.nets, f.batch, f.draws["mu_params"], rng, f.plan)
        assert not y.requires_grad
        assert y.shape == (3, f.config.K)


class TestCriticLoss:

    @pytest.mark.parametrize("mode", ["implicit", "explicit_sg", "explicit_y", "generic"])
    def test_modes_produce_finite_loss_and_grads(self, rng, mode):
        f = make_loss_fixture(rng, critic_mode=mode, alpha_tp=0.1 if mode == "generic" else 0.0)
        result = critic_loss(f.config, f.nets, f.batch, f.draws["nu_params"], f.draws["mu_params"], rng,
                             f.plan, tp_params=f.draws.get("tp_params"))
        assert np.isfinite(result.value)
        assert result.flat_grad().abs().sum() > 0
        assert len(result.params) == len(f.nets.critic_parameters())

    def test_identity_views_make_explicit_regularizer_vanish(self, rng):
        f = make_loss_fixture(rng, critic_mode="explicit_sg")
        identity = [[[(ShiftParam(),)] * f.config.M for _ in range(4)]]
        result = critic_loss(f.config, f.nets, f.batch, identity, f.draws["mu_params"], rng, f.plan)
        assert result.terms["regularizer"] == pytest.approx(0.0, abs=1e-20)

    def test_implicit_matches_all_pairs_gradient(self, rng):
        f = make_loss_fixture(rng, M=3, K=2)
        targets = compute_targets(f.config, f.nets, f.batch, f.draws["mu_params"], rng, f.plan)
        implicit = critic_loss(f.config, f.nets, f.batch, f.draws["nu_params"], None, rng, f.plan, targets=targets)
        pairs = all_pairs_critic_loss(f.config, f.nets, f.batch, f.draws["nu_params"], targets, f.plan)
        torch.testing.assert_close(implicit.flat_grad(), pairs.flat_grad(), rtol=1e-8, atol=1e-10)
        # the losses differ by the (parameter-free) spread of the targets
        spread = float(((targets - targets.mean(dim=1, keepdim=True)) ** 2).mean(dim=1).mean())
        twin_heads = 2
        assert pairs.value - implicit.value == pytest.approx(twin_heads * spread, rel=1e-8, abs=1e-12)

    def test_wrong_draw_count(self, loss_fixture, rng):
        f = loss_fixture
        short = [[row[:1] for row in f.draws["nu_params"][0]]]
        with pytest.raises(ConfigError):
            critic_loss(f.config, f.nets, f.batch, short, f.draws["mu_params"], rng, f.plan)

    def test_target_shape_checked(self, loss_fixture, rng):
        f = loss_fixture
        with pytest.raises(ConfigError):
            critic_loss(f.config, f.nets, f.batch, f.draws["nu_params"], None, rng, f.plan,
                        targets=torch.zeros(3, f.config.K + 1, dtype=torch.float64))

    def test_tangent_prop_term_reported(self, rng):
        f = make_loss_fixture(rng, critic_mode="generic", alpha_tp=0.5)
        result = critic_loss(f.config, f.nets, f.batch, f.draws["nu_params"], f.draws["mu_params"], rng,
                             f.plan, tp_params=f.draws["tp_params"])
        assert result.terms["tangent_prop"] >= 0.0
        without = critic_loss(f.config.model_copy(update={"alpha_tp": 0.0}), f.nets, f.batch,
                              f.draws["nu_params"], f.draws["mu_params"], rng, f.plan)
        assert "tangent_prop" not in without.terms


class TestTangentProp:

    def test_constant_images_have_zero_shift_tangent(self, nets):
        s = np.full((2, 2, 8, 8), 0.3)
        a = torch.zeros(2, 2, dtype=torch.float64)
        params = [[ShiftParam(dx=1)], [ShiftParam(dy=-1)]]
        spec = build_plan(tiny_loss_config()).tp.spec
        penalty = tangent_prop_penalty(nets.critics, nets.encoder, s, a, params, spec)
        assert float(penalty) == pytest.approx(0.0, abs=1e-24)

    def test_penalty_is_differentiable(self, nets, rng):
        s = rng.random((2, 2, 8, 8))
        a = torch.zeros(2, 2, dtype=torch.float64)
        spec = build_plan(tiny_loss_config()).tp.spec
        penalty = tangent_prop_penalty(nets.critics, nets.encoder, s, a, [[ShiftParam()], [ShiftParam(dx=2)]], spec)
        grads = torch.autograd.grad(penalty, list(nets.critics.parameters()), allow_unused=True)
        assert any(g is not None and g.abs().sum() > 0 for g in grads)

    def test_row_count_checked(self, nets):
        spec = build_plan(tiny_loss_config()).tp.spec
        with pytest.raises(InvalidInputError):
            tangent_prop_penalty(nets.critics, nets.encoder, np.zeros((2, 2, 8, 8)),
                                 torch.zeros(2, 2, dtype=torch.float64), [[ShiftParam()]], spec)


class TestActorLoss:

    @pytest.mark.parametrize("mode", ["implicit", "explicit_kl", "kl_aug_target", "kl_avg_target", "generic"])
    def test_modes_run(self, rng, mode):
        f = make_loss_fixture(rng, actor_mode=mode, L=2)
        result = actor_loss(f.config, f.nets, f.batch, f.draws["actor_mu"], f.draws["eta_params"], rng, f.plan)
        assert np.isfinite(result.value)
        assert "log_prob" in result.terms
        critic_ids = {id(p) for p in f.nets.encoder.parameters()}
        assert not any(id(p) in critic_ids for p in result.params)

    def test_kl_vanishes_without_augmentation(self, rng):
        f = make_loss_fixture(rng, actor_mode="kl_aug_target", augment={"mu": "none"})
        draws = draw_params(f.config, f.plan, 3, rng)
        result = actor_loss(f.config, f.nets, f.batch, draws["actor_mu"], draws["eta_params"], rng, f.plan)
        assert result.terms["kl"] == pytest.approx(0.0, abs=1e-14)

    def test_missing_eta_params(self, rng):
        f = make_loss_fixture(rng, actor_mode="kl_aug_target")
        with pytest.raises(ConfigError):
            actor_loss(f.config, f.nets, f.batch, f.draws["actor_mu"], None, rng, f.plan)

    def test_ddpg_uses_action_gap(self, rng):
        f = make_loss_fixture(rng, base_algo="ddpg", actor_mode="explicit_kl")
        result = actor_loss(f.config, f.nets, f.batch, f.draws["actor_mu"], f.draws["eta_params"], rng, f.plan)
        assert "log_prob" not in result.terms
        assert result.terms["kl"] >= 0.0

    def test_frozen_anchor_matches_detached_online_anchor(self, rng):
        f = make_loss_fixture(rng, actor_mode="explicit_kl", alpha_pi=1.0)
        args = (f.config, f.nets, f.batch, f.draws["actor_mu"], f.draws["eta_params"])
        plain = actor_loss(*args, make_stream(2, "policy"), f.plan)
        frozen = actor_loss(*args, make_stream(2, "policy"), f.plan, frozen=copy.deepcopy(f.nets))
        torch.testing.assert_close(plain.flat_grad(), frozen.flat_grad())
        assert plain.value == pytest.approx(frozen.value)


class TestKL:

    def test_matches_torch(self):
        p, q = _dist([[0.1, -0.4]], [[-0.3, 0.2]]), _dist([[0.5, 0.0]], [[0.1, -0.6]])
        expected = torch.distributions.kl_divergence(
            torch.distributions.Normal(p.mean, p.std), torch.distributions.Normal(q.mean, q.std)
        ).sum(-1)
        torch.testing.assert_close(kl_diag_gaussian(p, q), expected)

    def test_zero_for_identical(self):
        p = _dist([[0.2]], [[-1.0]])
        assert float(kl_diag_gaussian(p, p)) == 0.0

    def test_directions(self):
        p, q = _dist([[0.0]], [[0.0]]), _dist([[1.0]], [[0.5]])
        torch.testing.assert_close(policy_kl(p, q, "forward"), kl_diag_gaussian(p, q))
        torch.testing.assert_close(policy_kl(p, q, "reverse"), kl_diag_gaussian(q, p))
        with pytest.raises(ConfigError):
            policy_kl(p, q, "sideways")

    def test_averaged_policy(self):
        a, b = _dist([[0.0]], [[0.0]]), _dist([[2.0]], [[0.0]])
        avg = averaged_policy([(a, 0.5), (b, 0.5)])
        torch.testing.assert_close(avg.mean, torch.tensor([[1.0]], dtype=torch.float64))
        torch.testing.assert_close(avg.std ** 2, torch.tensor([[0.5]], dtype=torch.float64))
        with pytest.raises(InvalidInputError):
            averaged_policy([(a, 0.7), (b, 0.7)])

    def test_repeated_target_views_are_not_merged(self):
        # two draws of the same view: each weighs 1/2, so the variance halves
        eta = PolicyDistribution(torch.full((1, 2, 1), 0.3, dtype=torch.float64),
                                 torch.zeros(1, 2, 1, dtype=torch.float64), False)
        avg = _average_views(eta, sac=True)
        torch.testing.assert_close(avg.mean, torch.full((1, 1, 1), 0.3, dtype=torch.float64))
        torch.testing.assert_close(avg.std ** 2, torch.full((1, 1, 1), 0.5, dtype=torch.float64))

    def test_temperature_loss_pushes_toward_target_entropy(self):
        log_alpha = torch.zeros((), dtype=torch.float64, requires_grad=True)
        # entropy above target (mean log prob very negative) → decrease α
        temperature_loss(log_alpha, mean_log_prob=-5.0, target_entropy=-2.0).backward()
        assert log_alpha.grad > 0
