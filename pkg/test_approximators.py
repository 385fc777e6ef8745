"""Tests for networks, policy distributions, target copies and input gradients"""

import math

import numpy as np
import pytest
import torch

from core.approximators import (
    PolicyDistribution,
    build_agent_nets,
    ema_update,
    input_gradient,
    load_state_tensors,
    min_q,
    policy_distribution,
    sample_action,
    state_tensors,
)
from core.errors import InvalidInputError
from core.fixtures import TINY_OBS_SHAPE, tiny_agent_nets
from utils.rng import make_stream


def _obs(rng, n=3):
    return torch.as_tensor(rng.random((n, *TINY_OBS_SHAPE)), dtype=torch.float64)


class TestBuild:

    def test_same_stream_same_weights(self):
        a = tiny_agent_nets(make_stream(5, "init"))
        b = tiny_agent_nets(make_stream(5, "init"))
        for (ka, va), (kb, vb) in zip(state_tensors(a).items(), state_tensors(b).items()):
            assert ka == kb
            np.testing.assert_array_equal(va, vb)

    def test_targets_start_as_copies(self, rng):
        nets = build_agent_nets(TINY_OBS_SHAPE, 2, rng, feature_dim=4, channels=2, hidden_dim=8,
                                dtype=torch.float64)
        for o, t in zip(nets.critics.parameters(), nets.targets.critics.parameters()):
            torch.testing.assert_close(o, t)
            assert not t.requires_grad

    def test_single_critic_min_is_q1(self, rng):
        nets = tiny_agent_nets(rng, twin=False)
        obs = _obs(rng)
        action = torch.zeros(3, 2, dtype=torch.float64)
        q1, q2 = nets.critics(nets.encoder(obs), action)
        torch.testing.assert_close(min_q(nets.critics, nets.encoder, obs, action), q1)
        assert q1 is q2

    def test_shared_actor_features_are_detached(self, nets, rng):
        features = nets.actor_features(_obs(rng))
        assert not features.requires_grad
        assert nets.shared_encoder

    def test_separate_actor_encoder(self, rng):
        nets = tiny_agent_nets(rng, shared=False)
        assert not nets.shared_encoder
        ids = {id(p) for p in nets.critic_parameters()}
        assert not any(id(p) in ids for p in nets.actor_parameters())

    def test_unknown_activation(self, rng):
        with pytest.raises(InvalidInputError):
            build_agent_nets(TINY_OBS_SHAPE, 2, rng, activation="gelu")


class TestPolicy:

    def test_log_prob_matches_torch_normal_without_squash(self):
        mean = torch.tensor([[0.3, -0.2]], dtype=torch.float64)
        log_std = torch.tensor([[-0.5, 0.1]], dtype=torch.float64)
        dist = PolicyDistribution(mean, log_std, squashed=False)
        u = torch.tensor([[0.1, 0.4]], dtype=torch.float64)
        expected = torch.distributions.Normal(mean, log_std.exp()).log_prob(u).sum(-1)
        torch.testing.assert_close(dist.log_prob(u), expected)

    def test_tanh_correction(self):
        mean = torch.zeros(1, 1, dtype=torch.float64)
        dist = PolicyDistribution(mean, torch.zeros(1, 1, dtype=torch.float64))
        u = torch.tensor([[0.7]], dtype=torch.float64)
        correction = math.log(1.0 - math.tanh(0.7) ** 2)
        torch.testing.assert_close(dist.log_prob(u), dist.gaussian_log_prob(u) - correction)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            PolicyDistribution(torch.zeros(2, 2), torch.zeros(2, 3))

    def test_sampling_is_stream_deterministic(self, nets, rng):
        obs = _obs(rng)
        dist = policy_distribution(nets.actor, nets.actor_features, obs)
        a1, lp1 = sample_action(dist, make_stream(1, "policy"))
        a2, lp2 = sample_action(dist, make_stream(1, "policy"))
        torch.testing.assert_close(a1, a2)
        torch.testing.assert_close(lp1, lp2)
        assert a1.abs().max() < 1.0

    def test_entropy_of_unit_gaussian(self):
        dist = PolicyDistribution(torch.zeros(1, 2, dtype=torch.float64), torch.zeros(1, 2, dtype=torch.float64))
        assert float(dist.entropy()) == pytest.approx(math.log(2 * math.pi * math.e))


class TestTargetsAndGradients:

    def test_ema_interpolates(self, nets):
        before = [t.clone() for t in nets.targets.critics.parameters()]
        ema_update(nets.targets, nets.named_online(), tau=0.25)
        for b, t, o in zip(before, nets.targets.critics.parameters(), nets.critics.parameters()):
            torch.testing.assert_close(t, 0.75 * b + 0.25 * o)

    def test_ema_tau_one_copies(self, nets):
        ema_update(nets.targets, nets.named_online(), tau=1.0)
        for t, o in zip(nets.targets.encoder.parameters(), nets.encoder.parameters()):
            torch.testing.assert_close(t, o, rtol=0, atol=0)

    def test_ema_rejects_bad_tau(self, nets):
        with pytest.raises(InvalidInputError):
            ema_update(nets.targets, nets.named_online(), tau=0.0)

    def test_input_gradient_matches_finite_difference(self, nets, rng):
        obs = _obs(rng, 1)
        action = torch.as_tensor(rng.uniform(-0.5, 0.5, size=(1, 2)), dtype=torch.float64)
        grad = input_gradient(nets.critics, nets.encoder, obs, action)
        direction = torch.as_tensor(rng.normal(size=obs.shape), dtype=torch.float64)
        eps = 1e-6
        with torch.no_grad():
            plus = min_q(nets.critics, nets.encoder, obs + eps * direction, action)
            minus = min_q(nets.critics, nets.encoder, obs - eps * direction, action)
        numeric = (plus - minus) / (2 * eps)
        torch.testing.assert_close((grad * direction).sum().reshape(1), numeric, rtol=1e-5, atol=1e-8)

    def test_min_q_gradcheck_in_action(self, nets, rng):
        obs = _obs(rng, 2)
        action = torch.as_tensor(rng.uniform(-0.5, 0.5, size=(2, 2)), dtype=torch.float64).requires_grad_()
        assert torch.autograd.gradcheck(lambda a: min_q(nets.critics, nets.encoder, obs, a), (action,))

    def test_log_prob_gradcheck(self):
        u = torch.tensor([[0.2, -0.6]], dtype=torch.float64)
        mean = torch.tensor([[0.1, 0.3]], dtype=torch.float64, requires_grad=True)
        log_std = torch.tensor([[-0.4, 0.2]], dtype=torch.float64, requires_grad=True)
        assert torch.autograd.gradcheck(lambda m, s: PolicyDistribution(m, s).log_prob(u), (mean, log_std))

    def test_state_tensors_load(self, rng):
        source = tiny_agent_nets(make_stream(1, "init"))
        target = tiny_agent_nets(make_stream(2, "init"))
        load_state_tensors(target, state_tensors(source))
        for (_, a), (_, b) in zip(state_tensors(source).items(), state_tensors(target).items()):
            np.testing.assert_array_equal(a, b)

    def test_load_missing_tensor(self, nets):
        tensors = state_tensors(nets)
        tensors.pop(next(iter(tensors)))
        with pytest.raises(InvalidInputError):
            load_state_tensors(nets, tensors)
