"""
AugRL Bench - Verification fixtures
Constructed networks and states with known structure:

    InvariantCriticFixture  states split into a payload block and a nuisance
                            block; transforms act on the nuisance block only
                            and the critic reads the payload only, so
                            Q(T_ψ s, a) == Q(s, a) exactly.
    LossFixture             random tiny float64 networks, batch and draws for
                            exact-enumeration and finite-difference checks.

Plus small closed-form helpers on 1-D Gaussians used by the quadrature checks.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
from scipy import integrate, special

from config.schema import AugmentConfig, LossConfig
from config.settings import QUADRATURE_POINTS, QUADRATURE_WIDTH
from core.approximators import (
    AgentNets,
    GaussianPolicy,
    build_agent_nets,
    init_from_stream,
    policy_distribution,
)
from core.augment import (
    ParamDistribution,
    ShiftParam,
    TransformSpec,
    apply_transform,
    enumerate_params,
)
from core.envs import Batch
from core.errors import InvalidInputError
from core.losses import AugmentationPlan, build_plan, draw_params
from utils.logger import get_logger

logger = get_logger(__name__)

TINY_OBS_SHAPE = (2, 8, 8)
LN_2PI = float(np.log(2.0 * np.pi))


# ==================== 1-D GAUSSIANS ====================

class Gaussian(NamedTuple):
    mean: float
    std: float

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x) - self.mean) / self.std
        return -0.5 * z ** 2 - np.log(self.std) - 0.5 * LN_2PI

    def pdf(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def grid(self, points: int = QUADRATURE_POINTS, width: float = QUADRATURE_WIDTH) -> np.ndarray:
        return np.linspace(self.mean - width * self.std, self.mean + width * self.std, points)

    def entropy(self) -> float:
        return float(np.log(self.std) + 0.5 * (LN_2PI + 1.0))


class Quadratic(NamedTuple):
    """Q(a) = q0 − κ(a − center)²"""
    q0: float
    center: float
    kappa: float

    def value(self, a: np.ndarray) -> np.ndarray:
        return self.q0 - self.kappa * (np.asarray(a) - self.center) ** 2

    def boltzmann(self, alpha: float) -> Gaussian:
        """g ∝ exp(Q/α) = N(center, α / 2κ)"""
        return Gaussian(self.center, float(np.sqrt(alpha / (2.0 * self.kappa))))

    def log_partition(self, alpha: float) -> float:
        """log ∫ exp(Q(a)/α) da"""
        return float(self.q0 / alpha + 0.5 * np.log(np.pi * alpha / self.kappa))


def expectation(dist: Gaussian, fn: Callable[[np.ndarray], np.ndarray],
                points: int = QUADRATURE_POINTS, width: float = QUADRATURE_WIDTH) -> float:
    """E_dist[fn(a)] by Simpson quadrature on mean ± width·std"""
    a = dist.grid(points, width)
    return float(integrate.simpson(dist.pdf(a) * fn(a), x=a))


def gaussian_kl(p: Gaussian, q: Gaussian) -> float:
    return float(np.log(q.std / p.std) + (p.std ** 2 + (p.mean - q.mean) ** 2) / (2.0 * q.std ** 2) - 0.5)


def discrete_log_probs(dist: Gaussian, grid: np.ndarray) -> np.ndarray:
    """Log weights of dist restricted to the grid points and renormalized"""
    logits = -0.5 * ((grid - dist.mean) / dist.std) ** 2
    return logits - special.logsumexp(logits)


def discrete_kl(log_p: np.ndarray, log_q: np.ndarray) -> float:
    return float(np.sum(np.exp(log_p) * (log_p - log_q)))


# ==================== INVARIANT CRITIC ====================

class RegionFlatten(nn.Module):
    """Flatten only the pixels inside (row0, row1, col0, col1)"""

    def __init__(self, region: Tuple[int, int, int, int]):
        super().__init__()
        self.region = tuple(region)

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        r0, r1, c0, c1 = self.region
        return obs[:, :, r0:r1, c0:c1].flatten(start_dim=1)


class PayloadCritic(nn.Module):
    """
    Q(s, a) = w_v·x + b − κ(a − tanh(w_c·x))² with x the payload pixels.
    1-D actions; quadratic in a so its Boltzmann policy is Gaussian.
    """

    def __init__(self, obs_shape: Tuple[int, int, int], payload: Tuple[int, int, int, int],
                 rng: np.random.Generator, kappa_range: Tuple[float, float] = (0.5, 2.0)):
        super().__init__()
        r0, r1, c0, c1 = payload
        n = obs_shape[0] * (r1 - r0) * (c1 - c0)
        self.features = RegionFlatten(payload)
        self.w_value = nn.Parameter(torch.as_tensor(rng.normal(0.0, 1.0 / np.sqrt(n), n), dtype=torch.float64))
        self.w_center = nn.Parameter(torch.as_tensor(rng.normal(0.0, 2.0 / np.sqrt(n), n), dtype=torch.float64))
        self.kappa = float(rng.uniform(*kappa_range))
        self.bias = float(rng.normal())

    def _terms(self, obs: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        x = self.features(obs)
        return x @ self.w_value + self.bias, torch.tanh(x @ self.w_center)

    def forward(self, obs: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        q0, center = self._terms(obs)
        return q0 - self.kappa * (action[:, 0] - center) ** 2

    def quadratic(self, state: np.ndarray) -> Quadratic:
        with torch.no_grad():
            q0, center = self._terms(torch.as_tensor(state[None], dtype=torch.float64))
        return Quadratic(float(q0[0]), float(center[0]), self.kappa)

    def on_actions(self, state: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Q(state, a) for every a in a 1-D action array"""
        obs = torch.as_tensor(np.repeat(state[None], len(actions), axis=0), dtype=torch.float64)
        a = torch.as_tensor(np.asarray(actions, dtype=np.float64)[:, None])
        with torch.no_grad():
            return self(obs, a).numpy()


@dataclass
class InvariantCriticFixture:
    states: np.ndarray
    spec: TransformSpec
    dist: ParamDistribution
    critic: PayloadCritic
    actor: GaussianPolicy
    encoder: nn.Module
    alpha: float

    @property
    def payload(self) -> Tuple[int, int, int, int]:
        return self.critic.features.region

    def members(self) -> List[Tuple[ShiftParam, float]]:
        return [(p, w) for p, w in zip(self.dist.support, self.dist.weights) if w > 0]

    def views(self, state: np.ndarray) -> List[Tuple[ShiftParam, float, np.ndarray]]:
        return [(p, w, apply_transform(self.spec, p, state)) for p, w in self.members()]

    def policy(self, state: np.ndarray) -> Gaussian:
        with torch.no_grad():
            dist = policy_distribution(
                self.actor, self.encoder, torch.as_tensor(state[None], dtype=torch.float64)
            )
        return Gaussian(float(dist.mean[0, 0]), float(dist.std[0, 0]))

    def invariance_error(self, actions: Optional[np.ndarray] = None) -> float:
        """max |Q(T_ψ s, a) − Q(s, a)| over states, support and test actions"""
        actions = np.linspace(-2.0, 2.0, 9) if actions is None else actions
        worst = 0.0
        for state in self.states:
            base = self.critic.on_actions(state, actions)
            for _, _, view in self.views(state):
                worst = max(worst, float(np.max(np.abs(self.critic.on_actions(view, actions) - base))))
        return worst


def make_invariant_fixture(
    rng: np.random.Generator,
    n_states: int = 1,
    frames: int = 1,
    payload_size: int = 4,
    nuisance_width: int = 4,
    max_pad: int = 1,
    alpha: float = 0.1,
    policy_reads_nuisance: bool = True,
    point_mass: bool = False,
) -> InvariantCriticFixture:
    """
    States of shape (frames, payload_size, payload_size + nuisance_width)
    with random pixels. μ is a random (Dirichlet) law over every shift of the
    nuisance block.
    """
    shape = (frames, payload_size, payload_size + nuisance_width)
    payload = (0, payload_size, 0, payload_size)
    nuisance = (0, payload_size, payload_size, payload_size + nuisance_width)
    spec = TransformSpec(kind="shift", max_pad=max_pad, region=nuisance)
    support = enumerate_params(spec)
    if point_mass:
        dist = ParamDistribution.point_mass(spec)
    else:
        dist = ParamDistribution.from_weights(spec, support, rng.dirichlet(np.full(len(support), 2.0)))

    states = rng.random((n_states, *shape))
    critic = PayloadCritic(shape, payload, rng)
    encoder = nn.Flatten() if policy_reads_nuisance else RegionFlatten(payload)
    in_dim = int(np.prod(shape)) if policy_reads_nuisance else frames * payload_size * payload_size
    actor = GaussianPolicy(in_dim, 1, hidden_dim=8, depth=1, activation="tanh", squash=False)
    init_from_stream(actor, rng)
    actor.to(torch.float64)
    if policy_reads_nuisance:
        # spread the nuisance dependence so views disagree visibly
        with torch.no_grad():
            actor.trunk[0].weight.mul_(3.0)
    return InvariantCriticFixture(states, spec, dist, critic, actor, encoder, alpha)


# ==================== LOSS FIXTURES ====================

def tiny_agent_nets(
    rng: np.random.Generator,
    obs_shape: Tuple[int, int, int] = TINY_OBS_SHAPE,
    action_dim: int = 2,
    twin: bool = True,
    shared: bool = True,
    deterministic_actor: bool = False,
    tau: float = 0.01,
) -> AgentNets:
    """Small float64 tanh networks; smooth everywhere for finite differences"""
    nets = build_agent_nets(
        obs_shape, action_dim, rng,
        feature_dim=6, channels=3, hidden_dim=8,
        twin_critics=twin, shared_encoder=shared, activation="tanh",
        tau=tau, deterministic_actor=deterministic_actor, dtype=torch.float64,
    )
    # targets differ from the online nets so target isolation is observable
    with torch.no_grad():
        for p in nets.targets.parameters():
            p.add_(torch.as_tensor(rng.normal(0.0, 0.05, size=tuple(p.shape)), dtype=p.dtype))
    return nets


def random_batch(rng: np.random.Generator, n: int, obs_shape=TINY_OBS_SHAPE, action_dim: int = 2,
                 done_prob: float = 0.25) -> Batch:
    return Batch(
        obs=rng.random((n, *obs_shape)),
        action=rng.uniform(-0.9, 0.9, size=(n, action_dim)),
        reward=rng.uniform(0.0, 1.0, size=n),
        next_obs=rng.random((n, *obs_shape)),
        done=(rng.random(n) < done_prob).astype(np.float64),
    )


def tiny_loss_config(**overrides) -> LossConfig:
    augment = dict(max_pad=2)
    augment.update(overrides.pop("augment", {}))
    return LossConfig(augment=AugmentConfig(**augment), **overrides)


@dataclass
class LossFixture:
    config: LossConfig
    nets: AgentNets
    batch: Batch
    plan: AugmentationPlan
    draws: Dict[str, list]


def make_loss_fixture(rng: np.random.Generator, n_items: int = 4, twin: bool = True,
                      shared: bool = True, **overrides) -> LossFixture:
    config = tiny_loss_config(**overrides)
    nets = tiny_agent_nets(rng, twin=twin, shared=shared,
                           deterministic_actor=config.base_algo == "ddpg")
    batch = random_batch(rng, n_items)
    plan = build_plan(config)
    return LossFixture(config, nets, batch, plan, draw_params(config, plan, n_items, rng))


def shift_distribution(rng: np.random.Generator, max_pad: int, size: int,
                       include_identity: bool = True) -> ParamDistribution:
    """Random finite law over `size` distinct shifts (identity first when included)"""
    spec = TransformSpec(kind="shift", max_pad=max_pad)
    offsets = [p for p in enumerate_params(spec) if p != ShiftParam()]
    if size < 1 or size > len(offsets) + int(include_identity):
        raise InvalidInputError(f"cannot draw {size} distinct shifts with max_pad={max_pad}")
    picked = [offsets[i] for i in rng.choice(len(offsets), size=size - int(include_identity), replace=False)]
    support = ([ShiftParam()] if include_identity else []) + picked
    return ParamDistribution.from_weights(spec, support, rng.dirichlet(np.ones(len(support))))
