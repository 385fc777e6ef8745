"""
AugRL Bench - Function approximators
Encoder, squashed Gaussian policy, twin critics, target copies and the
autodiff helpers (input gradients, EMA updates) used by the losses.
"""

import copy
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from config.settings import ENCODER_CHANNELS, FEATURE_DIM, HIDDEN_DIM, LOG_STD_BOUNDS
from core.errors import InvalidInputError
from utils.logger import get_logger
from utils.rng import standard_normal

logger = get_logger(__name__)

_ACTIVATIONS = {"relu": nn.ReLU, "tanh": nn.Tanh, "elu": nn.ELU}


def _activation(name: str) -> nn.Module:
    try:
        return _ACTIVATIONS[name]()
    except KeyError:
        raise InvalidInputError(f"unknown activation {name!r}; choose from {sorted(_ACTIVATIONS)}")


def _mlp(in_dim: int, hidden: int, out_dim: int, depth: int, activation: str) -> nn.Sequential:
    layers: List[nn.Module] = []
    dim = in_dim
    for _ in range(depth):
        layers += [nn.Linear(dim, hidden), _activation(activation)]
        dim = hidden
    layers.append(nn.Linear(dim, out_dim))
    return nn.Sequential(*layers)


def init_from_stream(module: nn.Module, rng: np.random.Generator) -> nn.Module:
    """
    Seed every weight from a numpy stream: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    for weights and biases, the PyTorch default range.
    """
    with torch.no_grad():
        for sub in module.modules():
            if isinstance(sub, (nn.Linear, nn.Conv2d)):
                fan_in = sub.weight[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                sub.weight.copy_(torch.as_tensor(
                    rng.uniform(-bound, bound, size=tuple(sub.weight.shape)), dtype=sub.weight.dtype
                ))
                if sub.bias is not None:
                    sub.bias.copy_(torch.as_tensor(
                        rng.uniform(-bound, bound, size=tuple(sub.bias.shape)), dtype=sub.bias.dtype
                    ))
    return module


# ==================== NETWORKS ====================

class Encoder(nn.Module):
    """Two stride-2 3×3 convolutions, flatten, linear map to d features"""

    def __init__(
        self,
        obs_shape: Tuple[int, int, int],
        feature_dim: int = FEATURE_DIM,
        channels: int = ENCODER_CHANNELS,
        activation: str = "relu",
    ):
        super().__init__()
        c, h, w = obs_shape
        self.obs_shape = tuple(obs_shape)
        self.feature_dim = feature_dim
        self.convs = nn.Sequential(
            nn.Conv2d(c, channels, kernel_size=3, stride=2),
            _activation(activation),
            nn.Conv2d(channels, channels, kernel_size=3, stride=2),
            _activation(activation),
        )
        with torch.no_grad():
            conv_out = self.convs(torch.zeros(1, c, h, w)).numel()
        self.linear = nn.Linear(conv_out, feature_dim)
        self.out_act = nn.Tanh()

    @property
    def out_dim(self) -> int:
        return self.feature_dim

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        h = self.convs(obs).flatten(start_dim=1)
        return self.out_act(self.linear(h))


class GaussianPolicy(nn.Module):
    """Features → (mean, clamped log-std) of a diagonal Gaussian"""

    def __init__(
        self,
        feature_dim: int,
        action_dim: int,
        hidden_dim: int = HIDDEN_DIM,
        depth: int = 2,
        activation: str = "relu",
        squash: bool = True,
        log_std_bounds: Tuple[float, float] = LOG_STD_BOUNDS,
    ):
        super().__init__()
        self.action_dim = action_dim
        self.squash = squash
        self.log_std_bounds = log_std_bounds
        self.trunk = _mlp(feature_dim, hidden_dim, 2 * action_dim, depth, activation)

    def forward(self, features: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        mean, log_std = self.trunk(features).chunk(2, dim=-1)
        lo, hi = self.log_std_bounds
        return mean, torch.clamp(log_std, lo, hi)


class QNetwork(nn.Module):
    def __init__(self, feature_dim: int, action_dim: int, hidden_dim: int = HIDDEN_DIM,
                 depth: int = 2, activation: str = "relu"):
        super().__init__()
        self.net = _mlp(feature_dim + action_dim, hidden_dim, 1, depth, activation)

    def forward(self, features: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([features, action], dim=-1)).squeeze(-1)


class CriticPair(nn.Module):
    """
    Twin Q heads on shared features. With twin=False the second head is the
    first one, so min(q1, q2) == q1.
    """

    def __init__(self, q1: nn.Module, q2: Optional[nn.Module] = None):
        super().__init__()
        self.q1 = q1
        self.q2 = q2
        self.twin = q2 is not None

    @classmethod
    def build(cls, feature_dim: int, action_dim: int, twin: bool = True, **kwargs) -> "CriticPair":
        q1 = QNetwork(feature_dim, action_dim, **kwargs)
        q2 = QNetwork(feature_dim, action_dim, **kwargs) if twin else None
        return cls(q1, q2)

    def forward(self, features: torch.Tensor, action: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        q1 = self.q1(features, action)
        q2 = self.q2(features, action) if self.twin else q1
        return q1, q2


# ==================== DISTRIBUTIONS ====================

@dataclass
class PolicyDistribution:
    """Diagonal Gaussian over pre-squash actions; rows are batch items"""
    mean: torch.Tensor
    log_std: torch.Tensor
    squashed: bool = True

    def __post_init__(self):
        if self.mean.shape != self.log_std.shape:
            raise InvalidInputError(
                f"mean {tuple(self.mean.shape)} and log_std {tuple(self.log_std.shape)} differ"
            )

    @property
    def std(self) -> torch.Tensor:
        return self.log_std.exp()

    @property
    def action_dim(self) -> int:
        return self.mean.shape[-1]

    def detach(self) -> "PolicyDistribution":
        return PolicyDistribution(self.mean.detach(), self.log_std.detach(), self.squashed)

    def gaussian_log_prob(self, pre_squash: torch.Tensor) -> torch.Tensor:
        """Log density of the unsquashed Gaussian, summed over action dims"""
        z = (pre_squash - self.mean) / self.std
        per_dim = -0.5 * z ** 2 - self.log_std - 0.5 * math.log(2.0 * math.pi)
        return per_dim.sum(dim=-1)

    def log_prob(self, pre_squash: torch.Tensor) -> torch.Tensor:
        """Log density of the (squashed) action produced from pre_squash"""
        log_prob = self.gaussian_log_prob(pre_squash)
        if self.squashed:
            log_prob = log_prob - tanh_log_det(pre_squash).sum(dim=-1)
        return log_prob

    def deterministic_action(self) -> torch.Tensor:
        return torch.tanh(self.mean) if self.squashed else self.mean

    def entropy(self) -> torch.Tensor:
        """Entropy of the unsquashed Gaussian"""
        return (self.log_std + 0.5 * math.log(2.0 * math.pi * math.e)).sum(dim=-1)


def tanh_log_det(u: torch.Tensor) -> torch.Tensor:
    """log(1 − tanh²(u)), written to stay finite for large |u|"""
    return 2.0 * (math.log(2.0) - u - F.softplus(-2.0 * u))


# ==================== NET BUNDLES ====================

@dataclass
class TargetNets:
    encoder: nn.Module
    critics: nn.Module
    tau: float
    actor: Optional[nn.Module] = None

    def modules(self) -> List[nn.Module]:
        return [m for m in (self.encoder, self.critics, self.actor) if m is not None]

    def parameters(self) -> Iterable[nn.Parameter]:
        for module in self.modules():
            yield from module.parameters()


def make_targets(encoder: nn.Module, critics: nn.Module, tau: float,
                 actor: Optional[nn.Module] = None) -> TargetNets:
    """Frozen deep copies of the online networks"""
    targets = TargetNets(
        encoder=copy.deepcopy(encoder),
        critics=copy.deepcopy(critics),
        tau=tau,
        actor=copy.deepcopy(actor) if actor is not None else None,
    )
    for p in targets.parameters():
        p.requires_grad_(False)
    return targets


@dataclass
class AgentNets:
    """
    Online networks plus targets. In shared mode the actor reads the critic
    encoder with its gradient stopped; otherwise it owns `actor_encoder`.
    """
    encoder: nn.Module
    actor: nn.Module
    critics: nn.Module
    targets: TargetNets
    actor_encoder: Optional[nn.Module] = None

    @property
    def shared_encoder(self) -> bool:
        return self.actor_encoder is None

    def actor_features(self, obs: torch.Tensor) -> torch.Tensor:
        if self.actor_encoder is None:
            return self.encoder(obs).detach()
        return self.actor_encoder(obs)

    def critic_parameters(self) -> List[nn.Parameter]:
        return list(self.encoder.parameters()) + list(self.critics.parameters())

    def actor_parameters(self) -> List[nn.Parameter]:
        params = list(self.actor.parameters())
        if self.actor_encoder is not None:
            params += list(self.actor_encoder.parameters())
        return params

    def named_online(self) -> Dict[str, nn.Module]:
        named = {"encoder": self.encoder, "actor": self.actor, "critics": self.critics}
        if self.actor_encoder is not None:
            named["actor_encoder"] = self.actor_encoder
        return named

    def named_targets(self) -> Dict[str, nn.Module]:
        named = {"target_encoder": self.targets.encoder, "target_critics": self.targets.critics}
        if self.targets.actor is not None:
            named["target_actor"] = self.targets.actor
        return named


def build_agent_nets(
    obs_shape: Tuple[int, int, int],
    action_dim: int,
    rng: np.random.Generator,
    feature_dim: int = FEATURE_DIM,
    channels: int = ENCODER_CHANNELS,
    hidden_dim: int = HIDDEN_DIM,
    twin_critics: bool = True,
    shared_encoder: bool = True,
    activation: str = "relu",
    tau: float = 0.01,
    deterministic_actor: bool = False,
    dtype: torch.dtype = torch.float32,
) -> AgentNets:
    """Build and seed all networks; targets start as exact copies"""
    encoder = Encoder(obs_shape, feature_dim, channels, activation)
    actor = GaussianPolicy(feature_dim, action_dim, hidden_dim, activation=activation)
    critics = CriticPair.build(feature_dim, action_dim, twin=twin_critics,
                               hidden_dim=hidden_dim, activation=activation)
    actor_encoder = None if shared_encoder else Encoder(obs_shape, feature_dim, channels, activation)

    for module in (encoder, actor, critics, actor_encoder):
        if module is not None:
            init_from_stream(module, rng)
            module.to(dtype)

    targets = make_targets(encoder, critics, tau, actor if deterministic_actor else None)
    logger.debug(
        f"Built networks: obs {obs_shape}, |A|={action_dim}, d={feature_dim}, "
        f"twin={twin_critics}, shared={shared_encoder}"
    )
    return AgentNets(encoder, actor, critics, targets, actor_encoder)


# ==================== OPERATIONS ====================

def policy_distribution(actor: nn.Module, enc, s: torch.Tensor) -> PolicyDistribution:
    """
    π(·|s) pre-squash. `enc` is an encoder module or a callable returning
    features (e.g. AgentNets.actor_features).
    """
    mean, log_std = actor(enc(s))
    return PolicyDistribution(mean, log_std, getattr(actor, "squash", True))


def sample_action(dist: PolicyDistribution, rng: np.random.Generator) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Reparameterized sample: u = λ + σ·ε with ε from the numpy stream,
    action = tanh(u) when squashed. log_prob includes the tanh correction.
    """
    eps = standard_normal(rng, dist.mean.shape, dist.mean)
    u = dist.mean + dist.std * eps
    action = torch.tanh(u) if dist.squashed else u
    return action, dist.log_prob(u)


def q_values(critics: nn.Module, enc: nn.Module, s: torch.Tensor, a: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    return critics(enc(s), a)


def min_q(critics: nn.Module, enc: nn.Module, s: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
    q1, q2 = q_values(critics, enc, s, a)
    return torch.min(q1, q2)


def input_gradient(
    critics: nn.Module,
    enc: nn.Module,
    s: torch.Tensor,
    a: torch.Tensor,
    create_graph: bool = False,
) -> torch.Tensor:
    """
    ∂ min(q1, q2) / ∂s for every input pixel; batch items are independent so
    the gradient of the summed output is the per-item gradient.
    """
    s = s.detach().requires_grad_(True)
    q = min_q(critics, enc, s, a)
    (grad,) = torch.autograd.grad(q.sum(), s, create_graph=create_graph, allow_unused=True)
    if grad is None:
        return torch.zeros_like(s)
    return grad


def ema_update(targets: TargetNets, online: Dict[str, nn.Module], tau: Optional[float] = None) -> TargetNets:
    """
    target ← (1−τ)·target + τ·online for every weight. `online` maps
    "encoder", "critics" and optionally "actor" to the online modules.
    τ = 1 copies exactly.
    """
    tau = targets.tau if tau is None else tau
    if not 0.0 < tau <= 1.0:
        raise InvalidInputError(f"tau must lie in (0, 1], got {tau}")

    pairs = [(targets.encoder, online["encoder"]), (targets.critics, online["critics"])]
    if targets.actor is not None:
        pairs.append((targets.actor, online["actor"]))

    with torch.no_grad():
        for target_module, online_module in pairs:
            for t, o in zip(target_module.parameters(), online_module.parameters()):
                if tau == 1.0:
                    t.copy_(o)
                else:
                    t.mul_(1.0 - tau).add_(o, alpha=tau)
    return targets


def make_optimizers(nets: AgentNets, lr: float, betas=(0.9, 0.999)) -> Dict[str, torch.optim.Optimizer]:
    return {
        "critic": torch.optim.Adam(nets.critic_parameters(), lr=lr, betas=betas),
        "actor": torch.optim.Adam(nets.actor_parameters(), lr=lr, betas=betas),
    }


def apply_gradients(optimizer: torch.optim.Optimizer, params: List[nn.Parameter],
                    grads: List[torch.Tensor]) -> None:
    """One optimizer step from precomputed gradients"""
    optimizer.zero_grad(set_to_none=True)
    for p, g in zip(params, grads):
        p.grad = g.detach().clone()
    optimizer.step()


def state_tensors(nets: AgentNets) -> Dict[str, np.ndarray]:
    """Flat name → array map of every online and target weight"""
    out: Dict[str, np.ndarray] = {}
    for prefix, module in {**nets.named_online(), **nets.named_targets()}.items():
        for name, tensor in module.state_dict().items():
            out[f"{prefix}.{name}"] = tensor.detach().cpu().numpy()
    return out


def load_state_tensors(nets: AgentNets, tensors: Dict[str, np.ndarray]) -> AgentNets:
    for prefix, module in {**nets.named_online(), **nets.named_targets()}.items():
        state = {}
        for name, current in module.state_dict().items():
            key = f"{prefix}.{name}"
            if key not in tensors:
                raise InvalidInputError(f"checkpoint is missing tensor {key}")
            state[name] = torch.as_tensor(tensors[key], dtype=current.dtype)
        module.load_state_dict(state)
    return nets
