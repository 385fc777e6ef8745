"""
AugRL Bench - Critic and actor losses
Every augmentation-aware loss variant, as functions of (config, networks,
batch, transformation draws). Each returns the loss value together with its
gradients with respect to the parameters the variant trains.

Draw layouts (N batch items):
    nu_params   [n_T][N][M]  chain parameter tuples for the critic views
    mu_params   [N][K]       chain parameter tuples for target next states
                             (law of plan.target; the μ law unless explicit)
    actor mu    [N][J]       actor views
    eta_params  [N][L]       KL-target views (same law as μ)
    tp_params   [N][P]       single-transform params for tangent prop
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from config.schema import AugmentConfig, LossConfig
from core.approximators import (
    AgentNets,
    PolicyDistribution,
    input_gradient,
    policy_distribution,
    sample_action,
)
from core.augment import (
    ParamDistribution,
    TransformChain,
    TransformKind,
    TransformSpec,
    apply_transform,
    sample_params,
    tangent_vector,
)
from core.envs import Batch
from core.errors import ConfigError, InvalidInputError
from utils.logger import get_logger

logger = get_logger(__name__)

KL_ACTOR_MODES = ("explicit_kl", "kl_aug_target", "kl_avg_target", "generic")
ETA_ACTOR_MODES = ("kl_aug_target", "kl_avg_target", "generic")


# ==================== PLAN ====================

@dataclass(frozen=True)
class AugmentationPlan:
    """Transform chains a LossConfig refers to"""
    nu: Tuple[TransformChain, ...]
    nu_weights: Tuple[float, ...]
    mu: TransformChain
    target: TransformChain
    tp: Optional[ParamDistribution] = None

    @property
    def n_types(self) -> int:
        return len(self.nu)


def make_spec(kind: str, augment: AugmentConfig) -> TransformSpec:
    region = tuple(augment.region) if augment.region else None
    return TransformSpec(
        kind=kind,
        max_pad=augment.max_pad,
        beta=augment.overlay_beta,
        kernel_size=augment.randconv_kernel,
        sigma_range=(augment.blur_sigma_min, augment.blur_sigma_max),
        region=region,
    )


def chain_from_name(name: str, augment: AugmentConfig) -> TransformChain:
    """`shift`, `shift+randconv`, `none`, ... → chain of uniform laws"""
    dists = []
    for kind in name.split("+"):
        spec = make_spec(kind.strip(), augment)
        if spec.kind == TransformKind.NONE:
            dists.append(ParamDistribution.point_mass(spec))
        else:
            dists.append(ParamDistribution.uniform(spec))
    return TransformChain(dists=tuple(dists))


def build_plan(config: LossConfig) -> AugmentationPlan:
    augment = config.augment
    mu = chain_from_name(augment.mu, augment)
    target_name = config.target_chain_name()
    target = chain_from_name(target_name, augment)
    if config.critic_mode == "svea_asym":
        if any(make_spec(k, augment).is_complex for k in target.kinds()):
            raise ConfigError("svea_asym computes targets under simple transforms only",
                              [f"augment.target={target_name}"])
        nu = (target, chain_from_name(f"{target_name}+{augment.complex}", augment))
        weights = (config.svea_alpha, config.svea_beta)
    else:
        nu = tuple(chain_from_name(name, augment) for name in augment.nu)
        if augment.nu_weights is not None:
            weights = tuple(augment.nu_weights)
        else:
            weights = tuple(1.0 / len(nu) for _ in nu)
        if len(weights) != len(nu):
            raise ConfigError("augment.nu_weights must match augment.nu",
                              [f"{len(weights)} weights for {len(nu)} transforms"])
    tp = None
    tp_spec = make_spec(augment.tp, augment)
    if tp_spec.supports_tangent:
        tp = ParamDistribution.uniform(tp_spec)
    elif config.alpha_tp > 0:
        raise ConfigError("tangent prop needs a shift, blur or overlay transform",
                          [f"augment.tp={augment.tp}"])
    return AugmentationPlan(nu=nu, nu_weights=weights, mu=mu, target=target, tp=tp)


def draw_params(config: LossConfig, plan: AugmentationPlan, n_items: int,
                rng: np.random.Generator) -> Dict[str, list]:
    """Every draw set one update needs, in the layouts the losses expect"""
    draws = {
        "nu_params": [[chain.sample(config.M, rng) for _ in range(n_items)] for chain in plan.nu],
        "mu_params": [plan.target.sample(config.K, rng) for _ in range(n_items)],
        "actor_mu": [plan.mu.sample(config.J, rng) for _ in range(n_items)],
        "eta_params": [plan.mu.sample(config.L, rng) for _ in range(n_items)],
    }
    if plan.tp is not None:
        draws["tp_params"] = [sample_params(plan.tp, config.M, rng) for _ in range(n_items)]
    return draws


# ==================== RESULTS ====================

@dataclass
class LossResult:
    value: float
    params: List[nn.Parameter]
    grads: List[torch.Tensor]
    terms: Dict[str, float] = field(default_factory=dict)
    tensor: Optional[torch.Tensor] = None

    def flat_grad(self) -> torch.Tensor:
        if not self.grads:
            return torch.zeros(0)
        return torch.cat([g.reshape(-1) for g in self.grads])


def _finish(loss: torch.Tensor, params: List[nn.Parameter], terms: Dict[str, float],
            compute_grads: bool, keep_graph: bool = False) -> LossResult:
    grads: List[torch.Tensor] = []
    if compute_grads and params:
        raw = torch.autograd.grad(loss, params, allow_unused=True, retain_graph=keep_graph)
        grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, raw)]
    return LossResult(
        value=float(loss.detach()),
        params=params,
        grads=grads,
        terms=terms,
        tensor=loss if keep_graph else None,
    )


# ==================== HELPERS ====================

def _dtype(nets: AgentNets) -> torch.dtype:
    return next(nets.encoder.parameters()).dtype


def _tensor(arr, dtype: torch.dtype) -> torch.Tensor:
    return torch.as_tensor(np.asarray(arr), dtype=dtype)


def _augment(chain: TransformChain, params: Sequence[Sequence[tuple]], obs: np.ndarray) -> np.ndarray:
    """[N][M] param tuples over (N, c, h, w) → (N·M, c, h, w), item-major"""
    views = [chain.apply(p, x) for x, row in zip(obs, params) for p in row]
    return np.stack(views)


def _check_draws(name: str, draws, n_items: int, count: int) -> None:
    if len(draws) != n_items:
        raise ConfigError(f"{name} must hold one row per batch item",
                          [f"{name}: {len(draws)} rows for {n_items} items"])
    bad = [len(row) for row in draws if len(row) != count]
    if bad:
        raise ConfigError(f"{name} rows must hold {count} draws",
                          [f"{name}: row of {bad[0]} draws"])


def _weights(probs, n_items: int, count: int, dtype: torch.dtype) -> torch.Tensor:
    if probs is None:
        return torch.full((n_items, count), 1.0 / count, dtype=dtype)
    weights = _tensor(probs, dtype)
    if weights.shape != (n_items, count):
        raise InvalidInputError(f"probabilities of shape {tuple(weights.shape)}, expected {(n_items, count)}")
    return weights


def soft_value(min_q: torch.Tensor, log_prob: torch.Tensor, alpha: float) -> torch.Tensor:
    """V(s') = min Q̄(s', a') − α log π(a'|s')"""
    return min_q - alpha * log_prob


def bootstrap_target(reward: torch.Tensor, done: torch.Tensor, gamma: float,
                     next_value: torch.Tensor) -> torch.Tensor:
    """y = r + γ(1 − done)·V(s'); terminal transitions give y = r exactly"""
    return torch.where(done.bool(), reward, reward + gamma * next_value)


# ==================== TARGETS ====================

def compute_targets(
    config: LossConfig,
    nets: AgentNets,
    batch,
    mu_params,
    rng: np.random.Generator,
    plan: Optional[AugmentationPlan] = None,
    noise_std: Optional[float] = None,
    frozen: Optional[AgentNets] = None,
) -> torch.Tensor:
    """
    y_ik for every item i and augmented next state k, shape (N, K). The
    online policy is read from `frozen` when given.
    """
    plan = plan or build_plan(config)
    policy_nets = frozen or nets
    n_items = len(batch.reward)
    _check_draws("mu_params", mu_params, n_items, config.K)
    dtype = _dtype(nets)

    with torch.no_grad():
        x = _tensor(_augment(plan.target, mu_params, batch.next_obs), dtype)
        target_features = nets.targets.encoder(x)
        if config.base_algo == "sac":
            dist = policy_distribution(policy_nets.actor, policy_nets.actor_features, x)
            action, log_prob = sample_action(dist, rng)
            q1, q2 = nets.targets.critics(target_features, action)
            value = soft_value(torch.min(q1, q2), log_prob, config.alpha)
        else:
            actor = nets.targets.actor if nets.targets.actor is not None else policy_nets.actor
            mean, _ = actor(target_features)
            action = torch.tanh(mean)
            std = config.ddpg_target_noise if noise_std is None else noise_std
            if std > 0:
                noise = torch.as_tensor(rng.standard_normal(size=tuple(action.shape)), dtype=dtype)
                noise = torch.clamp(std * noise, -config.ddpg_noise_clip, config.ddpg_noise_clip)
                action = torch.clamp(action + noise, -1.0, 1.0)
            q1, q2 = nets.targets.critics(target_features, action)
            value = torch.min(q1, q2)

        reward = _tensor(batch.reward, dtype).repeat_interleave(config.K)
        done = _tensor(batch.done, dtype).repeat_interleave(config.K)
        y = bootstrap_target(reward, done, config.gamma, value)
    return y.reshape(n_items, config.K)


def target_y(transition, nets: AgentNets, config: LossConfig, mu_params, rng: np.random.Generator,
             plan: Optional[AugmentationPlan] = None) -> float:
    """Averaged target (1/K)·Σ_k y_k of one transition"""
    batch = Batch.from_transitions([transition])
    return float(compute_targets(config, nets, batch, [list(mu_params)], rng, plan).mean())


# ==================== CRITIC ====================

def _head_errors(nets: AgentNets, obs: torch.Tensor, action: torch.Tensor,
                 reference: torch.Tensor) -> torch.Tensor:
    """Σ_heads (Q_h − reference)² per row"""
    q1, q2 = nets.critics(nets.encoder(obs), action)
    err = (q1 - reference) ** 2
    if getattr(nets.critics, "twin", False):
        err = err + (q2 - reference) ** 2
    return err


def _view_term(nets: AgentNets, chain: TransformChain, draws, batch, action: torch.Tensor,
               reference: torch.Tensor, probs, count: int, dtype) -> torch.Tensor:
    """Per-item Ê_ν[Σ_h (Q_h(T_ν s, a) − reference)²], shape (N,)"""
    n_items = len(batch.reward)
    x = _tensor(_augment(chain, draws, batch.obs), dtype)
    a = action.repeat_interleave(count, dim=0)
    ref = reference.repeat_interleave(count, dim=0) if reference.dim() == 1 else reference.reshape(-1)
    err = _head_errors(nets, x, a, ref).reshape(n_items, count)
    return (err * _weights(probs, n_items, count, dtype)).sum(dim=1)


def critic_loss(
    config: LossConfig,
    nets: AgentNets,
    batch,
    nu_params,
    mu_params,
    rng: np.random.Generator,
    plan: Optional[AugmentationPlan] = None,
    targets: Optional[torch.Tensor] = None,
    nu_probs=None,
    mu_probs=None,
    tp_params=None,
    noise_std: Optional[float] = None,
    frozen: Optional[AgentNets] = None,
    compute_grads: bool = True,
) -> LossResult:
    """
    Mean over the batch of the selected critic loss.

    implicit     Ê_ν[(Q(T_ν s,a) − Ê_μ[y])²] on the first ν chain
    explicit_sg  (Q(s,a) − y)² + α_Q·Ê_ν[(Q(T_ν s,a) − Q_sg(s,a))²]
    explicit_y   (Q(s,a) − y)² + α_Q·Ê_ν[(Q(T_ν s,a) − y)²]
    svea_asym    α·Ê[(Q(T_shift s,a) − y)²] + β·Ê[(Q(T_complex∘T_shift s,a) − y)²]
    generic      Σ_i α_i·Ê_νi[(Q(T_νi s,a) − Ê_μ[y])²] + α_tp·tangent penalty

    `targets` (N, K) skips target sampling; `nu_probs` / `mu_probs` replace
    the uniform sample means by exact expectations over enumerated draws.
    Stop-gradient quantities (targets, Q_sg) are evaluated on `frozen`,
    which defaults to `nets`.
    """
    plan = plan or build_plan(config)
    frozen = frozen or nets
    n_items = len(batch.reward)
    dtype = _dtype(nets)
    mode = config.critic_mode

    if len(nu_params) != plan.n_types:
        raise ConfigError(f"{mode} expects one draw set per transform type",
                          [f"nu_params: {len(nu_params)} sets for {plan.n_types} types"])
    for i, draws in enumerate(nu_params):
        _check_draws(f"nu_params[{i}]", draws, n_items, config.M)

    if targets is None:
        targets = compute_targets(config, nets, batch, mu_params, rng, plan, noise_std, frozen)
    elif tuple(targets.shape) != (n_items, config.K):
        raise ConfigError("targets must have shape (N, K)", [f"targets: {tuple(targets.shape)}"])
    y = (targets.to(dtype) * _weights(mu_probs, n_items, config.K, dtype)).sum(dim=1)

    action = _tensor(batch.action, dtype)
    terms: Dict[str, float] = {"target_mean": float(y.mean())}
    nu_probs = nu_probs if nu_probs is not None else [None] * plan.n_types

    if mode == "implicit":
        per_item = _view_term(nets, plan.nu[0], nu_params[0], batch, action, y, nu_probs[0], config.M, dtype)
    elif mode in ("explicit_sg", "explicit_y"):
        x = _tensor(batch.obs, dtype)
        q1, q2 = nets.critics(nets.encoder(x), action)
        base = (q1 - y) ** 2
        twin = getattr(nets.critics, "twin", False)
        if twin:
            base = base + (q2 - y) ** 2
        if mode == "explicit_y":
            reg = _view_term(nets, plan.nu[0], nu_params[0], batch, action, y, nu_probs[0], config.M, dtype)
        else:
            xa = _tensor(_augment(plan.nu[0], nu_params[0], batch.obs), dtype)
            qa1, qa2 = nets.critics(nets.encoder(xa), action.repeat_interleave(config.M, dim=0))
            with torch.no_grad():
                ref1, ref2 = frozen.critics(frozen.encoder(x), action)
            reg_err = (qa1 - ref1.repeat_interleave(config.M)) ** 2
            if twin:
                reg_err = reg_err + (qa2 - ref2.repeat_interleave(config.M)) ** 2
            weights = _weights(nu_probs[0], n_items, config.M, dtype)
            reg = (reg_err.reshape(n_items, config.M) * weights).sum(dim=1)
        terms["base"] = float(base.mean())
        terms["regularizer"] = float(reg.mean())
        per_item = base + config.alpha_q * reg
    elif mode in ("svea_asym", "generic"):
        per_item = torch.zeros(n_items, dtype=dtype)
        for i, (chain, weight) in enumerate(zip(plan.nu, plan.nu_weights)):
            term = _view_term(nets, chain, nu_params[i], batch, action, y, nu_probs[i], config.M, dtype)
            terms[f"view_{chain.name}"] = float(term.mean())
            per_item = per_item + weight * term
    else:
        raise ConfigError("unknown critic mode", [mode])

    loss = per_item.mean()
    if mode == "generic" and config.alpha_tp > 0:
        if plan.tp is None:
            raise ConfigError("tangent prop needs a tangent-capable transform", [config.augment.tp])
        if tp_params is None:
            tp_params = [sample_params(plan.tp, config.M, rng) for _ in range(n_items)]
        penalty = tangent_prop_penalty(
            nets.critics, nets.encoder, batch.obs, action, tp_params, plan.tp.spec
        )
        terms["tangent_prop"] = float(penalty.detach())
        loss = loss + config.alpha_tp * penalty

    terms["critic_loss"] = float(loss.detach())
    return _finish(loss, nets.critic_parameters(), terms, compute_grads)


def all_pairs_critic_loss(
    config: LossConfig,
    nets: AgentNets,
    batch,
    nu_params,
    targets: torch.Tensor,
    plan: Optional[AugmentationPlan] = None,
    compute_grads: bool = True,
) -> LossResult:
    """(1/MK)·Σ_m Σ_k Σ_h (Q_h(T_νm s, a) − y_k)² on the first ν chain"""
    plan = plan or build_plan(config)
    n_items = len(batch.reward)
    dtype = _dtype(nets)
    _check_draws("nu_params[0]", nu_params[0], n_items, config.M)
    action = _tensor(batch.action, dtype)
    x = _tensor(_augment(plan.nu[0], nu_params[0], batch.obs), dtype)
    q1, q2 = nets.critics(nets.encoder(x), action.repeat_interleave(config.M, dim=0))
    q1 = q1.reshape(n_items, config.M, 1)
    q2 = q2.reshape(n_items, config.M, 1)
    y = targets.to(dtype).reshape(n_items, 1, config.K)
    err = (q1 - y) ** 2
    if getattr(nets.critics, "twin", False):
        err = err + (q2 - y) ** 2
    loss = err.mean(dim=(1, 2)).mean()
    return _finish(loss, nets.critic_parameters(), {"critic_loss": float(loss.detach())}, compute_grads)


# ==================== TANGENT PROP ====================

def tangent_prop_penalty(
    critics: nn.Module,
    enc: nn.Module,
    s: np.ndarray,
    a: torch.Tensor,
    mu_params: Sequence[Sequence],
    spec: TransformSpec,
    delta=None,
) -> torch.Tensor:
    """
    Mean over items and sampled ψ of Σ_axes (∇_x Q(x, a)|_{x=T_ψ(s)} · t_axis)²
    where t_axis is the finite-difference tangent of T at ψ. Differentiable
    with respect to the critic parameters.
    """
    s = np.asarray(s)
    if len(mu_params) != len(s):
        raise InvalidInputError(f"{len(mu_params)} param rows for {len(s)} states")
    dtype = a.dtype
    views, tangents, actions = [], [], []
    for n, row in enumerate(mu_params):
        for param in row:
            views.append(apply_transform(spec, param, s[n]))
            tangents.append(tangent_vector(spec, param, delta, s[n]))
            actions.append(n)
    if not views:
        return torch.zeros((), dtype=dtype)

    x = _tensor(np.stack(views), dtype)
    t = _tensor(np.stack(tangents), dtype)
    a_rep = a[torch.as_tensor(actions)]
    grad = input_gradient(critics, enc, x, a_rep, create_graph=True)
    dots = (grad.unsqueeze(1) * t).flatten(start_dim=2).sum(dim=2)
    return (dots ** 2).sum(dim=1).mean()


# ==================== KL ====================

def kl_diag_gaussian(p: PolicyDistribution, q: PolicyDistribution) -> torch.Tensor:
    """KL(p‖q) of the pre-squash Gaussians, summed over action dims"""
    if p.mean.shape[-1] != q.mean.shape[-1]:
        raise InvalidInputError(f"action dims differ: {p.mean.shape[-1]} vs {q.mean.shape[-1]}")
    var_p = torch.exp(2.0 * p.log_std)
    var_q = torch.exp(2.0 * q.log_std)
    per_dim = q.log_std - p.log_std + (var_p + (p.mean - q.mean) ** 2) / (2.0 * var_q) - 0.5
    return per_dim.sum(dim=-1)


def averaged_policy(members: Sequence[Tuple[PolicyDistribution, float]]) -> PolicyDistribution:
    """N(Σ P_i λ_i, Σ P_i² σ_i²): the averaged KL target, not a moment-matched mixture"""
    if not members:
        raise InvalidInputError("averaged_policy needs at least one member")
    probs = [float(p) for _, p in members]
    if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
        raise InvalidInputError(f"member probabilities must be nonnegative and sum to 1: {probs}")
    mean = sum(p * d.mean for d, p in members)
    var = sum((p ** 2) * torch.exp(2.0 * d.log_std) for d, p in members)
    return PolicyDistribution(mean, 0.5 * torch.log(var), members[0][0].squashed)


def policy_kl(target: PolicyDistribution, online: PolicyDistribution, direction: str = "forward") -> torch.Tensor:
    """
    forward: KL(target_sg ‖ online)   (target detached)
    reverse: KL(online ‖ target_sg)
    """
    target = target.detach()
    if direction == "forward":
        return kl_diag_gaussian(target, online)
    if direction == "reverse":
        return kl_diag_gaussian(online, target)
    raise ConfigError("unknown KL direction", [direction])


def _split_dist(dist: PolicyDistribution, n_items: int, count: int) -> PolicyDistribution:
    shape = (n_items, count, dist.action_dim)
    return PolicyDistribution(dist.mean.reshape(shape), dist.log_std.reshape(shape), dist.squashed)


# ==================== ACTOR ====================

def actor_loss(
    config: LossConfig,
    nets: AgentNets,
    batch,
    mu_params,
    eta_params,
    rng: np.random.Generator,
    plan: Optional[AugmentationPlan] = None,
    frozen: Optional[AgentNets] = None,
    compute_grads: bool = True,
) -> LossResult:
    """
    Mean over the batch of the selected actor loss.

    implicit       Ê_μ[α log π(â|T_μ s) − Q(T_μ s, â)]
    explicit_kl    α log π(â|s) − Q(s, â) + α_π·Ê_μ[KL(π_sg(s) ‖ π(T_μ s))]
    kl_aug_target  α log π(â|s) − Q(s, â) + α_π·Ê_μ Ê_η[KL(π_sg(T_η s) ‖ π(T_μ s))]
    kl_avg_target  α log π(â|s) − Q(s, â) + α_π·Ê_μ[KL(π_avg ‖ π(T_μ s))]
    generic        Ê_μ[α log π(â|T_μ s) − Q(T_μ s, â) + α_π·Ê_η KL(π_sg(T_η s) ‖ π(T_μ s))]

    With base_algo = ddpg the entropy term is dropped, â is the deterministic
    action and the KL term becomes ‖a_sg(target view) − a(T_μ s)‖². KL targets
    are read from `frozen` when given.
    """
    plan = plan or build_plan(config)
    frozen = frozen or nets
    n_items = len(batch.reward)
    dtype = _dtype(nets)
    mode = config.actor_mode
    J = config.J
    _check_draws("actor mu_params", mu_params, n_items, J)
    needs_eta = mode in ETA_ACTOR_MODES and (mode != "generic" or config.alpha_pi > 0)
    if needs_eta:
        if eta_params is None:
            raise ConfigError(f"actor mode {mode} needs eta_params", ["eta_params"])
        _check_draws("eta_params", eta_params, n_items, config.L)

    sac = config.base_algo == "sac"
    terms: Dict[str, float] = {}

    x_mu = _tensor(_augment(plan.mu, mu_params, batch.obs), dtype)
    dist_mu = policy_distribution(nets.actor, nets.actor_features, x_mu)

    def base_term(x: torch.Tensor, dist: PolicyDistribution) -> torch.Tensor:
        critic_features = nets.encoder(x).detach()
        if sac:
            action, log_prob = sample_action(dist, rng)
            q1, q2 = nets.critics(critic_features, action)
            terms["log_prob"] = float(log_prob.detach().mean())
            terms["entropy"] = float(-log_prob.detach().mean())
            return config.alpha * log_prob - torch.min(q1, q2)
        action = dist.deterministic_action()
        q1, q2 = nets.critics(critic_features, action)
        return -torch.min(q1, q2)

    if mode in ("implicit", "generic"):
        base = base_term(x_mu, dist_mu).reshape(n_items, J).mean(dim=1)
    elif mode in ("explicit_kl", "kl_aug_target", "kl_avg_target"):
        x0 = _tensor(batch.obs, dtype)
        base = base_term(x0, policy_distribution(nets.actor, nets.actor_features, x0))
    else:
        raise ConfigError("unknown actor mode", [mode])

    reg = torch.zeros(n_items, dtype=dtype)
    if mode in KL_ACTOR_MODES and (config.alpha_pi > 0 or mode != "generic"):
        online = _split_dist(dist_mu, n_items, J)
        if mode == "explicit_kl":
            x0 = _tensor(batch.obs, dtype)
            anchor = _split_dist(policy_distribution(frozen.actor, frozen.actor_features, x0), n_items, 1)
        else:
            x_eta = _tensor(_augment(plan.mu, eta_params, batch.obs), dtype)
            anchor = _split_dist(
                policy_distribution(frozen.actor, frozen.actor_features, x_eta), n_items, config.L
            )
            if mode == "kl_avg_target":
                anchor = _average_views(anchor, sac)
        reg = _divergence(config, anchor, online, sac)
        terms["kl"] = float(reg.detach().mean())

    loss = (base + config.alpha_pi * reg).mean()
    terms["actor_loss"] = float(loss.detach())
    return _finish(loss, nets.actor_parameters(), terms, compute_grads)


def _average_views(eta: PolicyDistribution, sac: bool):
    """
    Collapse the L target views of each item into one averaged target. Each
    sampled view weighs 1/L; repeated draws of one ψ stay separate members, so
    the Σ P_i² σ_i² variance is that of the empirical draw law, which differs
    from the exact-law form when views repeat.
    """
    L = eta.mean.shape[1]
    if not sac:
        return eta.deterministic_action().detach().mean(dim=1, keepdim=True)
    members = [
        (PolicyDistribution(eta.mean[:, l:l + 1], eta.log_std[:, l:l + 1], eta.squashed), 1.0 / L)
        for l in range(L)
    ]
    return averaged_policy(members)


def _divergence(config: LossConfig, target, online: PolicyDistribution, sac: bool) -> torch.Tensor:
    """
    Per-item mean over (target view, μ view) pairs. target is (N, L, ·),
    online is (N, J, ·); the target side never receives gradient.
    """
    n_items, J, action_dim = online.mean.shape
    if sac:
        L = target.mean.shape[1]
        shape = (n_items, L, J, action_dim)
        t = PolicyDistribution(
            target.mean.unsqueeze(2).expand(shape), target.log_std.unsqueeze(2).expand(shape), target.squashed
        )
        o = PolicyDistribution(
            online.mean.unsqueeze(1).expand(shape), online.log_std.unsqueeze(1).expand(shape), online.squashed
        )
        return policy_kl(t, o, config.kl_direction).mean(dim=(1, 2))
    target_action = target if isinstance(target, torch.Tensor) else target.deterministic_action()
    gap = target_action.detach().unsqueeze(2) - online.deterministic_action().unsqueeze(1)
    return (gap ** 2).sum(dim=-1).mean(dim=(1, 2))


# ==================== TEMPERATURE ====================

def temperature_loss(log_alpha: torch.Tensor, mean_log_prob: float, target_entropy: float) -> torch.Tensor:
    """J(α) = −α·(log π + H̄), minimized over log α"""
    return -(log_alpha.exp() * (mean_log_prob + target_entropy))
