"""
AugRL Bench - Training loop and statistics
Off-policy actor-critic training with the configured augmentation losses,
the in-batch variance statistics recorder and the transform-complexity
probe that can raise the number of updates per step.
"""

import copy
import time
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
from sklearn.metrics.pairwise import paired_cosine_distances

from config.schema import LossConfig, TrainConfig
from config.settings import (
    BIAS_SUBBATCH,
    COMPLEX_UPDATES,
    COMPLEXITY_MARGIN,
    EVAL_FILE,
    METRICS_COLUMNS,
    ORACLE_GRID,
    RUNS_DIR,
    STATS_FILE,
    STATS_SAMPLED_PARAMS,
)
from core.approximators import (
    AgentNets,
    apply_gradients,
    build_agent_nets,
    ema_update,
    make_optimizers,
    policy_distribution,
    sample_action,
    state_tensors,
)
from core.augment import TransformChain
from core.envs import (
    Batch,
    OracleQ,
    ReplayBuffer,
    SpriteReacherEnv,
    Transition,
    make_env,
    oracle_q,
)
from core.errors import AugRLError
from core.losses import (
    AugmentationPlan,
    actor_loss,
    build_plan,
    chain_from_name,
    compute_targets,
    critic_loss,
    draw_params,
    kl_diag_gaussian,
    temperature_loss,
)
from storage.run_store import RunStore, get_run_store
from utils.helpers import run_timestamp
from utils.logger import get_logger, log_performance, performance_logger
from utils.rng import RandomStreams

logger = get_logger(__name__)

EXACT_ENUMERATION_LIMIT = 4096
STATS_REPLICATES = 256


# ==================== STATISTICS ====================

@dataclass
class StatsRecord:
    step: int
    std_critic_loss: float
    std_target_q: float
    std_actor_loss: float
    kl_aug: float
    cos_sim_actor: float
    cos_sim_critic: float
    target_mean: float = float("nan")
    target_var: float = float("nan")
    target_bias: float = float("nan")

    def to_row(self) -> Dict[str, float]:
        return asdict(self)


def parameter_pool(chain: TransformChain, rng: np.random.Generator,
                   sampled: int = STATS_SAMPLED_PARAMS) -> Tuple[List[tuple], np.ndarray]:
    """Every ψ with its probability for finite chains, else `sampled` draws"""
    if chain.is_finite:
        pairs = [(p, w) for p, w in chain.enumerate() if w > 0]
        return [p for p, _ in pairs], np.array([w for _, w in pairs])
    params = chain.sample(sampled, rng)
    return params, np.full(len(params), 1.0 / len(params))


def replicate_draws(weights: Sequence[np.ndarray], counts: Sequence[int], rng: np.random.Generator,
                    limit: int = EXACT_ENUMERATION_LIMIT,
                    replicates: int = STATS_REPLICATES) -> Tuple[List[np.ndarray], np.ndarray]:
    """
    Index draws for an estimator averaging counts[g] views from pool g.
    Returns one (R, counts[g]) index array per pool plus replicate weights:
    the exact product law when it has at most `limit` outcomes, else
    `replicates` i.i.d. draws.
    """
    sizes = [len(w) for w in weights]
    outcomes = int(np.prod([float(s) ** c for s, c in zip(sizes, counts)]))
    if outcomes <= limit:
        slots = [w for w, c in zip(weights, counts) for _ in range(c)]
        combos = np.array(list(product(*(range(len(w)) for w in slots))), dtype=int).reshape(-1, len(slots))
        probs = np.ones(len(combos))
        for col, w in enumerate(slots):
            probs = probs * w[combos[:, col]]
        out, start = [], 0
        for c in counts:
            out.append(combos[:, start:start + c])
            start += c
        return out, probs / probs.sum()
    out = [rng.choice(len(w), size=(replicates, c), p=w) for w, c in zip(weights, counts)]
    return out, np.full(replicates, 1.0 / replicates)


def _weighted_std(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Std along the last axis under replicate weights"""
    mean = (values * weights).sum(axis=-1, keepdims=True)
    return np.sqrt(np.maximum(((values - mean) ** 2 * weights).sum(axis=-1), 0.0))


def _views(chain: TransformChain, params: Sequence[tuple], obs: np.ndarray) -> np.ndarray:
    """(N, P, c, h, w): every pool member applied to every state"""
    return np.stack([np.stack([chain.apply(p, x) for p in params]) for x in obs])


def _flat(views: np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    return torch.as_tensor(views.reshape(-1, *views.shape[2:]), dtype=dtype)


def paired_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity of two feature matrices"""
    return 1.0 - paired_cosine_distances(a, b)


def record_stats(
    nets: AgentNets,
    batch: Batch,
    config: LossConfig,
    rng: np.random.Generator,
    plan: Optional[AugmentationPlan] = None,
    step: int = 0,
    q_star: Optional[Callable[[Batch], np.ndarray]] = None,
) -> StatsRecord:
    """
    In-batch variance statistics of the configured estimators.

    std_critic_loss  std over ψ draws of (1/M)Σ_m (Q(T_m s, a) − (1/K)Σ_k y_k)²
    std_target_q     std over ψ draws of (1/K)Σ_k y_k
    std_actor_loss   std over ψ draws of (1/J)Σ_j [α log π(ā|T_j s) − Q(T_j s, ā)], ā the mean action
    kl_aug           KL(π(T_1 s) ‖ π(T_2 s)) for two fresh views
    cos_sim_*        cosine similarity of encoder features of the same two views

    Stds are taken per transition and averaged over the batch. `q_star`
    maps a batch to oracle Q*(s, a) values for the target bias.
    """
    plan = plan or build_plan(config)
    dtype = next(nets.encoder.parameters()).dtype
    n = len(batch)
    action = torch.as_tensor(batch.action, dtype=dtype)

    critic_params, critic_w = parameter_pool(plan.nu[0], rng)
    target_params, target_w = parameter_pool(plan.target, rng)
    actor_params, actor_w = parameter_pool(plan.mu, rng)

    with torch.no_grad():
        x = _views(plan.nu[0], critic_params, batch.obs)
        q1, _ = nets.critics(nets.encoder(_flat(x, dtype)), action.repeat_interleave(len(critic_params), dim=0))
        q = q1.reshape(n, -1).numpy().astype(np.float64)

        stats_config = config.model_copy(update={"K": len(target_params)})
        y = compute_targets(stats_config, nets, batch, [list(target_params)] * n, rng, plan).numpy()
        y = y.astype(np.float64)

        xa = _views(plan.mu, actor_params, batch.obs)
        flat_a = _flat(xa, dtype)
        dist = policy_distribution(nets.actor, nets.actor_features, flat_a)
        mean_action = dist.deterministic_action()
        qa1, qa2 = nets.critics(nets.encoder(flat_a), mean_action)
        base = -torch.min(qa1, qa2)
        if config.base_algo == "sac":
            base = base + config.alpha * dist.log_prob(dist.mean)
        actor_values = base.reshape(n, -1).numpy().astype(np.float64)

    (m_idx, k_idx), weights = replicate_draws([critic_w, target_w], [config.M, config.K], rng)
    target_rep = y[:, k_idx].mean(axis=2)
    loss_rep = ((q[:, m_idx] - target_rep[:, :, None]) ** 2).mean(axis=2)
    (j_idx,), actor_weights = replicate_draws([actor_w], [config.J], rng)
    actor_rep = actor_values[:, j_idx].mean(axis=2)

    # two fresh views of every state for the KL and feature similarity
    first, second = plan.mu.sample(n, rng), plan.mu.sample(n, rng)
    with torch.no_grad():
        s1 = torch.as_tensor(plan.mu.apply_batch(first, batch.obs), dtype=dtype)
        s2 = torch.as_tensor(plan.mu.apply_batch(second, batch.obs), dtype=dtype)
        d1 = policy_distribution(nets.actor, nets.actor_features, s1)
        d2 = policy_distribution(nets.actor, nets.actor_features, s2)
        kl = kl_diag_gaussian(d1, d2).numpy()
        cos_actor = paired_cosine(nets.actor_features(s1).numpy(), nets.actor_features(s2).numpy())
        cos_critic = paired_cosine(nets.encoder(s1).numpy(), nets.encoder(s2).numpy())

    expected_target = y @ target_w
    target_mean = float(expected_target.mean())
    target_var = float(((y - expected_target[:, None]) ** 2 * target_w).sum(axis=1).mean())
    target_bias = float("nan")
    if q_star is not None and batch.states is not None:
        size = min(BIAS_SUBBATCH, n)
        target_bias = float(np.mean((expected_target[:size] - q_star(batch.subset(np.arange(size)))) ** 2))

    return StatsRecord(
        step=step,
        std_critic_loss=float(_weighted_std(loss_rep, weights).mean()),
        std_target_q=float(_weighted_std(target_rep, weights).mean()),
        std_actor_loss=float(_weighted_std(actor_rep, actor_weights).mean()),
        kl_aug=float(np.maximum(kl, 0.0).mean()),
        cos_sim_actor=float(np.clip(cos_actor, -1.0, 1.0).mean()),
        cos_sim_critic=float(np.clip(cos_critic, -1.0, 1.0).mean()),
        target_mean=target_mean,
        target_var=target_var,
        target_bias=target_bias,
    )


# ==================== COMPLEXITY ====================

@dataclass
class ComplexityResult:
    transform: str
    score: float
    baseline: float
    complex: bool


def similarity_score(encoder: nn.Module, chain: TransformChain, probe_states: np.ndarray,
                     rng: np.random.Generator) -> float:
    """Mean cosine similarity of encoder(T_ψ1 s) and encoder(T_ψ2 s) over probe states"""
    dtype = next(iter(encoder.parameters()), torch.zeros((), dtype=torch.float64)).dtype
    first, second = chain.sample(len(probe_states), rng), chain.sample(len(probe_states), rng)
    with torch.no_grad():
        a = encoder(torch.as_tensor(chain.apply_batch(first, probe_states), dtype=dtype)).numpy()
        b = encoder(torch.as_tensor(chain.apply_batch(second, probe_states), dtype=dtype)).numpy()
    return float(np.clip(paired_cosine(a, b), -1.0, 1.0).mean())


def complexity_score(encoder: nn.Module, chain: TransformChain, probe_states: np.ndarray,
                     rng: np.random.Generator, baseline: Optional[TransformChain] = None,
                     margin: float = COMPLEXITY_MARGIN) -> ComplexityResult:
    """
    Score a transform by early-stage feature similarity; it is complex when
    it scores more than `margin` below the baseline (shift) transform.
    """
    score = similarity_score(encoder, chain, probe_states, rng)
    reference = score if baseline is None else similarity_score(encoder, baseline, probe_states, rng)
    result = ComplexityResult(chain.name, score, reference, score < reference - margin)
    logger.info(
        f"Complexity of {chain.name}: similarity {score:.4f} vs baseline {reference:.4f} "
        f"→ {'complex' if result.complex else 'not complex'}"
    )
    return result


def schedule_updates(config: TrainConfig, classification: Dict[str, bool]) -> int:
    """Updates per env step: at least COMPLEX_UPDATES when a complex transform feeds the targets"""
    updates = config.train.updates_per_step
    target_kinds = config.loss.target_chain_name().split("+")
    if any(classification.get(kind, False) for kind in target_kinds):
        return max(updates, COMPLEX_UPDATES)
    return updates


# ==================== ORACLE ====================

class OracleCache:
    """Oracle tables per snapped goal for one environment layout"""

    def __init__(self, env: SpriteReacherEnv, gamma: float):
        self.env = env
        self.gamma = gamma
        self._tables: Dict[Tuple[float, float], OracleQ] = {}

    def get(self, goal) -> OracleQ:
        probe = copy.copy(self.env)
        probe.goal = np.asarray(goal, dtype=np.float64)
        key = tuple(np.rint(probe.goal * (ORACLE_GRID - 1)).astype(int).tolist())
        if key not in self._tables:
            self._tables[key] = oracle_q(probe, self.gamma)
        return self._tables[key]

    def q_star(self, batch: Batch) -> np.ndarray:
        """Q*(s, a) = r + γ V*(s', h − 1) for batch transitions carrying oracle states"""
        out = np.zeros(len(batch))
        for i, (state, action, reward) in enumerate(zip(batch.states, batch.action, batch.reward)):
            position, goal, steps_to_go = state[:2], state[2:4], int(state[4])
            next_position = np.clip(position + self.env.step_size * np.asarray(action, dtype=np.float64), 0.0, 1.0)
            oracle = self.get(goal)
            out[i] = float(reward) + self.gamma * oracle.value(next_position, steps_to_go - 1)
        return out


# ==================== TRAINER ====================

@dataclass
class TrainResult:
    run_dir: Path
    steps: int
    updates: int
    final_eval: float
    updates_per_step: int
    complexity: Dict[str, ComplexityResult] = field(default_factory=dict)


class Trainer:
    """Owns every piece of mutable training state for one seed"""

    def __init__(self, config: TrainConfig, store: RunStore):
        self.config = config
        self.store = store
        self.streams = RandomStreams(config.seed)
        train = config.train

        torch.set_num_threads(train.threads)
        torch.use_deterministic_algorithms(True)
        torch.manual_seed(config.seed)

        env_kwargs = dict(
            size=config.env.size,
            frame_stack=config.env.frame_stack,
            horizon=config.env.horizon,
            step_size=config.env.step_size,
            nuisance_width=config.env.nuisance_width,
        )
        self.env = make_env(config.env.name, **env_kwargs)
        self.eval_env = make_env(config.env.name, **env_kwargs)
        self.dtype = torch.float64 if config.network.dtype == "float64" else torch.float32
        self.np_dtype = np.float64 if config.network.dtype == "float64" else np.float32

        self.loss_config = config.loss
        self.plan = build_plan(config.loss)
        self.ddpg = config.loss.base_algo == "ddpg"
        self.nets = build_agent_nets(
            self.env.obs_shape,
            self.env.action_dim,
            self.streams["init"],
            feature_dim=config.network.feature_dim,
            channels=config.network.channels,
            hidden_dim=config.network.hidden_dim,
            twin_critics=config.network.twin_critics,
            shared_encoder=config.network.shared_encoder,
            activation=config.network.activation,
            tau=train.tau,
            deterministic_actor=self.ddpg,
            dtype=self.dtype,
        )
        self.optimizers = make_optimizers(self.nets, train.learning_rate)
        self.log_alpha: Optional[torch.Tensor] = None
        if train.autotune_temperature and not self.ddpg:
            self.log_alpha = torch.tensor(np.log(config.loss.alpha), dtype=self.dtype, requires_grad=True)
            self.optimizers["alpha"] = torch.optim.Adam([self.log_alpha], lr=1e-3)
        self.target_entropy = -float(self.env.action_dim)

        self.buffer = ReplayBuffer(train.replay_capacity, self.env.obs_shape, self.env.action_dim)
        self.oracles = OracleCache(self.env, config.loss.gamma)
        self.updates_per_step = train.updates_per_step
        self.complexity: Dict[str, ComplexityResult] = {}
        self.update_count = 0
        self._losses: Dict[str, List[float]] = {"critic_loss": [], "actor_loss": []}

    # ---------- acting ----------

    def exploration_std(self, step: int) -> float:
        train = self.config.train
        frac = min(step / max(train.total_steps - 1, 1), 1.0)
        return train.exploration_std_start + frac * (train.exploration_std_end - train.exploration_std_start)

    def act(self, obs: np.ndarray, step: int, deterministic: bool = False,
            rng: Optional[np.random.Generator] = None) -> np.ndarray:
        rng = rng or self.streams["policy"]
        if not deterministic and step < self.config.train.seed_steps:
            return rng.uniform(-1.0, 1.0, size=self.env.action_dim)
        x = torch.as_tensor(obs[None], dtype=self.dtype)
        with torch.no_grad():
            dist = policy_distribution(self.nets.actor, self.nets.actor_features, x)
            if deterministic:
                action = dist.deterministic_action()
            elif self.ddpg:
                noise = rng.normal(0.0, self.exploration_std(step), size=self.env.action_dim)
                action = dist.deterministic_action() + torch.as_tensor(noise, dtype=self.dtype)
            else:
                action, _ = sample_action(dist, rng)
        return np.clip(action[0].numpy().astype(np.float64), -1.0, 1.0)

    # ---------- learning ----------

    def update(self) -> Dict[str, float]:
        """
        One critic update, plus actor/temperature and target updates on their
        schedules. Both schedules count critic updates, not env steps, so with
        U updates per step the actor moves U/κ times per step.
        """
        train = self.config.train
        batch = self.buffer.sample(train.batch_size, self.streams["buffer"], self.np_dtype)
        draws = draw_params(self.loss_config, self.plan, len(batch), self.streams["augmentation"])
        rng = self.streams["policy"]

        critic = critic_loss(self.loss_config, self.nets, batch, draws["nu_params"], draws["mu_params"],
                             rng, self.plan, tp_params=draws.get("tp_params"))
        apply_gradients(self.optimizers["critic"], critic.params, critic.grads)
        out = {"critic_loss": critic.value}

        self.update_count += 1
        if self.update_count % train.actor_update_freq == 0:
            actor = actor_loss(self.loss_config, self.nets, batch, draws["actor_mu"], draws["eta_params"],
                               rng, self.plan)
            apply_gradients(self.optimizers["actor"], actor.params, actor.grads)
            out["actor_loss"] = actor.value
            if self.log_alpha is not None and "log_prob" in actor.terms:
                self.optimizers["alpha"].zero_grad(set_to_none=True)
                temperature_loss(self.log_alpha, actor.terms["log_prob"], self.target_entropy).backward()
                self.optimizers["alpha"].step()
                alpha = float(self.log_alpha.detach().exp())
                self.loss_config = self.loss_config.model_copy(update={"alpha": alpha})
                out["alpha"] = alpha
        if self.update_count % train.target_update_freq == 0:
            ema_update(self.nets.targets, self.nets.named_online())
        return out

    # ---------- evaluation ----------

    def evaluate(self, step: int) -> Tuple[float, List[Dict[str, float]]]:
        """Mean undiscounted return of the deterministic policy, with the oracle return per episode"""
        rng = self.streams["eval"]
        rows = []
        for episode in range(self.config.train.eval_episodes):
            obs = self.eval_env.reset(rng)
            start, goal = self.eval_env.position.copy(), self.eval_env.goal.copy()
            total = 0.0
            while not self.eval_env.done:
                obs, reward, _ = self.eval_env.step(self.act(obs, step, deterministic=True))
                total += reward
            oracle = self.oracles.get(goal)
            self.eval_env.reset(rng, position=start, goal=goal)
            oracle_total = 0.0
            while not self.eval_env.done:
                _, reward, _ = self.eval_env.step(
                    oracle.greedy_action(self.eval_env.position, self.eval_env.steps_to_go)
                )
                oracle_total += reward
            rows.append({"step": step, "episode": episode, "return": total, "oracle_return": oracle_total})
        return float(np.mean([r["return"] for r in rows])), rows

    # ---------- complexity probe ----------

    def probe_complexity(self) -> None:
        """Classify every transform feeding the targets against the shift baseline"""
        rng = self.streams["complexity"]
        probe = self.buffer.sample(min(self.config.train.batch_size, len(self.buffer)), rng, self.np_dtype).obs
        augment = self.loss_config.augment
        baseline = chain_from_name("shift", augment)
        classification = {}
        for kind in self.loss_config.target_chain_name().split("+"):
            if kind == "none":
                continue
            result = complexity_score(self.nets.encoder, chain_from_name(kind, augment), probe, rng, baseline)
            self.complexity[kind] = result
            classification[kind] = result.complex
        updates = schedule_updates(self.config, classification)
        if updates != self.updates_per_step:
            logger.info(f"Raising updates per step from {self.updates_per_step} to {updates}")
        self.updates_per_step = updates

    # ---------- loop ----------

    def _metrics_row(self, step: int, eval_return: float, stats: Optional[StatsRecord]) -> Dict[str, float]:
        row = {name: float("nan") for name in METRICS_COLUMNS}
        row["step"] = step
        row["eval_return"] = eval_return
        for key, values in self._losses.items():
            if values:
                row[key] = float(np.mean(values))
            values.clear()
        if stats is not None:
            for key in ("std_critic_loss", "std_target_q", "std_actor_loss", "kl_aug",
                        "cos_sim_actor", "cos_sim_critic"):
                row[key] = getattr(stats, key)
        return row

    def checkpoint(self, step: int) -> Path:
        tensors = state_tensors(self.nets)
        tensors["step"] = np.array([step], dtype=np.int64)
        if self.log_alpha is not None:
            tensors["log_alpha"] = self.log_alpha.detach().numpy().reshape(1)
        return self.store.save_checkpoint(step, tensors)

    def run(self) -> TrainResult:
        train = self.config.train
        env_rng = self.streams["env"]
        obs = self.env.reset(env_rng)
        probe_step = int(train.complexity_probe_fraction * train.total_steps)
        final_eval = float("nan")
        phase_start = time.time()

        for step in range(train.total_steps):
            state = self.env.state_vector()
            action = self.act(obs, step)
            next_obs, reward, done = self.env.step(action)
            # episodes end on the time limit only; bootstrapping continues through it
            self.buffer.push(Transition(obs, action, reward, next_obs, done=False, state=state))
            obs = self.env.reset(env_rng) if done else next_obs

            if step >= train.seed_steps:
                for _ in range(self.updates_per_step):
                    losses = self.update()
                    for key in self._losses:
                        if key in losses:
                            self._losses[key].append(losses[key])

            if train.update_more and step + 1 == probe_step:
                self.probe_complexity()

            n = step + 1
            record = n % train.record_interval == 0
            evaluate = n % train.eval_interval == 0 or n == train.total_steps
            stats = None
            if record:
                batch = self.buffer.sample(train.batch_size, self.streams["stats"], self.np_dtype)
                stats = record_stats(self.nets, batch, self.loss_config, self.streams["stats"],
                                     self.plan, step=n, q_star=self.oracles.q_star)
                self.store.append_rows(STATS_FILE, [stats.to_row()])
            eval_return = float("nan")
            if evaluate:
                eval_return, rows = self.evaluate(n)
                final_eval = eval_return
                self.store.append_rows(EVAL_FILE, rows)
                duration = time.time() - phase_start
                performance_logger.log_training_phase("train", n, self.update_count, duration)
                logger.info(f"Step {n}: eval return {eval_return:.3f}, updates {self.update_count}")
                phase_start = time.time()
            if record or evaluate:
                self.store.append_metrics(self._metrics_row(n, eval_return, stats))
            if train.checkpoint_interval and n % train.checkpoint_interval == 0:
                self.checkpoint(n)

        self.checkpoint(train.total_steps)
        return TrainResult(
            run_dir=self.store.root,
            steps=train.total_steps,
            updates=self.update_count,
            final_eval=final_eval,
            updates_per_step=self.updates_per_step,
            complexity=dict(self.complexity),
        )


def train(config: TrainConfig, out_dir: Optional[Path] = None,
          config_bytes: Optional[bytes] = None) -> TrainResult:
    """Run one training job into `out_dir` (default RUNS_DIR/<timestamp>)"""
    started = time.time()
    out_dir = Path(out_dir) if out_dir is not None else RUNS_DIR / run_timestamp()
    store = get_run_store(out_dir)
    snapshot = config_bytes if config_bytes is not None else config.model_dump_json(indent=2).encode("utf-8")
    store.start(config.model_dump(mode="json"), config.seed, snapshot)
    logger.info(f"Training {config.preset or 'custom'} config, seed {config.seed}, into {out_dir}")
    try:
        result = Trainer(config, store).run()
    except (AugRLError, OSError) as e:
        logger.error(f"Training failed: {e}")
        store.finish("failed")
        raise
    store.finish()
    log_performance("train", time.time() - started,
                    {"steps": result.steps, "updates": result.updates, "final_eval": result.final_eval})
    return result
