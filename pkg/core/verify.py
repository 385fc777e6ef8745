"""
AugRL Bench - Verification suites
Numerical checks of the identities and bounds the loss variants rely on.
Each suite builds its own fixtures from (seed, suite) and returns a
VerificationReport of (lhs, rhs, tol) rows; sweeps are reported by their
worst fixture.
"""

import copy
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from scipy import integrate, special

from config.settings import (
    ACTION_GRID_POINTS,
    BOUND_MARGIN,
    MC_SLACK_SE,
    QUADRATURE_POINTS,
    QUADRATURE_WIDTH,
)
from core.approximators import PolicyDistribution
from core.augment import (
    ParamDistribution,
    TransformSpec,
    apply_transform,
    enumerate_params,
)
from core.envs import OracleQ, SpriteReacherEnv, oracle_q
from core.errors import InvalidInputError
from core.fixtures import (
    Gaussian,
    InvariantCriticFixture,
    Quadratic,
    discrete_kl,
    discrete_log_probs,
    expectation,
    gaussian_kl,
    make_invariant_fixture,
    make_loss_fixture,
    random_batch,
    shift_distribution,
    tiny_agent_nets,
    tiny_loss_config,
)
from core.losses import (
    actor_loss,
    all_pairs_critic_loss,
    averaged_policy,
    critic_loss,
    kl_diag_gaussian,
    policy_kl,
)
from utils.helpers import export_dataframe, format_number
from utils.logger import get_logger, log_performance
from utils.rng import RandomStreams, make_stream

logger = get_logger(__name__)

INVARIANCE_TOL = 1e-12


# ==================== REPORTS ====================

@dataclass
class CheckResult:
    suite: str
    check: str
    lhs: float
    rhs: float
    tol: float
    relation: str = "=="
    samples: int = 1
    asserted: bool = True
    note: str = ""

    @property
    def margin(self) -> float:
        """Positive when the check fails"""
        if self.relation == "==":
            return abs(self.lhs - self.rhs) - self.tol
        if self.relation == "<=":
            return self.lhs - self.rhs - self.tol
        if self.relation == ">=":
            return self.rhs - self.lhs - self.tol
        if self.relation == "<":
            return self.lhs - self.rhs
        raise InvalidInputError(f"unknown relation {self.relation!r}")

    @property
    def passed(self) -> bool:
        if not (np.isfinite(self.lhs) and np.isfinite(self.rhs)):
            return False
        if self.relation == "<":
            return self.lhs < self.rhs
        return self.margin <= 0


@dataclass
class VerificationReport:
    checks: List[CheckResult] = field(default_factory=list)
    seed: int = 0
    duration: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.asserted)

    @property
    def failures(self) -> List[CheckResult]:
        return [c for c in self.checks if c.asserted and not c.passed]

    @classmethod
    def merge(cls, reports: Sequence["VerificationReport"]) -> "VerificationReport":
        checks = [c for r in reports for c in r.checks]
        seed = reports[0].seed if reports else 0
        return cls(checks=checks, seed=seed, duration=sum(r.duration for r in reports))

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "suite": c.suite,
                "check": c.check,
                "lhs": c.lhs,
                "rhs": c.rhs,
                "tol": c.tol,
                "relation": c.relation,
                "samples": c.samples,
                "asserted": c.asserted,
                "pass": c.passed,
                "note": c.note,
            }
            for c in self.checks
        ]
        return pd.DataFrame(rows, columns=[
            "suite", "check", "lhs", "rhs", "tol", "relation", "samples", "asserted", "pass", "note",
        ])

    def to_csv(self, path=None) -> bytes:
        return export_dataframe(self.to_frame(), path)

    def to_text(self) -> str:
        lines = []
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            if not c.asserted:
                status = "INFO"
            lines.append(
                f"[{status}] {c.suite:<16} {c.check:<44} "
                f"lhs={format_number(c.lhs, 6)} {c.relation} rhs={format_number(c.rhs, 6)} "
                f"tol={c.tol:g} n={c.samples}" + (f"  ({c.note})" if c.note else "")
            )
        failed = len(self.failures)
        lines.append(f"{len(self.checks)} checks, {failed} failed, seed {self.seed}")
        return "\n".join(lines)


def _worst(suite: str, check: str, pairs: Sequence[Tuple[float, float]], tol: float,
           relation: str = "==", note: str = "") -> CheckResult:
    """One row for a sweep: the fixture with the largest violation margin"""
    if not pairs:
        raise InvalidInputError(f"{suite}/{check}: no fixtures evaluated")
    rows = [CheckResult(suite, check, float(l), float(r), tol, relation, len(pairs), note=note) for l, r in pairs]
    bad = [row for row in rows if not row.passed]
    if bad:
        return max(bad, key=lambda row: row.margin if np.isfinite(row.margin) else np.inf)
    return max(rows, key=lambda row: row.margin)


# ==================== PURE HELPERS ====================

def lemma1_distributions(nu_dist: ParamDistribution, alpha_q: float) -> Tuple[ParamDistribution, ParamDistribution]:
    """
    (ν̂, μ̂) under which the implicit loss equals the explicit-y loss scaled
    by 1/(α_Q + 1): ν̂(ψ₀) = (ν(ψ₀)·α_Q + 1)/(α_Q + 1), ν̂(ψ) = ν(ψ)·α_Q/(α_Q + 1)
    elsewhere, μ̂ = δ_ψ₀.
    """
    if alpha_q < 0:
        raise InvalidInputError(f"alpha_q must be >= 0, got {alpha_q}")
    spec = nu_dist.spec
    identity = spec.identity()
    others = [(p, w) for p, w in zip(nu_dist.support, nu_dist.weights) if p != identity]
    p0 = nu_dist.probability(identity)
    support = [identity] + [p for p, _ in others]
    weights = [(p0 * alpha_q + 1.0) / (alpha_q + 1.0)] + [w * alpha_q / (alpha_q + 1.0) for _, w in others]
    return (ParamDistribution.from_weights(spec, support, weights), ParamDistribution.point_mass(spec))


def prop1_sides(
    members: Sequence[Tuple[Gaussian, float, Optional[Callable[[np.ndarray], np.ndarray]]]],
    base: Gaussian,
    quadratic: Quadratic,
    alpha: float,
) -> Tuple[float, float]:
    """
    lhs = Σ P_ψ E_{π_ψ}[α log π_ψ − Q(T_ψ s, a)] / α + log Z(s)
    rhs = Σ P_ψ (E_{π_ψ}[log π_0 − log g] + KL(π_ψ ‖ π_0))
    with g ∝ exp(Q(s, ·)/α). `members` holds (π_ψ, P_ψ, Q(T_ψ s, ·)); a
    missing critic falls back to the quadratic.
    """
    g = quadratic.boltzmann(alpha)
    lhs, rhs = 0.0, 0.0
    for pi, prob, q in members:
        q = quadratic.value if q is None else q
        lhs += prob * expectation(pi, lambda a, pi=pi, q=q: alpha * pi.logpdf(a) - q(a)) / alpha
        rhs += prob * (expectation(pi, lambda a: base.logpdf(a) - g.logpdf(a)) + gaussian_kl(pi, base))
    return lhs + quadratic.log_partition(alpha), rhs


def total_variation(p: Gaussian, q: Gaussian, points: int = 4 * QUADRATURE_POINTS + 1) -> float:
    lo = min(p.mean - QUADRATURE_WIDTH * p.std, q.mean - QUADRATURE_WIDTH * q.std)
    hi = max(p.mean + QUADRATURE_WIDTH * p.std, q.mean + QUADRATURE_WIDTH * q.std)
    a = np.linspace(lo, hi, points)
    return 0.5 * float(integrate.simpson(np.abs(p.pdf(a) - q.pdf(a)), x=a))


def linear_model_sides(w_s: np.ndarray, w_a: np.ndarray, bias: float, action: np.ndarray, y: float,
                       views: np.ndarray, probs: np.ndarray) -> Tuple[float, float, float]:
    """
    Linear critic Q(x, a) = w_s·vec(x) + w_a·a + b.
    lhs = E_ν[(Q(T s, a) − y)²]
    rhs = (Q(E[T s], a) − y)² + Tr(W_sᵀ W_s V_ν[T s]); also returns the trace term.
    """
    x = np.asarray(views, dtype=np.float64).reshape(len(views), -1)
    probs = np.asarray(probs, dtype=np.float64)
    offset = float(np.dot(w_a, action)) + bias
    lhs = float(np.sum(probs * (x @ w_s + offset - y) ** 2))
    mean = probs @ x
    centered = x - mean
    cov = (centered * probs[:, None]).T @ centered
    trace = float(w_s @ cov @ w_s)
    return lhs, (float(mean @ w_s) + offset - y) ** 2 + trace, trace


def _diag_gaussian(mean: np.ndarray, log_std: np.ndarray) -> PolicyDistribution:
    return PolicyDistribution(torch.as_tensor(mean, dtype=torch.float64),
                              torch.as_tensor(log_std, dtype=torch.float64), squashed=False)


def avg_policy_gap(means: np.ndarray, stds: np.ndarray, probs: np.ndarray,
                   target_mean: np.ndarray, target_std: np.ndarray) -> Dict[str, float]:
    """
    E_η[KL(π_η ‖ π_μ)] − KL(π_avg ‖ π_μ) through the loss code, and its
    closed decomposition per action dim:
        [−Σ P log σ_i + ½ log Σ P² σ_i²] + (Σ P σ² − Σ P² σ²)/(2σ_μ²) + V[λ]/(2σ_μ²)
    """
    target = _diag_gaussian(target_mean[None], np.log(target_std)[None])
    members = [(_diag_gaussian(m[None], np.log(s)[None]), float(p)) for m, s, p in zip(means, stds, probs)]
    expected_kl = sum(p * float(kl_diag_gaussian(d, target)[0]) for d, p in members)
    gap = expected_kl - float(kl_diag_gaussian(averaged_policy(members), target)[0])

    var_mu = target_std ** 2
    log_term = -(probs[:, None] * np.log(stds)).sum(axis=0) + 0.5 * np.log((probs[:, None] ** 2 * stds ** 2).sum(axis=0))
    var_term = ((probs[:, None] * stds ** 2).sum(axis=0) - (probs[:, None] ** 2 * stds ** 2).sum(axis=0)) / (2 * var_mu)
    mean_avg = (probs[:, None] * means).sum(axis=0)
    spread = (probs[:, None] * (means - mean_avg) ** 2).sum(axis=0) / (2 * var_mu)
    return {
        "gap": gap,
        "closed_form": float(log_term.sum() + var_term.sum() + spread.sum()),
        "variance_term": float(var_term.sum()),
        "spread_term": float(spread.sum()),
    }


def bias_pair(oracle: OracleQ, sigma: float, transitions: int, rng: np.random.Generator,
              policy: Optional[np.ndarray] = None) -> Tuple[float, float]:
    """
    (bias of Q_sg, bias of y) against the oracle table for a critic
    Q̂ = Q* + ε with ε ~ N(0, σ²) per table entry:
        Q_sg: E[(Q̂(s, a) − Q*(s, a))²]
        y:    E[(r + γ Σ π(a'|s') Q̂(s', a') − Q*(s, a))²]
    """
    policy = oracle.policy_table() if policy is None else policy
    noise = rng.normal(0.0, sigma, size=oracle.q.shape) if sigma > 0 else np.zeros_like(oracle.q)
    h = rng.integers(1, oracle.horizon + 1, size=transitions)
    i = rng.integers(0, oracle.grid, size=transitions)
    j = rng.integers(0, oracle.grid, size=transitions)
    a = rng.integers(0, len(oracle.atoms), size=transitions)

    q_true = oracle.q[h - 1, i, j, a]
    q_hat = q_true + noise[h - 1, i, j, a]
    ni, nj = oracle.next_index(i, j, a)
    reward = q_true - oracle.gamma * oracle.values[h - 1, ni, nj]

    next_value = np.zeros(transitions)
    later = h >= 2
    level = h[later] - 2
    estimate = oracle.q[level, ni[later], nj[later]] + noise[level, ni[later], nj[later]]
    next_value[later] = (policy[level, ni[later], nj[later]] * estimate).sum(axis=-1)
    y = reward + oracle.gamma * next_value
    return float(np.mean((q_hat - q_true) ** 2)), float(np.mean((y - q_true) ** 2))


# ==================== SUITES ====================

def _report(checks: List[CheckResult], seed: int, started: float, suite: str) -> VerificationReport:
    duration = time.time() - started
    report = VerificationReport(checks=checks, seed=seed, duration=duration)
    log_performance(f"verify:{suite}", duration, {"checks": len(checks), "passed": report.passed})
    if report.passed:
        logger.info(f"Suite {suite}: {len(checks)} checks passed")
    else:
        logger.warning(f"Suite {suite}: {len(report.failures)} of {len(checks)} checks failed")
    return report


def _invariance_row(suite: str, fixture: InvariantCriticFixture, index: int) -> CheckResult:
    return CheckResult(suite, f"fixture {index} critic invariance", fixture.invariance_error(), 0.0,
                       INVARIANCE_TOL, "<=")


def check_lemma1(seed: int = 0, fixtures: int = 50, tol: float = 1e-10) -> VerificationReport:
    """(α_Q + 1)·implicit(ν̂, μ̂) equals explicit_y(ν) in value and gradient"""
    suite, started = "lemma1", time.time()
    streams = RandomStreams(seed)
    values, grads = [], []
    for f in range(fixtures):
        rng = streams.spawn(suite, f)
        alpha_q = (0.5, 1.0, 2.0)[f % 3]
        size = int(rng.integers(2, 6))
        nu = shift_distribution(rng, max_pad=2, size=size, include_identity=bool(rng.random() < 0.5))
        nu_hat, _ = lemma1_distributions(nu, alpha_q)

        nets = tiny_agent_nets(rng)
        batch = random_batch(rng, 4)
        n = len(batch.reward)
        targets = torch.as_tensor(rng.normal(size=(n, 1)), dtype=torch.float64)

        implicit_cfg = tiny_loss_config(critic_mode="implicit", M=len(nu_hat.support), K=1)
        explicit_cfg = tiny_loss_config(critic_mode="explicit_y", M=len(nu.support), K=1, alpha_q=alpha_q)

        def draws(dist):
            return [[[(p,) for p in dist.support] for _ in range(n)]], [[list(dist.weights)] * n]

        hat_params, hat_probs = draws(nu_hat)
        nu_params, nu_probs = draws(nu)
        implicit = critic_loss(implicit_cfg, nets, batch, hat_params, None, rng,
                               targets=targets, nu_probs=hat_probs)
        explicit = critic_loss(explicit_cfg, nets, batch, nu_params, None, rng,
                               targets=targets, nu_probs=nu_probs)
        values.append(((alpha_q + 1.0) * implicit.value, explicit.value))
        grads.append((float((implicit.flat_grad() * (alpha_q + 1.0) - explicit.flat_grad()).abs().max()), 0.0))

    checks = [
        _worst(suite, "(α_Q+1)·implicit == explicit_y", values, tol, note="μ̂ = δψ₀"),
        _worst(suite, "gradient max abs difference", grads, tol),
    ]
    return _report(checks, seed, started, suite)


def check_prop1(seed: int = 0, fixtures: int = 20, tol: float = 1e-6) -> VerificationReport:
    """Averaged actor loss against the KL-to-anchor decomposition, invariant critic"""
    suite, started = "prop1", time.time()
    streams = RandomStreams(seed)
    checks: List[CheckResult] = []
    pairs, point_pairs = [], []
    for f in range(fixtures):
        rng = streams.spawn(suite, f)
        point_mass = f % 5 == 4
        fixture = make_invariant_fixture(rng, alpha=float(rng.uniform(0.05, 1.0)), point_mass=point_mass)
        invariance = _invariance_row(suite, fixture, f)
        if not invariance.passed:
            checks.append(invariance)
            continue
        state = fixture.states[0]
        members = [
            (fixture.policy(view), prob,
             lambda a, view=view: fixture.critic.on_actions(view, a))
            for _, prob, view in fixture.views(state)
        ]
        sides = prop1_sides(members, fixture.policy(state), fixture.critic.quadratic(state), fixture.alpha)
        (point_pairs if point_mass else pairs).append(sides)

    if pairs:
        checks.append(_worst(suite, "averaged loss == KL decomposition", pairs, tol))
    if point_pairs:
        checks.append(_worst(suite, "point-mass μ reduces to the plain loss", point_pairs, tol))
    return _report(checks, seed, started, suite)


def _grid_members(fixture: InvariantCriticFixture, state: np.ndarray,
                  points: int = ACTION_GRID_POINTS) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(P, log p_ν, Q(T_ν s, ·), grid) with every policy discretized on one action grid"""
    views = fixture.views(state)
    policies = [fixture.policy(view) for _, _, view in views]
    quad = fixture.critic.quadratic(state)
    reach = max([abs(p.mean) + 6.0 * p.std for p in policies] + [abs(quad.center) + 6.0, 4.0])
    grid = np.linspace(-reach, reach, points)
    probs = np.array([prob for _, prob, _ in views])
    log_p = np.stack([discrete_log_probs(p, grid) for p in policies])
    q = np.stack([fixture.critic.on_actions(view, grid) for _, _, view in views])
    return probs, log_p, q, grid


def _kl_matrix(log_p: np.ndarray) -> np.ndarray:
    """D[η, ν] = KL(p_η ‖ p_ν)"""
    n = len(log_p)
    return np.array([[discrete_kl(log_p[e], log_p[v]) for v in range(n)] for e in range(n)])


def _mc_variance(values: np.ndarray, probs: np.ndarray, n: int, replicates: int,
                 rng: np.random.Generator) -> Tuple[float, float]:
    """Sample variance of n-draw empirical means and its standard error"""
    idx = rng.choice(len(values), size=(replicates, n), p=probs)
    means = values[idx].mean(axis=1)
    var = float(means.var(ddof=1))
    m4 = float(np.mean((means - means.mean()) ** 4))
    return var, float(np.sqrt(max(m4 - var ** 2, 0.0) / replicates))


def check_prop2_bound(seed: int = 0, fixtures: int = 100, samples: Sequence[int] = (4, 16),
                      replicates: int = 20000, policy_reads_nuisance: bool = True) -> VerificationReport:
    """Variance of the augmented actor loss against its KL bound"""
    suite, started = "prop2", time.time()
    streams = RandomStreams(seed)
    mc_rng = streams.spawn(suite, -1)
    checks: List[CheckResult] = []
    exact: List[Tuple[float, float]] = []
    mc: Dict[int, List[Tuple[float, float]]] = {n: [] for n in samples}
    scaling: Dict[int, List[Tuple[float, float]]] = {n: [] for n in samples}
    for f in range(fixtures):
        rng = streams.spawn(suite, f)
        fixture = make_invariant_fixture(rng, alpha=float(rng.uniform(0.05, 1.0)),
                                         policy_reads_nuisance=policy_reads_nuisance)
        invariance = _invariance_row(suite, fixture, f)
        if not invariance.passed:
            checks.append(invariance)
            continue
        probs, log_p, q, _ = _grid_members(fixture, fixture.states[0])
        scaled_q = q / fixture.alpha
        log_g = scaled_q - special.logsumexp(scaled_q, axis=1, keepdims=True)
        losses = np.sum(np.exp(log_p) * (log_p - scaled_q), axis=1)
        D = _kl_matrix(log_p)
        c = BOUND_MARGIN * np.max(np.abs(log_p - log_g), axis=1)
        inner = (probs[:, None] * (D + c[None, :] * np.sqrt(2.0 * D))).sum(axis=0)
        bound = float(np.sum(probs * inner ** 2))
        variance = float(np.sum(probs * (losses - probs @ losses) ** 2))
        exact.append((variance, bound))
        for n in samples:
            var_mc, se = _mc_variance(losses, probs, n, replicates, mc_rng)
            mc[n].append((var_mc, bound / n + MC_SLACK_SE * se))
            if variance > 1e-12:
                scaling[n].append((n * var_mc / variance, 1.0))

    checks.append(_worst(suite, "Var_ν[loss] <= KL bound", exact, 1e-12, "<="))
    for n in samples:
        checks.append(_worst(suite, f"MC variance n={n} <= bound/n + 3SE", mc[n], 0.0, "<="))
        if scaling[n]:
            checks.append(_worst(suite, f"n·Var_MC / Var n={n}", scaling[n], 0.2))
    return _report(checks, seed, started, suite)


def check_prop3_bound(seed: int = 0, fixtures: int = 100, gamma: float = 0.99, samples: Sequence[int] = (4, 16),
                      replicates: int = 20000) -> VerificationReport:
    """Variance of the augmented target under entropy and mean-value backups"""
    suite, started = "prop3", time.time()
    streams = RandomStreams(seed)
    mc_rng = streams.spawn(suite, -1)
    checks: List[CheckResult] = []
    entropy_pairs, ddpg_pairs, point_pairs = [], [], []
    forms = ("entropy", "mean-value")
    mc = {(form, n): [] for form in forms for n in samples}
    scaling = {(form, n): [] for form in forms for n in samples}
    for f in range(fixtures):
        rng = streams.spawn(suite, f)
        point_mass = f % 10 == 9
        fixture = make_invariant_fixture(rng, alpha=float(rng.uniform(0.05, 1.0)), point_mass=point_mass)
        invariance = _invariance_row(suite, fixture, f)
        if not invariance.passed:
            checks.append(invariance)
            continue
        probs, log_p, q, _ = _grid_members(fixture, fixture.states[0])
        p = np.exp(log_p)
        reward = float(rng.uniform(0.0, 1.0))
        D = _kl_matrix(log_p)
        root = np.sqrt(2.0 * D)

        y1 = gamma * q - fixture.alpha * log_p
        targets = reward + np.sum(p * y1, axis=1)
        variance = float(np.sum(probs * (targets - probs @ targets) ** 2))
        inner = (probs[:, None] * (np.max(np.abs(y1), axis=1)[None, :] * root + fixture.alpha * D)).sum(axis=0)
        bound = float(np.sum(probs * inner ** 2))

        mean_targets = reward + gamma * np.sum(p * q, axis=1)
        mean_variance = float(np.sum(probs * (mean_targets - probs @ mean_targets) ** 2))
        mean_inner = np.max(np.abs(q), axis=1) * (probs[:, None] * root).sum(axis=0)
        mean_bound = float(np.sum(probs * gamma ** 2 * mean_inner ** 2))

        if point_mass:
            point_pairs.append((variance, 0.0))
            continue
        entropy_pairs.append((variance, bound))
        ddpg_pairs.append((mean_variance, mean_bound))
        # n-view empirical target means, as the trainer's K-view average
        for form, values, exact, limit in (("entropy", targets, variance, bound),
                                           ("mean-value", mean_targets, mean_variance, mean_bound)):
            for n in samples:
                var_mc, se = _mc_variance(values, probs, n, replicates, mc_rng)
                mc[form, n].append((var_mc, limit / n + MC_SLACK_SE * se))
                if exact > 1e-12:
                    scaling[form, n].append((n * var_mc / exact, 1.0))

    if entropy_pairs:
        checks.append(_worst(suite, "Var_μ[y] <= entropy-target bound", entropy_pairs, 1e-12, "<="))
        checks.append(_worst(suite, "Var_μ[y] <= mean-value-target bound", ddpg_pairs, 1e-12, "<="))
        for form in forms:
            for n in samples:
                checks.append(_worst(suite, f"{form} MC variance n={n} <= bound/n + 3SE", mc[form, n], 0.0, "<="))
                if scaling[form, n]:
                    checks.append(_worst(suite, f"{form} n·Var_MC / Var n={n}", scaling[form, n], 0.2))
    if point_pairs:
        checks.append(_worst(suite, "point-mass μ gives zero variance", point_pairs, 1e-12))
    return _report(checks, seed, started, suite)


def check_avg_policy_inequality(seed: int = 0, families: int = 100, tol: float = 1e-10) -> VerificationReport:
    """Expected KL minus KL from the averaged policy, against its decomposition"""
    suite, started = "avgpolicy", time.time()
    streams = RandomStreams(seed)
    identity, variance, spread = [], [], []
    for f in range(families):
        rng = streams.spawn(suite, f)
        dims = int(rng.integers(1, 4))
        n = int(rng.integers(2, 7))
        gap = avg_policy_gap(
            means=rng.normal(0.0, 1.0, size=(n, dims)),
            stds=np.exp(rng.uniform(-1.0, 0.5, size=(n, dims))),
            probs=rng.dirichlet(np.ones(n)),
            target_mean=rng.normal(0.0, 1.0, size=dims),
            target_std=np.exp(rng.uniform(-1.0, 0.5, size=dims)),
        )
        identity.append((gap["gap"], gap["closed_form"]))
        variance.append((gap["variance_term"], 0.0))
        spread.append((gap["spread_term"], 0.0))
    checks = [
        _worst(suite, "KL gap == closed decomposition", identity, tol),
        _worst(suite, "variance term >= 0", variance, 0.0, ">="),
        _worst(suite, "mean-spread term >= 0", spread, 0.0, ">="),
    ]
    return _report(checks, seed, started, suite)


def check_kl_direction(seed: int = 0, pairs: int = 100, tol: float = 1e-6) -> VerificationReport:
    """Both KL directions against their entropy/cross-entropy expansions"""
    suite, started = "kl-direction", time.time()
    streams = RandomStreams(seed)
    forward, reverse, leaks = [], [], []
    for f in range(pairs):
        rng = streams.spawn(suite, f)
        anchor = Gaussian(float(rng.normal()), float(np.exp(rng.uniform(-1.0, 0.5))))
        online = Gaussian(float(rng.normal()), float(np.exp(rng.uniform(-1.0, 0.5))))

        anchor_mean = torch.tensor([[anchor.mean]], dtype=torch.float64, requires_grad=True)
        online_mean = torch.tensor([[online.mean]], dtype=torch.float64, requires_grad=True)
        anchor_dist = PolicyDistribution(anchor_mean, torch.tensor([[np.log(anchor.std)]], dtype=torch.float64), False)
        online_dist = PolicyDistribution(online_mean, torch.tensor([[np.log(online.std)]], dtype=torch.float64), False)

        kl_f = policy_kl(anchor_dist, online_dist, "forward")
        kl_r = policy_kl(anchor_dist, online_dist, "reverse")
        # KL(π_sg(s) ‖ π(Ts)) = −H(π_sg(s)) − E_{π_sg}[log π(Ts)]
        forward.append((float(kl_f[0]), -anchor.entropy() - expectation(anchor, online.logpdf)))
        # KL(π(Ts) ‖ π_sg(s)) = −H(π(Ts)) − E_{π(Ts)}[log π_sg(s)]
        reverse.append((float(kl_r[0]), -online.entropy() - expectation(online, anchor.logpdf)))

        grad = torch.autograd.grad((kl_f + kl_r).sum(), [anchor_mean, online_mean], allow_unused=True)
        leaks.append((0.0 if grad[0] is None else float(grad[0].abs().max()), 0.0))

    checks = [
        _worst(suite, "detach-first KL == −H − cross term", forward, tol),
        _worst(suite, "detach-second KL == −H − cross term", reverse, tol),
        _worst(suite, "anchor receives no gradient", leaks, 0.0),
    ]
    return _report(checks, seed, started, suite)


def check_linear_model(seed: int = 0, fixtures: int = 50, tol: float = 1e-10) -> VerificationReport:
    """Bias-variance split of the augmented squared error for a linear critic"""
    suite, started = "linear-model", time.time()
    streams = RandomStreams(seed)
    swap, shifted, traces = [], [], []
    spec = TransformSpec(kind="shift", max_pad=4)
    offsets = enumerate_params(spec)
    for f in range(fixtures):
        rng = streams.spawn(suite, f)
        action = rng.uniform(-1.0, 1.0, size=2)
        w_a, bias, y = rng.normal(size=2), float(rng.normal()), float(rng.normal())

        pixels = rng.random(2)
        views = np.stack([pixels, pixels[::-1]])
        lhs, rhs, _ = linear_model_sides(rng.normal(size=2), w_a, bias, action, y, views, [0.5, 0.5])
        swap.append((lhs, rhs))

        state = rng.random((1, 8, 8))
        views = np.stack([apply_transform(spec, p, state) for p in offsets])
        lhs, rhs, trace = linear_model_sides(rng.normal(size=64) / 8.0, w_a, bias, action, y, views,
                                             rng.dirichlet(np.ones(len(offsets))))
        shifted.append((lhs, rhs))
        traces.append((trace, 0.0))

    # hand example: s = (1, 0), views {s, swap(s)} at 1/2 each, w_s = (1, 2), y = 0.
    # Q takes 1 and 2, so E[(Q − y)²] = 2.5 = 1.5² + Tr term 0.25
    hand_lhs, hand_rhs, hand_trace = linear_model_sides(np.array([1.0, 2.0]), np.zeros(2), 0.0, np.zeros(2), 0.0,
                                                        np.array([[1.0, 0.0], [0.0, 1.0]]), [0.5, 0.5])
    checks = [
        _worst(suite, "two-pixel swap split", swap, tol),
        CheckResult(suite, "swap example w=(1,2): E[(Q−y)²]", hand_lhs, 2.5, tol),
        CheckResult(suite, "swap example w=(1,2): split", hand_rhs, 2.5, tol, note=f"trace {hand_trace:g}"),
        _worst(suite, "81-offset shift split", shifted, tol, note="variance weighted by W_s"),
        _worst(suite, "variance term", traces, 0.0, ">="),
    ]
    checks[-1].asserted = False
    return _report(checks, seed, started, suite)


def check_drq_equivalence(seed: int = 0, fixtures: int = 20, tol: float = 1e-8) -> VerificationReport:
    """Implicit loss and the all-pairs form share their gradient"""
    suite, started = "drq-equivalence", time.time()
    streams = RandomStreams(seed)
    grads, offsets = [], []
    for f in range(fixtures):
        rng = streams.spawn(suite, f)
        M, K = ((2, 2), (3, 2))[f % 2]
        fixture = make_loss_fixture(rng, critic_mode="implicit", M=M, K=K)
        n = len(fixture.batch.reward)
        targets = torch.as_tensor(rng.normal(size=(n, K)), dtype=torch.float64)
        implicit = critic_loss(fixture.config, fixture.nets, fixture.batch, fixture.draws["nu_params"],
                               None, rng, fixture.plan, targets=targets)
        pairs = all_pairs_critic_loss(fixture.config, fixture.nets, fixture.batch,
                                      fixture.draws["nu_params"], targets, fixture.plan)
        grads.append((float((implicit.flat_grad() - pairs.flat_grad()).abs().max()), 0.0))
        heads = 2.0 if getattr(fixture.nets.critics, "twin", False) else 1.0
        spread = heads * float(targets.var(dim=1, unbiased=False).mean())
        offsets.append((pairs.value - implicit.value, spread))
    checks = [
        _worst(suite, "gradient max abs difference", grads, tol),
        _worst(suite, "loss offset == target spread", offsets, 1e-10),
    ]
    return _report(checks, seed, started, suite)


def check_bias_ordering(seed: int = 0, trials: int = 100, transitions: int = 10000, gamma: float = 0.99,
                        sigma: float = 0.5, temperature: float = 1.0, required: int = 95) -> VerificationReport:
    """Bootstrapped targets carry less oracle bias than a stop-gradient critic"""
    suite, started = "bias", time.time()
    streams = RandomStreams(seed)
    env = SpriteReacherEnv()
    env.reset(streams["env"])
    oracle = oracle_q(env, gamma, temperature=temperature)
    policy = oracle.policy_table()

    rng = streams.spawn(suite, 0)
    wins, ratios = 0, []
    for _ in range(trials):
        bias_q, bias_y = bias_pair(oracle, sigma, transitions, rng, policy)
        wins += int(bias_y < bias_q)
        ratios.append(bias_y / bias_q)

    short_sighted = oracle_q(env, 0.0, temperature=temperature)
    bias_q0, bias_y0 = bias_pair(short_sighted, sigma, transitions, rng)
    exact_q, exact_y = bias_pair(oracle, 0.0, transitions, rng, policy)

    checks = [
        CheckResult(suite, "trials with bias(y) < bias(Q_sg)", float(wins), float(required), 0.0, ">=",
                    samples=trials, note=f"mean ratio {np.mean(ratios):.3f}"),
        CheckResult(suite, "γ = 0 target is the reward alone", bias_y0, 0.0, 1e-12),
        CheckResult(suite, "γ = 0: bias(y) < bias(Q_sg)", bias_y0, bias_q0, 0.0, "<", samples=transitions),
        CheckResult(suite, "noise-free critic: bias(Q_sg)", exact_q, 0.0, 1e-12),
        CheckResult(suite, "noise-free critic: bias(y)", exact_y, 0.0, 1e-12),
    ]
    return _report(checks, seed, started, suite)


def check_pinsker(seed: int = 0, pairs: int = 1000) -> VerificationReport:
    """Total variation against sqrt(KL / 2) on Gaussian pairs"""
    suite, started = "pinsker", time.time()
    rng = RandomStreams(seed).spawn(suite, 0)
    sweep = []
    for _ in range(pairs):
        p = Gaussian(float(rng.normal(0.0, 2.0)), float(np.exp(rng.uniform(-1.0, 1.0))))
        q = Gaussian(float(rng.normal(0.0, 2.0)), float(np.exp(rng.uniform(-1.0, 1.0))))
        sweep.append((total_variation(p, q), float(np.sqrt(gaussian_kl(p, q) / 2.0))))
    example = total_variation(Gaussian(0.0, 1.0), Gaussian(3.0, 1.0))
    checks = [
        _worst(suite, "TV <= sqrt(KL/2)", sweep, 1e-9, "<="),
        CheckResult(suite, "TV(N(0,1), N(3,1))", example, 0.8664, 1e-4),
    ]
    return _report(checks, seed, started, suite)


GRADIENT_MODES: List[Tuple[str, Dict]] = [
    ("critic", dict(critic_mode="implicit")),
    ("critic", dict(critic_mode="explicit_sg")),
    ("critic", dict(critic_mode="explicit_y")),
    ("critic", dict(critic_mode="svea_asym")),
    ("critic", dict(critic_mode="generic", alpha_tp=0.1)),
    ("critic", dict(critic_mode="implicit", base_algo="ddpg")),
    ("actor", dict(actor_mode="implicit")),
    ("actor", dict(actor_mode="explicit_kl")),
    ("actor", dict(actor_mode="kl_aug_target")),
    ("actor", dict(actor_mode="kl_avg_target")),
    ("actor", dict(actor_mode="generic", alpha_pi=0.5)),
    ("actor", dict(actor_mode="generic", alpha_pi=0.5, base_algo="ddpg")),
]


def check_gradients(seed: int = 0, fixtures: int = 10, coords: int = 16, step: float = 1e-6,
                    tol: float = 1e-5) -> VerificationReport:
    """
    Autograd gradients of every loss mode against central differences on
    sampled coordinates. Stop-gradient quantities are read from a frozen copy
    of the networks so only the differentiated path moves.
    """
    suite, started = "gradcheck", time.time()
    streams = RandomStreams(seed)
    checks: List[CheckResult] = []
    for loss_kind, overrides in GRADIENT_MODES:
        name = f"{loss_kind}:{overrides.get('base_algo', 'sac')}:" \
               f"{overrides.get('critic_mode') or overrides.get('actor_mode')}"
        errors = []
        for f in range(fixtures):
            rng = streams.spawn(f"{suite}/{name}", f)
            fixture = make_loss_fixture(rng, M=2, K=2, J=2, L=2, **overrides)
            frozen = copy.deepcopy(fixture.nets)
            draws = fixture.draws

            def evaluate(compute_grads: bool):
                loss_rng = make_stream(seed * 1000 + f, f"{suite}/{name}")
                if loss_kind == "critic":
                    return critic_loss(fixture.config, fixture.nets, fixture.batch, draws["nu_params"],
                                       draws["mu_params"], loss_rng, fixture.plan,
                                       tp_params=draws.get("tp_params"), frozen=frozen,
                                       compute_grads=compute_grads)
                return actor_loss(fixture.config, fixture.nets, fixture.batch, draws["actor_mu"],
                                  draws["eta_params"], loss_rng, fixture.plan, frozen=frozen,
                                  compute_grads=compute_grads)

            result = evaluate(True)
            sizes = np.array([p.numel() for p in result.params])
            ends = np.cumsum(sizes)
            picked = rng.choice(int(ends[-1]), size=min(coords, int(ends[-1])), replace=False)
            analytic, numeric = [], []
            for flat in picked:
                k = int(np.searchsorted(ends, flat, side="right"))
                local = int(flat - (ends[k] - sizes[k]))
                param = result.params[k]
                with torch.no_grad():
                    view = param.view(-1)
                    original = float(view[local])
                    view[local] = original + step
                    plus = evaluate(False).value
                    view[local] = original - step
                    minus = evaluate(False).value
                    view[local] = original
                numeric.append((plus - minus) / (2.0 * step))
                analytic.append(float(result.grads[k].reshape(-1)[local]))
            analytic, numeric = np.array(analytic), np.array(numeric)
            scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
            errors.append((float(np.linalg.norm(analytic - numeric) / scale), 0.0))
        checks.append(_worst(suite, f"{name} relative error", errors, tol, "<="))
    return _report(checks, seed, started, suite)


# ==================== REGISTRY ====================

SUITES: Dict[str, Callable[..., VerificationReport]] = {
    "lemma1": check_lemma1,
    "prop1": check_prop1,
    "prop2": check_prop2_bound,
    "prop3": check_prop3_bound,
    "avgpolicy": check_avg_policy_inequality,
    "kl-direction": check_kl_direction,
    "linear-model": check_linear_model,
    "drq-equivalence": check_drq_equivalence,
    "bias": check_bias_ordering,
    "pinsker": check_pinsker,
    "gradcheck": check_gradients,
}

def run_suite(name: str, seed: int = 0, **options) -> VerificationReport:
    try:
        suite = SUITES[name]
    except KeyError:
        raise InvalidInputError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    logger.info(f"Running verification suite {name} (seed {seed})")
    return suite(seed=seed, **options)


def run_all(seed: int = 0, threads: int = 1, suites: Optional[Sequence[str]] = None) -> VerificationReport:
    """Every suite (or the named ones); independent suites fan out over threads"""
    names = list(suites) if suites else list(SUITES)
    if threads <= 1:
        reports = [run_suite(name, seed) for name in names]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(lambda name: run_suite(name, seed), names))
    report = VerificationReport.merge(reports)
    logger.info(f"Verification: {len(report.checks)} checks, {len(report.failures)} failed")
    return report
