"""Receding-horizon planning over imagined model rollouts.

The planner scores imagined action sequences with two terms:

* an extrinsic term: the reward head's predicted mean reward, summed over
  the imagined steps, and
* an epistemic term: the information gained about the dynamics parameters,
  measured per step as the entropy of the moment-matched ensemble mixture
  minus the average entropy of the individual member predictions.

``total = extrinsic + beta * info_gain`` is maximized with the cross-entropy
method over action sequences in [-1, 1]^(H x A). Models are duck-typed: any
object with ``predict_batch`` works, which keeps the rollout testable against
exact hand-built dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


@dataclass
class GaussianBelief:
    """Diagonal-Gaussian belief over a vector quantity."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=float)
        self.var = np.asarray(self.var, dtype=float)
        if self.mean.shape != self.var.shape:
            raise ValueError(f"mean/var shape mismatch: {self.mean.shape} vs {self.var.shape}")


@dataclass
class ActionSequenceDistribution:
    """Per-(step, dim) Gaussian over action sequences, clipped when sampled."""

    mean: np.ndarray
    std: np.ndarray


@dataclass
class PlanScore:
    """Score of one imagined action sequence, split into its two terms."""

    extrinsic: float
    info_gain: float
    total: float
    truncated: bool = False


@dataclass
class PlannerConfig:
    population: int = 300
    elites: int = 30
    iterations: int = 6
    horizon: int = 12
    beta: float = 1.0
    alpha: float = 0.1
    std_floor: float = 0.05
    init_std: float = 0.5
    warm_start: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.population < 1:
            raise ValueError(f"population must be >= 1, got {self.population}")
        if not 1 <= self.elites <= self.population:
            raise ValueError(
                f"elites must be in [1, population], got {self.elites} of {self.population}"
            )
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must be in [0, 1), got {self.alpha}")
        if self.std_floor <= 0 or self.init_std <= 0:
            raise ValueError("std_floor and init_std must be positive")


def info_gain_arrays(means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """Ensemble information gain per batch element.

    ``means``/``variances`` have shape (K, ..., D): K member beliefs over a
    D-dimensional observation. The mixture across members is moment-matched
    to a diagonal Gaussian (variance = mean member variance + spread of
    member means), and the gain is the mixture entropy minus the average
    member entropy:

        0.5 * sum_d [ ln(matched_var_d) - mean_k ln(var_kd) ]

    Nonnegative by the AM-GM inequality; floored at 0 against rounding.
    """
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    if means.shape != variances.shape or means.ndim < 2:
        raise ValueError(f"bad belief shapes: {means.shape} vs {variances.shape}")
    if means.shape[0] < 1:
        raise ValueError("need at least one member belief")
    if not (variances > 0).all():
        raise ValueError("member variances must be strictly positive")
    matched_var = variances.mean(axis=0) + means.var(axis=0)
    gain = 0.5 * (np.log(matched_var) - np.log(variances).mean(axis=0)).sum(axis=-1)
    return np.maximum(gain, 0.0)


def info_gain(beliefs: Sequence[GaussianBelief]) -> float:
    """Information gain of a set of member beliefs over the same quantity."""
    if len(beliefs) < 1:
        raise ValueError("need at least one belief")
    means = np.stack([b.mean for b in beliefs])
    variances = np.stack([b.var for b in beliefs])
    return float(info_gain_arrays(means, variances))


def rollout_score_batch(
    obs0: np.ndarray,
    action_seqs: np.ndarray,
    model,
    head,
    beta: float,
) -> list[PlanScore]:
    """Score N action sequences from a shared start observation.

    ``model.predict_batch(obs (B, D), act (B, A)) -> (means, vars)`` with
    shapes (K, B, D); ``head.predict_batch(obs (B, D)) -> (mean (B,), var (B,))``.
    State is propagated deterministically through the moment-matched mixture
    mean. A candidate whose imagined state goes non-finite stops accumulating
    at that step and is flagged truncated.
    """
    obs0 = np.asarray(obs0, dtype=float)
    seqs = np.asarray(action_seqs, dtype=float)
    if seqs.ndim != 3:
        raise ValueError(f"expected (N, H, A) action sequences, got {seqs.shape}")
    n, horizon, _ = seqs.shape
    states = np.tile(obs0, (n, 1))
    extrinsic = np.zeros(n)
    gain = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    truncated = np.zeros(n, dtype=bool)
    for t in range(horizon):
        # non-finite intermediates are expected for exploding candidates and
        # are masked below, so silence numpy's invalid-value chatter here
        with np.errstate(invalid="ignore", over="ignore"):
            member_means, member_vars = model.predict_batch(states, seqs[:, t])
            step_gain = info_gain_arrays(member_means, member_vars)
            next_states = np.asarray(member_means, dtype=float).mean(axis=0)
            reward_mean, _ = head.predict_batch(next_states)
        reward_mean = np.asarray(reward_mean, dtype=float)
        ok = (
            np.isfinite(next_states).all(axis=1)
            & np.isfinite(step_gain)
            & np.isfinite(reward_mean)
        )
        died = alive & ~ok
        truncated |= died
        alive &= ok
        extrinsic[alive] += reward_mean[alive]
        gain[alive] += step_gain[alive]
        # dead candidates keep their last finite state so the model is never
        # fed NaNs on later steps
        states = np.where(alive[:, None], next_states, states)
    totals = extrinsic + beta * gain
    return [
        PlanScore(float(extrinsic[i]), float(gain[i]), float(totals[i]), bool(truncated[i]))
        for i in range(n)
    ]


def rollout_score(
    obs0: np.ndarray,
    actions: np.ndarray,
    model,
    head,
    beta: float,
) -> PlanScore:
    """Score a single action sequence of shape (H, A); H = 0 scores as zero."""
    actions = np.asarray(actions, dtype=float)
    if actions.ndim != 2:
        raise ValueError(f"expected (H, A) actions, got {actions.shape}")
    if actions.size and (np.abs(actions) > 1.0 + 1e-9).any():
        raise ValueError("actions must lie in [-1, 1]")
    if actions.shape[0] == 0:
        return PlanScore(0.0, 0.0, 0.0, False)
    return rollout_score_batch(obs0, actions[None], model, head, beta)[0]


ScoreFn = Callable[[np.ndarray], list[PlanScore]]


def cem_optimize(
    score: ScoreFn,
    action_dim: int,
    cfg: PlannerConfig,
    rng: np.random.Generator | None = None,
    warm_mean: np.ndarray | None = None,
    trace: list | None = None,
) -> tuple[np.ndarray, PlanScore | None, ActionSequenceDistribution]:
    """Cross-entropy search over action sequences in [-1, 1].

    ``score`` maps an (N, H, A) batch to N breakdowns (higher total is
    better). Returns the first action of the final mean, the best breakdown
    seen (None when iterations = 0), and the final sampling distribution.
    The best sequence found is re-injected into every later population, so
    with a deterministic score the best total never decreases.
    """
    cfg.validate()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    mean = np.zeros((cfg.horizon, action_dim))
    if warm_mean is not None:
        mean = np.clip(np.asarray(warm_mean, dtype=float), -1.0, 1.0)
        if mean.shape != (cfg.horizon, action_dim):
            raise ValueError(f"warm mean shape {mean.shape} != {(cfg.horizon, action_dim)}")
    std = np.full((cfg.horizon, action_dim), cfg.init_std)
    best_seq: np.ndarray | None = None
    best: PlanScore | None = None
    for it in range(cfg.iterations):
        eps = rng.standard_normal((cfg.population, cfg.horizon, action_dim))
        seqs = np.clip(mean[None] + std[None] * eps, -1.0, 1.0)
        if best_seq is not None:
            seqs[-1] = best_seq
        breakdowns = score(seqs)
        totals = np.array([b.total for b in breakdowns])
        # stable sort on negated totals: ties resolve in candidate-index order
        order = np.argsort(-totals, kind="stable")
        top = int(order[0])
        if best is None or totals[top] > best.total:
            best = breakdowns[top]
            best_seq = seqs[top].copy()
        elite = seqs[order[: cfg.elites]]
        mean = np.clip(cfg.alpha * mean + (1.0 - cfg.alpha) * elite.mean(axis=0), -1.0, 1.0)
        std = np.maximum(
            cfg.alpha * std + (1.0 - cfg.alpha) * elite.std(axis=0), cfg.std_floor
        )
        if trace is not None:
            trace.append(
                {
                    "iteration": it,
                    "population_best": float(totals[top]),
                    "elite_threshold": float(totals[order[cfg.elites - 1]]),
                    "best_total": float(best.total),
                    "mean_abs_action": float(np.abs(mean).mean()),
                    "mean_std": float(std.mean()),
                }
            )
    return mean[0].copy(), best, ActionSequenceDistribution(mean, std)


def cem_plan(
    obs: np.ndarray,
    model,
    head,
    cfg: PlannerConfig,
    rng: np.random.Generator | None = None,
    warm_mean: np.ndarray | None = None,
    trace: list | None = None,
) -> tuple[np.ndarray, PlanScore | None, ActionSequenceDistribution]:
    """Plan one step: CEM over model rollouts from ``obs``, return first action."""
    action_dim = getattr(model, "action_dim", None)
    if action_dim is None:
        raise ValueError("model must expose action_dim")

    def score(seqs: np.ndarray) -> list[PlanScore]:
        return rollout_score_batch(obs, seqs, model, head, cfg.beta)

    return cem_optimize(score, int(action_dim), cfg, rng=rng, warm_mean=warm_mean, trace=trace)


def shift_warm_start(dist: ActionSequenceDistribution) -> np.ndarray:
    """One-step shift of a previous plan's mean for warm-starting the next."""
    mean = np.asarray(dist.mean, dtype=float)
    shifted = np.zeros_like(mean)
    shifted[:-1] = mean[1:]
    return shifted
