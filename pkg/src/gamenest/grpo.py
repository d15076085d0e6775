"""Trajectory-level GRPO for a tabular softmax policy.

Each turn emits one discrete action, so the per-token ratio of the objective is a
per-turn ratio here. The objective maximised by ``train_step`` is

    1/N * sum_i 1/|tau_i| * sum_t [ min(r_it * A_i, clip(r_it, 1-eps_lo, 1+eps_hi) * A_i)
                                    + beta * H(pi(.|s_it)) ]

over the N trajectories of the groups kept by variance filtering, with no KL term.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from gamenest.compose import (
    OpponentSuite,
    PolicyAction,
    TaskComposition,
    Trajectory,
    TurnRequest,
    run_episode,
)

SNAPSHOT_FORMAT = "gamenest.policy"
SNAPSHOT_VERSION = 1


class PolicyError(ValueError):
    pass


def observation_key(observation: str) -> str:
    """Stable key for an observation text."""
    return hashlib.sha256(observation.encode("utf-8")).hexdigest()[:20]


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


@dataclass
class PolicyParams:
    """Observation key -> logits over that observation's candidate actions."""

    table: dict[str, np.ndarray] = field(default_factory=dict)

    def ensure(self, key: str, n_actions: int) -> np.ndarray:
        z = self.table.get(key)
        if z is None:
            z = self.table[key] = np.zeros(n_actions)
        elif len(z) != n_actions:
            raise PolicyError(f"key {key} has {len(z)} actions, request offers {n_actions}")
        return z

    def logits(self, key: str) -> np.ndarray:
        try:
            return self.table[key]
        except KeyError:
            raise PolicyError(f"no entry for observation key {key}") from None

    def copy(self) -> "PolicyParams":
        return PolicyParams({k: v.copy() for k, v in self.table.items()})

    def n_params(self) -> int:
        return sum(len(v) for v in self.table.values())

    def to_record(self) -> dict:
        return {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "table": {k: [float(x) for x in self.table[k]] for k in sorted(self.table)},
        }

    @classmethod
    def from_record(cls, rec: dict) -> "PolicyParams":
        if rec.get("format") != SNAPSHOT_FORMAT or rec.get("version") != SNAPSHOT_VERSION:
            raise PolicyError(f"not a {SNAPSHOT_FORMAT} v{SNAPSHOT_VERSION} snapshot")
        return cls({k: np.asarray(v, dtype=float) for k, v in rec["table"].items()})

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_record()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "PolicyParams":
        return cls.from_record(json.loads(Path(path).read_text(encoding="utf-8")))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolicyParams) or set(self.table) != set(other.table):
            return False
        return all(np.array_equal(self.table[k], other.table[k]) for k in self.table)


def policy_logprob(p: PolicyParams, observation: str, action: int) -> float:
    z = p.logits(observation_key(observation))
    if not 0 <= action < len(z):
        raise PolicyError(f"action {action} not among {len(z)} actions")
    return float(log_softmax(z)[action])


def _entropy(z: np.ndarray) -> float:
    lp = log_softmax(z)
    return float(-(np.exp(lp) * lp).sum())


def policy_entropy(p: PolicyParams, observation: str) -> float:
    """Shannon entropy (nats) of the action distribution at ``observation``."""
    return _entropy(p.logits(observation_key(observation)))


class TabularSoftmaxPolicy:
    """Samples from softmax(logits[state]); unseen states start uniform."""

    def __init__(self, params: PolicyParams | None = None, greedy: bool = False):
        self.params = params if params is not None else PolicyParams()
        self.greedy = greedy

    def act(self, request: TurnRequest, rng: np.random.Generator) -> PolicyAction:
        key = observation_key(request.state)
        lp = log_softmax(self.params.ensure(key, len(request.actions)))
        if self.greedy:
            idx = int(np.argmax(lp))
        else:
            u = rng.random()
            idx = int(min(np.searchsorted(np.cumsum(np.exp(lp)), u, side="right"), len(lp) - 1))
        return PolicyAction(request.actions[idx], idx, float(lp[idx]), key)


# -- advantages ------------------------------------------------------------------------

def normalize_advantages(rewards: Sequence[float]) -> np.ndarray:
    """Group-normalised advantages, population std; all zeros for a constant group."""
    r = np.asarray(rewards, dtype=float)
    if r.size < 2:
        raise PolicyError("advantage normalisation needs a group of at least 2")
    centered = r - r.mean()
    std = float(np.sqrt(np.mean(centered**2)))
    if std < 1e-8:
        return np.zeros_like(r)
    return centered / std


def turn_advantages(advantage: float, n_turns: int, gamma: float = 1.0, lam: float = 1.0) -> np.ndarray:
    """Spread a trajectory advantage over its turns.

    With a single terminal reward and no critic, GAE gives
    A_t = (gamma*lam)^(T-1-t) * A; for gamma = lam = 1 that is A at every turn.
    """
    if gamma == 1.0 and lam == 1.0:
        return np.full(n_turns, float(advantage))
    out = np.zeros(n_turns)
    running = 0.0
    for t in reversed(range(n_turns)):
        delta = advantage if t == n_turns - 1 else 0.0
        running = delta + gamma * lam * running
        out[t] = running
    return out


def clipped_surrogate(ratio: float, advantage: float, clip_low: float = 0.2, clip_high: float = 0.28) -> float:
    clipped = min(max(ratio, 1.0 - clip_low), 1.0 + clip_high)
    return min(ratio * advantage, clipped * advantage)


def _is_clipped(ratio: float, advantage: float, clip_low: float, clip_high: float) -> bool:
    # the clipped branch is active (zero gradient) exactly in these regions
    return (advantage > 0 and ratio > 1.0 + clip_high) or (advantage < 0 and ratio < 1.0 - clip_low)


# -- batches -------------------------------------------------------------------------------

@dataclass
class TurnSample:
    key: str
    action: int
    old_logprob: float


@dataclass
class GroupBatch:
    trajectories: list[Trajectory]
    rewards: np.ndarray
    advantages: np.ndarray
    turns: list[list[TurnSample]]

    @classmethod
    def from_trajectories(cls, trajectories: Sequence[Trajectory]) -> "GroupBatch":
        rewards = np.array([t.scalar_reward for t in trajectories], dtype=float)
        turns = [
            [TurnSample(r.state_key, r.action_index, r.logprob) for r in t.turns
             if r.state_key is not None and r.action_index is not None and r.logprob is not None]
            for t in trajectories
        ]
        return cls(list(trajectories), rewards, normalize_advantages(rewards), turns)

    @classmethod
    def synthetic(cls, rewards: Sequence[float], turns: list[list[TurnSample]]) -> "GroupBatch":
        r = np.asarray(rewards, dtype=float)
        return cls([], r, normalize_advantages(r), turns)

    @property
    def old_logprobs(self) -> list[list[float]]:
        return [[s.old_logprob for s in ts] for ts in self.turns]

    @property
    def variance(self) -> float:
        return float(np.var(self.rewards))


def filter_groups(groups: Sequence[GroupBatch], keep_fraction: float) -> list[GroupBatch]:
    """Keep the ceil(keep_fraction * N) groups with the highest reward variance.

    Ties keep the earlier group; survivors are returned in their original order.
    """
    if not groups:
        return []
    n_keep = min(len(groups), max(1, math.ceil(keep_fraction * len(groups) - 1e-9)))
    ranked = sorted(range(len(groups)), key=lambda i: (-groups[i].variance, i))
    return [groups[i] for i in sorted(ranked[:n_keep])]


# -- objective -----------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainerConfig:
    group_size: int = 16
    clip_low: float = 0.2
    clip_high: float = 0.28
    entropy_coef: float = 0.001
    learning_rate: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    gae_gamma: float = 1.0
    gae_lambda: float = 1.0
    filter_keep_fraction: float = 0.25
    iterations: int = 250
    groups_per_iteration: int = 8
    update_epochs: int = 1
    warmup_iterations: int = 0

    def __post_init__(self):
        if not 0 < self.clip_low <= self.clip_high < 1:
            raise ValueError("need 0 < clip_low <= clip_high < 1")
        if not 0 < self.filter_keep_fraction <= 1:
            raise ValueError("filter_keep_fraction must be in (0, 1]")
        if self.group_size < 2:
            raise ValueError("group_size must be at least 2")
        if self.iterations < 1 or self.groups_per_iteration < 1 or self.update_epochs < 1:
            raise ValueError("iterations, groups_per_iteration and update_epochs must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def grpo_objective(p: PolicyParams, groups: Sequence[GroupBatch], cfg: TrainerConfig,
                   with_grad: bool = True) -> tuple[float, dict[str, np.ndarray], dict]:
    """Objective value, its gradient w.r.t. every touched logit vector, and clip stats."""
    grads: dict[str, np.ndarray] = {}
    trajs = [(g.advantages[i], ts) for g in groups for i, ts in enumerate(g.turns) if ts]
    n = len(trajs)
    value = 0.0
    n_turns = n_clipped = 0
    for adv, ts in trajs:
        w = 1.0 / (n * len(ts))
        advs = turn_advantages(adv, len(ts), cfg.gae_gamma, cfg.gae_lambda)
        for s, a_t in zip(ts, advs):
            z = p.logits(s.key)
            lp = log_softmax(z)
            probs = np.exp(lp)
            ratio = math.exp(lp[s.action] - s.old_logprob)
            ent = float(-(probs * lp).sum())
            value += w * (clipped_surrogate(ratio, a_t, cfg.clip_low, cfg.clip_high) + cfg.entropy_coef * ent)
            clipped = _is_clipped(ratio, a_t, cfg.clip_low, cfg.clip_high)
            n_turns += 1
            n_clipped += clipped
            if not with_grad:
                continue
            g = grads.get(s.key)
            if g is None:
                g = grads[s.key] = np.zeros_like(z)
            if not clipped and a_t != 0.0:
                dlogp = -probs
                dlogp[s.action] += 1.0
                g += w * ratio * a_t * dlogp
            if cfg.entropy_coef:
                g += w * cfg.entropy_coef * (-probs * (lp + ent))
    stats = {"n_trajectories": n, "n_turns": n_turns, "clip_fraction": float(n_clipped / n_turns) if n_turns else 0.0}
    return value, grads, stats


class Adam:
    """Adam ascent over a dict of logit vectors; moments are created lazily."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, p: PolicyParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k in sorted(self.m):
            g = grads.get(k)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            v *= self.beta2
            if g is not None:
                m += (1.0 - self.beta1) * g
                v += (1.0 - self.beta2) * g * g
            p.table[k] = p.table[k] + self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class StepMetrics:
    mean_reward: float
    policy_entropy: float
    gradient_norm: float
    clip_fraction: float
    kept_group_count: int
    objective: float = 0.0
    skipped: bool = False


def visited_entropy(p: PolicyParams, groups: Sequence[GroupBatch]) -> float:
    keys = sorted({s.key for g in groups for ts in g.turns for s in ts if s.key in p.table})
    if not keys:
        return 0.0
    return float(np.mean([_entropy(p.table[k]) for k in keys]))


def train_step(p: PolicyParams, groups: Sequence[GroupBatch], cfg: TrainerConfig,
               optimizer: Adam | None = None) -> tuple[PolicyParams, StepMetrics]:
    """Filter groups, then take one Adam ascent step on the GRPO objective.

    ``p`` is not modified. Pass the same ``optimizer`` across calls to keep Adam
    moments; without one a fresh optimizer is used for this single step.
    """
    rewards = [float(r) for g in groups for r in g.rewards]
    mean_reward = float(np.mean(rewards)) if rewards else 0.0
    entropy = visited_entropy(p, groups)
    kept = filter_groups(groups, cfg.filter_keep_fraction)
    new = p.copy()
    if not any(ts for g in kept for ts in g.turns):
        return new, StepMetrics(mean_reward, entropy, 0.0, 0.0, 0, skipped=True)
    value, grads, stats = grpo_objective(p, kept, cfg)
    norm = float(math.sqrt(sum(float(g @ g) for g in grads.values())))
    opt = optimizer if optimizer is not None else Adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    opt.step(new, grads)
    return new, StepMetrics(mean_reward, entropy, norm, stats["clip_fraction"], len(kept), value)


# -- gradient check ----------------------------------------------------------------------------

class KinkError(ValueError):
    """A ratio sits on a clip boundary where the objective is not differentiable."""


def _near_kink(p: PolicyParams, groups: Sequence[GroupBatch], cfg: TrainerConfig, tol: float) -> bool:
    for g in groups:
        for adv, ts in zip(g.advantages, g.turns):
            for s in ts:
                r = math.exp(log_softmax(p.logits(s.key))[s.action] - s.old_logprob)
                if abs(r - (1 + cfg.clip_high)) < tol or abs(r - (1 - cfg.clip_low)) < tol:
                    return True
    return False


def finite_difference_check(p: PolicyParams, groups: Sequence[GroupBatch], cfg: TrainerConfig,
                            h: float = 1e-5, kink_tol: float = 1e-3,
                            rng: np.random.Generator | None = None, max_resamples: int = 10) -> float:
    """Max relative error between the analytic gradient and central differences.

    Works on the objective of the groups as given (no filtering). When a ratio is
    within ``kink_tol`` of a clip boundary the logits are jittered with ``rng``
    and the check retried; without ``rng`` a ``KinkError`` is raised.
    """
    if p.n_params() > 10_000:
        raise PolicyError("too many parameters for central differences")
    p = p.copy()
    for _ in range(max_resamples + 1):
        if not _near_kink(p, groups, cfg, kink_tol):
            break
        if rng is None:
            raise KinkError("ratio on a clip boundary")
        for k in p.table:
            p.table[k] = p.table[k] + rng.normal(scale=1e-2, size=p.table[k].shape)
    else:
        raise KinkError("could not move off the clip boundaries")
    _, grads, _ = grpo_objective(p, groups, cfg)
    worst = 0.0
    for k in sorted(p.table):
        analytic = grads.get(k, np.zeros_like(p.table[k]))
        for j in range(len(p.table[k])):
            base = p.table[k][j]
            p.table[k][j] = base + h
            f_plus = grpo_objective(p, groups, cfg, with_grad=False)[0]
            p.table[k][j] = base - h
            f_minus = grpo_objective(p, groups, cfg, with_grad=False)[0]
            p.table[k][j] = base
            fd = (f_plus - f_minus) / (2 * h)
            worst = max(worst, abs(analytic[j] - fd) / (abs(fd) + 1e-8))
    return worst


# -- training loop -----------------------------------------------------------------------------

def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(x) for x in parts]).generate_state(1)[0])


@dataclass
class IterationResult:
    iteration: int
    metrics: StepMetrics
    groups: list[GroupBatch]
    task_rewards: dict[str, float]


class GRPOTrainer:
    """Rollout/update loop: G trajectories per group share an environment seed."""

    def __init__(self, composition: TaskComposition, cfg: TrainerConfig = TrainerConfig(),
                 params: PolicyParams | None = None, opponents: OpponentSuite | None = None,
                 seed: int = 0, warmup_composition: TaskComposition | None = None,
                 format_penalty: float = -0.1, draw_reward: float = 0.5):
        self.composition = composition
        self.warmup_composition = warmup_composition
        self.cfg = cfg
        self.params = params if params is not None else PolicyParams()
        self.opponents = opponents if opponents is not None else OpponentSuite()
        self.seed = seed
        self.format_penalty = format_penalty
        self.draw_reward = draw_reward
        self.optimizer = Adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        self.iteration = 0

    def composition_at(self, iteration: int) -> TaskComposition:
        if self.warmup_composition is not None and iteration < self.cfg.warmup_iterations:
            return self.warmup_composition
        return self.composition

    def collect(self, iteration: int) -> list[GroupBatch]:
        snapshot = TabularSoftmaxPolicy(self.params)
        comp = self.composition_at(iteration)
        groups = []
        for g in range(self.cfg.groups_per_iteration):
            env_seed = derive_seed(self.seed, iteration, g)
            trajs = [
                run_episode(comp, snapshot, self.opponents, env_seed,
                            sample_seed=derive_seed(env_seed, i, 7),
                            format_penalty=self.format_penalty, draw_reward=self.draw_reward)
                for i in range(self.cfg.group_size)
            ]
            groups.append(GroupBatch.from_trajectories(trajs))
        return groups

    def step(self) -> IterationResult:
        it = self.iteration
        groups = self.collect(it)
        metrics = None
        for _ in range(self.cfg.update_epochs):
            self.params, m = train_step(self.params, groups, self.cfg, self.optimizer)
            metrics = metrics or m
        sums: dict[str, list[float]] = {}
        for g in groups:
            for t in g.trajectories:
                for task, r in t.sub_rewards.items():
                    sums.setdefault(task, []).append(r)
        self.iteration += 1
        return IterationResult(it, metrics, groups, {k: float(np.mean(v)) for k, v in sums.items()})

    def run(self, iterations: int | None = None,
            on_iteration: Callable[[IterationResult], None] | None = None) -> list[IterationResult]:
        results = []
        for _ in range(iterations if iterations is not None else self.cfg.iterations):
            res = self.step()
            if on_iteration is not None:
                on_iteration(res)
            res.groups = []  # drop rollouts once reported
            results.append(res)
        return results
