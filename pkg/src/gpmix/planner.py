"""Receding-horizon action selection with the cross-entropy method.

Candidate action sequences are sampled from a diagonal Gaussian, rolled
out through the active expert's posterior-mean dynamics, scored by the
discounted reward sum, and the Gaussian is refit to the elite fraction.
Rollouts propagate the mean only, which keeps every candidate evaluation
deterministic; the whole population advances through the model together
as one batched prediction per step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-3


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 20
    popsize: int = 200
    n_elites: int = 20
    iterations: int = 5
    action_low: np.ndarray = field(default_factory=lambda: np.array([-10.0]))
    action_high: np.ndarray = field(default_factory=lambda: np.array([10.0]))
    init_std: Optional[np.ndarray] = None
    discount: float = 1.0

    def __post_init__(self):
        low = np.atleast_1d(np.asarray(self.action_low, dtype=float))
        high = np.atleast_1d(np.asarray(self.action_high, dtype=float))
        object.__setattr__(self, "action_low", low)
        object.__setattr__(self, "action_high", high)
        if low.shape != high.shape or np.any(low >= high):
            raise ValueError("need action_low < action_high elementwise")
        std = self.init_std
        if std is None:
            std = (high - low) / 4.0
        else:
            std = np.broadcast_to(np.asarray(std, dtype=float), low.shape).copy()
            if np.any(std <= 0):
                raise ValueError("init_std must be positive")
        object.__setattr__(self, "init_std", std)
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not 1 <= self.n_elites <= self.popsize:
            raise ValueError("need 1 <= n_elites <= popsize")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")

    @property
    def action_dim(self) -> int:
        return self.action_low.shape[0]

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.action_low + self.action_high)


# Reward functions are vectorized: reward_fn(obs (..., c), action (..., d))
# -> (...).  The reward is evaluated at the state reached by each action.
RewardFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def rollout_returns(
    predictor,
    state: np.ndarray,
    actions: np.ndarray,
    reward_fn: RewardFn,
    discount: float = 1.0,
) -> np.ndarray:
    """Discounted returns of a population of action sequences (P, H, d).

    Every sequence advances by the posterior mean increment; a sequence
    whose state goes non-finite scores -inf.
    """
    actions = np.asarray(actions, dtype=float)
    if actions.ndim != 3:
        raise ValueError("actions must have shape (population, horizon, action_dim)")
    P, H, _ = actions.shape
    s = np.tile(np.asarray(state, dtype=float), (P, 1))
    total = np.zeros(P)
    alive = np.ones(P, dtype=bool)
    gamma = 1.0
    for h in range(H):
        u = actions[:, h, :]
        if alive.any():
            q = np.concatenate([s, u], axis=1)
            s = s + predictor.mean(q)
        bad = ~np.all(np.isfinite(s), axis=1)
        if bad.any():
            alive &= ~bad
            s[bad] = 0.0
        r = reward_fn(s, u)
        total += gamma * np.where(alive, r, 0.0)
        gamma *= discount
    total[~alive] = -np.inf
    return total


def rollout_return(
    predictor,
    state: np.ndarray,
    actions: np.ndarray,
    reward_fn: RewardFn,
    discount: float = 1.0,
) -> float:
    """Return of a single (H, d) action sequence."""
    return float(rollout_returns(predictor, state, np.asarray(actions)[None], reward_fn, discount)[0])


def cem_plan(
    predictor,
    state: np.ndarray,
    cfg: PlannerConfig,
    reward_fn: RewardFn,
    seed,
    init_mean: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, dict]:
    """One planning call: returns (first action, final mean sequence, info).

    The sampling distribution starts at ``init_mean`` (or the midpoint
    sequence) with the configured std; each iteration draws the population,
    clips it to the bounds, keeps the current mean as one candidate, and
    refits mean and std to the elites.  Deterministic given ``seed``.
    """
    H, d = cfg.horizon, cfg.action_dim
    if init_mean is None:
        mean = np.tile(cfg.midpoint, (H, 1))
    else:
        mean = np.clip(np.asarray(init_mean, dtype=float).reshape(H, d),
                       cfg.action_low, cfg.action_high)
    std = np.tile(cfg.init_std, (H, 1))
    info = {"failed": False, "mean_scores": []}
    rng = np.random.default_rng(seed)
    for _ in range(cfg.iterations):
        cand = mean + std * rng.standard_normal((cfg.popsize, H, d))
        np.clip(cand, cfg.action_low, cfg.action_high, out=cand)
        cand[0] = mean
        scores = rollout_returns(predictor, state, cand, reward_fn, cfg.discount)
        if np.all(np.isneginf(scores)):
            logger.warning("every CEM candidate diverged; returning midpoint action")
            info["failed"] = True
            return cfg.midpoint.copy(), np.tile(cfg.midpoint, (H, 1)), info
        info["mean_scores"].append(float(scores[0]))
        elite_idx = np.argsort(-scores, kind="stable")[: cfg.n_elites]
        elites = cand[elite_idx]
        mean = elites.mean(axis=0)
        std = np.maximum(elites.std(axis=0), STD_FLOOR)
    if cfg.iterations > 0:
        info["mean_scores"].append(
            float(rollout_returns(predictor, state, mean[None], reward_fn, cfg.discount)[0])
        )
    return mean[0].copy(), mean, info


class CEMPlanner:
    """Stateful wrapper: warm-starts each call by shifting the previous
    plan one step (repeating its last action) and derives per-call seeds
    deterministically from one root seed."""

    def __init__(self, cfg: PlannerConfig, reward_fn: RewardFn, seed: int = 0):
        self.cfg = cfg
        self.reward_fn = reward_fn
        self._seed_seq = np.random.SeedSequence(seed)
        self._prev_mean: Optional[np.ndarray] = None
        self.failures = 0

    def reset(self) -> None:
        """Drop the warm start (call at episode boundaries)."""
        self._prev_mean = None

    def plan(self, predictor, state: np.ndarray) -> np.ndarray:
        init_mean = None
        if self._prev_mean is not None:
            init_mean = np.vstack([self._prev_mean[1:], self._prev_mean[-1:]])
        action, final_mean, info = cem_plan(
            predictor, state, self.cfg, self.reward_fn, self._seed_seq.spawn(1)[0], init_mean
        )
        self._prev_mean = final_mean
        if info["failed"]:
            self.failures += 1
        return action
