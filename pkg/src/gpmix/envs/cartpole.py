"""Cart-pole swing-up with a cycling (pole mass, pole length) schedule.

Standard frictionless cart-pole equations of motion, theta measured from
upright, integrated with semi-implicit Euler.  The observation is
(x, x_dot, cos(theta), sin(theta), theta_dot); the action is a horizontal
force on the cart, clipped to the force limit.  Dynamics switch between
episodes according to the schedule with no signal to the agent; the true
dynamics index is recorded in the logs only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Protocol, Tuple

import numpy as np

OBS_DIM = 5
ACTION_DIM = 1


class SimulationError(RuntimeError):
    """The integrator produced a non-finite state."""


@dataclass(frozen=True)
class CartpoleParams:
    pole_mass: float
    pole_length: float
    cart_mass: float = 1.0
    gravity: float = 9.8
    force_limit: float = 10.0
    track_limit: float = 3.0
    dt: float = 0.04

    def __post_init__(self):
        for name in ("pole_mass", "pole_length", "cart_mass", "gravity",
                     "force_limit", "track_limit", "dt"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class CartpoleState:
    x: float
    x_dot: float
    theta: float  # 0 is upright
    theta_dot: float

    def observation(self) -> np.ndarray:
        return np.array(
            [self.x, self.x_dot, math.cos(self.theta), math.sin(self.theta), self.theta_dot]
        )


def _wrap_angle(theta: float) -> float:
    """Wrap into (-pi, pi]."""
    return math.pi - (math.pi - theta) % (2.0 * math.pi)


def _accelerations(p: CartpoleParams, s: CartpoleState, force: float) -> Tuple[float, float]:
    sin = math.sin(s.theta)
    cos = math.cos(s.theta)
    total = p.cart_mass + p.pole_mass
    tmp = (force + p.pole_mass * p.pole_length * s.theta_dot**2 * sin) / total
    theta_acc = (p.gravity * sin - cos * tmp) / (
        p.pole_length * (4.0 / 3.0 - p.pole_mass * cos**2 / total)
    )
    x_acc = tmp - p.pole_mass * p.pole_length * theta_acc * cos / total
    return x_acc, theta_acc


def cartpole_step(p: CartpoleParams, s: CartpoleState, force: float) -> CartpoleState:
    """One semi-implicit Euler step; the force is clipped to the limit."""
    f = min(max(float(force), -p.force_limit), p.force_limit)
    x_acc, theta_acc = _accelerations(p, s, f)
    x_dot = s.x_dot + x_acc * p.dt
    theta_dot = s.theta_dot + theta_acc * p.dt
    x = s.x + x_dot * p.dt
    theta = _wrap_angle(s.theta + theta_dot * p.dt)
    out = CartpoleState(x, x_dot, theta, theta_dot)
    if not all(math.isfinite(v) for v in (x, x_dot, theta, theta_dot)):
        raise SimulationError("cart-pole state became non-finite")
    return out


def mechanical_energy(p: CartpoleParams, s: CartpoleState) -> float:
    """Total mechanical energy of the frictionless system (rod pole)."""
    m, l, M = p.pole_mass, p.pole_length, p.cart_mass
    kinetic = (
        0.5 * (M + m) * s.x_dot**2
        + m * l * s.x_dot * s.theta_dot * math.cos(s.theta)
        + (2.0 / 3.0) * m * l**2 * s.theta_dot**2
    )
    potential = m * p.gravity * l * math.cos(s.theta)
    return kinetic + potential


def reward(obs, action):
    """cos(theta) minus small penalties on cart offset and force.

    Vectorized over leading axes: obs (..., 5), action (..., 1) or scalar.
    The maximum, 1.0, is attained upright at the center with zero force.
    """
    obs = np.asarray(obs, dtype=float)
    u = np.asarray(action, dtype=float)
    if u.ndim == obs.ndim:
        u = u[..., 0]
    return obs[..., 2] - 0.01 * obs[..., 0] ** 2 - 0.001 * u**2


def default_dynamics(**kwargs) -> Tuple[CartpoleParams, ...]:
    """The four (pole mass, pole length) combinations cycled by default."""
    combos = [(0.4, 0.5), (0.4, 0.7), (0.8, 0.5), (0.8, 0.7)]
    return tuple(CartpoleParams(m, l, **kwargs) for m, l in combos)


def initial_state(rng: np.random.Generator) -> CartpoleState:
    """Hanging start with +-0.05 uniform noise on every coordinate."""
    n = rng.uniform(-0.05, 0.05, size=4)
    return CartpoleState(n[0], n[1], _wrap_angle(math.pi + n[2]), n[3])


@dataclass(frozen=True)
class DynamicsSchedule:
    """Cycle through the dynamics, several episodes each, with the true
    dynamics index exposed only to the log."""

    dynamics: Tuple[CartpoleParams, ...]
    episodes_per_dynamics: int = 3
    cycles: int = 1
    episode_length: int = 200

    def __post_init__(self):
        if self.episodes_per_dynamics < 1 or self.cycles < 1 or self.episode_length < 1:
            raise ValueError("schedule counts must be positive")
        if not self.dynamics:
            raise ValueError("schedule needs at least one dynamics")

    @property
    def total_episodes(self) -> int:
        return len(self.dynamics) * self.episodes_per_dynamics * self.cycles

    def episodes(self) -> Iterable[Tuple[int, int, int, CartpoleParams]]:
        """Yield (episode index, cycle, dynamics index, params)."""
        ep = 0
        for cycle in range(self.cycles):
            for d, params in enumerate(self.dynamics):
                for _ in range(self.episodes_per_dynamics):
                    yield ep, cycle, d, params
                    ep += 1


class Agent(Protocol):
    """What the schedule runner needs from an agent.  The truth label never
    crosses this interface."""

    def begin_episode(self, episode: int) -> None: ...

    def act(self, obs: np.ndarray) -> np.ndarray: ...

    def observe(self, obs: np.ndarray, action: np.ndarray, next_obs: np.ndarray) -> dict: ...


@dataclass
class StepRecord:
    t: int
    episode: int
    obs: np.ndarray
    action: float
    reward: float
    truth_label: int
    assignment: int
    k_live: int


@dataclass
class EpisodeRecord:
    episode: int
    cycle: int
    truth_label: int
    steps: int
    total_reward: float
    early_stop: bool


def run_schedule(
    schedule: DynamicsSchedule,
    agent: Agent,
    seed: int = 0,
    step_sink: Optional[Callable[[StepRecord, np.ndarray], None]] = None,
    episode_sink: Optional[Callable[[EpisodeRecord], None]] = None,
) -> Tuple[List[StepRecord], List[EpisodeRecord]]:
    """Run the full schedule, logging every step.

    ``step_sink(record, next_obs)`` is called after each transition so the
    caller can flush logs incrementally; partial logs therefore survive an
    agent failure.  Episodes end early when the cart leaves the track.
    """
    rng = np.random.default_rng(seed)
    steps: List[StepRecord] = []
    episodes: List[EpisodeRecord] = []
    t = 0
    for ep, cycle, dyn_index, params in schedule.episodes():
        agent.begin_episode(ep)
        state = initial_state(rng)
        obs = state.observation()
        total = 0.0
        n_steps = 0
        early = False
        for _ in range(schedule.episode_length):
            action = np.atleast_1d(np.asarray(agent.act(obs), dtype=float))
            state = cartpole_step(params, state, float(action[0]))
            next_obs = state.observation()
            r = float(reward(next_obs, action))
            info = agent.observe(obs, action, next_obs)
            rec = StepRecord(
                t=t,
                episode=ep,
                obs=obs,
                action=float(action[0]),
                reward=r,
                truth_label=dyn_index,
                assignment=int(info.get("assignment", -1)),
                k_live=int(info.get("k_live", 0)),
            )
            steps.append(rec)
            if step_sink is not None:
                step_sink(rec, next_obs)
            total += r
            n_steps += 1
            t += 1
            obs = next_obs
            if abs(state.x) > params.track_limit:
                early = True
                break
        ep_rec = EpisodeRecord(
            episode=ep,
            cycle=cycle,
            truth_label=dyn_index,
            steps=n_steps,
            total_reward=total,
            early_stop=early,
        )
        episodes.append(ep_rec)
        if episode_sink is not None:
            episode_sink(ep_rec)
    return steps, episodes
