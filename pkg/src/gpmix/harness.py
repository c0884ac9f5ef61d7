"""Experiment harness: configuration, the online loop, metrics and
persistence.

A run wires the pieces together: the first episode acts at random to seed
the first expert, after that every step plans with the most recently
assigned expert and feeds the observed transition back into the mixture.
Everything is reproducible from (config, seed): one master seed fans out
to the environment, the planner, the mixture's internal draws and the
warm-up policy.

Outputs per run directory: ``config.json``, ``steps.csv`` (or
``stream.csv`` for inference-only synthetic runs), ``episodes.csv``,
``transitions.csv`` (full-precision stream for replay), ``events.json``,
``checkpoint.npz`` and ``report.json``.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linear_sum_assignment

from gpmix.envs import cartpole as cp
from gpmix.envs.synthetic import SyntheticStreamConfig, synthetic_stream
from gpmix.gp import ExperienceTuple
from gpmix.mixture import MixtureConfig, MixtureState, ThetaInit
from gpmix.planner import CEMPlanner, PlannerConfig

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1


class CheckpointError(RuntimeError):
    """Checkpoint file is unreadable, corrupt or from another format."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class CartpoleEnvConfig:
    kind: str = "cartpole"
    dynamics: Tuple[Tuple[float, float], ...] = ((0.4, 0.5), (0.4, 0.7), (0.8, 0.5), (0.8, 0.7))
    episodes_per_dynamics: int = 3
    cycles: int = 1
    episode_length: int = 200
    cart_mass: float = 1.0
    gravity: float = 9.8
    force_limit: float = 10.0
    track_limit: float = 3.0
    dt: float = 0.04

    def schedule(self) -> cp.DynamicsSchedule:
        params = tuple(
            cp.CartpoleParams(
                pole_mass=m,
                pole_length=l,
                cart_mass=self.cart_mass,
                gravity=self.gravity,
                force_limit=self.force_limit,
                track_limit=self.track_limit,
                dt=self.dt,
            )
            for m, l in self.dynamics
        )
        return cp.DynamicsSchedule(
            params,
            episodes_per_dynamics=self.episodes_per_dynamics,
            cycles=self.cycles,
            episode_length=self.episode_length,
        )


@dataclass
class SyntheticEnvConfig:
    kind: str = "synthetic"
    maps: Tuple[Tuple[Tuple[float, ...], ...], ...] = (((2.0,),), ((-2.0,),))
    segment_lengths: Tuple[int, ...] = (60, 60)
    segment_maps: Optional[Tuple[int, ...]] = None
    noise_std: float = 0.01
    input_std: float = 1.0

    def stream_config(self, seed: int) -> SyntheticStreamConfig:
        return SyntheticStreamConfig(
            maps=tuple(np.asarray(a, dtype=float) for a in self.maps),
            segment_lengths=tuple(self.segment_lengths),
            segment_maps=None if self.segment_maps is None else tuple(self.segment_maps),
            noise_std=self.noise_std,
            input_std=self.input_std,
            seed=seed,
        )


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/out"
    environment: Union[CartpoleEnvConfig, SyntheticEnvConfig] = field(
        default_factory=CartpoleEnvConfig
    )
    mixture: MixtureConfig = field(default_factory=MixtureConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    warmup_episodes: int = 1
    checkpoint_every: int = 0  # 0: checkpoint only at the end

    # -- (de)serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        def clean(obj):
            if isinstance(obj, np.ndarray):
                return obj.tolist()
            if isinstance(obj, (np.floating, np.integer)):
                return obj.item()
            if isinstance(obj, dict):
                return {k: clean(v) for k, v in obj.items()}
            if isinstance(obj, (list, tuple)):
                return [clean(v) for v in obj]
            return obj

        return {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "environment": clean(dataclasses.asdict(self.environment)),
            "mixture": clean(dataclasses.asdict(self.mixture)),
            "planner": clean(dataclasses.asdict(self.planner)),
            "warmup_episodes": self.warmup_episodes,
            "checkpoint_every": self.checkpoint_every,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "RunConfig":
        env_d = dict(d["environment"])
        kind = env_d.get("kind", "cartpole")
        if kind == "cartpole":
            env_d["dynamics"] = tuple(tuple(x) for x in env_d["dynamics"])
            env = CartpoleEnvConfig(**env_d)
        elif kind == "synthetic":
            env_d["maps"] = tuple(tuple(tuple(r) for r in a) for a in env_d["maps"])
            env_d["segment_lengths"] = tuple(env_d["segment_lengths"])
            if env_d.get("segment_maps") is not None:
                env_d["segment_maps"] = tuple(env_d["segment_maps"])
            env = SyntheticEnvConfig(**env_d)
        else:
            raise ValueError(f"unknown environment kind {kind!r}")
        mix_d = dict(d["mixture"])
        mix_d["theta_init"] = ThetaInit(**mix_d["theta_init"])
        planner_d = dict(d["planner"])
        for key in ("action_low", "action_high", "init_std"):
            if planner_d.get(key) is not None:
                planner_d[key] = np.asarray(planner_d[key], dtype=float)
        return cls(
            seed=d["seed"],
            out_dir=d["out_dir"],
            environment=env,
            mixture=MixtureConfig(**mix_d),
            planner=PlannerConfig(**planner_d),
            warmup_episodes=d.get("warmup_episodes", 1),
            checkpoint_every=d.get("checkpoint_every", 0),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def default_cartpole_config(out_dir: str = "runs/cartpole", seed: int = 0) -> RunConfig:
    """Full-scale nonstationary cart-pole configuration."""
    return RunConfig(
        seed=seed,
        out_dir=out_dir,
        environment=CartpoleEnvConfig(),
        mixture=MixtureConfig(
            alpha=0.1,
            beta=1.0,
            epsilon=20.0,
            n_merge=15,
            n_distill=1500,
            m=1300,
            lr=0.1,
            steps_per_tick=10,
            theta_init=ThetaInit(output_scale=0.5, lengthscale=1.0, noise_std=0.001),
        ),
        planner=PlannerConfig(
            horizon=20,
            popsize=200,
            n_elites=20,
            iterations=5,
            action_low=np.array([-10.0]),
            action_high=np.array([10.0]),
            discount=1.0,
        ),
    )


def desk_cartpole_config(out_dir: str = "runs/cartpole_desk", seed: int = 0) -> RunConfig:
    """Scaled-down cart-pole configuration for desk-size experiments."""
    cfg = default_cartpole_config(out_dir=out_dir, seed=seed)
    cfg.environment = CartpoleEnvConfig(episodes_per_dynamics=2, cycles=2)
    cfg.mixture = dataclasses.replace(
        cfg.mixture, n_distill=400, m=300, distill_trials=8
    )
    cfg.planner = dataclasses.replace(cfg.planner, popsize=100)
    return cfg


def synthetic_acceptance_config(out_dir: str = "runs/synthetic", seed: int = 0) -> RunConfig:
    """Two linear regimes in an A/B/A pattern with a partial-overlap input
    direction; used by the inference-only acceptance checks."""
    return RunConfig(
        seed=seed,
        out_dir=out_dir,
        environment=SyntheticEnvConfig(
            maps=(((2.0, 0.0),), ((-2.0, 0.8),)),
            segment_lengths=(60, 60, 60),
            segment_maps=(0, 1, 0),
            noise_std=0.15,
        ),
        mixture=MixtureConfig(
            alpha=0.02,
            beta=1.0,
            epsilon=80.0,
            n_merge=5,
            n_distill=1000,
            m=100,
            lr=0.05,
            steps_per_tick=5,
            theta_init=ThetaInit(output_scale=2.0, lengthscale=2.0, noise_std=0.15),
            global_refresh_every=1000,
        ),
    )


# ---------------------------------------------------------------------------
# the agent
# ---------------------------------------------------------------------------


class MixtureAgent:
    """Glue between planner and mixture.

    Acts at random during the warm-up episodes (and whenever no expert
    exists yet), otherwise plans with the expert assigned at the previous
    step.  Feeding transitions to the mixture is the only state mutation.
    """

    def __init__(
        self,
        mixture: MixtureState,
        planner: Optional[CEMPlanner],
        action_low: np.ndarray,
        action_high: np.ndarray,
        warmup_episodes: int,
        warmup_rng: np.random.Generator,
    ):
        self.mixture = mixture
        self.planner = planner
        self.action_low = np.asarray(action_low, dtype=float)
        self.action_high = np.asarray(action_high, dtype=float)
        self.warmup_episodes = warmup_episodes
        self.rng = warmup_rng
        self.episode = 0

    def begin_episode(self, episode: int) -> None:
        self.episode = episode
        if self.planner is not None:
            self.planner.reset()

    def _active_expert(self):
        z = self.mixture.stats.z_prev
        if z is None or z not in self.mixture.experts:
            return None
        return self.mixture.experts[z]

    def act(self, obs: np.ndarray) -> np.ndarray:
        expert = self._active_expert()
        if self.episode < self.warmup_episodes or expert is None or self.planner is None:
            return self.rng.uniform(self.action_low, self.action_high)
        return self.planner.plan(expert.predictor(), obs)

    def observe(self, obs: np.ndarray, action: np.ndarray, next_obs: np.ndarray) -> dict:
        point = ExperienceTuple(np.concatenate([obs, action]), next_obs - obs)
        z = self.mixture.observe(point)
        return {"assignment": z, "k_live": self.mixture.K}


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    total_steps: int
    switch_events: int
    expert_count_final: int
    expert_count_max: int
    assignment_accuracy: Optional[float] = None
    post_burn_in_accuracy: Optional[float] = None
    detection_delays: Optional[List[int]] = None
    mean_detection_delay: Optional[float] = None
    per_dynamics_rewards: Optional[Dict[str, dict]] = None
    per_cycle_rewards: Optional[Dict[str, dict]] = None
    episode_returns: Optional[List[float]] = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _best_permutation_accuracy(truth: np.ndarray, pred: np.ndarray) -> float:
    """Fraction matched under the best one-to-one label mapping."""
    if truth.size == 0:
        return float("nan")
    t_vals, t_inv = np.unique(truth, return_inverse=True)
    p_vals, p_inv = np.unique(pred, return_inverse=True)
    n = max(t_vals.size, p_vals.size)
    C = np.zeros((n, n))
    np.add.at(C, (t_inv, p_inv), 1.0)
    rows, cols = linear_sum_assignment(-C)
    return float(C[rows, cols].sum() / truth.size)


def _truth_switches(truth: np.ndarray) -> List[int]:
    return [int(t) for t in np.flatnonzero(truth[1:] != truth[:-1]) + 1]


def _stable_pred_switches(pred: np.ndarray, stable_len: int) -> List[int]:
    """Times where the prediction changes to a value it then keeps for at
    least ``stable_len`` steps (or to the end of the log)."""
    out = []
    T = pred.size
    for t in np.flatnonzero(pred[1:] != pred[:-1]) + 1:
        window = pred[t : min(t + stable_len, T)]
        if np.all(window == pred[t]):
            out.append(int(t))
    return out


def detection_delays(truth: np.ndarray, pred: np.ndarray, stable_len: int) -> List[int]:
    """For each truth switch, steps until the first stable predicted switch
    at or after it.  Switches never answered by a stable change are
    omitted."""
    stable = _stable_pred_switches(pred, stable_len)
    delays = []
    for s in _truth_switches(truth):
        later = [t for t in stable if t >= s]
        if later:
            delays.append(later[0] - s)
    return delays


def _post_burn_in_mask(truth: np.ndarray, n_merge: int) -> np.ndarray:
    """Drop the first n_merge steps of each truth segment."""
    mask = np.ones(truth.size, dtype=bool)
    starts = [0] + _truth_switches(truth)
    for s in starts:
        mask[s : s + n_merge] = False
    return mask


def evaluate_assignments(
    truth: np.ndarray,
    pred: np.ndarray,
    k_live: np.ndarray,
    n_merge: int,
    episodes: Optional[List[dict]] = None,
) -> MetricsReport:
    """Pure function of logged columns; the single metrics entry point."""
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    switch_events = int(np.sum(pred[1:] != pred[:-1])) if pred.size > 1 else 0
    report = MetricsReport(
        total_steps=int(pred.size),
        switch_events=switch_events,
        expert_count_final=int(k_live[-1]) if len(k_live) else 0,
        expert_count_max=int(np.max(k_live)) if len(k_live) else 0,
    )
    has_truth = truth.size == pred.size and truth.size > 0 and np.all(truth >= 0)
    if has_truth:
        report.assignment_accuracy = _best_permutation_accuracy(truth, pred)
        mask = _post_burn_in_mask(truth, n_merge)
        if mask.any():
            report.post_burn_in_accuracy = _best_permutation_accuracy(truth[mask], pred[mask])
        delays = detection_delays(truth, pred, n_merge)
        report.detection_delays = delays
        report.mean_detection_delay = float(np.mean(delays)) if delays else None
    if episodes:
        report.episode_returns = [e["total_reward"] for e in episodes]
        per_dyn: Dict[str, list] = {}
        per_cycle: Dict[str, list] = {}
        for e in episodes:
            per_dyn.setdefault(str(e["truth_label"]), []).append(e["total_reward"])
            key = f"{e['cycle']}:{e['truth_label']}"
            per_cycle.setdefault(key, []).append(e["total_reward"])
        report.per_dynamics_rewards = {
            k: {"mean": float(np.mean(v)), "std": float(np.std(v)), "n": len(v)}
            for k, v in per_dyn.items()
        }
        report.per_cycle_rewards = {
            k: {"mean": float(np.mean(v)), "n": len(v)} for k, v in per_cycle.items()
        }
    return report


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def checkpoint_save(path, mixture: MixtureState, config: RunConfig) -> None:
    """One self-describing npz archive: config, every expert's parameters
    (both as logs, which restore bit-exactly, and as readable positive
    values), datasets, transition counts and the internal RNG state."""
    arrays = mixture.state_arrays()
    arrays["format_version"] = np.int64(CHECKPOINT_FORMAT)
    arrays["config_json"] = np.bytes_(json.dumps(config.to_json_dict()).encode())
    arrays["rng_state_json"] = np.bytes_(json.dumps(mixture.rng.bit_generator.state).encode())
    np.savez(path, **arrays)


def checkpoint_load(path) -> Tuple[MixtureState, RunConfig]:
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError, zipfile.BadZipFile, KeyError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "format_version" not in arrays:
        raise CheckpointError("not a checkpoint archive: missing format_version")
    version = int(arrays["format_version"])
    if version != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {version}")
    try:
        config = RunConfig.from_json_dict(json.loads(bytes(arrays["config_json"]).decode()))
        rng_state = json.loads(bytes(arrays["rng_state_json"]).decode())
        mixture = MixtureState.from_state_arrays(
            config.mixture, arrays, np.random.default_rng(0)
        )
        mixture.rng.bit_generator.state = rng_state
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    return mixture, config


def replay(mixture: MixtureState, transitions: Sequence[ExperienceTuple]) -> List[int]:
    """Feed recorded transitions through a (restored) mixture."""
    return [mixture.observe(pt) for pt in transitions]


# ---------------------------------------------------------------------------
# CSV plumbing
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    return repr(float(v))


STEP_COLUMNS = [
    "t", "episode", "x", "xdot", "costheta", "sintheta", "thetadot",
    "u", "reward", "truth_label", "predicted_assignment", "K_live",
]


def load_steps_csv(path) -> dict:
    rows = list(csv.DictReader(open(path, newline="")))
    out = {
        "t": np.array([int(r["t"]) for r in rows]),
        "truth_label": np.array([int(r["truth_label"]) for r in rows]),
        "predicted_assignment": np.array([int(r["predicted_assignment"]) for r in rows]),
        "k_live": np.array([int(r["K_live"]) for r in rows]),
    }
    if rows and "reward" in rows[0]:
        out["reward"] = np.array([float(r["reward"]) for r in rows])
    if rows and "episode" in rows[0]:
        out["episode"] = np.array([int(r["episode"]) for r in rows])
    return out


def load_episodes_csv(path) -> List[dict]:
    rows = list(csv.DictReader(open(path, newline="")))
    return [
        {
            "episode": int(r["episode"]),
            "cycle": int(r["cycle"]),
            "truth_label": int(r["truth_label"]),
            "steps": int(r["steps"]),
            "total_reward": float(r["total_reward"]),
            "early_stop": r["early_stop"] == "True",
        }
        for r in rows
    ]


def load_transitions_csv(path) -> Tuple[List[ExperienceTuple], List[int], List[int]]:
    """Returns (points, recorded assignments, step indices)."""
    rows = list(csv.DictReader(open(path, newline="")))
    points, assigns, ts = [], [], []
    if not rows:
        return points, assigns, ts
    d_in = len([k for k in rows[0] if k.startswith("x_")])
    d_out = len([k for k in rows[0] if k.startswith("y_")])
    for r in rows:
        x = np.array([float(r[f"x_{j}"]) for j in range(d_in)])
        y = np.array([float(r[f"y_{j}"]) for j in range(d_out)])
        label = int(r["truth_label"]) if "truth_label" in r else None
        points.append(ExperienceTuple(x, y, label))
        assigns.append(int(r["assignment"]))
        ts.append(int(r["t"]))
    return points, assigns, ts


# ---------------------------------------------------------------------------
# the run loop
# ---------------------------------------------------------------------------


def run(config: RunConfig) -> MetricsReport:
    """Execute a full run and write all artifacts to ``config.out_dir``.

    Aborts propagate after flushing partial logs; the CSV sinks write
    through on every row.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    master = np.random.SeedSequence(config.seed)
    env_seed, planner_seed, mixture_seed, warmup_seed, stream_seed = master.spawn(5)
    mixture = MixtureState(config.mixture, rng=np.random.default_rng(mixture_seed))

    if config.environment.kind == "synthetic":
        report = _run_synthetic(config, mixture, stream_seed, out)
    else:
        report = _run_cartpole(config, mixture, env_seed, planner_seed, warmup_seed, out)

    checkpoint_save(out / "checkpoint.npz", mixture, config)
    (out / "events.json").write_text(json.dumps(mixture.events, indent=1, default=str) + "\n")
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return report


def _run_synthetic(config, mixture, stream_seed, out: Path) -> MetricsReport:
    stream_cfg = config.environment.stream_config(
        seed=int(np.random.default_rng(stream_seed).integers(2**31 - 1))
    )
    d_in = stream_cfg.input_dim
    d_out = stream_cfg.output_dim
    header = (
        ["t"]
        + [f"x_{j}" for j in range(d_in)]
        + [f"y_{j}" for j in range(d_out)]
        + ["truth_label", "assignment", "K_live"]
    )
    truth, pred, k_live = [], [], []
    ckpt_every = config.checkpoint_every
    with open(out / "stream.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t, pt in enumerate(synthetic_stream(stream_cfg)):
            z = mixture.observe(pt)
            writer.writerow(
                [t]
                + [_fmt(v) for v in pt.x]
                + [_fmt(v) for v in pt.y]
                + [pt.label, z, mixture.K]
            )
            truth.append(pt.label)
            pred.append(z)
            k_live.append(mixture.K)
            if ckpt_every and (t + 1) % ckpt_every == 0:
                checkpoint_save(out / f"checkpoint_{t + 1:06d}.npz", mixture, config)
    # stream.csv doubles as the replay source for synthetic runs
    _write_transitions_alias(out / "stream.csv", out / "transitions.csv", d_in, d_out)
    return evaluate_assignments(
        np.array(truth), np.array(pred), np.array(k_live), config.mixture.n_merge
    )


def _write_transitions_alias(src: Path, dst: Path, d_in: int, d_out: int) -> None:
    rows = list(csv.DictReader(open(src, newline="")))
    with open(dst, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["t"] + [f"x_{j}" for j in range(d_in)] + [f"y_{j}" for j in range(d_out)]
            + ["truth_label", "assignment"]
        )
        for r in rows:
            writer.writerow(
                [r["t"]]
                + [r[f"x_{j}"] for j in range(d_in)]
                + [r[f"y_{j}"] for j in range(d_out)]
                + [r["truth_label"], r["assignment"]]
            )


def _run_cartpole(config, mixture, env_seed, planner_seed, warmup_seed, out: Path) -> MetricsReport:
    env_cfg = config.environment
    schedule = env_cfg.schedule()
    planner = CEMPlanner(
        config.planner, cp.reward, seed=int(np.random.default_rng(planner_seed).integers(2**31 - 1))
    )
    agent = MixtureAgent(
        mixture,
        planner,
        config.planner.action_low,
        config.planner.action_high,
        config.warmup_episodes,
        np.random.default_rng(warmup_seed),
    )
    steps_fh = open(out / "steps.csv", "w", newline="")
    trans_fh = open(out / "transitions.csv", "w", newline="")
    eps_fh = open(out / "episodes.csv", "w", newline="")
    steps_writer = csv.writer(steps_fh)
    steps_writer.writerow(STEP_COLUMNS)
    trans_writer = csv.writer(trans_fh)
    trans_writer.writerow(
        ["t"] + [f"x_{j}" for j in range(6)] + [f"y_{j}" for j in range(5)]
        + ["truth_label", "assignment"]
    )
    eps_writer = csv.writer(eps_fh)
    eps_writer.writerow(["episode", "cycle", "truth_label", "steps", "total_reward", "early_stop"])

    ckpt_every = config.checkpoint_every

    def step_sink(rec: cp.StepRecord, next_obs: np.ndarray) -> None:
        steps_writer.writerow(
            [rec.t, rec.episode]
            + [_fmt(v) for v in rec.obs]
            + [_fmt(rec.action), _fmt(rec.reward), rec.truth_label, rec.assignment, rec.k_live]
        )
        trans_writer.writerow(
            [rec.t]
            + [_fmt(v) for v in rec.obs] + [_fmt(rec.action)]
            + [_fmt(v) for v in (next_obs - rec.obs)]
            + [rec.truth_label, rec.assignment]
        )
        steps_fh.flush()
        trans_fh.flush()
        if ckpt_every and (rec.t + 1) % ckpt_every == 0:
            checkpoint_save(out / f"checkpoint_{rec.t + 1:06d}.npz", mixture, config)

    def episode_sink(rec: cp.EpisodeRecord) -> None:
        eps_writer.writerow(
            [rec.episode, rec.cycle, rec.truth_label, rec.steps, _fmt(rec.total_reward),
             rec.early_stop]
        )
        eps_fh.flush()

    try:
        steps, episodes = cp.run_schedule(
            schedule,
            agent,
            seed=int(np.random.default_rng(env_seed).integers(2**31 - 1)),
            step_sink=step_sink,
            episode_sink=episode_sink,
        )
    finally:
        steps_fh.close()
        trans_fh.close()
        eps_fh.close()

    return evaluate_assignments(
        np.array([r.truth_label for r in steps]),
        np.array([r.assignment for r in steps]),
        np.array([r.k_live for r in steps]),
        config.mixture.n_merge,
        episodes=[dataclasses.asdict(e) for e in episodes],
    )


def evaluate_run_dir(out_dir) -> MetricsReport:
    """Recompute the metrics report from the logs in a run directory."""
    out = Path(out_dir)
    config = RunConfig.load(out / "config.json")
    episodes = None
    if (out / "steps.csv").exists():
        cols = load_steps_csv(out / "steps.csv")
        if (out / "episodes.csv").exists():
            episodes = load_episodes_csv(out / "episodes.csv")
    elif (out / "stream.csv").exists():
        pts, assigns, ts = load_transitions_csv(out / "transitions.csv")
        cols = {
            "truth_label": np.array([p.label for p in pts]),
            "predicted_assignment": np.array(assigns),
            "k_live": np.zeros(len(assigns), dtype=int),
        }
        rep = evaluate_assignments(
            cols["truth_label"], cols["predicted_assignment"], cols["k_live"],
            config.mixture.n_merge,
        )
        report = json.loads((out / "report.json").read_text()) if (out / "report.json").exists() else None
        if report:
            rep.expert_count_final = report.get("expert_count_final", rep.expert_count_final)
            rep.expert_count_max = report.get("expert_count_max", rep.expert_count_max)
        return rep
    else:
        raise FileNotFoundError(f"no logs found in {out_dir}")
    return evaluate_assignments(
        cols["truth_label"],
        cols["predicted_assignment"],
        cols["k_live"],
        config.mixture.n_merge,
        episodes=episodes,
    )


def random_policy_returns(env_cfg: CartpoleEnvConfig, episodes: int, seed: int = 0) -> List[float]:
    """Baseline: uniform random actions on the same schedule."""

    class RandomOnly:
        def __init__(self, rng):
            self.rng = rng

        def begin_episode(self, episode):
            pass

        def act(self, obs):
            return self.rng.uniform(-env_cfg.force_limit, env_cfg.force_limit, size=1)

        def observe(self, obs, action, next_obs):
            return {"assignment": -1, "k_live": 0}

    schedule = env_cfg.schedule()
    agent = RandomOnly(np.random.default_rng(seed))
    steps, eps = cp.run_schedule(schedule, agent, seed=seed)
    return [e.total_reward for e in eps][:episodes]
