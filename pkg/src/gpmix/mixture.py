"""Online mixture of GP dynamics experts.

One expert per discovered dynamics regime.  Each streamed observation is
assigned to the expert (or to a brand-new one) maximizing the posterior
that combines a Markovian transition prior with the experts' predictive
likelihoods; the winning expert absorbs the point and takes a few
stochastic gradient steps on its kernel hyperparameters.  Experts that
end their burn-in too close to an existing expert are merged into it, and
experts abandoned while still small are pruned.  Expert datasets are
capped by bound-guided distillation.

The state is single-writer: only :meth:`MixtureState.observe` mutates it.
Between observations, read-only predictors of individual experts may be
shared with concurrent planner evaluations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from gpmix import gp
from gpmix.distill import apply_distillation, select_inducing
from gpmix.gp import (
    Dataset,
    ExperienceTuple,
    GPPredictor,
    KernelParams,
    NumericalDegeneracyError,
    PosteriorCache,
)

logger = logging.getLogger(__name__)

VAR_FLOOR = 1e-18


@dataclass(frozen=True)
class ThetaInit:
    """Scalar seeds for a fresh expert's kernel, expanded once the stream's
    dimensions are known."""

    output_scale: float = 0.5
    lengthscale: float = 1.0
    noise_std: float = 0.001

    def expand(self, input_dim: int, output_dim: int) -> KernelParams:
        return KernelParams.constant(
            self.output_scale, self.lengthscale, self.noise_std, input_dim, output_dim
        )


@dataclass
class MixtureConfig:
    """Knobs of the online mixture.

    alpha is the mass the assignment prior gives to spawning a new expert,
    beta the extra self-transition mass, epsilon the merge threshold on
    the predictive KL distance, n_merge the burn-in length, n_distill the
    dataset size that triggers distillation down to m rows.
    """

    alpha: float = 0.1
    beta: float = 1.0
    epsilon: float = 20.0
    n_merge: int = 15
    n_distill: int = 1500
    m: int = 1300
    lr: float = 0.1
    steps_per_tick: int = 10
    theta_init: ThetaInit = field(default_factory=ThetaInit)
    k_max: int = 16
    prior_mode: str = "transition"
    merge_prune: bool = True
    # cost bounds; the paper-level behaviour does not depend on these
    update_batch: int = 128
    distill_trials: int = 16
    global_refresh_every: int = 200
    reservoir_cap: int = 2000
    global_fit_rows: int = 256
    global_steps: Optional[int] = None

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.n_merge < 1:
            raise ValueError("n_merge must be at least 1")
        if not self.m < self.n_distill:
            raise ValueError("m must be smaller than n_distill")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.prior_mode not in ("transition", "dp"):
            raise ValueError("prior_mode must be 'transition' or 'dp'")


@dataclass
class Expert:
    """One GP dynamics model: stable id, kernel, owned data and cache."""

    id: int
    params: KernelParams
    data: Dataset
    burn_in: bool = True
    cache: PosteriorCache = field(default_factory=PosteriorCache)

    @property
    def count(self) -> int:
        return self.data.n

    def predictor(self) -> GPPredictor:
        """Read-only predictive snapshot for planner rollouts."""
        self.cache.ensure(self.data, self.params)
        return GPPredictor(self.data, self.params, self.cache)

    def log_likelihood(self, point: ExperienceTuple) -> float:
        return gp.data_log_likelihood(self.data, self.params, point, self.cache)


class TransitionStats:
    """Hard-assignment transition counts and the previous assignment."""

    def __init__(self):
        self.counts: Dict[Tuple[int, int], int] = {}
        self.z_prev: Optional[int] = None

    def total(self) -> int:
        return sum(self.counts.values())

    def record(self, z_from: Optional[int], z_to: int) -> None:
        if z_from is not None:
            key = (z_from, z_to)
            self.counts[key] = self.counts.get(key, 0) + 1
        self.z_prev = z_to

    def count_from(self, z_from: int, z_to: int) -> int:
        return self.counts.get((z_from, z_to), 0)

    def fold(self, src: int, dst: int) -> None:
        """Redirect every reference of expert ``src`` to ``dst``."""
        folded: Dict[Tuple[int, int], int] = {}
        for (a, b), v in self.counts.items():
            key = (dst if a == src else a, dst if b == src else b)
            folded[key] = folded.get(key, 0) + v
        self.counts = folded
        if self.z_prev == src:
            self.z_prev = dst


class GlobalPrior:
    """Reservoir subsample of the whole stream plus kernel parameters
    fitted to it; fresh experts are seeded from these parameters."""

    def __init__(self, cap: int):
        self.cap = cap
        self.reservoir: Optional[Dataset] = None
        self.params: Optional[KernelParams] = None
        self.seen = 0

    def add(self, x, y, rng: np.random.Generator) -> None:
        if self.reservoir is None:
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            self.reservoir = Dataset.empty(x.size, y.size)
        self.seen += 1
        if self.reservoir.n < self.cap:
            self.reservoir.append(x, y)
        else:
            j = int(rng.integers(self.seen))
            if j < self.cap:
                self.reservoir.replace_row(j, x, y)

    def seed_params(self, theta_init: KernelParams) -> KernelParams:
        return self.params if self.params is not None else theta_init


# ---------------------------------------------------------------------------
# pure pieces of the assignment rule
# ---------------------------------------------------------------------------


def transition_prior(
    stats: TransitionStats,
    live_ids: List[int],
    cfg: MixtureConfig,
    cluster_sizes: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Assignment prior over the K live experts plus one new-expert slot.

    In the default mode, weight k gets the observed count of transitions
    from the previous assignment to expert k plus ``beta`` on the previous
    assignment itself; the new slot gets ``alpha``.  Before any assignment
    exists the prior is degenerate on the new slot.  In the ``dp`` ablation
    the per-expert weights are the cluster sizes instead, with no
    conditioning on the previous assignment and no stickiness.
    """
    K = len(live_ids)
    out = np.zeros(K + 1)
    if K == 0 or stats.z_prev is None:
        out[K] = 1.0
        return out
    if cfg.prior_mode == "dp":
        if cluster_sizes is None:
            raise ValueError("dp prior needs cluster sizes")
        out[:K] = cluster_sizes
    else:
        z_prev = stats.z_prev
        for k, eid in enumerate(live_ids):
            out[k] = stats.count_from(z_prev, eid) + (cfg.beta if eid == z_prev else 0.0)
    out[K] = cfg.alpha
    return out / out.sum()


def assignment_posterior(prior: np.ndarray, loglikes: np.ndarray) -> np.ndarray:
    """Normalized posterior over assignments, computed in the log domain.

    Entries with zero prior stay zero regardless of likelihood.  Internal
    callers may pass -inf log-likelihoods for experts skipped due to
    numerical degeneracy.
    """
    prior = np.asarray(prior, dtype=float)
    loglikes = np.asarray(loglikes, dtype=float)
    if prior.shape != loglikes.shape:
        raise ValueError("prior and likelihood vectors must have equal length")
    if np.any(prior < 0):
        raise ValueError("prior weights must be nonnegative")
    if np.any(np.isnan(loglikes)) or np.any(loglikes == np.inf):
        raise ValueError("log-likelihoods must not be NaN or +inf")
    total = prior.sum()
    if total <= 0:
        raise ValueError("prior has no mass")
    with np.errstate(divide="ignore"):
        logp = np.log(prior / total) + loglikes
    m = np.max(logp)
    if not np.isfinite(m):
        raise ValueError("no assignment has positive posterior mass")
    p = np.exp(logp - m)
    return p / p.sum()


def merge_distance(new: Expert, old: Expert) -> float:
    """Summed KL between the two experts' predictives at the new expert's
    own inputs, KL(old's predictive || new's predictive), accumulated over
    points and output dimensions.

    The predictives describe observable targets, so each variance includes
    that expert's observation noise; without it a near-interpolating
    expert's shrinking posterior variance makes the distance diverge for
    genuine duplicates.
    """
    if new.count == 0:
        raise ValueError("merge distance needs a nonempty new expert")
    queries = new.data.X
    mean_new, var_new = new.predictor().predict_batch(queries)
    mean_old, var_old = old.predictor().predict_batch(queries)
    var_new = np.maximum(var_new + new.params.noise_std**2, VAR_FLOOR)
    var_old = np.maximum(var_old + old.params.noise_std**2, VAR_FLOOR)
    dmu2 = (mean_old - mean_new) ** 2
    kl = 0.5 * (np.log(var_new / var_old) + (var_old + dmu2) / var_new - 1.0)
    return float(np.sum(kl))


# ---------------------------------------------------------------------------
# the mixture itself
# ---------------------------------------------------------------------------


class MixtureState:
    """All mutable state of the online mixture.

    ``observe`` is the single entry point of the main loop: it assigns the
    point, updates the winning expert, maintains transition statistics and
    runs the merge, prune and distillation checks.
    """

    def __init__(self, cfg: MixtureConfig, rng: Optional[np.random.Generator] = None):
        self.cfg = cfg
        self.experts: Dict[int, Expert] = {}
        self.stats = TransitionStats()
        self.global_prior = GlobalPrior(cfg.reservoir_cap)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.t = 0
        self.next_id = 0
        self.input_dim: Optional[int] = None
        self.output_dim: Optional[int] = None
        self.events: List[dict] = []
        self._theta_init: Optional[KernelParams] = None
        self._empty_data: Optional[Dataset] = None
        self._merges_this_step: List[Tuple[int, int]] = []

    # -- bookkeeping ---------------------------------------------------------

    @property
    def K(self) -> int:
        return len(self.experts)

    def live_ids(self) -> List[int]:
        return sorted(self.experts)

    def _event(self, kind: str, **detail) -> None:
        self.events.append({"t": self.t, "kind": kind, **detail})
        logger.debug("event %s at t=%d: %s", kind, self.t, detail)

    def _bind_dims(self, point: ExperienceTuple) -> None:
        x = np.asarray(point.x, dtype=float)
        y = np.asarray(point.y, dtype=float)
        if self.input_dim is None:
            self.input_dim = x.size
            self.output_dim = y.size
            self._theta_init = self.cfg.theta_init.expand(self.input_dim, self.output_dim)
            self._empty_data = Dataset.empty(self.input_dim, self.output_dim)
        elif x.size != self.input_dim or y.size != self.output_dim:
            raise ValueError("observation dimensions changed mid-stream")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("observation must be finite")

    def seed_params(self) -> KernelParams:
        """Parameters a brand-new expert starts from: the fitted global
        prior once available, the fixed initial point before that."""
        return self.global_prior.seed_params(self._theta_init)

    def transition_prior(self) -> np.ndarray:
        ids = self.live_ids()
        sizes = np.array([self.experts[i].count for i in ids], dtype=float)
        return transition_prior(self.stats, ids, self.cfg, cluster_sizes=sizes)

    # -- the online update ----------------------------------------------------

    def observe(self, point: ExperienceTuple) -> int:
        """Assign one streamed observation and run all maintenance.

        Returns the id of the expert that owns the point once the step's
        merge and prune checks have settled.
        """
        self._bind_dims(point)
        point = ExperienceTuple(
            np.asarray(point.x, dtype=float), np.asarray(point.y, dtype=float), point.label
        )
        cfg = self.cfg
        z_old = self.stats.z_prev
        ids = self.live_ids()
        prior = self.transition_prior()
        loglikes = np.empty(len(ids) + 1)
        for k, eid in enumerate(ids):
            e = self.experts[eid]
            try:
                loglikes[k] = e.log_likelihood(point)
            except NumericalDegeneracyError:
                loglikes[k] = -np.inf
                self._event("expert_skipped", expert=eid)
        seed = self.seed_params()
        loglikes[len(ids)] = gp.data_log_likelihood(self._empty_data, seed, point)

        rho = assignment_posterior(prior, loglikes)
        z_idx = self._argmax_sticky(rho, ids, z_old)

        if z_idx == len(ids):
            if self.K < cfg.k_max:
                winner = self._spawn(seed)
            else:
                self._event("cap_warning", k_max=cfg.k_max)
                existing = rho[: len(ids)]
                z_idx = self._argmax_sticky(existing, ids, z_old, allow_new=False)
                winner = self.experts[ids[z_idx]]
        else:
            winner = self.experts[ids[z_idx]]

        winner.data.append(point.x, point.y)
        if not cfg.merge_prune and winner.burn_in and winner.count >= cfg.n_merge:
            winner.burn_in = False
        self.global_prior.add(point.x, point.y, self.rng)
        winner.params = gp.stochastic_hyperparam_update(
            winner.data, winner.params, cfg.steps_per_tick, cfg.lr, cfg.update_batch, self.rng
        )
        self.stats.record(z_old, winner.id)
        self.t += 1

        final_id = winner.id
        self._merges_this_step = []
        if cfg.merge_prune:
            self._settle_burn_in()
            final_id = self._resolve(final_id)
            if z_old is not None and z_old in self.experts and z_old != final_id:
                self.prune_check(z_old, final_id)
                self._settle_burn_in()
                final_id = self._resolve(final_id)
        self._maybe_distill()
        if self.t % cfg.global_refresh_every == 0:
            self.refresh_global_prior()
        return final_id

    def _argmax_sticky(
        self,
        rho: np.ndarray,
        ids: List[int],
        z_old: Optional[int],
        allow_new: bool = True,
    ) -> int:
        """Argmax with deterministic ties: previous assignment first, then
        the lowest expert id, then the new slot."""
        best = float(np.max(rho))
        tied = [k for k, v in enumerate(rho) if v == best]
        if len(tied) == 1:
            return tied[0]
        if z_old is not None and z_old in ids:
            k_prev = ids.index(z_old)
            if k_prev in tied:
                return k_prev
        for k in tied:
            if k < len(ids):
                return k
        return tied[0]

    def _spawn(self, params: KernelParams) -> Expert:
        e = Expert(
            id=self.next_id,
            params=params,
            data=Dataset.empty(self.input_dim, self.output_dim),
        )
        self.experts[e.id] = e
        self.next_id += 1
        self._event("spawn", expert=e.id)
        return e

    def _resolve(self, eid: int) -> int:
        """Follow this step's merges to whichever expert now owns ``eid``'s
        points."""
        moved = True
        while moved and eid not in self.experts:
            moved = False
            for src, dst in self._merges_this_step:
                if src == eid:
                    eid = dst
                    moved = True
                    break
        return eid

    # -- merge / prune ---------------------------------------------------------

    def _merge_into(self, src_id: int, dst_id: int, reason: str) -> None:
        src = self.experts[src_id]
        dst = self.experts[dst_id]
        dst.data.append_rows(src.data.X, src.data.Y)
        self.stats.fold(src_id, dst_id)
        del self.experts[src_id]
        dst.params = gp.stochastic_hyperparam_update(
            dst.data, dst.params, self.cfg.steps_per_tick, self.cfg.lr,
            self.cfg.update_batch, self.rng,
        )
        self._merges_this_step.append((src_id, dst_id))
        self._event(reason, src=src_id, dst=dst_id)

    def _nearest_other(self, eid: int) -> Optional[Tuple[int, float]]:
        e = self.experts[eid]
        best = None
        for oid in self.live_ids():
            if oid == eid:
                continue
            try:
                d = merge_distance(e, self.experts[oid])
            except NumericalDegeneracyError:
                self._event("distance_skipped", src=eid, dst=oid)
                continue
            if best is None or d < best[1]:
                best = (oid, d)
        return best

    def end_burn_in_merge(self, expert_id: int) -> Optional[int]:
        """Close an expert's burn-in: merge it into the nearest expert if
        that distance is within the threshold, otherwise mark it mature.

        Returns the id it merged into, or None."""
        e = self.experts[expert_id]
        e.burn_in = False
        nearest = self._nearest_other(expert_id)
        if nearest is None:
            return None
        oid, d = nearest
        if d <= self.cfg.epsilon:
            self._merge_into(expert_id, oid, "merge")
            self.events[-1]["distance"] = d
            return oid
        self._event("mature", expert=expert_id, distance=d)
        return None

    def prune_check(self, z_old: int, z_new: int) -> Optional[int]:
        """After a switch away from ``z_old``: if it is still small, fold it
        into its most similar surviving expert.  Returns the target id."""
        if z_old == z_new or z_old not in self.experts or self.K < 2:
            return None
        e = self.experts[z_old]
        if e.count > self.cfg.n_merge:
            return None
        nearest = self._nearest_other(z_old)
        if nearest is None:
            return None
        oid, _ = nearest
        self._merge_into(z_old, oid, "prune")
        return oid

    def _settle_burn_in(self) -> None:
        """Merges can push a burn-in expert past n_merge without it ever
        hitting the count exactly; close those burn-ins too."""
        while True:
            ready = [
                i
                for i in self.live_ids()
                if self.experts[i].burn_in and self.experts[i].count >= self.cfg.n_merge
            ]
            if not ready:
                return
            self.end_burn_in_merge(ready[0])

    # -- distillation / global prior -------------------------------------------

    def _maybe_distill(self) -> None:
        for eid in self.live_ids():
            e = self.experts[eid]
            if e.count >= self.cfg.n_distill:
                seed = int(self.rng.integers(2**31 - 1))
                try:
                    sel = select_inducing(
                        e.data, e.params, self.cfg.m, self.cfg.distill_trials, seed
                    )
                except NumericalDegeneracyError:
                    self._event("distill_failed", expert=eid)
                    continue
                sel.expert_id = eid
                apply_distillation(e, sel)
                self._event("distill", expert=eid, bound=sel.bound, rows=int(self.cfg.m))

    def refresh_global_prior(self) -> None:
        """Refit the global seed parameters on (a capped subsample of) the
        reservoir; on numerical failure the previous parameters stay."""
        res = self.global_prior.reservoir
        if res is None or res.n == 0:
            return
        if res.n > self.cfg.global_fit_rows:
            idx = self.rng.choice(res.n, size=self.cfg.global_fit_rows, replace=False)
            fit_data = res.subset(idx)
        else:
            fit_data = res
        start = self.global_prior.params if self.global_prior.params is not None else self._theta_init
        steps = self.cfg.steps_per_tick if self.cfg.global_steps is None else self.cfg.global_steps
        try:
            self.global_prior.params = gp.hyperparam_update(
                fit_data, start, steps, self.cfg.lr
            )
        except NumericalDegeneracyError:
            self._event("global_refresh_failed")

    # -- checkpointing -----------------------------------------------------------

    def state_arrays(self) -> dict:
        """Flat dict of arrays/scalars capturing the full mixture state;
        inverse of :meth:`from_state_arrays`."""
        out = {
            "t": np.int64(self.t),
            "next_id": np.int64(self.next_id),
            "input_dim": np.int64(self.input_dim if self.input_dim is not None else -1),
            "output_dim": np.int64(self.output_dim if self.output_dim is not None else -1),
            "expert_ids": np.array(self.live_ids(), dtype=np.int64),
            "z_prev": np.int64(self.stats.z_prev if self.stats.z_prev is not None else -1),
            "global_seen": np.int64(self.global_prior.seen),
        }
        counts = np.array(
            [[a, b, v] for (a, b), v in sorted(self.stats.counts.items())], dtype=np.int64
        ).reshape(-1, 3)
        out["transition_counts"] = counts
        for eid in self.live_ids():
            e = self.experts[eid]
            p = f"expert{eid}_"
            out[p + "X"] = e.data.X
            out[p + "Y"] = e.data.Y
            out[p + "log_output_scale"] = e.params.log_output_scale
            out[p + "log_inv_lengthscales"] = e.params.log_inv_lengthscales
            out[p + "log_noise_std"] = e.params.log_noise_std
            out[p + "output_scale"] = e.params.output_scale
            out[p + "inv_lengthscales"] = e.params.inv_lengthscales
            out[p + "noise_std"] = e.params.noise_std
            out[p + "burn_in"] = np.bool_(e.burn_in)
        res = self.global_prior.reservoir
        if res is not None:
            out["reservoir_X"] = res.X
            out["reservoir_Y"] = res.Y
        if self.global_prior.params is not None:
            gpp = self.global_prior.params
            out["global_log_output_scale"] = gpp.log_output_scale
            out["global_log_inv_lengthscales"] = gpp.log_inv_lengthscales
            out["global_log_noise_std"] = gpp.log_noise_std
        return out

    @classmethod
    def from_state_arrays(
        cls, cfg: MixtureConfig, arrays: dict, rng: np.random.Generator
    ) -> "MixtureState":
        mix = cls(cfg, rng=rng)
        mix.t = int(arrays["t"])
        mix.next_id = int(arrays["next_id"])
        input_dim = int(arrays["input_dim"])
        output_dim = int(arrays["output_dim"])
        if input_dim >= 0:
            mix.input_dim = input_dim
            mix.output_dim = output_dim
            mix._theta_init = cfg.theta_init.expand(input_dim, output_dim)
            mix._empty_data = Dataset.empty(input_dim, output_dim)
        z_prev = int(arrays["z_prev"])
        mix.stats.z_prev = z_prev if z_prev >= 0 else None
        for a, b, v in np.asarray(arrays["transition_counts"]).reshape(-1, 3):
            mix.stats.counts[(int(a), int(b))] = int(v)
        for eid in np.asarray(arrays["expert_ids"], dtype=int):
            p = f"expert{eid}_"
            params = KernelParams(
                arrays[p + "log_output_scale"],
                arrays[p + "log_inv_lengthscales"],
                arrays[p + "log_noise_std"],
            )
            data = Dataset(arrays[p + "X"], arrays[p + "Y"])
            mix.experts[int(eid)] = Expert(
                id=int(eid), params=params, data=data, burn_in=bool(arrays[p + "burn_in"])
            )
        mix.global_prior.seen = int(arrays["global_seen"])
        if "reservoir_X" in arrays:
            mix.global_prior.reservoir = Dataset(arrays["reservoir_X"], arrays["reservoir_Y"])
        if "global_log_output_scale" in arrays:
            mix.global_prior.params = KernelParams(
                arrays["global_log_output_scale"],
                arrays["global_log_inv_lengthscales"],
                arrays["global_log_noise_std"],
            )
        return mix
