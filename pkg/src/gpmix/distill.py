"""Bound-guided selection of real inducing rows.

When an expert's dataset hits its distillation trigger, its rows are
replaced by the m real data points that maximize the variational lower
bound on the marginal likelihood.  Candidates are scored with
:func:`gpmix.gp.titsias_bound`; no pseudo-inputs are ever optimized, so
the retained points are always a strict subset of the original rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from gpmix.gp import Dataset, KernelParams, NumericalDegeneracyError, titsias_bound

logger = logging.getLogger(__name__)


@dataclass
class InducingSelection:
    """Outcome of one subset search: which rows to keep and how good the
    bound got.  ``initial_bound`` is the best purely-random candidate,
    before any greedy swaps."""

    indices: np.ndarray
    bound: float
    initial_bound: float
    trials_used: int
    swap_evals: int
    expert_id: Optional[int] = None


def select_inducing(
    data: Dataset,
    params: KernelParams,
    m: int,
    trials: int = 16,
    seed: int = 0,
) -> InducingSelection:
    """Pick m rows of ``data`` maximizing the inducing-point lower bound.

    Draws ``trials`` uniform random m-subsets, keeps the best, then runs
    greedy single-point swap passes: each pass walks the m chosen slots and
    proposes replacing the slot's row with randomly ordered unchosen rows,
    accepting any improvement.  The search stops after a pass without
    improvement or once the swap-phase evaluation budget is spent; the
    budget is 2m bound evaluations, with a small floor so that tiny
    problems still get a few complete greedy passes.

    Deterministic given ``seed``.  Candidates whose bound evaluation is
    numerically degenerate are discarded; if every random trial fails, a
    NumericalDegeneracyError is raised.
    """
    n = data.n
    if not 0 < m < n:
        raise ValueError("need 0 < m < n rows")
    if trials < 1:
        raise ValueError("need at least one trial")
    rng = np.random.default_rng(seed)

    best_idx = None
    best_val = -np.inf
    trials_used = 0
    for _ in range(trials):
        cand = np.sort(rng.choice(n, size=m, replace=False))
        try:
            val = titsias_bound(data, cand, params)
        except NumericalDegeneracyError:
            continue
        trials_used += 1
        if val > best_val:
            best_val = val
            best_idx = cand
    if best_idx is None:
        raise NumericalDegeneracyError("every random inducing candidate failed to factorize")
    initial_bound = float(best_val)

    chosen = best_idx.copy()
    budget = max(2 * m, min(3 * m * (n - m), 96))
    per_slot = max(1, budget // (2 * m))
    spent = 0
    improved = True
    while improved and spent < budget:
        improved = False
        for slot in range(m):
            if spent >= budget:
                break
            mask = np.zeros(n, dtype=bool)
            mask[chosen] = True
            pool = rng.permutation(np.flatnonzero(~mask))[:per_slot]
            for partner in pool:
                if spent >= budget:
                    break
                trial_idx = chosen.copy()
                trial_idx[slot] = partner
                trial_sorted = np.sort(trial_idx)
                spent += 1
                try:
                    val = titsias_bound(data, trial_sorted, params)
                except NumericalDegeneracyError:
                    continue
                if val > best_val:
                    best_val = val
                    chosen = trial_sorted
                    improved = True
                    break
    return InducingSelection(
        indices=np.sort(chosen),
        bound=float(best_val),
        initial_bound=initial_bound,
        trials_used=trials_used,
        swap_evals=spent,
    )


def apply_distillation(expert, selection: InducingSelection) -> None:
    """Replace the expert's dataset with the selected rows.

    The cache is invalidated implicitly by the dataset version bump, and
    because the trigger is the standing predicate ``count >= n_distill``,
    distillation re-arms automatically once the dataset grows back.
    """
    idx = np.asarray(selection.indices, dtype=int)
    if idx.size == 0 or idx.size >= expert.data.n:
        raise ValueError("selection must be a proper nonempty subset of the dataset rows")
    if np.unique(idx).size != idx.size or idx.min() < 0 or idx.max() >= expert.data.n:
        raise ValueError("selection indices invalid for this dataset")
    expert.data.keep_rows(idx)
    logger.debug(
        "distilled expert %s to %d rows (bound %.4f)",
        selection.expert_id,
        idx.size,
        selection.bound,
    )
