"""Exact multi-output Gaussian-process regression with SE-ARD kernels.

Every output dimension is modelled by an independent GP over the same
augmented inputs (state concatenated with action).  The kernel for output
dimension ``i`` is

    k_i(a, b) = w_i**2 * exp(-0.5 * sum_j w_ij * (a_j - b_j)**2)

with a per-input inverse lengthscale ``w_ij`` and output scale ``w_i``.
Predictions, marginal likelihoods, analytic hyperparameter gradients and
the variational inducing-point lower bound are all computed from dense
Cholesky factorizations; a version-stamped cache amortizes those factors
across the many predictions a planner makes between model updates.

Concurrency: all functions are pure given (data, params).  The cache is
rebuilt only between planning calls (single writer); concurrent readers
are safe once built.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))

# Relative jitter schedule: always add BASE_JITTER * mean(diag) before
# factorizing a noise-inflated matrix, escalate by 10x up to MAX_JITTER on
# failure, then give up.  Pure kernel matrices (no noise on the diagonal,
# e.g. K_mm in the inducing bound) start lower so the bound stays within
# 1e-6 of the exact marginal likelihood at the full inducing set.
BASE_JITTER = 1e-8
KMM_JITTER = 1e-12
MAX_JITTER = 1e-4

# Largest per-coordinate move (in log space) a single gradient-ascent step
# may take; raw gradients can be enormous when a noise scale is badly off,
# and uncapped steps settle into limit cycles instead of converging.
MAX_LOG_STEP = 0.5

# Box constraints for the log parameters (projected ascent).  The marginal
# likelihood of near-linear data has an unbounded ridge along growing
# output scale and lengthscale; letting parameters run off it produces
# ill-conditioned kernels and overconfident noise estimates.
LOG_SCALE_BOUND = 6.0
LOG_NOISE_LOW = -9.0
LOG_NOISE_HIGH = 3.0

_MAX_HALVINGS = 8


class NumericalDegeneracyError(RuntimeError):
    """A kernel matrix could not be factorized even at maximum jitter."""


class ExperienceTuple(NamedTuple):
    """One streamed observation: augmented input, target increment and an
    optional hidden regime label that only evaluation code may read."""

    x: np.ndarray
    y: np.ndarray
    label: Optional[int] = None


_param_serial = itertools.count(1)


@dataclass(frozen=True, eq=False)
class KernelParams:
    """SE-ARD hyperparameters for all output dimensions, stored as logs.

    Shapes: ``log_output_scale`` (c,), ``log_inv_lengthscales`` (c, D),
    ``log_noise_std`` (c,) where c is the output dimension and D the
    augmented input dimension.  Storing logs keeps every derived quantity
    strictly positive and makes gradient ascent unconstrained.
    """

    log_output_scale: np.ndarray
    log_inv_lengthscales: np.ndarray
    log_noise_std: np.ndarray
    serial: int = field(default_factory=lambda: next(_param_serial))

    def __post_init__(self):
        lw = np.asarray(self.log_output_scale, dtype=float)
        lil = np.asarray(self.log_inv_lengthscales, dtype=float)
        ls = np.asarray(self.log_noise_std, dtype=float)
        if lil.ndim != 2 or lw.ndim != 1 or ls.ndim != 1:
            raise ValueError("expected shapes (c,), (c, D), (c,)")
        if lw.shape[0] != lil.shape[0] or ls.shape[0] != lil.shape[0]:
            raise ValueError("inconsistent output dimension across parameter arrays")
        for arr in (lw, lil, ls):
            if not np.all(np.isfinite(arr)):
                raise ValueError("kernel parameters must be finite")
        object.__setattr__(self, "log_output_scale", lw)
        object.__setattr__(self, "log_inv_lengthscales", lil)
        object.__setattr__(self, "log_noise_std", ls)

    @classmethod
    def from_values(cls, output_scale, inv_lengthscales, noise_std) -> "KernelParams":
        """Build from positive-valued arrays."""
        w = np.asarray(output_scale, dtype=float)
        wij = np.asarray(inv_lengthscales, dtype=float)
        s = np.asarray(noise_std, dtype=float)
        if np.any(w <= 0) or np.any(wij <= 0) or np.any(s <= 0):
            raise ValueError("kernel parameters must be strictly positive")
        return cls(np.log(w), np.log(wij), np.log(s))

    @classmethod
    def constant(
        cls,
        output_scale: float,
        lengthscale: float,
        noise_std: float,
        input_dim: int,
        output_dim: int,
    ) -> "KernelParams":
        """Uniform initial parameters (the fixed starting point for new experts)."""
        return cls.from_values(
            np.full(output_dim, output_scale),
            np.full((output_dim, input_dim), 1.0 / lengthscale),
            np.full(output_dim, noise_std),
        )

    @property
    def output_scale(self) -> np.ndarray:
        return np.exp(self.log_output_scale)

    @property
    def inv_lengthscales(self) -> np.ndarray:
        return np.exp(self.log_inv_lengthscales)

    @property
    def noise_std(self) -> np.ndarray:
        return np.exp(self.log_noise_std)

    @property
    def output_dim(self) -> int:
        return self.log_output_scale.shape[0]

    @property
    def input_dim(self) -> int:
        return self.log_inv_lengthscales.shape[1]

    def stepped(self, lr, g_log_w, g_log_wij, g_log_sigma) -> "KernelParams":
        """One clipped, box-projected gradient-ascent step in log space."""
        dw = np.clip(lr * g_log_w, -MAX_LOG_STEP, MAX_LOG_STEP)
        dij = np.clip(lr * g_log_wij, -MAX_LOG_STEP, MAX_LOG_STEP)
        ds = np.clip(lr * g_log_sigma, -MAX_LOG_STEP, MAX_LOG_STEP)
        return KernelParams(
            np.clip(self.log_output_scale + dw, -LOG_SCALE_BOUND, LOG_SCALE_BOUND),
            np.clip(self.log_inv_lengthscales + dij, -LOG_SCALE_BOUND, LOG_SCALE_BOUND),
            np.clip(self.log_noise_std + ds, LOG_NOISE_LOW, LOG_NOISE_HIGH),
        )


class Dataset:
    """Row-aligned inputs and targets owned by one expert.

    X has shape (n, D), Y has shape (n, c).  Mutations bump ``version`` so
    cached factorizations know when they are stale.
    """

    __slots__ = ("X", "Y", "version")

    def __init__(self, X, Y):
        X = np.array(X, dtype=float, ndmin=2)
        Y = np.array(Y, dtype=float, ndmin=2)
        if X.shape[0] != Y.shape[0]:
            raise ValueError("X and Y must have the same number of rows")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("dataset rows must be finite")
        self.X = X
        self.Y = Y
        self.version = 0

    @classmethod
    def empty(cls, input_dim: int, output_dim: int) -> "Dataset":
        return cls(np.empty((0, input_dim)), np.empty((0, output_dim)))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    @property
    def output_dim(self) -> int:
        return self.Y.shape[1]

    def append(self, x, y) -> None:
        x = np.asarray(x, dtype=float).reshape(1, -1)
        y = np.asarray(y, dtype=float).reshape(1, -1)
        if x.shape[1] != self.input_dim or y.shape[1] != self.output_dim:
            raise ValueError("appended row has wrong dimension")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("appended row must be finite")
        self.X = np.vstack([self.X, x])
        self.Y = np.vstack([self.Y, y])
        self.version += 1

    def append_rows(self, X, Y) -> None:
        other = Dataset(X, Y)
        if other.n == 0:
            return
        if other.input_dim != self.input_dim or other.output_dim != self.output_dim:
            raise ValueError("appended rows have wrong dimension")
        self.X = np.vstack([self.X, other.X])
        self.Y = np.vstack([self.Y, other.Y])
        self.version += 1

    def replace_row(self, i: int, x, y) -> None:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("replacement row must be finite")
        self.X = self.X.copy()
        self.Y = self.Y.copy()
        self.X[i] = x
        self.Y[i] = y
        self.version += 1

    def keep_rows(self, idx) -> None:
        idx = np.asarray(idx, dtype=int)
        self.X = self.X[idx].copy()
        self.Y = self.Y[idx].copy()
        self.version += 1

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.X[idx], self.Y[idx])


class GaussianPrediction(NamedTuple):
    """Per-dimension posterior over the latent increment at one query
    (diagonal across output dimensions; observation noise not included)."""

    mean: np.ndarray
    var: np.ndarray


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def kernel_eval(params: KernelParams, dim: int, a, b) -> float:
    """Evaluate k_dim(a, b) for a single pair of augmented inputs."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (params.input_dim,) or b.shape != (params.input_dim,):
        raise ValueError("kernel inputs must have the augmented input dimension")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("kernel inputs must be finite")
    d = a - b
    sq = float(np.dot(params.inv_lengthscales[dim], d * d))
    w = float(params.output_scale[dim])
    return w * w * float(np.exp(-0.5 * sq))


def kernel_matrix(params: KernelParams, dim: int, A: np.ndarray, B: Optional[np.ndarray] = None) -> np.ndarray:
    """Dense kernel matrix k_dim(A, B); B defaults to A."""
    s = np.sqrt(params.inv_lengthscales[dim])
    As = A * s
    Bs = As if B is None else B * s
    aa = np.einsum("ij,ij->i", As, As)
    bb = aa if B is None else np.einsum("ij,ij->i", Bs, Bs)
    sq = aa[:, None] + bb[None, :] - 2.0 * (As @ Bs.T)
    np.maximum(sq, 0.0, out=sq)
    w = params.output_scale[dim]
    return w * w * np.exp(-0.5 * sq)


def _chol_jittered(A: np.ndarray, start: float = BASE_JITTER) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of A + jitter * mean(diag(A)) * I.

    Returns (L, jitter used).  Raises NumericalDegeneracyError once the
    escalation schedule is exhausted.
    """
    n = A.shape[0]
    scale = float(np.mean(np.diag(A)))
    if not np.isfinite(scale) or scale <= 0:
        raise NumericalDegeneracyError("kernel matrix has non-positive diagonal")
    jitter = start
    eye = np.eye(n)
    while True:
        try:
            return cholesky(A + jitter * scale * eye, lower=True), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
            if jitter > MAX_JITTER * (1.0 + 1e-12):
                raise NumericalDegeneracyError(
                    f"Cholesky failed for all jitters up to {MAX_JITTER:g}"
                ) from None


# ---------------------------------------------------------------------------
# posterior cache
# ---------------------------------------------------------------------------


class PosteriorCache:
    """Cholesky factors of K_i + sigma_i^2 I and the solved targets,
    stamped with the (dataset, params) versions they were built from."""

    __slots__ = ("_data_version", "_params_serial", "chol", "alpha")

    def __init__(self):
        self._data_version = -1
        self._params_serial = -1
        self.chol = None
        self.alpha = None

    def valid_for(self, data: Dataset, params: KernelParams) -> bool:
        return self._data_version == data.version and self._params_serial == params.serial

    def ensure(self, data: Dataset, params: KernelParams) -> "PosteriorCache":
        if self.valid_for(data, params):
            return self
        n, c = data.n, params.output_dim
        if n == 0:
            self.chol = None
            self.alpha = None
        else:
            chol = np.empty((c, n, n))
            alpha = np.empty((c, n))
            noise_var = params.noise_std ** 2
            for i in range(c):
                K = kernel_matrix(params, i, data.X)
                K[np.diag_indices_from(K)] += noise_var[i]
                L, _ = _chol_jittered(K)
                chol[i] = L
                alpha[i] = cho_solve((L, True), data.Y[:, i])
            self.chol = chol
            self.alpha = alpha
        self._data_version = data.version
        self._params_serial = params.serial
        return self


# ---------------------------------------------------------------------------
# prediction and likelihoods
# ---------------------------------------------------------------------------


def posterior_predict(
    data: Dataset,
    params: KernelParams,
    query,
    cache: Optional[PosteriorCache] = None,
) -> GaussianPrediction:
    """Exact GP posterior at one query, per output dimension.

    With an empty dataset this is the prior: mean 0, variance k(q, q).
    Returned variances exclude observation noise and are clamped at 0.
    """
    q = np.asarray(query, dtype=float)
    if q.shape != (params.input_dim,):
        raise ValueError("query must have the augmented input dimension")
    if not np.all(np.isfinite(q)):
        raise ValueError("query must be finite")
    c = params.output_dim
    w2 = params.output_scale ** 2
    if data.n == 0:
        return GaussianPrediction(np.zeros(c), w2.copy())
    cache = (cache or PosteriorCache()).ensure(data, params)
    mean = np.empty(c)
    var = np.empty(c)
    for i in range(c):
        k_star = kernel_matrix(params, i, q[None, :], data.X)[0]
        mean[i] = float(k_star @ cache.alpha[i])
        v = solve_triangular(cache.chol[i], k_star, lower=True)
        var[i] = max(float(w2[i] - v @ v), 0.0)
    return GaussianPrediction(mean, var)


def data_log_likelihood(
    data: Dataset,
    params: KernelParams,
    point: ExperienceTuple,
    cache: Optional[PosteriorCache] = None,
) -> float:
    """Log density of one observed (noisy) target under the GP predictive.

    Sums log N(y_i; mean_i, var_i + sigma_i^2) over output dimensions,
    where (mean, var) is the posterior at the point's input.  With an
    empty dataset this is the likelihood under the prior, which is how a
    not-yet-created expert is scored.
    """
    pred = posterior_predict(data, params, point.x, cache)
    y = np.asarray(point.y, dtype=float)
    if y.shape != (params.output_dim,):
        raise ValueError("target must have the output dimension")
    if not np.all(np.isfinite(y)):
        raise ValueError("target must be finite")
    v = pred.var + params.noise_std ** 2
    r = y - pred.mean
    return float(np.sum(-0.5 * (np.log(2.0 * np.pi * v) + r * r / v)))


def log_marginal_likelihood(data: Dataset, params: KernelParams) -> float:
    """Exact log marginal likelihood sum_i log N(Y^i; 0, K_i + sigma_i^2 I)."""
    if data.n == 0:
        raise ValueError("log marginal likelihood needs at least one data point")
    n = data.n
    total = 0.0
    noise_var = params.noise_std ** 2
    for i in range(params.output_dim):
        K = kernel_matrix(params, i, data.X)
        K[np.diag_indices_from(K)] += noise_var[i]
        L, _ = _chol_jittered(K)
        y = data.Y[:, i]
        alpha = cho_solve((L, True), y)
        total += -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * LOG_2PI
    return total


def lml_and_gradient(data: Dataset, params: KernelParams):
    """Log marginal likelihood and its gradient w.r.t. the log parameters.

    Uses the trace identity d(lml)/d(theta) = 0.5 tr((aa^T - A^-1) dA/dtheta)
    with A = K + sigma^2 I and a = A^-1 y, evaluated per output dimension.

    Returns (value, g_log_w, g_log_wij, g_log_sigma).
    """
    if data.n == 0:
        raise ValueError("gradient needs at least one data point")
    n = data.n
    X = data.X
    c, D = params.output_dim, params.input_dim
    noise_var = params.noise_std ** 2
    inv_ls = params.inv_lengthscales
    value = 0.0
    g_w = np.empty(c)
    g_ij = np.empty((c, D))
    g_s = np.empty(c)
    eye = np.eye(n)
    X2 = X * X
    for i in range(c):
        K = kernel_matrix(params, i, X)
        A = K.copy()
        A[np.diag_indices_from(A)] += noise_var[i]
        L, _ = _chol_jittered(A)
        y = data.Y[:, i]
        alpha = cho_solve((L, True), y)
        Ainv = cho_solve((L, True), eye)
        value += -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * LOG_2PI
        P = np.outer(alpha, alpha) - Ainv
        M = P * K
        # dA/dlog w = 2K; dA/dlog sigma = 2 sigma^2 I
        g_w[i] = float(np.sum(M))
        g_s[i] = noise_var[i] * float(np.trace(P))
        # dA/dlog w_ij = -0.5 w_ij (x_aj - x_bj)^2 K_ab; M is symmetric, so
        # sum_ab M_ab (x_aj - x_bj)^2 = 2 (x2_j . r - sum_a x_aj (M X)_aj)
        r = M.sum(axis=1)
        MX = M @ X
        quad = X2.T @ r - np.einsum("ij,ij->j", X, MX)
        g_ij[i] = -0.5 * inv_ls[i] * quad
    return value, g_w, g_ij, g_s


def hyperparam_update(
    data: Dataset,
    params: KernelParams,
    steps: int,
    lr: float,
) -> KernelParams:
    """Gradient ascent on the exact log marginal likelihood.

    Runs ``steps`` ascent steps in log space.  If the full update lowered
    the marginal likelihood on this data, the step size is halved and the
    whole update retried; after too many halvings the input parameters are
    returned unchanged.  A non-finite gradient aborts the update.
    """
    if steps < 0 or lr <= 0:
        raise ValueError("steps must be >= 0 and lr > 0")
    if steps == 0 or data.n == 0:
        return params
    base = log_marginal_likelihood(data, params)
    step_lr = lr
    for _ in range(_MAX_HALVINGS + 1):
        p = params
        failed = False
        for _ in range(steps):
            try:
                _, g_w, g_ij, g_s = lml_and_gradient(data, p)
            except NumericalDegeneracyError:
                failed = True
                break
            if not (
                np.all(np.isfinite(g_w))
                and np.all(np.isfinite(g_ij))
                and np.all(np.isfinite(g_s))
            ):
                logger.warning("hyperparameter update aborted: non-finite gradient")
                return params
            p = p.stepped(step_lr, g_w, g_ij, g_s)
        if not failed:
            try:
                after = log_marginal_likelihood(data, p)
            except NumericalDegeneracyError:
                after = -np.inf
            if after >= base - 1e-9 * max(1.0, abs(base)):
                return p
        step_lr *= 0.5
    logger.warning("hyperparameter update made no progress; keeping previous parameters")
    return params


def stochastic_hyperparam_update(
    data: Dataset,
    params: KernelParams,
    steps: int,
    lr: float,
    batch: int,
    rng: np.random.Generator,
) -> KernelParams:
    """Minibatched variant of :func:`hyperparam_update` for large datasets.

    Each step takes the gradient on a fresh uniform subsample of ``batch``
    rows, which keeps the per-observation cost bounded as an expert's
    dataset grows.  Falls back to the exact update when the data fits in
    one batch.
    """
    if data.n <= batch:
        return hyperparam_update(data, params, steps, lr)
    p = params
    for _ in range(steps):
        idx = rng.choice(data.n, size=batch, replace=False)
        sub = data.subset(idx)
        try:
            _, g_w, g_ij, g_s = lml_and_gradient(sub, p)
        except NumericalDegeneracyError:
            logger.warning("skipping one stochastic update step: degenerate minibatch")
            continue
        if not (
            np.all(np.isfinite(g_w))
            and np.all(np.isfinite(g_ij))
            and np.all(np.isfinite(g_s))
        ):
            logger.warning("stochastic hyperparameter update aborted: non-finite gradient")
            return p
        p = p.stepped(lr, g_w, g_ij, g_s)
    return p


def titsias_bound(data: Dataset, inducing_idx, params: KernelParams) -> float:
    """Variational lower bound on the log marginal likelihood for a set of
    real inducing rows.

    Per output dimension, with Q = K_nm K_mm^-1 K_mn:

        log N(Y^i; 0, Q + sigma_i^2 I) - tr(K_nn - Q) / (2 sigma_i^2)

    The bound equals the exact marginal likelihood when every row is
    inducing and can never exceed it.
    """
    idx = np.asarray(inducing_idx, dtype=int)
    if idx.ndim != 1 or idx.size == 0:
        raise ValueError("inducing index set must be a nonempty 1-d collection")
    if np.unique(idx).size != idx.size:
        raise ValueError("inducing indices must be distinct")
    if idx.min() < 0 or idx.max() >= data.n:
        raise ValueError("inducing indices out of range")
    n, m = data.n, idx.size
    Xm = data.X[idx]
    total = 0.0
    w2 = params.output_scale ** 2
    # Match the effective noise of the exact-likelihood path, which always
    # factorizes K + sigma^2 I + BASE_JITTER * mean(diag) * I; without this
    # the bound misses the exact value at the full inducing set by the
    # jitter-induced shift.
    noise_var = params.noise_std ** 2
    noise_var = noise_var + BASE_JITTER * (w2 + noise_var)
    eye_m = np.eye(m)
    for i in range(params.output_dim):
        Kmm = kernel_matrix(params, i, Xm)
        Kmn = kernel_matrix(params, i, Xm, data.X)
        Lm, _ = _chol_jittered(Kmm, start=KMM_JITTER)
        sigma = float(np.sqrt(noise_var[i]))
        A = solve_triangular(Lm, Kmn, lower=True) / sigma
        B = eye_m + A @ A.T
        LB = cholesky(B, lower=True)
        y = data.Y[:, i] / sigma
        cvec = solve_triangular(LB, A @ y, lower=True)
        logdet = 2.0 * float(np.sum(np.log(np.diag(LB)))) + n * float(np.log(noise_var[i]))
        quad = float(y @ y) - float(cvec @ cvec)
        fit = -0.5 * (n * LOG_2PI + logdet + quad)
        trace = n * w2[i] - noise_var[i] * float(np.sum(A * A))
        total += fit - trace / (2.0 * noise_var[i])
    return total


# ---------------------------------------------------------------------------
# planner-facing predictor
# ---------------------------------------------------------------------------


class GPPredictor:
    """Immutable predictive view of one GP for rollout evaluation.

    Captures the training inputs, parameters and solved factors at
    construction time; batched posterior means are then cheap matrix
    products, which is what the planner hammers on.
    """

    __slots__ = ("params", "_X", "_Xs", "_chol", "_alpha", "_w2")

    def __init__(self, data: Dataset, params: KernelParams, cache: Optional[PosteriorCache] = None):
        self.params = params
        self._w2 = params.output_scale ** 2
        if data.n == 0:
            self._X = None
            self._Xs = None
            self._chol = None
            self._alpha = None
        else:
            cache = (cache or PosteriorCache()).ensure(data, params)
            self._X = data.X
            s = np.sqrt(params.inv_lengthscales)  # (c, D)
            self._Xs = data.X[None, :, :] * s[:, None, :]  # (c, n, D)
            self._chol = cache.chol
            self._alpha = cache.alpha

    @property
    def input_dim(self) -> int:
        return self.params.input_dim

    @property
    def output_dim(self) -> int:
        return self.params.output_dim

    def mean(self, queries: np.ndarray) -> np.ndarray:
        """Posterior means at a batch of queries, shape (B, D) -> (B, c)."""
        Q = np.asarray(queries, dtype=float)
        B = Q.shape[0]
        c = self.output_dim
        out = np.empty((B, c))
        if self._X is None:
            out.fill(0.0)
            return out
        s = np.sqrt(self.params.inv_lengthscales)
        for i in range(c):
            Qs = Q * s[i]
            Xs = self._Xs[i]
            sq = (
                np.einsum("ij,ij->i", Qs, Qs)[:, None]
                + np.einsum("ij,ij->i", Xs, Xs)[None, :]
                - 2.0 * (Qs @ Xs.T)
            )
            np.maximum(sq, 0.0, out=sq)
            K = self._w2[i] * np.exp(-0.5 * sq)
            out[:, i] = K @ self._alpha[i]
        return out

    def predict(self, query) -> GaussianPrediction:
        """Mean and (noise-free) variance at a single query."""
        q = np.asarray(query, dtype=float)
        c = self.output_dim
        if self._X is None:
            return GaussianPrediction(np.zeros(c), self._w2.copy())
        mean = np.empty(c)
        var = np.empty(c)
        for i in range(c):
            k_star = kernel_matrix(self.params, i, q[None, :], self._X)[0]
            mean[i] = float(k_star @ self._alpha[i])
            v = solve_triangular(self._chol[i], k_star, lower=True)
            var[i] = max(float(self._w2[i] - v @ v), 0.0)
        return GaussianPrediction(mean, var)

    def predict_batch(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Means and variances at a batch of queries -> ((B, c), (B, c))."""
        Q = np.asarray(queries, dtype=float)
        B = Q.shape[0]
        c = self.output_dim
        mean = np.zeros((B, c))
        var = np.tile(self._w2, (B, 1))
        if self._X is None:
            return mean, var
        for i in range(c):
            K = kernel_matrix(self.params, i, Q, self._X)  # (B, n)
            mean[:, i] = K @ self._alpha[i]
            V = solve_triangular(self._chol[i], K.T, lower=True)  # (n, B)
            var[:, i] = np.maximum(self._w2[i] - np.einsum("ij,ij->j", V, V), 0.0)
        return mean, var
