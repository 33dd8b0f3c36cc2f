"""Exact Gaussian-process regression with ARD Matern and linear kernels.

Posteriors are computed through a cached Cholesky factor of the regularized
Gram matrix; hyperparameters are fitted by maximizing the log marginal
likelihood with a deterministic multi-start pattern search in log space.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

__all__ = [
    "KernelSpec",
    "GPModel",
    "GPRError",
    "FitError",
    "kernel_eval",
    "kernel_matrix",
    "kernel_diag",
    "fit",
    "posterior",
    "posterior_batch",
    "PosteriorEvaluator",
    "log_marginal_likelihood",
    "optimize_hyperparameters",
]

ARD_FAMILIES = ("matern52", "matern32")
FAMILIES = ARD_FAMILIES + ("linear",)

# Jitter ladder relative to mean(diag K): escalate x10 between these rails.
_JITTER_START = 1e-10
_JITTER_MAX = 1e-4

# Hyperparameter box in log space.
_LOG_LS_BOUNDS = (math.log(1e-3), math.log(1e3))
_LOG_SF2_BOUNDS = (-10.0, 10.0)
_LOG_SN2_BOUNDS = (-12.0, 2.0)
_LOG_LINVAR_BOUNDS = (-10.0, 10.0)

_SQRT3 = math.sqrt(3.0)
_SQRT5 = math.sqrt(5.0)


class GPRError(Exception):
    """Base error for this module."""


class FitError(GPRError):
    """Cholesky factorization failed even after jitter escalation."""


@dataclass
class KernelSpec:
    """Covariance family plus hyperparameters.

    ARD families ("matern52", "matern32") use ``length_scales`` and
    ``signal_variance``; the "linear" family uses per-dimension
    ``linear_variances`` and ``linear_offset``.  ``noise_variance`` applies
    to all families.
    """

    family: str
    length_scales: np.ndarray | None = None
    signal_variance: float = 1.0
    linear_variances: np.ndarray | None = None
    linear_offset: float = 0.0
    noise_variance: float = 0.0

    def __post_init__(self):
        if self.length_scales is not None:
            self.length_scales = np.asarray(self.length_scales, dtype=float)
        if self.linear_variances is not None:
            self.linear_variances = np.asarray(self.linear_variances, dtype=float)
        self.validate()

    def validate(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family: {self.family!r}")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")
        if self.family in ARD_FAMILIES:
            if self.length_scales is None or self.length_scales.ndim != 1:
                raise ValueError("ARD kernels need a 1-d length_scales vector")
            if np.any(self.length_scales <= 0):
                raise ValueError("length_scales must be > 0")
            if self.signal_variance < 0:
                raise ValueError("signal_variance must be >= 0")
            if self.linear_variances is not None:
                raise ValueError("linear_variances is not a Matern field")
        else:
            if self.linear_variances is None or self.linear_variances.ndim != 1:
                raise ValueError("linear kernel needs a 1-d linear_variances vector")
            if np.any(self.linear_variances < 0) or self.linear_offset < 0:
                raise ValueError("linear variances and offset must be >= 0")
            if self.length_scales is not None:
                raise ValueError("length_scales is not a linear-kernel field")

    @property
    def dim(self) -> int:
        if self.family in ARD_FAMILIES:
            return int(self.length_scales.shape[0])
        return int(self.linear_variances.shape[0])

    def copy(self) -> "KernelSpec":
        return replace(
            self,
            length_scales=None if self.length_scales is None else self.length_scales.copy(),
            linear_variances=None if self.linear_variances is None else self.linear_variances.copy(),
        )

    def to_json(self) -> dict:
        out = {"family": self.family, "noise_variance": self.noise_variance}
        if self.family in ARD_FAMILIES:
            out["length_scales"] = self.length_scales.tolist()
            out["signal_variance"] = self.signal_variance
        else:
            out["linear_variances"] = self.linear_variances.tolist()
            out["linear_offset"] = self.linear_offset
        return out

    @classmethod
    def from_json(cls, obj: dict | str) -> "KernelSpec":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(
            family=obj["family"],
            length_scales=obj.get("length_scales"),
            signal_variance=obj.get("signal_variance", 1.0),
            linear_variances=obj.get("linear_variances"),
            linear_offset=obj.get("linear_offset", 0.0),
            noise_variance=obj.get("noise_variance", 0.0),
        )


def default_kernel(family: str, d: int) -> KernelSpec:
    """Unit-scale starting spec for a d-dimensional input space."""
    if family in ARD_FAMILIES:
        return KernelSpec(family, length_scales=np.ones(d), signal_variance=1.0,
                          noise_variance=1e-6)
    if family == "linear":
        return KernelSpec(family, linear_variances=np.ones(d), linear_offset=1.0,
                          noise_variance=1e-6)
    raise ValueError(f"unknown kernel family: {family!r}")


def _scaled_sq_dists(A: np.ndarray, B: np.ndarray, ls: np.ndarray) -> np.ndarray:
    """Pairwise squared distances of rows after dividing coordinates by ls."""
    As = A / ls
    Bs = B / ls
    a2 = np.einsum("ij,ij->i", As, As)
    b2 = np.einsum("ij,ij->i", Bs, Bs)
    d2 = a2[:, None] + b2[None, :] - 2.0 * (As @ Bs.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def _matern_from_r(family: str, r2: np.ndarray, sf2: float) -> np.ndarray:
    r = np.sqrt(r2)
    if family == "matern52":
        return sf2 * (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2) * np.exp(-_SQRT5 * r)
    return sf2 * (1.0 + _SQRT3 * r) * np.exp(-_SQRT3 * r)


def kernel_matrix(k: KernelSpec, A: np.ndarray, B: np.ndarray | None = None) -> np.ndarray:
    """Cross-covariance matrix between the rows of A and B (B defaults to A)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = A if B is None else np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError("dimension mismatch between input matrices")
    if A.shape[1] != k.dim:
        raise ValueError("input dimension does not match the kernel")
    if k.family in ARD_FAMILIES:
        r2 = _scaled_sq_dists(A, B, k.length_scales)
        return _matern_from_r(k.family, r2, k.signal_variance)
    return k.linear_offset + (A * k.linear_variances) @ B.T


def kernel_diag(k: KernelSpec, A: np.ndarray) -> np.ndarray:
    """k(x, x) for each row of A."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if k.family in ARD_FAMILIES:
        return np.full(A.shape[0], k.signal_variance)
    return k.linear_offset + np.einsum("ij,j,ij->i", A, k.linear_variances, A)


def kernel_eval(k: KernelSpec, x1: np.ndarray, x2: np.ndarray) -> float:
    """Covariance between two points; symmetric in its arguments."""
    x1 = np.asarray(x1, dtype=float).reshape(1, -1)
    x2 = np.asarray(x2, dtype=float).reshape(1, -1)
    if x1.shape != x2.shape:
        raise ValueError("dimension mismatch")
    return float(kernel_matrix(k, x1, x2)[0, 0])


@dataclass
class GPModel:
    """Fitted posterior state.

    ``chol`` is the lower factor of K + (noise_variance + jitter) I on the
    training inputs, ``alpha`` the corresponding solve against the centered
    targets.  Instances are immutable once built and safe to query from any
    thread.
    """

    X: np.ndarray
    y: np.ndarray
    kernel: KernelSpec
    chol: np.ndarray
    alpha: np.ndarray
    y_mean: float
    jitter: float

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def _chol_with_jitter(K: np.ndarray, noise_variance: float):
    """Factor K + (noise + jitter) I, escalating jitter tenfold as needed."""
    n = K.shape[0]
    base = float(np.mean(np.diag(K)))
    if base <= 0.0:
        base = 1.0
    jitter = _JITTER_START * base
    eye = np.eye(n)
    while True:
        try:
            L = np.linalg.cholesky(K + (noise_variance + jitter) * eye)
            return L, jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
            if jitter > _JITTER_MAX * base:
                raise FitError(
                    f"Cholesky failed with jitter up to {_JITTER_MAX:g}*mean(diag)"
                ) from None


def fit(X: np.ndarray, y: np.ndarray, k: KernelSpec) -> GPModel:
    """Fit the exact GP posterior state from scratch.

    Targets are centered before factorization; the mean is restored in
    posterior means, keeping the zero-mean prior convention.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y disagree on the number of samples")
    if X.shape[0] < 1:
        raise ValueError("need at least one training point")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data must be finite")
    K = kernel_matrix(k, X)
    L, jitter = _chol_with_jitter(K, k.noise_variance)
    y_mean = float(np.mean(y))
    alpha = cho_solve((L, True), y - y_mean)
    return GPModel(X=X.copy(), y=y.copy(), kernel=k.copy(), chol=L, alpha=alpha,
                   y_mean=y_mean, jitter=jitter)


def posterior_batch(gp: GPModel, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means and variances at the rows of Q; variances clamped at 0."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    Ks = kernel_matrix(gp.kernel, gp.X, Q)
    mean = Ks.T @ gp.alpha + gp.y_mean
    v = solve_triangular(gp.chol, Ks, lower=True, check_finite=False)
    var = kernel_diag(gp.kernel, Q) - np.einsum("ij,ij->j", v, v)
    np.maximum(var, 0.0, out=var)
    return mean, var


def posterior(gp: GPModel, x: np.ndarray) -> tuple[float, float]:
    """Posterior mean and variance of the latent function at a single point."""
    mean, var = posterior_batch(gp, np.asarray(x, dtype=float).reshape(1, -1))
    return float(mean[0]), float(var[0])


class PosteriorEvaluator:
    """Repeated-batch posterior queries against one fitted model.

    Caches the inverse Cholesky factor so each batch costs two matrix
    products instead of a triangular solve; agrees with posterior_batch to
    rounding.  Intended for acquisition search, which evaluates hundreds of
    small batches against the same GP.
    """

    def __init__(self, gp: GPModel):
        self.gp = gp
        self._Linv = solve_triangular(gp.chol, np.eye(gp.n), lower=True,
                                      check_finite=False)
        k = gp.kernel
        if k.family in ARD_FAMILIES:
            self._As = gp.X / k.length_scales
            self._a2 = np.einsum("ij,ij->i", self._As, self._As)

    def __call__(self, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        gp = self.gp
        k = gp.kernel
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if k.family in ARD_FAMILIES:
            # Same arithmetic as kernel_matrix/kernel_diag with the scaled
            # training block reused across batches.
            Qs = Q / k.length_scales
            q2 = np.einsum("ij,ij->i", Qs, Qs)
            r2 = self._a2[:, None] + q2[None, :] - 2.0 * (self._As @ Qs.T)
            np.maximum(r2, 0.0, out=r2)
            Ks = _matern_from_r(k.family, r2, k.signal_variance)
            diag = k.signal_variance
        else:
            Ks = kernel_matrix(k, gp.X, Q)
            diag = kernel_diag(k, Q)
        mean = Ks.T @ gp.alpha + gp.y_mean
        v = self._Linv @ Ks
        var = diag - np.einsum("ij,ij->j", v, v)
        np.maximum(var, 0.0, out=var)
        return mean, var


def log_marginal_likelihood(gp: GPModel) -> float:
    """Log evidence of the centered targets under the fitted factorization."""
    yc = gp.y - gp.y_mean
    return float(
        -0.5 * yc @ gp.alpha
        - np.sum(np.log(np.diag(gp.chol)))
        - 0.5 * gp.n * math.log(2.0 * math.pi)
    )


# ---------------------------------------------------------------------------
# Hyperparameter optimization
# ---------------------------------------------------------------------------


def _param_bounds(family: str, d: int) -> np.ndarray:
    if family in ARD_FAMILIES:
        rows = [_LOG_LS_BOUNDS] * d + [_LOG_SF2_BOUNDS, _LOG_SN2_BOUNDS]
    else:
        rows = [_LOG_LINVAR_BOUNDS] * (d + 1) + [_LOG_SN2_BOUNDS]
    return np.asarray(rows, dtype=float)


def _spec_to_theta(k: KernelSpec) -> np.ndarray:
    tiny = 1e-300
    if k.family in ARD_FAMILIES:
        return np.concatenate([
            np.log(k.length_scales),
            [math.log(max(k.signal_variance, tiny)),
             math.log(max(k.noise_variance, tiny))],
        ])
    return np.concatenate([
        np.log(np.maximum(k.linear_variances, tiny)),
        [math.log(max(k.linear_offset, tiny)),
         math.log(max(k.noise_variance, tiny))],
    ])


def _theta_to_spec(family: str, d: int, theta: np.ndarray) -> KernelSpec:
    if family in ARD_FAMILIES:
        return KernelSpec(family, length_scales=np.exp(theta[:d]),
                          signal_variance=math.exp(theta[d]),
                          noise_variance=math.exp(theta[d + 1]))
    return KernelSpec(family, linear_variances=np.exp(theta[:d]),
                      linear_offset=math.exp(theta[d]),
                      noise_variance=math.exp(theta[d + 1]))


def _make_lml_objective(X: np.ndarray, y: np.ndarray, family: str):
    """Closure evaluating the log marginal likelihood from a theta vector.

    Per-dimension squared differences are precomputed once, which keeps each
    evaluation at one Gram assembly plus one Cholesky.
    """
    n, d = X.shape
    yc = y - np.mean(y)
    eye = np.eye(n)
    log2pi_term = 0.5 * n * math.log(2.0 * math.pi)
    if family in ARD_FAMILIES:
        diffs = X[:, None, :] - X[None, :, :]
        D2 = (diffs * diffs).reshape(n * n, d)
    XT = X.T.copy()

    def objective(theta: np.ndarray) -> float:
        if family in ARD_FAMILIES:
            inv_l2 = np.exp(-2.0 * theta[:d])
            sf2 = math.exp(theta[d])
            r2 = (D2 @ inv_l2).reshape(n, n)
            np.maximum(r2, 0.0, out=r2)
            K = _matern_from_r(family, r2, sf2)
        else:
            v = np.exp(theta[:d])
            offset = math.exp(theta[d])
            K = offset + (X * v) @ XT
        noise = math.exp(theta[d + 1])
        base = float(np.mean(np.diag(K)))
        if base <= 0.0:
            base = 1.0
        for jitter in (_JITTER_START * base, 1e-6 * base):
            try:
                L = np.linalg.cholesky(K + (noise + jitter) * eye)
            except np.linalg.LinAlgError:
                continue
            alpha = cho_solve((L, True), yc)
            return float(-0.5 * yc @ alpha - np.sum(np.log(np.diag(L))) - log2pi_term)
        return -np.inf

    return objective


def _pattern_search(objective, u0: np.ndarray, max_sweeps: int, step_tol: float):
    """Coordinate pattern search on the unit box; returns (best_u, best_val)."""
    u = np.clip(u0, 0.0, 1.0).copy()
    val = objective(u)
    step = 0.25
    sweeps = 0
    while step >= step_tol and sweeps < max_sweeps:
        improved = False
        for j in range(u.shape[0]):
            for sgn in (1.0, -1.0):
                cand = u.copy()
                cand[j] = min(1.0, max(0.0, u[j] + sgn * step))
                if cand[j] == u[j]:
                    continue
                cval = objective(cand)
                if cval > val:
                    u, val = cand, cval
                    improved = True
        if not improved:
            step *= 0.5
        sweeps += 1
    return u, val


def optimize_hyperparameters(
    X: np.ndarray,
    y: np.ndarray,
    k0: KernelSpec,
    restarts: int = 4,
    seed: int = 0,
    max_sweeps: int = 30,
    step_tol: float = 1e-3,
) -> KernelSpec:
    """Maximize the log marginal likelihood over bounded log-space parameters.

    The first start is k0 itself (warm start); the remaining ``restarts - 1``
    starts are log-uniform draws from the bounds.  Deterministic given seed.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] < 2:
        raise ValueError("hyperparameter optimization needs n >= 2")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    d = X.shape[1]
    if k0.dim != d:
        raise ValueError("kernel dimension does not match X")
    bounds = _param_bounds(k0.family, d)
    lo, span = bounds[:, 0], bounds[:, 1] - bounds[:, 0]
    objective_theta = _make_lml_objective(X, y, k0.family)

    def objective_u(u):
        return objective_theta(lo + span * u)

    rng = np.random.default_rng(seed)
    u_starts = [np.clip((_spec_to_theta(k0) - lo) / span, 0.0, 1.0)]
    for _ in range(restarts - 1):
        u_starts.append(rng.uniform(size=d + 2))

    best_u, best_val = None, -np.inf
    for u0 in u_starts:
        u, val = _pattern_search(objective_u, u0, max_sweeps, step_tol)
        if val > best_val:
            best_u, best_val = u, val
    if best_u is None or not np.isfinite(best_val):
        raise FitError("all optimizer restarts failed factorization")
    return _theta_to_spec(k0.family, d, lo + span * best_u)
