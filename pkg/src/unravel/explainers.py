"""Feature-importance extraction from fitted surrogates.

Three routes: inverse length-scales of an ARD kernel (with signs from a
finite difference of the posterior mean), a sparse linear model fit to the
surrogate dataset by coordinate-descent LASSO, and a perturbation-sampling
baseline that weights samples by a locality kernel before the same LASSO.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .blackbox import BlackBoxModel
from .engine import SurrogateDataset
from .gpr import ARD_FAMILIES, GPModel, posterior_batch

__all__ = [
    "ExplainerError",
    "ImportanceScores",
    "METHOD_ARD",
    "METHOD_SPARSE_LINEAR",
    "METHOD_LIME_BASELINE",
    "ard_importance",
    "sparse_linear_importance",
    "lime_baseline",
    "lasso_path_lambda_max",
    "top_k",
]

METHOD_ARD = "ARD"
METHOD_SPARSE_LINEAR = "SparseLinear"
METHOD_LIME_BASELINE = "LimeBaseline"

_LASSO_TOL = 1e-8
_LASSO_STALL_DELTA = 1e-6
_LASSO_STALL_SWEEPS = 16
_LASSO_MAX_SWEEPS = 100_000
_LASSO_POLISH_DELTA = 1e-4
_LASSO_POLISH_EVERY = 16


class ExplainerError(RuntimeError):
    """Importance extraction failed (non-convergence, degenerate inputs)."""


def _active_set_polish(Xc: np.ndarray, yc: np.ndarray, w: np.ndarray,
                       lam: float) -> np.ndarray | None:
    """Exact minimizer on the current support, or None if it fails KKT.

    With the sign pattern s of the active set A fixed, the penalized
    objective restricted to A is a quadratic whose minimizer solves
    (Xc_A' Xc_A) w_A = Xc_A' yc - lam*s.  A coordinate whose solution
    flips sign is sitting on the boundary of its orthant, so it is dropped
    and the system re-solved (the homotopy method's sign-feasibility
    step).  If the surviving solution verifies the full-problem
    optimality conditions it is the optimum and coordinate descent can
    stop immediately — which matters on near-collinear designs, where
    plain descent creeps along an almost flat valley for millions of
    sweeps.
    """
    active = np.flatnonzero(w)
    if active.size == 0:
        return None
    signs = np.sign(w[active])
    wa = signs  # placeholder; overwritten on the first solve
    for _ in range(active.size):
        XA = Xc[:, active]
        gram = XA.T @ XA
        rhs = XA.T @ yc - lam * signs
        try:
            wa = np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError:
            wa = np.linalg.lstsq(gram, rhs, rcond=None)[0]
        keep = wa * signs >= 0.0
        if keep.all():
            break
        if not keep.any():
            return None
        active = active[keep]
        signs = signs[keep]
    else:
        return None
    w_new = np.zeros_like(w)
    w_new[active] = wa
    grad = Xc.T @ (yc - Xc @ w_new)
    viol = np.where(w_new != 0.0, np.abs(grad - lam * np.sign(w_new)),
                    np.maximum(np.abs(grad) - lam, 0.0))
    tol = _LASSO_TOL * max(1.0, float(np.abs(grad).max(initial=0.0)), lam)
    if float(viol.max(initial=0.0)) > tol:
        return None
    return w_new


@dataclass(frozen=True)
class ImportanceScores:
    """Per-feature attribution: nonnegative magnitude plus a sign."""

    feature_names: list[str]
    magnitudes: np.ndarray
    signs: np.ndarray
    method: str

    def __post_init__(self):
        mags = np.asarray(self.magnitudes, dtype=float).ravel()
        signs = np.asarray(self.signs, dtype=float).ravel()
        object.__setattr__(self, "magnitudes", mags)
        object.__setattr__(self, "signs", signs)
        d = len(self.feature_names)
        if mags.shape[0] != d or signs.shape[0] != d:
            raise ValueError("names, magnitudes, and signs must align")
        if not np.all(np.isfinite(mags)) or np.any(mags < 0):
            raise ValueError("magnitudes must be finite and nonnegative")
        if not np.all(np.isin(signs, (-1.0, 0.0, 1.0))):
            raise ValueError("signs must be -1, 0, or +1")

    @property
    def d(self) -> int:
        return len(self.feature_names)

    @property
    def signed_scores(self) -> np.ndarray:
        return self.magnitudes * self.signs

    @classmethod
    def from_weights(cls, feature_names: list[str], w: np.ndarray,
                     method: str) -> "ImportanceScores":
        w = np.asarray(w, dtype=float).ravel()
        return cls(feature_names=list(feature_names), magnitudes=np.abs(w),
                   signs=np.sign(w), method=method)

    def to_json(self) -> dict:
        order = sorted(range(self.d), key=lambda j: (-self.magnitudes[j], j))
        return {
            "method": self.method,
            "features": [
                {"name": self.feature_names[j],
                 "score": float(self.signed_scores[j]),
                 "magnitude": float(self.magnitudes[j])}
                for j in order
            ],
        }


def _default_names(d: int) -> list[str]:
    return [f"x_{j}" for j in range(d)]


def ard_importance(gp: GPModel, x0: np.ndarray,
                   sigma_D: np.ndarray | None = None,
                   feature_names: list[str] | None = None) -> ImportanceScores:
    """Inverse length-scales, unit-max normalized; smaller scale = more
    relevant.  Signs come from a central difference of the posterior mean at
    x0 with per-coordinate step 1e-3 * sigma_D.
    """
    if gp.kernel.family not in ARD_FAMILIES:
        raise ExplainerError(
            "length-scale importance needs an ARD kernel; use the sparse "
            "linear path for other families")
    x0 = np.asarray(x0, dtype=float).ravel()
    d = gp.d
    if x0.shape[0] != d:
        raise ValueError("x0 dimension does not match the model")
    if sigma_D is None:
        sigma_D = np.ones(d)
    sigma_D = np.asarray(sigma_D, dtype=float).ravel()
    if sigma_D.shape[0] != d or not np.all(sigma_D > 0):
        raise ValueError("sigma_D must be length-d positive")

    inv = 1.0 / gp.kernel.length_scales
    magnitudes = inv / np.max(inv)

    h = 1e-3 * sigma_D
    probes = np.repeat(x0[None, :], 2 * d, axis=0)
    for j in range(d):
        probes[2 * j, j] += h[j]
        probes[2 * j + 1, j] -= h[j]
    means, _ = posterior_batch(gp, probes)
    diffs = means[0::2] - means[1::2]
    signs = np.sign(diffs)

    return ImportanceScores(
        feature_names=feature_names or _default_names(d),
        magnitudes=magnitudes, signs=signs, method=METHOD_ARD)


def _lasso_cd(X: np.ndarray, y: np.ndarray, lam: float,
              sample_weight: np.ndarray | None = None,
              max_sweeps: int = _LASSO_MAX_SWEEPS) -> tuple[np.ndarray, float]:
    """min_w 1/2 ||y - Xw - b||^2 + lam ||w||_1, intercept unpenalized.

    lam = 0 is plain least squares and is solved directly (the unique or
    minimum-norm solution).  For lam > 0, cyclic coordinate descent with
    soft-thresholding on (weighted-)centered data; stops when the largest
    coordinate change drops below 1e-8, or when the iterate is detected to
    be at the numerical fixed point: neither the optimality-condition
    violation nor the step shrinks for a stretch of sweeps while the
    coefficients are motionless to 1e-6.  The second rule terminates
    collinear designs (e.g. queries sampled along a line) where weight
    keeps cycling in the last bits between near-duplicate columns without
    changing the fit.  Once the steps are small, each block of sweeps also
    tries an exact solve on the current support (`_active_set_polish`);
    when that solution verifies the full optimality conditions the descent
    jumps straight to it, instead of creeping there along the nearly flat
    valley that near-duplicate columns create.  Returns (w, b).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, d = X.shape
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if sample_weight is None:
        xm = X.mean(axis=0)
        ym = float(y.mean())
        Xc = X - xm
        yc = y - ym
    else:
        wsum = float(np.sum(sample_weight))
        if wsum <= 0:
            raise ExplainerError("sample weights sum to zero")
        xm = sample_weight @ X / wsum
        ym = float(sample_weight @ y / wsum)
        s = np.sqrt(sample_weight)[:, None]
        Xc = s * (X - xm)
        yc = (s[:, 0]) * (y - ym)

    if lam == 0.0:
        w, *_ = np.linalg.lstsq(Xc, yc, rcond=None)
        return w, ym - float(xm @ w)

    g = np.einsum("ij,ij->j", Xc, Xc)
    w = np.zeros(d)
    r = yc.copy()
    best_viol = math.inf
    best_delta = math.inf
    stall = 0
    for sweep in range(max_sweeps):
        delta_max = 0.0
        for j in range(d):
            if g[j] == 0.0:
                continue
            rho = Xc[:, j] @ r + g[j] * w[j]
            wj = math.copysign(max(abs(rho) - lam, 0.0), rho) / g[j]
            diff = wj - w[j]
            if diff != 0.0:
                r -= diff * Xc[:, j]
                w[j] = wj
                delta_max = max(delta_max, abs(diff))
        r = yc - Xc @ w  # fresh residual: drift-free and reused by the check
        if delta_max < _LASSO_TOL:
            break
        if delta_max < _LASSO_POLISH_DELTA and sweep % _LASSO_POLISH_EVERY == 0:
            polished = _active_set_polish(Xc, yc, w, lam)
            if polished is not None:
                w = polished
                r = yc - Xc @ w
                break
        grad = Xc.T @ r
        viol = np.where(w != 0.0, np.abs(np.abs(grad) - lam),
                        np.maximum(np.abs(grad) - lam, 0.0))
        vm = float(viol.max(initial=0.0))
        if vm < 0.999 * best_viol or delta_max < 0.999 * best_delta:
            stall = 0
        elif delta_max < _LASSO_STALL_DELTA:
            stall += 1
            if stall >= _LASSO_STALL_SWEEPS:
                break
        best_viol = min(best_viol, vm)
        best_delta = min(best_delta, delta_max)
    else:
        raise ExplainerError(
            f"coordinate descent did not converge within {max_sweeps} sweeps")
    b = ym - float(xm @ w)
    return w, b


def lasso_path_lambda_max(X: np.ndarray, y: np.ndarray,
                          sample_weight: np.ndarray | None = None) -> float:
    """Smallest lambda that shrinks every coefficient to zero."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if sample_weight is None:
        Xc = X - X.mean(axis=0)
        yc = y - y.mean()
    else:
        wsum = float(np.sum(sample_weight))
        s = np.sqrt(sample_weight)[:, None]
        Xc = s * (X - sample_weight @ X / wsum)
        yc = s[:, 0] * (y - sample_weight @ y / wsum)
    return float(np.max(np.abs(Xc.T @ yc)))


def sparse_linear_importance(ds: SurrogateDataset, lam: float | None = None,
                             feature_names: list[str] | None = None,
                             max_sweeps: int = _LASSO_MAX_SWEEPS
                             ) -> ImportanceScores:
    """LASSO coefficients of the surrogate dataset as importances.

    No sample weighting: locality is already enforced by how the points were
    gathered.  lam defaults to 1% of the full-shrinkage threshold.
    """
    if ds.n < 2:
        raise ExplainerError("need at least 2 surrogate points")
    if np.unique(ds.X, axis=0).shape[0] < 2:
        raise ExplainerError("need at least 2 distinct surrogate points")
    if lam is None:
        lam = lasso_path_lambda_max(ds.X, ds.y) / 100.0
    w, _ = _lasso_cd(ds.X, ds.y, lam, max_sweeps=max_sweeps)
    return ImportanceScores.from_weights(
        feature_names or _default_names(ds.d), w, METHOD_SPARSE_LINEAR)


def lime_baseline(x0: np.ndarray, model: BlackBoxModel, n_samples: int,
                  sigma_D: np.ndarray, seed: int,
                  kernel_width: float | None = None,
                  lam: float | None = None,
                  feature_names: list[str] | None = None) -> ImportanceScores:
    """Perturbation-sampling linear explainer with a locality kernel.

    Draws x_i = x0 + sigma_D * eta_i with standard-normal eta, weights each
    sample by exp(-||x_i - x0||^2 / kernel_width^2), and fits the weighted
    LASSO.  kernel_width defaults to 0.75 * sqrt(d).
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    sigma_D = np.asarray(sigma_D, dtype=float).ravel()
    d = x0.shape[0]
    if sigma_D.shape[0] != d or not np.all(sigma_D > 0):
        raise ValueError("sigma_D must be length-d positive")
    if n_samples < d + 1:
        raise ValueError(f"need at least d+1={d + 1} samples, got {n_samples}")
    if kernel_width is None:
        kernel_width = 0.75 * math.sqrt(d)
    if kernel_width <= 0:
        raise ValueError("kernel_width must be positive")

    rng = np.random.default_rng(seed)
    eta = rng.standard_normal((n_samples, d))
    X = x0 + sigma_D * eta
    y = np.array([model.predict(X[i]) for i in range(n_samples)])
    sq = np.einsum("ij,ij->i", X - x0, X - x0)
    pi = np.exp(-sq / (kernel_width ** 2))
    if np.all(pi < 1e-12):
        raise ExplainerError("all locality weights are below 1e-12; "
                             "kernel_width too small for the sample spread")
    if lam is None:
        lam = lasso_path_lambda_max(X, y, sample_weight=pi) / 100.0
    w, _ = _lasso_cd(X, y, lam, sample_weight=pi)
    return ImportanceScores.from_weights(
        feature_names or _default_names(d), w, METHOD_LIME_BASELINE)


def top_k(scores: ImportanceScores, k: int) -> list[str]:
    """The k feature names with the largest magnitudes, ordered descending;
    equal magnitudes resolve to the lower feature index."""
    if k < 1 or k > scores.d:
        raise ValueError(f"k must be in [1, {scores.d}], got {k}")
    order = sorted(range(scores.d), key=lambda j: (-scores.magnitudes[j], j))
    return [scores.feature_names[j] for j in order[:k]]
