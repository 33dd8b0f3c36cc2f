"""Acquisition scores and a deterministic multi-start maximizer on a box.

Three scores are provided: the confidence-bound score (mean plus scaled
standard deviation), the pure uncertainty score, and the locality-anchored
uncertainty score whose distance term pulls samples toward an index point
with a stochastic, slowly shrinking offset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gpr import GPModel, PosteriorEvaluator, posterior_batch

__all__ = [
    "BoxDomain",
    "UCBSpec",
    "URSpec",
    "FURSpec",
    "ucb_score",
    "ur_score",
    "fur_score",
    "ucb_beta_schedule",
    "maximize",
]

# Relative step sizes for the coordinate pattern search (fractions of the
# per-coordinate box width).  A short full-field ranking pass comes first;
# the field is then narrowed by score each time the step crosses one of
# these resolutions, so the expensive full-width sweeps stop once the
# leading basins are clear.
_STEP_INIT = 0.25
_PRUNE_AT = 1e-2
_STEP_FINE = 1e-3
_STEP_TOL = 1e-6
_RANK_SWEEPS = 3
# Cap on the pattern-move stride multiplier (in units of the current step).
_ACCEL_CAP = 4.0


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned search box with strictly ordered bounds."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float).ravel())
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float).ravel())
        if self.lower.shape != self.upper.shape:
            raise ValueError("bound vectors must have equal length")
        if not np.all(self.lower < self.upper):
            raise ValueError("every lower bound must be strictly below its upper bound")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.width))

    def clip(self, X: np.ndarray) -> np.ndarray:
        return np.clip(X, self.lower, self.upper)

    def contains(self, x: np.ndarray, atol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))


def ucb_beta_schedule(n: int) -> float:
    """Standard logarithmic confidence schedule, beta_n = 2 log(n^2 pi^2 / 0.6)."""
    return 2.0 * math.log(n * n * math.pi * math.pi / 0.6)


@dataclass(frozen=True)
class UCBSpec:
    """Confidence-bound acquisition; beta either fixed or the log schedule."""

    beta: float = 2.0
    schedule: str | None = None  # None (fixed beta) or "theoretical"

    def __post_init__(self):
        if self.schedule not in (None, "theoretical"):
            raise ValueError("schedule must be None or 'theoretical'")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    def beta_at(self, n: int) -> float:
        if self.schedule == "theoretical":
            return ucb_beta_schedule(n)
        return self.beta


@dataclass(frozen=True)
class URSpec:
    """Pure uncertainty-reduction acquisition."""


@dataclass
class FURSpec:
    """Locality-anchored uncertainty acquisition.

    Carries the index point, the mean feature deviation driving the shift
    scale, and the seed of the stream from which one standard-normal draw is
    taken per maximization.  ``per_coordinate`` switches the shift from a
    scalar broadcast to independent draws per coordinate.
    """

    x0: np.ndarray
    sigma_bar: float
    rng_seed: int = 0
    per_coordinate: bool = False
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).ravel()
        if self.sigma_bar <= 0:
            raise ValueError("sigma_bar must be > 0")
        self._rng = np.random.default_rng(self.rng_seed)

    def fresh(self) -> "FURSpec":
        """New instance with the epsilon stream reset to its seed."""
        return FURSpec(self.x0.copy(), self.sigma_bar, self.rng_seed, self.per_coordinate)

    def next_eps(self) -> float | np.ndarray:
        if self.per_coordinate:
            return self._rng.standard_normal(self.x0.shape[0])
        return float(self._rng.standard_normal())


AcquisitionSpec = UCBSpec | URSpec | FURSpec


def ucb_score(gp: GPModel, x: np.ndarray, beta: float) -> float | np.ndarray:
    """mu(x) + sqrt(beta) * sigma(x); accepts a single point or a batch."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    mean, var = posterior_batch(gp, np.atleast_2d(x))
    out = mean + math.sqrt(beta) * np.sqrt(var)
    return float(out[0]) if single else out


def ur_score(gp: GPModel, x: np.ndarray) -> float | np.ndarray:
    """Posterior standard deviation at x."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    _, var = posterior_batch(gp, np.atleast_2d(x))
    out = np.sqrt(var)
    return float(out[0]) if single else out


def fur_distance_term(x: np.ndarray, x0: np.ndarray, sigma_bar: float,
                      eps: float | np.ndarray, n: int) -> float | np.ndarray:
    """Euclidean distance from x to the stochastically shifted index point."""
    if n < 2:
        raise ValueError("iteration index must be >= 2 so log(n) > 0")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    shift = sigma_bar * np.asarray(eps, dtype=float) / math.log(n)
    center = np.asarray(x0, dtype=float) + shift  # scalar shift broadcasts to all coords
    dist = np.linalg.norm(np.atleast_2d(x) - center, axis=1)
    return float(dist[0]) if single else dist


def fur_score(gp: GPModel, x: np.ndarray, x0: np.ndarray, sigma_bar: float,
              eps: float | np.ndarray, n: int) -> float | np.ndarray:
    """-||x - x0 - shift|| + sigma(x), with shift = sigma_bar * eps / log(n)."""
    dist = fur_distance_term(x, x0, sigma_bar, eps, n)
    return -dist + ur_score(gp, x)


def _batch_objective(gp: GPModel, spec: AcquisitionSpec, n: int,
                     eps: float | np.ndarray | None):
    post = PosteriorEvaluator(gp)
    if isinstance(spec, UCBSpec):
        sqrt_beta = math.sqrt(spec.beta_at(n))

        def f(X):
            mean, var = post(X)
            return mean + sqrt_beta * np.sqrt(var)
    elif isinstance(spec, URSpec):

        def f(X):
            _, var = post(X)
            return np.sqrt(var)
    elif isinstance(spec, FURSpec):
        shift = spec.sigma_bar * np.asarray(eps, dtype=float) / math.log(n)
        center = spec.x0 + shift

        def f(X):
            _, var = post(X)
            diff = X - center
            return -np.sqrt(np.einsum("ij,ij->i", diff, diff)) + np.sqrt(var)
    else:
        raise TypeError(f"unknown acquisition spec: {type(spec).__name__}")
    return f


def _compass_descent(objective, domain: BoxDomain, pts: np.ndarray,
                     scores: np.ndarray, step0: float, step_tol: float,
                     max_sweeps: int | None = None):
    """March every start with coordinate probes and a halving step.

    Each sweep evaluates the +/- probes of every still-active start in one
    batch, plus one composite candidate per start combining all improving
    coordinate offsets (the pattern move), and applies the best strict
    improvement; otherwise the step halves.  A start freezes once its
    relative step falls below step_tol, or after max_sweeps sweeps when one
    is given.  Returns refined points and scores with positions preserved.
    """
    d = domain.dim
    width = domain.width
    cur = pts.copy()
    cur_scores = scores.copy()
    step = np.full(cur.shape[0], step0)
    accel = np.ones(cur.shape[0])
    active = np.ones(cur.shape[0], dtype=bool)
    sweeps = 0
    while active.any() and (max_sweeps is None or sweeps < max_sweeps):
        sweeps += 1
        idx = np.flatnonzero(active)
        A = idx.size
        cand = np.repeat(cur[idx][:, None, :], 2 * d, axis=1)
        offs = step[idx][:, None] * width[None, :]
        for j in range(d):
            cand[:, 2 * j, j] += offs[:, j]
            cand[:, 2 * j + 1, j] -= offs[:, j]
        np.clip(cand, domain.lower, domain.upper, out=cand)
        scores_c = objective(cand.reshape(A * 2 * d, d)).reshape(A, 2 * d)
        best_j = np.argmax(scores_c, axis=1)
        best_s = scores_c[np.arange(A), best_j]

        # Pattern move: per coordinate, the sign of the better improving
        # probe (0 where neither improves), all applied at once.  It is tried
        # both at the base step and at an accelerated stride that doubles
        # while it keeps winning, so long marches across the box take few
        # sweeps without an overshoot ever wasting one; the probes stay at
        # the base step, which is what controls the search resolution.
        plus = scores_c[:, 0::2]
        minus = scores_c[:, 1::2]
        base = cur_scores[idx][:, None]
        delta = np.where((plus > base) & (plus >= minus), 1.0, 0.0)
        delta = np.where((minus > base) & (minus > plus), -1.0, delta)
        comp = np.clip(cur[idx] + delta * offs, domain.lower, domain.upper)
        fast = np.clip(cur[idx] + delta * offs * accel[idx, None],
                       domain.lower, domain.upper)
        pair_scores = objective(np.concatenate([comp, fast]))
        comp_scores = pair_scores[:A]
        fast_scores = pair_scores[A:]

        take_fast = (fast_scores > best_s) & (fast_scores >= comp_scores)
        take_comp = ~take_fast & (comp_scores > best_s)
        pattern = np.where(take_fast[:, None], fast, comp)
        pattern_scores = np.where(take_fast, fast_scores, comp_scores)
        took = take_fast | take_comp
        best_s = np.where(took, pattern_scores, best_s)
        improved = best_s > cur_scores[idx]
        moved = idx[improved]
        chosen = np.where(took[improved, None], pattern[improved],
                          cand[improved, best_j[improved]])
        cur[moved] = chosen
        cur_scores[moved] = best_s[improved]
        accel[idx] = np.where(improved & take_fast,
                              np.minimum(accel[idx] * 2.0, _ACCEL_CAP), 1.0)
        step[idx[~improved]] *= 0.5
        active[step < step_tol] = False
    return cur, cur_scores


def maximize(gp: GPModel, spec: AcquisitionSpec, domain: BoxDomain, n: int,
             seed: int = 0) -> np.ndarray:
    """Deterministic multi-start coordinate pattern search over the box.

    Starts are seeded uniform draws (the index point is added as an extra
    start for the locality-anchored score).  All starts first descend at
    coarse resolution; the field is then narrowed by score in stages, and
    only the leaders continue with a halving step until it drops below
    1e-6 of the box width.  The best refined point is returned, clipped
    to the box.  Ties are broken by the lowest start index.
    """
    d = domain.dim
    if gp.d != d:
        raise ValueError("domain dimension does not match the model")
    rng = np.random.default_rng(seed)
    n_starts = 8 + 2 * d
    starts = domain.lower + rng.uniform(size=(n_starts, d)) * domain.width

    eps = None
    if isinstance(spec, FURSpec):
        if n < 2:
            raise ValueError("iteration index must be >= 2 for the shifted score")
        eps = spec.next_eps()
        starts = np.vstack([starts, domain.clip(spec.x0)])

    objective = _batch_objective(gp, spec, n, eps)

    S = starts.shape[0]
    pts, scores = starts, objective(starts)
    for step0, step_tol, max_sweeps, keep in (
        (_STEP_INIT, _PRUNE_AT, _RANK_SWEEPS, max(6, S // 4)),
        (_STEP_INIT, _PRUNE_AT, None, max(2, S // 8)),
        (_PRUNE_AT, _STEP_FINE, None, max(2, S // 16)),
        (_STEP_FINE, _STEP_TOL, None, 1),
    ):
        pts, scores = _compass_descent(
            objective, domain, pts, scores, step0, step_tol, max_sweeps)
        order = sorted(range(pts.shape[0]),
                       key=lambda i: (-scores[i], i))[:keep]
        order.sort()  # ascending original index, so argmax ties resolve low
        pts, scores = pts[order], scores[order]
    return domain.clip(pts[0])
