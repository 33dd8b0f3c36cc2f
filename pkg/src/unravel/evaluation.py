"""Quantitative harnesses: top-k stability and paired regret-difference runs.

Two experiment drivers live here.  ``stability_experiment`` measures how much
an explainer's top-k feature set drifts across repeated runs (mean pairwise
Jaccard distance).  ``regret_experiment`` runs paired sampling loops — a
global UCB arm and a local FUR arm sharing seeds, box, and initial data — and
evaluates a concentration bound on the per-round regret difference, together
with the Markov-inequality step underlying it.  Both reports serialize to
JSON and flat CSV.
"""

from __future__ import annotations

import io
import json
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from .acquisition import BoxDomain
from .blackbox import BlackBoxModel, ModelError
from .engine import (
    EngineError,
    ExplainRequest,
    make_acquisition,
    run_unravel,
)
from .explainers import (
    ExplainerError,
    ImportanceScores,
    lime_baseline,
    sparse_linear_importance,
    top_k,
)
from .gpr import KernelSpec

__all__ = [
    "EvaluationError",
    "jaccard_distance",
    "StabilityMethod",
    "unravel_stability_method",
    "lime_stability_method",
    "StabilityReport",
    "stability_experiment",
    "RegretRound",
    "LemmaCheck",
    "RegretReport",
    "regret_experiment",
]

_GRID_1D = 10_000
_GRID_2D = 256
_COINCIDENCE_TOL = 1e-3  # fraction of the box diameter counted as "at x0"
_LEMMA_FRACTIONS = (0.1, 0.5, 0.9)


class EvaluationError(RuntimeError):
    """An experiment harness could not produce a meaningful report."""


# ---------------------------------------------------------------------------
# Jaccard distance
# ---------------------------------------------------------------------------

def jaccard_distance(a: set, b: set) -> float:
    """1 - |A∩B| / |A∪B|; identical sets give 0, disjoint nonempty sets 1."""
    a, b = set(a), set(b)
    if not a and not b:
        raise ValueError("jaccard_distance is undefined for two empty sets")
    union = a | b
    return 1.0 - len(a & b) / len(union)


# ---------------------------------------------------------------------------
# Stability experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StabilityMethod:
    """A named recipe producing importance scores for (model, x0, budget, seed)."""

    label: str
    run: Callable[[BlackBoxModel, np.ndarray, int, int], ImportanceScores]


def unravel_stability_method(sigma_D: np.ndarray,
                             acquisition: str = "fur",
                             kernel: KernelSpec | None = None,
                             refit_every: int = 5,
                             lam: float | None = None,
                             per_coordinate: bool = True,
                             sigma_bar: float | None = None,
                             label: str = "unravel") -> StabilityMethod:
    """Active-learning surrogate followed by a sparse linear fit.

    ``budget`` is the loop length L; the model is queried L+1 times per run.
    The locality-anchored score runs in per-coordinate mode here, with the
    shift scale defaulting to mean(sigma_D)/sqrt(d) rather than the engine's
    mean(sigma_D): an isotropic d-dimensional draw has norm ~ sqrt(d), so
    dividing it out keeps queries on a hyper-sphere whose radius decays like
    sigma_bar/log(n) regardless of dimension.  Late queries then stay
    genuinely local to the index sample, which is what makes the sparse
    fit's selected support reproducible across seeds.
    """
    sigma_D = np.asarray(sigma_D, dtype=float)
    if sigma_bar is None and per_coordinate:
        sigma_bar = float(sigma_D.mean()) / math.sqrt(sigma_D.shape[0])

    def run(model: BlackBoxModel, x0: np.ndarray, budget: int,
            seed: int) -> ImportanceScores:
        req = ExplainRequest(x0=np.asarray(x0, dtype=float), budget=budget,
                             acquisition=make_acquisition(
                                 acquisition, per_coordinate=per_coordinate),
                             sigma_D=sigma_D, sigma_bar=sigma_bar,
                             kernel=kernel, seed=seed,
                             refit_every=refit_every)
        ds, _ = run_unravel(req, model)
        return sparse_linear_importance(ds, lam=lam)

    return StabilityMethod(label=label, run=run)


def lime_stability_method(sigma_D: np.ndarray,
                          kernel_width: float | None = None,
                          lam: float | None = None,
                          label: str = "lime") -> StabilityMethod:
    """Gaussian-perturbation baseline; ``budget`` is the sample count."""
    sigma_D = np.asarray(sigma_D, dtype=float)

    def run(model: BlackBoxModel, x0: np.ndarray, budget: int,
            seed: int) -> ImportanceScores:
        return lime_baseline(np.asarray(x0, dtype=float), model,
                             n_samples=budget, sigma_D=sigma_D, seed=seed,
                             kernel_width=kernel_width, lam=lam)

    return StabilityMethod(label=label, run=run)


@dataclass(frozen=True)
class StabilityReport:
    """Mean pairwise top-k Jaccard distance, per index sample and overall.

    ``per_index_sample[i]`` averages over runs_used[i]*(runs_used[i]-1)/2
    pairs; index samples with fewer than two successful runs are excluded
    from ``overall_mean`` and carry NaN.  ``excluded_runs`` counts failures.
    """

    method: str
    runs: int
    top_k: int
    per_index_sample: tuple[float, ...]
    runs_used: tuple[int, ...]
    overall_mean: float
    excluded_runs: int
    failure_messages: tuple[str, ...]

    def __post_init__(self):
        if not (0.0 <= self.overall_mean <= 1.0):
            raise ValueError("overall_mean must lie in [0, 1]")

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "runs": self.runs,
            "top_k": self.top_k,
            "per_index_sample": [None if math.isnan(v) else v
                                 for v in self.per_index_sample],
            "runs_used": list(self.runs_used),
            "overall_mean": self.overall_mean,
            "excluded_runs": self.excluded_runs,
            "failure_messages": list(self.failure_messages),
        }

    def to_json_text(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        buf.write("sample_index,mean_pairwise_jaccard,runs_used\n")
        for i, (v, used) in enumerate(zip(self.per_index_sample,
                                          self.runs_used)):
            val = "" if math.isnan(v) else repr(v)
            buf.write(f"{i},{val},{used}\n")
        return buf.getvalue()


def stability_experiment(method: StabilityMethod,
                         model: BlackBoxModel,
                         index_samples: Sequence[np.ndarray],
                         runs: int,
                         budget: int,
                         k: int,
                         base_seed: int = 0) -> StabilityReport:
    """Run ``method`` ``runs`` times per index sample (seeds base_seed..+runs-1)
    and average pairwise Jaccard distances of the top-``k`` feature sets.

    Failed runs are excluded and surfaced in the report; an index sample
    needs at least two successful runs to contribute.
    """
    if runs < 2:
        raise ValueError("stability needs at least 2 runs per index sample")
    if len(index_samples) == 0:
        raise ValueError("at least one index sample is required")

    per_sample: list[float] = []
    runs_used: list[int] = []
    failures: list[str] = []
    for si, x0 in enumerate(index_samples):
        x0 = np.asarray(x0, dtype=float)
        tops: list[frozenset] = []
        for r in range(runs):
            seed = base_seed + r
            try:
                scores = method.run(model, x0, budget, seed)
                tops.append(frozenset(top_k(scores, k)))
            except (EngineError, ExplainerError, ModelError, ValueError) as e:
                failures.append(f"sample {si} seed {seed}: {e}")
        runs_used.append(len(tops))
        if len(tops) < 2:
            per_sample.append(math.nan)
            continue
        dists = [jaccard_distance(tops[i], tops[j])
                 for i in range(len(tops)) for j in range(i + 1, len(tops))]
        per_sample.append(float(np.mean(dists)))

    valid = [v for v in per_sample if not math.isnan(v)]
    if not valid:
        raise EvaluationError(
            "no index sample produced two successful runs; failures: "
            + "; ".join(failures[:5]))
    return StabilityReport(method=method.label, runs=runs, top_k=k,
                           per_index_sample=tuple(per_sample),
                           runs_used=tuple(runs_used),
                           overall_mean=float(np.mean(valid)),
                           excluded_runs=len(failures),
                           failure_messages=tuple(failures))


# ---------------------------------------------------------------------------
# Regret experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegretRound:
    """Trial-averaged quantities for one (epsilon_l, round) cell.

    ``zeta`` follows the derivation's final inequality: the regret difference
    stays below ``epsilon_l`` with probability at least 1 - zeta.
    ``zeta_statement`` is the alternative sign bookkeeping (1 - zeta) kept
    for cross-checking; ``vacuous`` flags zeta >= 1 or degenerate inputs.
    """

    epsilon_l: float
    round: int
    r_g: float
    r_l: float
    abs_diff: float
    d_hat: float
    delta_n: float
    eta1: float
    eta2: float
    zeta: float
    zeta_statement: float
    vacuous: bool
    empirical_frequency: float
    bound_satisfied: bool


@dataclass(frozen=True)
class LemmaCheck:
    """Markov-step check: Pr(||x_g - x_l|| >= eps1) <= d_hat/eps1 + (1-b0)·γ/eps1."""

    epsilon1: float
    empirical_probability: float
    bound: float
    satisfied: bool


def _json_num(v: float):
    return None if not math.isfinite(v) else v


@dataclass(frozen=True)
class RegretReport:
    """Paired global/local regret rounds plus concentration-bound inputs."""

    objective: str
    trials: int
    budget: int
    seed: int
    gamma: float
    m_hat: float
    beta0_hat: float
    d_hat_overall: float
    x_star: tuple[float, ...]
    f_star: float
    rounds: tuple[RegretRound, ...]
    lemma_checks: tuple[LemmaCheck, ...]

    def to_json(self) -> dict:
        return {
            "objective": self.objective,
            "trials": self.trials,
            "budget": self.budget,
            "seed": self.seed,
            "gamma": self.gamma,
            "m_hat": self.m_hat,
            "beta0_hat": self.beta0_hat,
            "d_hat_overall": self.d_hat_overall,
            "x_star": list(self.x_star),
            "f_star": self.f_star,
            "rounds": [{
                "epsilon_l": r.epsilon_l,
                "round": r.round,
                "r_g": r.r_g,
                "r_l": r.r_l,
                "abs_diff": r.abs_diff,
                "d_hat": r.d_hat,
                "delta_n": r.delta_n,
                "eta1": _json_num(r.eta1),
                "eta2": _json_num(r.eta2),
                "zeta": _json_num(r.zeta),
                "zeta_statement": _json_num(r.zeta_statement),
                "vacuous": r.vacuous,
                "empirical_frequency": r.empirical_frequency,
                "bound_satisfied": r.bound_satisfied,
            } for r in self.rounds],
            "lemma_checks": [{
                "epsilon1": c.epsilon1,
                "empirical_probability": c.empirical_probability,
                "bound": c.bound,
                "satisfied": c.satisfied,
            } for c in self.lemma_checks],
        }

    def to_json_text(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        buf.write("epsilon_l,round,r_g,r_l,abs_diff,d_hat,delta_n,eta1,eta2,"
                  "zeta,empirical_frequency,vacuous,bound_satisfied\n")
        for r in self.rounds:
            buf.write(",".join([
                repr(r.epsilon_l), str(r.round), repr(r.r_g), repr(r.r_l),
                repr(r.abs_diff), repr(r.d_hat), repr(r.delta_n),
                repr(r.eta1), repr(r.eta2), repr(r.zeta),
                repr(r.empirical_frequency), str(int(r.vacuous)),
                str(int(r.bound_satisfied)),
            ]) + "\n")
        return buf.getvalue()


def _dense_grid(domain: BoxDomain) -> np.ndarray:
    d = domain.lower.shape[0]
    if d == 1:
        return np.linspace(domain.lower[0], domain.upper[0], _GRID_1D)[:, None]
    if d == 2:
        xs = np.linspace(domain.lower[0], domain.upper[0], _GRID_2D)
        ys = np.linspace(domain.lower[1], domain.upper[1], _GRID_2D)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])
    raise EvaluationError(
        f"dense-grid reference requires a 1-D or 2-D objective, got d={d}")


def _max_slope(domain: BoxDomain, fg: np.ndarray) -> float:
    """Largest adjacent finite-difference slope magnitude on the grid."""
    d = domain.lower.shape[0]
    if d == 1:
        h = (domain.upper[0] - domain.lower[0]) / (_GRID_1D - 1)
        return float(np.max(np.abs(np.diff(fg))) / h)
    f2 = fg.reshape(_GRID_2D, _GRID_2D)
    hx = (domain.upper[0] - domain.lower[0]) / (_GRID_2D - 1)
    hy = (domain.upper[1] - domain.lower[1]) / (_GRID_2D - 1)
    sx = np.max(np.abs(np.diff(f2, axis=0))) / hx
    sy = np.max(np.abs(np.diff(f2, axis=1))) / hy
    return float(max(sx, sy))


def _bound_terms(A: float, m_hat: float, s: float) -> tuple[float, float, float]:
    """(eta1, eta2, zeta) minimizing A/eta1 + m_hat/eta2 s.t. eta1·eta2 = s."""
    if A <= 0.0 or m_hat <= 0.0:
        # Degenerate geometry (flat objective or all mass at x0): the bound
        # carries no information, flagged vacuous by the caller via zeta=inf.
        return math.nan, math.nan, math.inf
    eta1 = math.sqrt(A * s / m_hat)
    eta2 = s / eta1
    return eta1, eta2, A / eta1 + m_hat / eta2


def regret_experiment(objective: BlackBoxModel,
                      domain: BoxDomain,
                      x0: np.ndarray,
                      budget: int,
                      trials: int,
                      epsilon_l: float | Sequence[float],
                      seed: int = 0,
                      kernel: KernelSpec | None = None,
                      refit_every: int = 5) -> RegretReport:
    """Paired trials of a global UCB arm vs a local FUR arm on one box.

    Both arms of a trial share the seed, the kernel, the box, and the initial
    observation at ``x0``; they differ only in the acquisition rule.  Regret
    is measured against the best value on a dense reference grid.  For each
    requested ``epsilon_l`` and round, the report carries the concentration
    bound 1 - zeta together with the observed frequency of
    |r_global - r_local| < epsilon_l across trials, plus Markov-step checks
    at three distance thresholds.
    """
    x0 = np.asarray(x0, dtype=float)
    if trials < 1:
        raise ValueError("at least one trial is required")
    if isinstance(epsilon_l, (int, float, np.integer, np.floating)):
        eps_values = (float(epsilon_l),)
    else:
        eps_values = tuple(float(e) for e in epsilon_l)
    if not eps_values or any(e <= 0 for e in eps_values):
        raise ValueError("epsilon_l values must be positive")
    if not domain.contains(x0):
        raise ValueError("x0 must lie inside the domain box")

    grid = _dense_grid(domain)
    fg = np.array([objective.predict(x) for x in grid], dtype=float)
    if not np.all(np.isfinite(fg)):
        raise EvaluationError("objective is not finite on the reference grid")
    star = int(np.argmax(fg))
    f_star = float(fg[star])
    m_hat = _max_slope(domain, fg)
    gamma = domain.diameter
    sigma_D = domain.width / 2.0

    L = budget
    xg = np.empty((trials, L, x0.shape[0]))
    xl = np.empty_like(xg)
    yg = np.empty((trials, L))
    yl = np.empty((trials, L))
    f_x0 = float(objective.predict(x0))
    for t in range(trials):
        per_arm = {}
        for arm, acq in (("g", make_acquisition("ucb", schedule="theoretical")),
                         ("l", make_acquisition("fur"))):
            req = ExplainRequest(x0=x0, budget=L, acquisition=acq,
                                 sigma_D=sigma_D, kernel=kernel,
                                 seed=seed + t, refit_every=refit_every,
                                 domain=domain)
            ds, _ = run_unravel(req, objective)
            per_arm[arm] = ds
        xg[t] = per_arm["g"].X[1:]
        yg[t] = per_arm["g"].y[1:]
        xl[t] = per_arm["l"].X[1:]
        yl[t] = per_arm["l"].y[1:]

    # Pooled bound inputs.
    dist_l_x0 = np.linalg.norm(xl - x0, axis=2)            # (trials, L)
    beta0_hat = float(np.mean(dist_l_x0 <= _COINCIDENCE_TOL * gamma))
    dist_g_x0 = np.linalg.norm(xg - x0, axis=2)            # (trials, L)
    d_hat_overall = float(np.mean(dist_g_x0))

    r_g = yg - f_star
    r_l = yl - f_star
    abs_diff = np.abs(r_g - r_l)                           # (trials, L)
    delta = np.abs(yg - f_x0)                              # (trials, L)

    rounds = []
    for eps in eps_values:
        for n in range(L):
            d_hat = float(np.mean(dist_g_x0[:, n]))
            delta_n = float(np.mean(delta[:, n]))
            A = d_hat + (1.0 - beta0_hat) * gamma
            eta1, eta2, zeta = _bound_terms(A, m_hat, eps + delta_n)
            freq = float(np.mean(abs_diff[:, n] < eps))
            vacuous = not (zeta < 1.0)
            rounds.append(RegretRound(
                epsilon_l=eps, round=n + 1,
                r_g=float(np.mean(r_g[:, n])), r_l=float(np.mean(r_l[:, n])),
                abs_diff=float(np.mean(abs_diff[:, n])),
                d_hat=d_hat, delta_n=delta_n, eta1=eta1, eta2=eta2,
                zeta=zeta, zeta_statement=1.0 - zeta, vacuous=vacuous,
                empirical_frequency=freq,
                bound_satisfied=vacuous or freq >= 1.0 - zeta))

    dist_gl = np.linalg.norm(xg - xl, axis=2).ravel()
    checks = []
    for frac in _LEMMA_FRACTIONS:
        eps1 = frac * gamma
        emp = float(np.mean(dist_gl >= eps1))
        bound = d_hat_overall / eps1 + (1.0 - beta0_hat) * gamma / eps1
        checks.append(LemmaCheck(epsilon1=eps1, empirical_probability=emp,
                                 bound=bound,
                                 satisfied=emp <= bound + 1e-12))

    return RegretReport(objective=objective.name, trials=trials, budget=L,
                        seed=seed, gamma=gamma, m_hat=m_hat,
                        beta0_hat=beta0_hat, d_hat_overall=d_hat_overall,
                        x_star=tuple(float(v) for v in grid[star]),
                        f_star=f_star, rounds=tuple(rounds),
                        lemma_checks=tuple(checks))
