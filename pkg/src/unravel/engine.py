"""Active-learning loop gathering a surrogate dataset around an index sample.

Starting from the single point (x0, f(x0)), each iteration maximizes the
acquisition over the box [x0 - sigma_D, x0 + sigma_D], queries the black-box
model once, appends the pair, and refits the surrogate GP (re-optimizing
hyperparameters on a fixed cadence).  Runs are bit-reproducible from the
request seed.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from .acquisition import (
    AcquisitionSpec,
    BoxDomain,
    FURSpec,
    URSpec,
    UCBSpec,
    maximize,
)
from .blackbox import BlackBoxModel
from .gpr import (
    GPModel,
    GPRError,
    KernelSpec,
    default_kernel,
    fit,
    optimize_hyperparameters,
    posterior,
)

__all__ = [
    "EngineError",
    "ExplainRequest",
    "SurrogateDataset",
    "make_acquisition",
    "run_unravel",
    "sample_efficiency_trace",
]

# Hyperparameter optimization cost is the loop's hot spot; keep the in-loop
# searches short and warm-started; mid-loop refits are warm-start only, and
# the final refit adds seeded restarts for a fuller pass.
_HYPEROPT_RESTARTS = 2
_HYPEROPT_SWEEPS = 8


class EngineError(RuntimeError):
    """Run failure; carries the partial surrogate dataset gathered so far."""

    def __init__(self, msg: str, partial: "SurrogateDataset | None" = None):
        super().__init__(msg)
        self.partial = partial


def make_acquisition(kind: str, beta: float = 2.0, schedule: str | None = None,
                     per_coordinate: bool = False) -> AcquisitionSpec:
    """Build an acquisition spec template from a short name.

    The locality-anchored template carries only the per-coordinate choice;
    its anchor, scale, and stream seed are filled in per run.
    """
    kind = kind.lower()
    if kind == "ucb":
        return UCBSpec(beta=beta, schedule=schedule)
    if kind == "ur":
        return URSpec()
    if kind == "fur":
        return FURSpec(np.zeros(1), 1.0, rng_seed=0, per_coordinate=per_coordinate)
    raise ValueError(f"unknown acquisition '{kind}'; choose ucb, ur, or fur")


@dataclass
class ExplainRequest:
    """Inputs for one run: index sample, budget, surrogate and search config.

    ``sigma_bar`` defaults to the mean of ``sigma_D``; ``kernel`` defaults to
    a unit-scale ARD Matern-5/2; ``domain`` defaults to the box
    [x0 - sigma_D, x0 + sigma_D] and may be overridden when the search region
    is fixed externally (e.g. paired-optimizer experiments on a shared box).
    """

    x0: np.ndarray
    budget: int
    acquisition: AcquisitionSpec
    sigma_D: np.ndarray
    sigma_bar: float | None = None
    kernel: KernelSpec | None = None
    seed: int = 0
    refit_every: int = 5
    domain: BoxDomain | None = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).ravel()
        self.sigma_D = np.asarray(self.sigma_D, dtype=float).ravel()
        d = self.x0.shape[0]
        if d == 0:
            raise ValueError("x0 must be non-empty")
        if self.sigma_D.shape[0] != d:
            raise ValueError("sigma_D length must match x0")
        if not np.all(np.isfinite(self.sigma_D)) or not np.all(self.sigma_D > 0):
            raise ValueError("sigma_D entries must be finite and positive")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.refit_every < 1:
            raise ValueError("refit_every must be >= 1")
        if self.sigma_bar is None:
            self.sigma_bar = float(np.mean(self.sigma_D))
        if self.sigma_bar <= 0:
            raise ValueError("sigma_bar must be positive")
        if self.kernel is None:
            self.kernel = default_kernel("matern52", d)
        if self.kernel.dim != d:
            raise ValueError("kernel dimension does not match x0")
        if self.domain is not None and self.domain.dim != d:
            raise ValueError("domain dimension does not match x0")

    @property
    def d(self) -> int:
        return self.x0.shape[0]

    def box(self) -> BoxDomain:
        if self.domain is not None:
            return self.domain
        return BoxDomain(self.x0 - self.sigma_D, self.x0 + self.sigma_D)


@dataclass
class SurrogateDataset:
    """Ordered (x, y, iteration) triples, plus the posterior deviation at x0
    recorded after each refit (consumed by the efficiency trace)."""

    X: np.ndarray
    y: np.ndarray
    iterations: np.ndarray
    sigma_at_x0: np.ndarray

    @classmethod
    def empty(cls, d: int) -> "SurrogateDataset":
        return cls(np.empty((0, d)), np.empty(0), np.empty(0, dtype=int),
                   np.empty(0))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def points(self) -> list[tuple[np.ndarray, float, int]]:
        return [(self.X[i].copy(), float(self.y[i]), int(self.iterations[i]))
                for i in range(self.n)]

    def append(self, x: np.ndarray, y: float, iteration: int,
               sigma0: float) -> None:
        if self.n and iteration <= self.iterations[-1]:
            raise ValueError("iterations must be strictly increasing")
        self.X = np.vstack([self.X, np.asarray(x, dtype=float)[None, :]])
        self.y = np.append(self.y, float(y))
        self.iterations = np.append(self.iterations, int(iteration))
        self.sigma_at_x0 = np.append(self.sigma_at_x0, float(sigma0))

    def to_csv_text(self) -> str:
        cols = ["iteration"] + [f"x_{j}" for j in range(self.d)] + ["y"]
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        for i in range(self.n):
            cells = [str(int(self.iterations[i]))]
            cells += [repr(float(v)) for v in self.X[i]]
            cells.append(repr(float(self.y[i])))
            buf.write(",".join(cells) + "\n")
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "points": [
                {"iteration": int(self.iterations[i]),
                 "x": [float(v) for v in self.X[i]],
                 "y": float(self.y[i]),
                 "sigma_at_x0": float(self.sigma_at_x0[i])}
                for i in range(self.n)
            ]
        }

    def to_json_text(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    @classmethod
    def from_json(cls, obj: dict) -> "SurrogateDataset":
        pts = obj["points"]
        if not pts:
            raise ValueError("empty surrogate dataset")
        X = np.array([p["x"] for p in pts], dtype=float)
        return cls(
            X=X,
            y=np.array([p["y"] for p in pts], dtype=float),
            iterations=np.array([p["iteration"] for p in pts], dtype=int),
            sigma_at_x0=np.array([p.get("sigma_at_x0", np.nan) for p in pts],
                                 dtype=float),
        )


def _effective_acquisition(req: ExplainRequest, seed: int) -> AcquisitionSpec:
    acq = req.acquisition
    if isinstance(acq, FURSpec):
        return FURSpec(req.x0.copy(), float(req.sigma_bar), rng_seed=seed,
                       per_coordinate=acq.per_coordinate)
    return acq


def run_unravel(req: ExplainRequest,
                model: BlackBoxModel) -> tuple[SurrogateDataset, GPModel]:
    """Run the sampling loop; returns the surrogate data and the final GP.

    The model is queried exactly budget+1 times (index sample plus one per
    iteration).  Any model or fit failure aborts the run with the partial
    dataset attached to the raised error.
    """
    if getattr(model, "d", req.d) != req.d:
        raise EngineError(
            f"model dimensionality {model.d} does not match x0 ({req.d})")

    d = req.d
    box = req.box()
    ss = np.random.SeedSequence(req.seed).spawn(3)
    acq_rng = np.random.default_rng(ss[0])
    fur_seed = int(np.random.default_rng(ss[1]).integers(0, 2**63 - 1))
    hyper_rng = np.random.default_rng(ss[2])

    acq = _effective_acquisition(req, fur_seed)
    ds = SurrogateDataset.empty(d)

    def query(x):
        try:
            return model.predict(x)
        except Exception as exc:
            raise EngineError(f"model query failed: {exc}", partial=ds) from exc

    def refit(kernel, optimize, final=False):
        try:
            if optimize:
                kernel = optimize_hyperparameters(
                    ds.X, ds.y, kernel,
                    restarts=_HYPEROPT_RESTARTS if final else 1,
                    seed=int(hyper_rng.integers(0, 2**63 - 1)),
                    max_sweeps=_HYPEROPT_SWEEPS)
            return fit(ds.X, ds.y, kernel), kernel
        except GPRError as exc:
            raise EngineError(f"surrogate fit failed: {exc}", partial=ds) from exc

    y0 = query(req.x0)
    kernel = req.kernel.copy()
    gp0 = fit(req.x0[None, :], np.array([y0]), kernel)
    ds.append(req.x0, y0, 0, posterior(gp0, req.x0)[1] ** 0.5)
    gp = gp0

    for l in range(1, req.budget + 1):
        x_next = maximize(gp, acq, box, n=ds.n + 1,
                          seed=int(acq_rng.integers(0, 2**63 - 1)))
        y_next = query(x_next)
        ds.append(x_next, y_next, l, float("nan"))
        optimize = (l % req.refit_every == 0) or (l == req.budget)
        gp, kernel = refit(kernel, optimize, final=(l == req.budget))
        ds.sigma_at_x0[-1] = posterior(gp, req.x0)[1] ** 0.5

    return ds, gp


def sample_efficiency_trace(ds: SurrogateDataset,
                            x0: np.ndarray) -> list[tuple[int, float, float]]:
    """Per-iteration (iteration, distance to x0, posterior sigma at x0)."""
    x0 = np.asarray(x0, dtype=float).ravel()
    if ds.n == 0:
        raise ValueError("empty surrogate dataset")
    if ds.d != x0.shape[0]:
        raise ValueError("x0 dimension does not match the dataset")
    dists = np.linalg.norm(ds.X - x0, axis=1)
    return [(int(ds.iterations[i]), float(dists[i]), float(ds.sigma_at_x0[i]))
            for i in range(ds.n)]
