"""HTTP facade over the sampling engine and experiment harnesses.

``create_app`` builds a FastAPI application with four routes: ``/health``,
``/explain``, ``/stability``, and ``/regret``.  Endpoints are pure compute —
they return artifact bodies (CSV text, score/report objects) and never touch
the filesystem except to read datasets named in the request.  Error mapping:
invalid request shapes are 422 (schema) or 400 (config semantics), failures
while running are 500; a mid-run abort attaches the partial surrogate CSV so
clients can persist what was gathered.
"""

from __future__ import annotations

import shlex
from contextlib import contextmanager

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from . import __version__
from .blackbox import (
    BUILTIN_NAMES,
    BlackBoxModel,
    ModelError,
    SubprocessModel,
    SubprocessModelConfig,
    builtin_model,
    standardized_view,
)
from .dataset import DatasetError, load_csv, preprocess
from .engine import EngineError, ExplainRequest, make_acquisition, run_unravel
from .evaluation import (
    EvaluationError,
    lime_stability_method,
    regret_experiment,
    stability_experiment,
    unravel_stability_method,
)
from .explainers import ExplainerError, ard_importance, sparse_linear_importance
from .gpr import KernelSpec, default_kernel
from .acquisition import BoxDomain
from .engine import sample_efficiency_trace
from .schemas import (
    DatasetSource,
    ExplainIn,
    ExplainOut,
    ModelSource,
    RegretIn,
    RegretOut,
    RunMeta,
    StabilityIn,
    StabilityOut,
    config_hash,
)

__all__ = ["create_app", "app"]

# Conventional search boxes for the builtin objectives (used by /regret when
# the request leaves the domain unset).
_UNIT_INTERVAL_OBJECTIVES = ("forrester", "forrester-squared")


@contextmanager
def _open_model(src: ModelSource):
    """Yield a live model for the request, closing adapters afterwards."""
    if src.builtin is not None:
        if src.builtin not in BUILTIN_NAMES:
            raise _config_error(f"unknown builtin model {src.builtin!r}; "
                                f"choose from {', '.join(BUILTIN_NAMES)}")
        yield builtin_model(src.builtin, d=src.d or 1, seed=src.model_seed)
        return
    cmd = shlex.split(src.adapter_cmd)
    if not cmd:
        raise _config_error("adapter_cmd must contain a command")
    with SubprocessModel(SubprocessModelConfig(command=cmd)) as model:
        yield model


def _config_error(msg: str) -> HTTPException:
    return HTTPException(status_code=400, detail=msg)


def _runtime_error(msg: str) -> HTTPException:
    return HTTPException(status_code=500, detail=msg)


def _load_rows(src: DatasetSource) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Preprocess a dataset; returns (standardized rows, raw mean, raw sigma)."""
    ds = load_csv(src.path, target_column=src.target_column)
    clean, _ = preprocess(ds)
    return clean.rows, clean.raw_mean, clean.raw_sigma


def _default_kernel_for(name: str, d: int) -> KernelSpec:
    return default_kernel(name, d)


def _standardize_for_dataset(model: BlackBoxModel, src: DatasetSource):
    rows, mean, sigma = _load_rows(src)
    if model.d != rows.shape[1]:
        raise _config_error(
            f"model dimensionality {model.d} does not match the dataset's "
            f"{rows.shape[1]} features")
    return standardized_view(model, mean, sigma), rows


def create_app() -> FastAPI:
    app = FastAPI(title="unravel", version=__version__)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/explain", response_model=ExplainOut)
    def explain(body: ExplainIn):
        try:
            return _run_explain(body)
        except (DatasetError, ValueError) as e:
            raise _config_error(str(e))
        except EngineError as e:
            partial = None
            if e.partial is not None and e.partial.n > 0:
                partial = e.partial.to_csv_text()
            return JSONResponse(status_code=500, content={
                "detail": str(e), "partial_surrogate_csv": partial})
        except (ModelError, ExplainerError) as e:
            raise _runtime_error(str(e))

    @app.post("/stability", response_model=StabilityOut)
    def stability(body: StabilityIn):
        try:
            return _run_stability(body)
        except (DatasetError, ValueError) as e:
            raise _config_error(str(e))
        except (EngineError, ModelError, ExplainerError, EvaluationError) as e:
            raise _runtime_error(str(e))

    @app.post("/regret", response_model=RegretOut)
    def regret(body: RegretIn):
        try:
            return _run_regret(body)
        except ValueError as e:
            raise _config_error(str(e))
        except (EngineError, ModelError, EvaluationError) as e:
            raise _runtime_error(str(e))

    return app


def _run_explain(body: ExplainIn) -> ExplainOut:
    with _open_model(body.model) as raw_model:
        if body.dataset is not None:
            model, rows = _standardize_for_dataset(raw_model, body.dataset)
            if body.dataset.row >= rows.shape[0]:
                raise _config_error(
                    f"row {body.dataset.row} out of range "
                    f"(dataset keeps {rows.shape[0]} complete rows)")
            x0 = rows[body.dataset.row]
        else:
            model = raw_model
            x0 = np.asarray(body.x0, dtype=float)
        d = model.d
        sigma = (np.ones(d) if body.sigma is None
                 else np.asarray(body.sigma, dtype=float))
        req = ExplainRequest(
            x0=x0, budget=body.budget,
            acquisition=make_acquisition(body.acq, beta=body.beta,
                                         schedule=body.beta_schedule),
            sigma_D=sigma, kernel=_default_kernel_for(body.kernel, d),
            seed=body.seed, refit_every=body.refit_every)
        ds, gp = run_unravel(req, model)

        if body.explainer == "ard":
            kernel = gp.kernel
            if kernel.family == "linear":
                raise _config_error(
                    "ard scores need a per-feature length-scale kernel")
            scores = ard_importance(gp, x0, sigma_D=sigma)
        else:
            scores = sparse_linear_importance(ds, lam=body.lam)

        trace = sample_efficiency_trace(ds, x0)
        trace_lines = ["iteration,distance_to_x0,sigma_at_x0"]
        trace_lines += [f"{i},{dist!r},{s!r}" for i, dist, s in trace]
        meta = RunMeta(seed=body.seed, config_hash=config_hash(body),
                       version=__version__, model=model.name)
        return ExplainOut(meta=meta, surrogate_csv=ds.to_csv_text(),
                          trace_csv="\n".join(trace_lines) + "\n",
                          scores=scores.to_json())


def _run_stability(body: StabilityIn) -> StabilityOut:
    with _open_model(body.model) as raw_model:
        if body.dataset is not None:
            model, rows = _standardize_for_dataset(raw_model, body.dataset)
            if rows.shape[0] < body.samples:
                raise _config_error(
                    f"dataset keeps {rows.shape[0]} complete rows; "
                    f"cannot draw {body.samples} index samples")
            pick_rng = np.random.default_rng(
                np.random.SeedSequence(body.seed).spawn(1)[0])
            idx = pick_rng.choice(rows.shape[0], size=body.samples,
                                  replace=False)
            index_samples = [rows[i] for i in sorted(idx)]
        else:
            model = raw_model
            draw_rng = np.random.default_rng(
                np.random.SeedSequence(body.seed).spawn(1)[0])
            index_samples = list(draw_rng.standard_normal(
                (body.samples, model.d)))
        d = model.d
        sigma = np.ones(d)
        kernel = _default_kernel_for(body.kernel, d)
        methods = []
        for name in body.methods:
            if name == "unravel":
                methods.append(unravel_stability_method(
                    sigma, acquisition=body.acq, kernel=kernel,
                    refit_every=body.refit_every, lam=body.lam))
            else:
                methods.append(lime_stability_method(sigma, lam=body.lam))
        reports = [stability_experiment(m, model, index_samples,
                                        runs=body.runs, budget=body.budget,
                                        k=body.top_k, base_seed=body.seed)
                   for m in methods]
        meta = RunMeta(seed=body.seed, config_hash=config_hash(body),
                       version=__version__, model=model.name)
        return StabilityOut(meta=meta,
                            reports=[r.to_json() for r in reports])


def _run_regret(body: RegretIn) -> RegretOut:
    if body.objective not in BUILTIN_NAMES:
        raise _config_error(f"unknown builtin objective {body.objective!r}; "
                            f"choose from {', '.join(BUILTIN_NAMES)}")
    objective = builtin_model(body.objective, d=body.d, seed=body.model_seed)
    d = objective.d
    if body.domain_lower is not None:
        lower = np.asarray(body.domain_lower, dtype=float)
        upper = np.asarray(body.domain_upper, dtype=float)
    elif body.objective in _UNIT_INTERVAL_OBJECTIVES:
        lower, upper = np.zeros(d), np.ones(d)
    else:
        lower, upper = -np.ones(d), np.ones(d)
    domain = BoxDomain(lower, upper)
    x0 = ((lower + upper) / 2.0 if body.x0 is None
          else np.asarray(body.x0, dtype=float))
    report = regret_experiment(objective, domain, x0, budget=body.budget,
                               trials=body.trials, epsilon_l=body.eps_l,
                               seed=body.seed,
                               kernel=_default_kernel_for(body.kernel, d),
                               refit_every=body.refit_every)
    meta = RunMeta(seed=body.seed, config_hash=config_hash(body),
                   version=__version__, model=objective.name)
    return RegretOut(meta=meta, report=report.to_json(),
                     rounds_csv=report.to_csv_text())


app = create_app()
