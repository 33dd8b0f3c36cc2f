"""Request/response bodies for the HTTP service.

Requests mirror the CLI's run configuration: a prediction source (builtin
function or adapter command line), an optional dataset for index samples and
coordinate standardization, and the sampling/experiment knobs.  Responses
carry finished artifacts (CSV bodies, score objects, reports) plus a meta
block with the seed, a canonical config hash, and the tool version, so the
caller can write reproducible files without recomputing anything.
"""

from __future__ import annotations

import hashlib
import json
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

ACQUISITION_NAMES = ("ucb", "ur", "fur")
KERNEL_FAMILIES = ("matern52", "matern32", "linear")


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSource(StrictModel):
    """Exactly one of ``builtin`` (named test function) or ``adapter_cmd``
    (shell-style command line for a stdio model process)."""

    builtin: str | None = None
    adapter_cmd: str | None = None
    d: int | None = Field(None, ge=1, description="builtin dimensionality")
    model_seed: int = 0

    @model_validator(mode="after")
    def _exactly_one_source(self):
        if (self.builtin is None) == (self.adapter_cmd is None):
            raise ValueError("provide exactly one of builtin or adapter_cmd")
        if self.adapter_cmd is not None and self.d is not None:
            raise ValueError("d applies only to builtin models "
                             "(adapters announce their own)")
        return self


class DatasetSource(StrictModel):
    """A headered CSV whose preprocessed rows supply index samples."""

    path: str
    target_column: str | None = None
    row: int | None = Field(None, ge=0,
                            description="preprocessed row index to explain")


class RunMeta(StrictModel):
    seed: int
    config_hash: str
    version: str
    model: str


class ExplainIn(StrictModel):
    model: ModelSource
    dataset: DatasetSource | None = None
    x0: list[float] | None = None
    budget: int = Field(20, ge=1)
    acq: Literal["ucb", "ur", "fur"] = "fur"
    beta: float = Field(2.0, ge=0.0)
    beta_schedule: Literal["theoretical"] | None = None
    kernel: Literal["matern52", "matern32", "linear"] = "matern52"
    seed: int = 0
    refit_every: int = Field(5, ge=1)
    explainer: Literal["sparse-linear", "ard"] = "sparse-linear"
    lam: float | None = Field(None, ge=0.0)
    sigma: list[float] | None = None

    @model_validator(mode="after")
    def _index_sample_source(self):
        if (self.x0 is None) == (self.dataset is None):
            raise ValueError("provide exactly one of x0 or dataset")
        if self.dataset is not None and self.dataset.row is None:
            raise ValueError("dataset explain runs need a row index")
        return self


class ExplainOut(StrictModel):
    meta: RunMeta
    surrogate_csv: str
    trace_csv: str
    scores: dict


class StabilityIn(StrictModel):
    model: ModelSource
    dataset: DatasetSource | None = None
    methods: list[Literal["unravel", "lime"]] = ["unravel", "lime"]
    runs: int = Field(10, ge=2)
    samples: int = Field(5, ge=1)
    budget: int = Field(100, ge=1)
    top_k: int = Field(5, ge=1)
    acq: Literal["ucb", "ur", "fur"] = "fur"
    kernel: Literal["matern52", "matern32", "linear"] = "matern52"
    refit_every: int = Field(5, ge=1)
    lam: float | None = Field(None, ge=0.0)
    seed: int = 0

    @field_validator("methods")
    @classmethod
    def _nonempty_unique(cls, v):
        if not v:
            raise ValueError("at least one method is required")
        if len(set(v)) != len(v):
            raise ValueError("methods must be unique")
        return v


class StabilityOut(StrictModel):
    meta: RunMeta
    reports: list[dict]


class RegretIn(StrictModel):
    objective: str = "forrester"
    d: int = Field(1, ge=1, le=2)
    model_seed: int = 0
    domain_lower: list[float] | None = None
    domain_upper: list[float] | None = None
    x0: list[float] | None = None
    budget: int = Field(20, ge=1)
    trials: int = Field(50, ge=1)
    eps_l: list[float] = [0.5, 1.0, 2.0]
    kernel: Literal["matern52", "matern32", "linear"] = "matern52"
    refit_every: int = Field(5, ge=1)
    seed: int = 0

    @field_validator("eps_l")
    @classmethod
    def _positive_eps(cls, v):
        if not v:
            raise ValueError("at least one eps_l value is required")
        if any(e <= 0 for e in v):
            raise ValueError("eps_l values must be positive")
        return v

    @model_validator(mode="after")
    def _domain_pairs(self):
        if (self.domain_lower is None) != (self.domain_upper is None):
            raise ValueError("domain_lower and domain_upper come together")
        return self


class RegretOut(StrictModel):
    meta: RunMeta
    report: dict
    rounds_csv: str


def config_hash(body: BaseModel) -> str:
    """Stable short digest of a request's canonical JSON form."""
    canon = json.dumps(body.model_dump(mode="json"), sort_keys=True,
                       separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
