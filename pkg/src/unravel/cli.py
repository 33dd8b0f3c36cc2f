"""Command-line client for reproducible explanation and experiment runs.

Subcommands build a request from flags (optionally merged over a ``--config``
JSON file, flags winning), send it to the HTTP service — in-process by
default, or to ``--server URL`` — and write the returned artifacts to
``--out-dir``.  Every artifact embeds the seed, a canonical config hash, and
the tool version; CSV bodies contain no timestamps, so identical configs
reproduce identical bytes.

Exit codes: 0 success; 1 usage or configuration error; 2 runtime failure
(model crash, engine abort, unreachable server).  Set ``UNRAVEL_LOG`` to a
level name (debug, info, ...) for diagnostics on stderr.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click

from . import __version__
from .schemas import ExplainIn, config_hash

log = logging.getLogger("unravel")


class ConfigFailure(Exception):
    """Bad run configuration discovered after flag parsing (exit 1)."""


class RuntimeFailure(Exception):
    """The run itself failed (exit 2)."""

    def __init__(self, detail: str, resp=None):
        super().__init__(detail)
        self.resp = resp


# ---------------------------------------------------------------------------
# Plumbing
# ---------------------------------------------------------------------------

def _client(server: str | None):
    """In-process app client by default, real HTTP when --server is given."""
    if server is None:
        from fastapi.testclient import TestClient

        from .service import create_app
        return TestClient(create_app())
    import httpx
    return httpx.Client(base_url=server, timeout=None)


def _post(server: str | None, path: str, body: dict) -> dict:
    log.debug("POST %s %s", path, json.dumps(body))
    try:
        with _client(server) as client:
            resp = client.post(path, json=body)
    except Exception as e:  # connection refused, protocol errors, ...
        raise RuntimeFailure(f"could not reach service: {e}")
    if resp.status_code == 200:
        return resp.json()
    detail = _error_detail(resp)
    if resp.status_code in (400, 422):
        raise ConfigFailure(detail)
    raise RuntimeFailure(detail, resp)


def _error_detail(resp) -> str:
    try:
        detail = resp.json().get("detail")
    except ValueError:
        return resp.text.strip() or f"HTTP {resp.status_code}"
    if isinstance(detail, list):  # schema validation report
        parts = []
        for err in detail:
            loc = ".".join(str(p) for p in err.get("loc", []) if p != "body")
            parts.append(f"{loc}: {err.get('msg', 'invalid')}")
        return "; ".join(parts)
    return str(detail)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as e:
        raise ConfigFailure(f"cannot read config file: {e}")
    except json.JSONDecodeError as e:
        raise ConfigFailure(f"config file is not valid JSON: {e}")
    if not isinstance(cfg, dict):
        raise ConfigFailure("config file must hold a JSON object")
    return cfg


def _merge(config: dict, flags: dict) -> dict:
    """Config-file values overridden by explicitly provided flags."""
    merged = dict(config)
    merged.update({k: v for k, v in flags.items() if v is not None})
    return merged


def _floats(text) -> list[float]:
    if isinstance(text, list):
        return [float(v) for v in text]
    try:
        return [float(part) for part in str(text).split(",") if part != ""]
    except ValueError:
        raise ConfigFailure(f"expected comma-separated numbers, got {text!r}")


def _names(text) -> list[str]:
    if isinstance(text, list):
        return [str(v) for v in text]
    return [part.strip() for part in str(text).split(",") if part.strip()]


def _model_source(cfg: dict) -> dict:
    src: dict = {}
    if cfg.get("model") is not None:
        src["builtin"] = cfg["model"]
    if cfg.get("adapter_cmd") is not None:
        src["adapter_cmd"] = cfg["adapter_cmd"]
    if cfg.get("d") is not None:
        src["d"] = int(cfg["d"])
    if cfg.get("model_seed") is not None:
        src["model_seed"] = int(cfg["model_seed"])
    if not ("builtin" in src or "adapter_cmd" in src):
        raise ConfigFailure("provide a model: --model NAME or --adapter-cmd CMD")
    return src


def _dataset_source(cfg: dict, want_row: bool) -> dict | None:
    if cfg.get("dataset") is None:
        return None
    src: dict = {"path": cfg["dataset"]}
    if cfg.get("target_column") is not None:
        src["target_column"] = cfg["target_column"]
    if want_row and cfg.get("row") is not None:
        src["row"] = int(cfg["row"])
    return src


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg.get("out_dir") or ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".unravel-write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise ConfigFailure(f"output directory is not writable: {e}")
    return out


def _meta_header(meta: dict, flagged: str = "") -> str:
    tail = f" {flagged}" if flagged else ""
    return (f"# unravel {meta['version']} seed={meta['seed']} "
            f"config={meta['config_hash']}{tail}\n")


def _write_text(path: Path, text: str):
    path.write_text(text)
    click.echo(f"wrote {path}", err=True)


def _write_json(path: Path, obj: dict):
    _write_text(path, json.dumps(obj, indent=2) + "\n")


def _client_meta(schema_cls, body: dict) -> dict:
    """Meta block computed client-side (used when the run fails mid-way)."""
    model = schema_cls(**body)
    return {"seed": model.seed, "config_hash": config_hash(model),
            "version": __version__, "model": ""}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

@click.group(name="unravel")
@click.version_option(version=__version__, prog_name="unravel")
def cli():
    """Local explanations of black-box models by uncertainty-guided sampling."""


_common = [
    click.option("--config", "config_path", type=str, default=None,
                 help="JSON file with defaults for this subcommand "
                      "(explicit flags win)."),
    click.option("--server", type=str, default=None,
                 help="Base URL of a running service; default runs in-process."),
    click.option("--out-dir", type=str, default=None,
                 help="Directory for output artifacts (default: current)."),
    click.option("--seed", type=int, default=None, help="Run seed."),
]


def _with(options):
    def deco(f):
        for opt in reversed(options):
            f = opt(f)
        return f
    return deco


@cli.command("explain")
@_with(_common)
@click.option("--model", type=str, default=None,
              help="Builtin model name (e.g. forrester, sphere).")
@click.option("--adapter-cmd", type=str, default=None,
              help="Command line of a stdio model adapter.")
@click.option("--d", type=int, default=None, help="Builtin dimensionality.")
@click.option("--model-seed", type=int, default=None,
              help="Seed for randomized builtin models.")
@click.option("--dataset", type=str, default=None, help="CSV of index samples.")
@click.option("--target-column", type=str, default=None,
              help="Label column to exclude from features.")
@click.option("--x0", type=str, default=None,
              help="Index sample as comma-separated numbers.")
@click.option("--row", type=int, default=None,
              help="Preprocessed dataset row to explain.")
@click.option("--budget", type=int, default=None, help="Sampling iterations.")
@click.option("--acq", type=click.Choice(["ucb", "ur", "fur"]), default=None,
              help="Acquisition rule.")
@click.option("--kernel", type=click.Choice(["matern52", "matern32", "linear"]),
              default=None, help="Surrogate kernel family.")
@click.option("--explainer", type=click.Choice(["sparse-linear", "ard"]),
              default=None, help="Score extraction method.")
@click.option("--lam", type=float, default=None,
              help="Sparse-linear penalty (default: lambda_max/100).")
@click.option("--sigma", type=str, default=None,
              help="Per-feature deviations, comma-separated (default: ones).")
@click.option("--refit-every", type=int, default=None,
              help="Hyperparameter refit period.")
def cmd_explain(config_path, server, out_dir, seed, **flags):
    """Sample around an index sample and write surrogate + importance scores."""
    cfg = _merge(_load_config(config_path),
                 {"out_dir": out_dir, "seed": seed, **flags})
    body: dict = {"model": _model_source(cfg)}
    ds = _dataset_source(cfg, want_row=True)
    if ds is not None:
        body["dataset"] = ds
    if cfg.get("x0") is not None:
        body["x0"] = _floats(cfg["x0"])
    for key in ("budget", "acq", "kernel", "seed", "explainer", "lam",
                "refit_every"):
        if cfg.get(key) is not None:
            body[key] = cfg[key]
    if cfg.get("sigma") is not None:
        body["sigma"] = _floats(cfg["sigma"])
    out = _out_dir(cfg)

    try:
        result = _post(server, "/explain", body)
    except RuntimeFailure as e:
        # Persist whatever the aborted run gathered, clearly flagged.
        if e.resp is not None:
            partial = _partial_surrogate(e.resp)
            if partial is not None:
                meta = _client_meta(ExplainIn, body)
                _write_text(out / "surrogate.csv",
                            _meta_header(meta, "PARTIAL") + partial)
        raise

    header = _meta_header(result["meta"])
    _write_text(out / "surrogate.csv", header + result["surrogate_csv"])
    _write_text(out / "trace.csv", header + result["trace_csv"])
    _write_json(out / "scores.json",
                {"meta": result["meta"], "scores": result["scores"]})


def _partial_surrogate(resp) -> str | None:
    try:
        return resp.json().get("partial_surrogate_csv")
    except ValueError:
        return None


@cli.command("stability")
@_with(_common)
@click.option("--model", type=str, default=None, help="Builtin model name.")
@click.option("--adapter-cmd", type=str, default=None,
              help="Command line of a stdio model adapter.")
@click.option("--d", type=int, default=None, help="Builtin dimensionality.")
@click.option("--model-seed", type=int, default=None,
              help="Seed for randomized builtin models.")
@click.option("--dataset", type=str, default=None,
              help="CSV supplying the index samples.")
@click.option("--target-column", type=str, default=None,
              help="Label column to exclude from features.")
@click.option("--methods", type=str, default=None,
              help="Comma-separated subset of: unravel, lime.")
@click.option("--runs", type=int, default=None, help="Repetitions per sample.")
@click.option("--samples", type=int, default=None, help="Index sample count.")
@click.option("--budget", type=int, default=None,
              help="Iterations (unravel) / perturbations (lime) per run.")
@click.option("--top-k", type=int, default=None, help="Top-k set size.")
@click.option("--acq", type=click.Choice(["ucb", "ur", "fur"]), default=None,
              help="Acquisition rule for the unravel method.")
@click.option("--kernel", type=click.Choice(["matern52", "matern32", "linear"]),
              default=None, help="Surrogate kernel family.")
@click.option("--lam", type=float, default=None, help="Sparse-linear penalty.")
def cmd_stability(config_path, server, out_dir, seed, **flags):
    """Measure top-k drift across repeated runs; write stability.json."""
    cfg = _merge(_load_config(config_path),
                 {"out_dir": out_dir, "seed": seed, **flags})
    body: dict = {"model": _model_source(cfg)}
    ds = _dataset_source(cfg, want_row=False)
    if ds is not None:
        body["dataset"] = ds
    if cfg.get("methods") is not None:
        body["methods"] = _names(cfg["methods"])
    for key in ("runs", "samples", "budget", "top_k", "acq", "kernel", "lam",
                "seed"):
        if cfg.get(key) is not None:
            body[key] = cfg[key]
    out = _out_dir(cfg)

    result = _post(server, "/stability", body)
    _write_json(out / "stability.json",
                {"meta": result["meta"], "reports": result["reports"]})


@cli.command("regret")
@_with(_common)
@click.option("--objective", type=str, default=None,
              help="Builtin objective (1-D or 2-D).")
@click.option("--d", type=int, default=None, help="Objective dimensionality.")
@click.option("--model-seed", type=int, default=None,
              help="Seed for randomized builtin objectives.")
@click.option("--x0", type=str, default=None,
              help="Anchor point, comma-separated (default: box center).")
@click.option("--domain-lower", type=str, default=None,
              help="Box lower corner, comma-separated.")
@click.option("--domain-upper", type=str, default=None,
              help="Box upper corner, comma-separated.")
@click.option("--budget", type=int, default=None, help="Rounds per trial.")
@click.option("--trials", type=int, default=None, help="Paired trials.")
@click.option("--eps-l", type=str, default=None,
              help="Comma-separated regret-difference thresholds.")
@click.option("--kernel", type=click.Choice(["matern52", "matern32", "linear"]),
              default=None, help="Surrogate kernel family.")
def cmd_regret(config_path, server, out_dir, seed, **flags):
    """Run paired global/local trials; write regret.json and the round CSV."""
    cfg = _merge(_load_config(config_path),
                 {"out_dir": out_dir, "seed": seed, **flags})
    body: dict = {}
    for key in ("objective", "d", "model_seed", "budget", "trials", "kernel",
                "seed"):
        if cfg.get(key) is not None:
            body[key] = cfg[key]
    for key in ("x0", "domain_lower", "domain_upper", "eps_l"):
        if cfg.get(key) is not None:
            body[key] = _floats(cfg[key])
    out = _out_dir(cfg)

    result = _post(server, "/regret", body)
    _write_json(out / "regret.json",
                {"meta": result["meta"], "report": result["report"]})
    _write_text(out / "regret_rounds.csv",
                _meta_header(result["meta"]) + result["rounds_csv"])


@cli.command("serve")
@click.option("--host", type=str, default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def cmd_serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(), host=host, port=port)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("UNRAVEL_LOG")
    if level:
        logging.basicConfig(level=level.upper(), stream=sys.stderr)
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as e:
        return int(e.exit_code)
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.UsageError as e:
        e.show(file=sys.stderr)
        return 1
    except ConfigFailure as e:
        click.echo(f"error: {e}", err=True)
        return 1
    except RuntimeFailure as e:
        click.echo(f"error: {e}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
