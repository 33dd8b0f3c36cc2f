"""Black-box prediction models: builtin analytic objectives and a subprocess
client speaking a JSON-lines stdio protocol.

Every model answers scalar queries through ``predict`` and carries its input
dimensionality ``d`` and a ``name``.  Builtins are deterministic closed-form
functions (some with seeded coefficients so ground truth is known to tests);
the subprocess client wraps an external process serving real models.
"""

from __future__ import annotations

import json
import math
import os
import select
import subprocess
import time
from dataclasses import dataclass
from typing import Callable, Protocol, runtime_checkable

import numpy as np

__all__ = [
    "ModelError",
    "BlackBoxModel",
    "BUILTIN_NAMES",
    "forrester",
    "forrester_squared",
    "builtin_model",
    "CountingModel",
    "standardized_view",
    "SubprocessModelConfig",
    "SubprocessModel",
    "subprocess_model",
]


class ModelError(RuntimeError):
    """Query or transport failure of a black-box model."""


@runtime_checkable
class BlackBoxModel(Protocol):
    d: int
    name: str

    def predict(self, x: np.ndarray) -> float:
        ...


def forrester(x: float) -> float:
    """One-dimensional test objective (6x-2) * sin(12x-4)."""
    return (6.0 * x - 2.0) * math.sin(12.0 * x - 4.0)


def forrester_squared(x: float) -> float:
    """The widely used squared variant (6x-2)^2 * sin(12x-4).

    Kept under its own name; ``forrester`` here is deliberately the
    un-squared form and the two must not be conflated.
    """
    return (6.0 * x - 2.0) ** 2 * math.sin(12.0 * x - 4.0)


class _FunctionModel:
    """Adapter from a vector->scalar callable to the model interface."""

    def __init__(self, name: str, d: int, fn: Callable[[np.ndarray], float]):
        self.name = name
        self.d = d
        self._fn = fn

    def predict(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float).ravel()
        if x.shape[0] != self.d:
            raise ModelError(
                f"model '{self.name}' expects d={self.d}, got {x.shape[0]}")
        return float(self._fn(x))

    def __repr__(self):
        return f"<model {self.name} d={self.d}>"


BUILTIN_NAMES = ("forrester", "forrester-squared", "sphere", "linear",
                 "logistic-synthetic")


def builtin_model(name: str, d: int = 1, seed: int = 0) -> BlackBoxModel:
    """Construct a builtin objective by name.

    ``linear`` and ``logistic-synthetic`` draw their coefficients from the
    seed and expose them as ``.w`` (and ``.b`` for linear) so tests can check
    recovered importances against ground truth.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if name in ("forrester", "forrester-squared"):
        if d != 1:
            raise ValueError(f"{name} is one-dimensional")
        fn = forrester if name == "forrester" else forrester_squared
        return _FunctionModel(name, 1, lambda x: fn(float(x[0])))
    if name == "sphere":
        return _FunctionModel("sphere", d, lambda x: float(np.dot(x, x)))
    if name == "linear":
        rng = np.random.default_rng(seed)
        w = rng.standard_normal(d)
        b = float(rng.standard_normal())
        m = _FunctionModel("linear", d, lambda x: float(w @ x) + b)
        m.w, m.b = w, b
        return m
    if name == "logistic-synthetic":
        # Geometrically decaying relevance magnitudes in seeded shuffled
        # order with seeded signs: the top-k of |w| is well separated, so
        # explanation sets have an unambiguous ground truth to agree on.
        rng = np.random.default_rng(seed)
        signs = rng.choice([-1.0, 1.0], size=d)
        w = signs * rng.permutation(0.75 ** np.arange(d))
        m = _FunctionModel("logistic-synthetic", d,
                           lambda x: 1.0 / (1.0 + math.exp(-float(w @ x))))
        m.w = w
        return m
    raise ValueError(f"unknown builtin model '{name}'; "
                     f"choose from {', '.join(BUILTIN_NAMES)}")


class CountingModel:
    """Wrapper counting predict calls, for query-budget assertions."""

    def __init__(self, base: BlackBoxModel):
        self._base = base
        self.calls = 0

    @property
    def d(self) -> int:
        return self._base.d

    @property
    def name(self) -> str:
        return self._base.name

    def predict(self, x: np.ndarray) -> float:
        self.calls += 1
        return self._base.predict(x)


class _StandardizedView:
    """Expose a model in standardized coordinates z = (x - mean) / scale."""

    def __init__(self, base: BlackBoxModel, mean: np.ndarray, scale: np.ndarray):
        self._base = base
        self._mean = np.asarray(mean, dtype=float).ravel()
        self._scale = np.asarray(scale, dtype=float).ravel()
        if self._mean.shape[0] != base.d or self._scale.shape[0] != base.d:
            raise ValueError("mean/scale length must match model dimension")
        if not np.all(self._scale > 0):
            raise ValueError("scale entries must be positive")
        self.d = base.d
        self.name = f"standardized({base.name})"

    def predict(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=float).ravel()
        return self._base.predict(self._mean + self._scale * z)


def standardized_view(base: BlackBoxModel, mean: np.ndarray,
                      scale: np.ndarray) -> BlackBoxModel:
    return _StandardizedView(base, mean, scale)


@dataclass
class SubprocessModelConfig:
    """Launch configuration for an external model process."""

    command: list[str]
    startup_timeout: float = 10.0
    per_query_timeout: float = 30.0

    def __post_init__(self):
        if not self.command:
            raise ValueError("command must be non-empty")
        if self.startup_timeout <= 0 or self.per_query_timeout <= 0:
            raise ValueError("timeouts must be positive")


class SubprocessModel:
    """Client for one child process speaking the JSON-lines protocol.

    One request line per predict, one response line back, strictly serial.
    Floats travel as their shortest round-trip decimal form, so any finite
    double survives the trip bit-for-bit.
    """

    def __init__(self, cfg: SubprocessModelConfig):
        self._cfg = cfg
        self._proc = None
        self._buf = b""
        self._next_id = 0
        self._closed = False
        try:
            self._proc = subprocess.Popen(
                cfg.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=None)
        except OSError as exc:
            raise ModelError(f"failed to spawn adapter {cfg.command!r}: {exc}")
        hello = self._roundtrip({"op": "hello"}, cfg.startup_timeout)
        if hello.get("op") != "hello":
            self._abort()
            raise ModelError(f"bad handshake reply: {hello!r}")
        try:
            self.d = int(hello["d"])
            self.name = str(hello["name"])
        except (KeyError, TypeError, ValueError):
            self._abort()
            raise ModelError(f"handshake missing d/name: {hello!r}")
        if self.d < 1:
            self._abort()
            raise ModelError(f"adapter declared invalid d={self.d}")

    # -- transport ---------------------------------------------------------

    def _send(self, obj: dict) -> None:
        line = json.dumps(obj, separators=(",", ":")) + "\n"
        try:
            self._proc.stdin.write(line.encode())
            self._proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise ModelError(self._died(f"write failed: {exc}"))

    def _read_line(self, timeout: float) -> str:
        fd = self._proc.stdout.fileno()
        deadline = time.monotonic() + timeout
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = self._buf[:nl]
                self._buf = self._buf[nl + 1:]
                return line.decode("utf-8", errors="replace")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ModelError(
                    f"adapter '{self._cfg.command[0]}' timed out after {timeout}s")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                raise ModelError(
                    f"adapter '{self._cfg.command[0]}' timed out after {timeout}s")
            chunk = os.read(fd, 65536)
            if not chunk:
                raise ModelError(self._died("adapter closed its output"))
            self._buf += chunk

    def _roundtrip(self, obj: dict, timeout: float) -> dict:
        self._send(obj)
        line = self._read_line(timeout)
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ModelError(f"malformed adapter response {line!r}: {exc}")
        if not isinstance(reply, dict):
            raise ModelError(f"adapter response is not an object: {line!r}")
        return reply

    def _died(self, msg: str) -> str:
        code = self._proc.poll()
        if code is not None:
            return f"{msg} (adapter exited with status {code})"
        return msg

    def _abort(self) -> None:
        if self._proc and self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()
        self._closed = True

    # -- public API --------------------------------------------------------

    def predict(self, x: np.ndarray) -> float:
        if self._closed:
            raise ModelError("adapter connection already closed")
        x = np.asarray(x, dtype=float).ravel()
        if x.shape[0] != self.d:
            raise ModelError(f"adapter '{self.name}' expects d={self.d}, "
                             f"got {x.shape[0]}")
        qid = self._next_id
        self._next_id += 1
        reply = self._roundtrip({"id": qid, "x": [float(v) for v in x]},
                                self._cfg.per_query_timeout)
        if "error" in reply:
            raise ModelError(f"adapter error for id={qid}: {reply['error']}")
        if reply.get("id") != qid:
            raise ModelError(
                f"adapter answered id={reply.get('id')!r}, expected {qid}")
        try:
            y = float(reply["y"])
        except (KeyError, TypeError, ValueError):
            raise ModelError(f"adapter response missing numeric y: {reply!r}")
        if not math.isfinite(y):
            raise ModelError(f"adapter returned non-finite y={y!r}")
        return y

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        proc = self._proc
        if proc is None:
            return
        if proc.poll() is None:
            try:
                proc.stdin.write(b'{"op":"bye"}\n')
                proc.stdin.flush()
                proc.stdin.close()
            except (OSError, ValueError):
                pass
            try:
                proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()

    def __enter__(self) -> "SubprocessModel":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def subprocess_model(cfg: SubprocessModelConfig) -> SubprocessModel:
    """Spawn the adapter, perform the handshake, and return the client."""
    return SubprocessModel(cfg)
