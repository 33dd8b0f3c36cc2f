"""Builtin objectives against frozen values; subprocess transport round-trips."""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

from unravel.blackbox import (
    BUILTIN_NAMES,
    CountingModel,
    ModelError,
    SubprocessModel,
    SubprocessModelConfig,
    builtin_model,
    forrester,
    forrester_squared,
    standardized_view,
    subprocess_model,
)

STUB = str(Path(__file__).with_name("stub_adapter.py"))


def stub_cfg(mode, d=1, **kw):
    kw.setdefault("startup_timeout", 5.0)
    kw.setdefault("per_query_timeout", 5.0)
    return SubprocessModelConfig([sys.executable, STUB, mode, str(d)], **kw)


class TestForrester:
    def test_root_of_linear_factor(self):
        assert forrester(1.0 / 3.0) == pytest.approx(0.0, abs=1e-12)

    def test_root_of_sine_factor(self):
        # 12x - 4 = pi at x = 1/3 + pi/12
        assert forrester(0.5951327211324827) == pytest.approx(0.0, abs=1e-12)

    def test_frozen_endpoint_values(self):
        assert forrester(0.0) == pytest.approx(-1.5136049906158564, rel=1e-15)
        assert forrester(1.0) == pytest.approx(3.957432986493527, rel=1e-15)

    def test_squared_variant_is_distinct(self):
        assert forrester_squared(0.0) == pytest.approx(3.027209981231713,
                                                       rel=1e-15)
        assert forrester_squared(0.0) != forrester(0.0)
        # They agree only where the linear factor is 0 or 1.
        assert forrester_squared(1.0 / 3.0) == pytest.approx(0.0, abs=1e-12)


class TestBuiltins:
    def test_names_registry(self):
        for name in BUILTIN_NAMES:
            d = 1 if name.startswith("forrester") else 3
            m = builtin_model(name, d=d, seed=1)
            assert m.name == name
            assert m.d == d

    def test_sphere(self):
        m = builtin_model("sphere", d=2)
        assert m.predict(np.zeros(2)) == 0.0
        assert m.predict(np.array([1.0, 2.0])) == 5.0

    def test_linear_intercept_and_slopes(self):
        m = builtin_model("linear", d=3, seed=7)
        assert m.predict(np.zeros(3)) == pytest.approx(m.b, rel=1e-15)
        for j in range(3):
            e = np.zeros(3)
            e[j] = 1.0
            assert m.predict(e) == pytest.approx(m.w[j] + m.b, rel=1e-12)

    def test_logistic_midpoint(self):
        m = builtin_model("logistic-synthetic", d=2, seed=3)
        # x orthogonal to w puts the logit at 0.
        x = np.array([m.w[1], -m.w[0]])
        assert m.predict(x) == pytest.approx(0.5, abs=1e-12)
        assert 0.0 < m.predict(np.array([5.0, -1.0])) < 1.0

    def test_seed_determinism(self):
        a = builtin_model("linear", d=4, seed=11)
        b = builtin_model("linear", d=4, seed=11)
        c = builtin_model("linear", d=4, seed=12)
        x = np.array([0.3, -1.0, 2.0, 0.1])
        assert a.predict(x) == b.predict(x)
        assert a.predict(x) != c.predict(x)

    def test_unknown_name_rejected(self):
        with pytest.raises(ValueError, match="unknown builtin"):
            builtin_model("rastrigin", d=2)

    def test_forrester_dimension_enforced(self):
        with pytest.raises(ValueError):
            builtin_model("forrester", d=2)

    def test_wrong_query_dimension(self):
        m = builtin_model("sphere", d=2)
        with pytest.raises(ModelError):
            m.predict(np.zeros(3))


class TestWrappers:
    def test_counting(self):
        m = CountingModel(builtin_model("sphere", d=1))
        assert m.calls == 0
        m.predict(np.array([1.0]))
        m.predict(np.array([2.0]))
        assert m.calls == 2
        assert m.d == 1 and m.name == "sphere"

    def test_standardized_view_maps_coordinates(self):
        base = builtin_model("linear", d=2, seed=5)
        mean = np.array([10.0, -3.0])
        scale = np.array([2.0, 0.5])
        view = standardized_view(base, mean, scale)
        z = np.array([1.5, -2.0])
        assert view.predict(z) == pytest.approx(
            base.predict(mean + scale * z), rel=1e-15)
        assert view.d == 2

    def test_standardized_view_validation(self):
        base = builtin_model("sphere", d=2)
        with pytest.raises(ValueError):
            standardized_view(base, np.zeros(3), np.ones(3))
        with pytest.raises(ValueError):
            standardized_view(base, np.zeros(2), np.array([1.0, 0.0]))


class TestSubprocessModel:
    def test_handshake_and_identity(self):
        with subprocess_model(stub_cfg("echo")) as m:
            assert m.d == 1
            assert m.name == "stub-echo"
            assert m.predict(np.array([3.5])) == 3.5

    def test_first_coordinate_in_higher_dim(self):
        with subprocess_model(stub_cfg("echo", d=3)) as m:
            assert m.predict(np.array([1.0, 2.0, 9.0])) == 1.0

    def test_float_round_trip_is_exact(self):
        gnarly = [math.pi, 0.1, 1.0 / 3.0, 1e-300, 6.02214076e23,
                  -2.2250738585072014e-308, 1.7976931348623157e308]
        with subprocess_model(stub_cfg("echo")) as m:
            for v in gnarly:
                assert m.predict(np.array([v])) == v

    def test_quadratic_stub(self):
        with subprocess_model(stub_cfg("quadratic", d=2)) as m:
            assert m.predict(np.array([3.0, 4.0])) == 25.0

    def test_malformed_response(self):
        with subprocess_model(stub_cfg("badjson")) as m:
            with pytest.raises(ModelError, match="malformed"):
                m.predict(np.array([1.0]))

    def test_error_response(self):
        with subprocess_model(stub_cfg("error")) as m:
            with pytest.raises(ModelError, match="boom"):
                m.predict(np.array([1.0]))

    def test_query_timeout(self):
        with subprocess_model(stub_cfg("sleep", per_query_timeout=0.3)) as m:
            with pytest.raises(ModelError, match="timed out"):
                m.predict(np.array([1.0]))

    def test_id_mismatch(self):
        with subprocess_model(stub_cfg("wrong-id")) as m:
            with pytest.raises(ModelError, match="expected 0"):
                m.predict(np.array([1.0]))

    def test_child_death_mid_session(self):
        with subprocess_model(stub_cfg("die")) as m:
            with pytest.raises(ModelError):
                m.predict(np.array([1.0]))

    def test_startup_timeout(self):
        with pytest.raises(ModelError, match="timed out"):
            subprocess_model(stub_cfg("mute", startup_timeout=0.3))

    def test_spawn_failure(self):
        cfg = SubprocessModelConfig(["/nonexistent-adapter-binary"])
        with pytest.raises(ModelError, match="spawn"):
            subprocess_model(cfg)

    def test_clean_shutdown(self):
        m = subprocess_model(stub_cfg("echo"))
        m.predict(np.array([1.0]))
        m.close()
        assert m._proc.poll() == 0
        with pytest.raises(ModelError, match="closed"):
            m.predict(np.array([1.0]))
        m.close()  # idempotent

    def test_wrong_dimension_rejected_client_side(self):
        with subprocess_model(stub_cfg("echo", d=2)) as m:
            with pytest.raises(ModelError, match="expects d=2"):
                m.predict(np.array([1.0]))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SubprocessModelConfig([])
        with pytest.raises(ValueError):
            SubprocessModelConfig(["x"], startup_timeout=0.0)

    def test_serial_query_ids_advance(self):
        with subprocess_model(stub_cfg("echo")) as m:
            for v in (1.0, 2.0, 3.0):
                assert m.predict(np.array([v])) == v
            assert m._next_id == 3
