"""Sampling-loop contracts: determinism, query accounting, convergence."""

import numpy as np
import pytest

from unravel.blackbox import CountingModel, ModelError, builtin_model
from unravel.engine import (
    EngineError,
    ExplainRequest,
    SurrogateDataset,
    make_acquisition,
    run_unravel,
    sample_efficiency_trace,
)
from unravel.acquisition import BoxDomain, FURSpec, URSpec, UCBSpec
from unravel.gpr import default_kernel


def forrester_request(budget=5, seed=0, acq="fur", **kw):
    return ExplainRequest(
        x0=np.array([0.5]),
        budget=budget,
        acquisition=make_acquisition(acq),
        sigma_D=np.array([0.5]),
        seed=seed,
        **kw,
    )


class FailingModel:
    """Raises on the k-th predict call (1-based)."""

    def __init__(self, fail_at, d=1):
        self.d = d
        self.name = "failing"
        self.calls = 0
        self.fail_at = fail_at

    def predict(self, x):
        self.calls += 1
        if self.calls == self.fail_at:
            raise ModelError("synthetic failure")
        return float(np.sum(x))


class TestRequestValidation:
    def test_defaults_filled(self):
        req = forrester_request()
        assert req.sigma_bar == 0.5
        assert req.kernel.family == "matern52"
        box = req.box()
        np.testing.assert_allclose(box.lower, [0.0])
        np.testing.assert_allclose(box.upper, [1.0])

    def test_rejects_bad_budget_and_sigma(self):
        with pytest.raises(ValueError):
            forrester_request(budget=0)
        with pytest.raises(ValueError):
            ExplainRequest(np.array([0.5]), 5, make_acquisition("fur"),
                           sigma_D=np.array([0.0]))
        with pytest.raises(ValueError):
            ExplainRequest(np.array([0.5]), 5, make_acquisition("fur"),
                           sigma_D=np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            forrester_request(refit_every=0)

    def test_kernel_dimension_checked(self):
        with pytest.raises(ValueError, match="kernel dimension"):
            ExplainRequest(np.array([0.5]), 5, make_acquisition("fur"),
                           sigma_D=np.array([0.5]),
                           kernel=default_kernel("matern52", 3))

    def test_domain_override(self):
        box = BoxDomain([-2.0], [2.0])
        req = forrester_request(domain=box)
        assert req.box() is box
        with pytest.raises(ValueError, match="domain dimension"):
            forrester_request(domain=BoxDomain([-2.0, -2.0], [2.0, 2.0]))

    def test_make_acquisition_kinds(self):
        assert isinstance(make_acquisition("ucb"), UCBSpec)
        assert isinstance(make_acquisition("ur"), URSpec)
        assert isinstance(make_acquisition("fur"), FURSpec)
        with pytest.raises(ValueError):
            make_acquisition("thompson")


class TestRunBasics:
    def test_budget_one_shapes(self):
        model = builtin_model("forrester")
        ds, gp = run_unravel(forrester_request(budget=1), model)
        assert ds.n == 2
        assert ds.iterations.tolist() == [0, 1]
        np.testing.assert_allclose(ds.X[0], [0.5])
        assert ds.y[0] == model.predict(np.array([0.5]))
        assert 0.0 <= ds.X[1, 0] <= 1.0
        assert gp.n == 2

    def test_exact_query_count(self):
        for budget in (1, 4, 9):
            model = CountingModel(builtin_model("forrester"))
            run_unravel(forrester_request(budget=budget), model)
            assert model.calls == budget + 1

    def test_all_points_inside_box(self):
        model = builtin_model("sphere", d=3)
        req = ExplainRequest(
            x0=np.array([1.0, -1.0, 0.5]), budget=8,
            acquisition=make_acquisition("fur"),
            sigma_D=np.array([0.5, 1.0, 2.0]), seed=3)
        ds, _ = run_unravel(req, model)
        box = req.box()
        for i in range(ds.n):
            assert np.all(ds.X[i] >= box.lower - 1e-12)
            assert np.all(ds.X[i] <= box.upper + 1e-12)

    def test_same_seed_bit_identical(self):
        a, _ = run_unravel(forrester_request(budget=6, seed=11),
                           builtin_model("forrester"))
        b, _ = run_unravel(forrester_request(budget=6, seed=11),
                           builtin_model("forrester"))
        assert np.array_equal(a.X, b.X)
        assert np.array_equal(a.y, b.y)
        assert a.to_csv_text() == b.to_csv_text()

    def test_different_seeds_differ(self):
        a, _ = run_unravel(forrester_request(budget=4, seed=1),
                           builtin_model("forrester"))
        b, _ = run_unravel(forrester_request(budget=4, seed=2),
                           builtin_model("forrester"))
        assert not np.array_equal(a.X[1:], b.X[1:])

    def test_reusing_request_object_stays_deterministic(self):
        req = forrester_request(budget=4, seed=7)
        a, _ = run_unravel(req, builtin_model("forrester"))
        b, _ = run_unravel(req, builtin_model("forrester"))
        assert np.array_equal(a.X, b.X)

    def test_model_dimension_mismatch(self):
        with pytest.raises(EngineError, match="dimensionality"):
            run_unravel(forrester_request(), builtin_model("sphere", d=2))

    def test_ucb_and_ur_loops_run(self):
        for acq in ("ucb", "ur"):
            ds, _ = run_unravel(forrester_request(budget=3, acq=acq),
                                builtin_model("forrester"))
            assert ds.n == 4


class TestFailurePropagation:
    def test_failure_on_init_query(self):
        with pytest.raises(EngineError, match="synthetic failure") as ei:
            run_unravel(forrester_request(budget=3), FailingModel(fail_at=1))
        assert ei.value.partial is not None
        assert ei.value.partial.n == 0

    def test_failure_mid_run_attaches_partial(self):
        with pytest.raises(EngineError, match="synthetic failure") as ei:
            run_unravel(forrester_request(budget=5), FailingModel(fail_at=3))
        partial = ei.value.partial
        assert partial.n == 2  # init plus one successful iteration
        assert partial.iterations.tolist() == [0, 1]


class TestConvergenceBehavior:
    def test_fur_samples_approach_x0(self):
        # Late-phase samples should sit closer to the index sample than the
        # first exploratory ones.
        ds, _ = run_unravel(forrester_request(budget=20, seed=0),
                            builtin_model("forrester"))
        dists = np.abs(ds.X[1:, 0] - 0.5)
        assert np.mean(dists[-5:]) < np.mean(dists[:5])

    def test_ur_explores_farther_than_fur(self):
        ratios = []
        for seed in range(20):
            fur, _ = run_unravel(forrester_request(budget=1, seed=seed),
                                 builtin_model("forrester"))
            ur, _ = run_unravel(forrester_request(budget=1, seed=seed,
                                                  acq="ur"),
                                builtin_model("forrester"))
            df = abs(fur.X[1, 0] - 0.5)
            du = abs(ur.X[1, 0] - 0.5)
            ratios.append(du / max(df, 1e-12))
        assert np.median(ratios) > 1.0


class TestTraceAndSerialization:
    def test_trace_shape_and_first_entry(self):
        ds, _ = run_unravel(forrester_request(budget=6, seed=2),
                            builtin_model("forrester"))
        trace = sample_efficiency_trace(ds, np.array([0.5]))
        assert len(trace) == 7
        it0, dist0, sig0 = trace[0]
        assert it0 == 0 and dist0 == 0.0
        assert all(t[2] >= 0.0 for t in trace)
        assert [t[0] for t in trace] == list(range(7))

    def test_trace_validates_input(self):
        ds = SurrogateDataset.empty(1)
        with pytest.raises(ValueError):
            sample_efficiency_trace(ds, np.array([0.5]))
        ds2, _ = run_unravel(forrester_request(budget=1), builtin_model("forrester"))
        with pytest.raises(ValueError):
            sample_efficiency_trace(ds2, np.array([0.5, 0.5]))

    def test_csv_layout(self):
        ds, _ = run_unravel(forrester_request(budget=2, seed=5),
                            builtin_model("forrester"))
        lines = ds.to_csv_text().strip().split("\n")
        assert lines[0] == "iteration,x_0,y"
        assert len(lines) == 4
        first = lines[1].split(",")
        assert first[0] == "0" and float(first[1]) == 0.5

    def test_json_round_trip(self):
        ds, _ = run_unravel(forrester_request(budget=3, seed=8),
                            builtin_model("forrester"))
        back = SurrogateDataset.from_json(ds.to_json())
        assert np.array_equal(back.X, ds.X)
        assert np.array_equal(back.y, ds.y)
        assert np.array_equal(back.iterations, ds.iterations)
        assert np.array_equal(back.sigma_at_x0, ds.sigma_at_x0)

    def test_append_enforces_increasing_iterations(self):
        ds = SurrogateDataset.empty(1)
        ds.append(np.array([0.0]), 1.0, 0, 0.1)
        with pytest.raises(ValueError):
            ds.append(np.array([0.1]), 1.0, 0, 0.1)
