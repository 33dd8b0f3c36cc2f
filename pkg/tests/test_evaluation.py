"""Experiment harnesses against brute-force set arithmetic and Monte Carlo."""

import itertools
import math

import numpy as np
import pytest

from unravel.acquisition import BoxDomain
from unravel.blackbox import builtin_model
from unravel.evaluation import (
    EvaluationError,
    RegretReport,
    StabilityMethod,
    StabilityReport,
    jaccard_distance,
    lime_stability_method,
    regret_experiment,
    stability_experiment,
    unravel_stability_method,
)
from unravel.explainers import METHOD_ARD, ImportanceScores


class _ConstantModel:
    def __init__(self, d, value=2.5):
        self.d = d
        self.name = "constant"
        self._value = value

    def predict(self, x):
        return self._value


def forrester_value(x):
    return (6.0 * x - 2.0) * math.sin(12.0 * x - 4.0)


def forrester_slope(x):
    return (6.0 * math.sin(12.0 * x - 4.0)
            + 12.0 * (6.0 * x - 2.0) * math.cos(12.0 * x - 4.0))


class TestJaccardDistance:
    def test_identical_sets_zero(self):
        assert jaccard_distance({"a", "b", "c", "d", "e"},
                                {"a", "b", "c", "d", "e"}) == 0.0

    def test_disjoint_sets_one(self):
        assert jaccard_distance({"a", "b"}, {"c", "d"}) == 1.0

    def test_partial_overlap(self):
        d = jaccard_distance({"a", "b", "c", "d", "e"},
                             {"a", "b", "c", "d", "f"})
        assert d == pytest.approx(1.0 / 3.0, abs=1e-15)

    def test_one_empty_side(self):
        assert jaccard_distance(set(), {"a"}) == 1.0
        assert jaccard_distance({"a"}, set()) == 1.0

    def test_both_empty_raises(self):
        with pytest.raises(ValueError):
            jaccard_distance(set(), set())

    def test_metric_properties_exhaustive(self):
        universe = list(range(5))
        subsets = [frozenset(c) for r in range(6)
                   for c in itertools.combinations(universe, r)]

        def brute(a, b):
            inter = sum(1 for e in universe if e in a and e in b)
            union = sum(1 for e in universe if e in a or e in b)
            return 1.0 - inter / union

        defined = {}
        for a in subsets:
            for b in subsets:
                if a or b:
                    defined[(a, b)] = jaccard_distance(a, b)
                    assert defined[(a, b)] == brute(a, b)

        for (a, b), d in defined.items():
            assert abs(d - defined[(b, a)]) == 0.0  # symmetry
            assert (d == 0.0) == (a == b)           # identity of indiscernibles
            assert 0.0 <= d <= 1.0

        for a in subsets:
            for b in subsets:
                for c in subsets:
                    if ((a, b) in defined and (b, c) in defined
                            and (a, c) in defined):
                        assert defined[(a, c)] <= (defined[(a, b)]
                                                   + defined[(b, c)] + 1e-12)


def _scores_from_magnitudes(mags):
    d = len(mags)
    return ImportanceScores([f"f{j}" for j in range(d)],
                            np.asarray(mags, dtype=float),
                            np.ones(d), METHOD_ARD)


class TestStabilityExperiment:
    def test_deterministic_explainer_zero(self):
        fixed = _scores_from_magnitudes(np.arange(22, dtype=float))
        method = StabilityMethod("fixed", lambda m, x0, b, s: fixed)
        rep = stability_experiment(method, _ConstantModel(22),
                                   [np.zeros(22)] * 3, runs=4, budget=1, k=5)
        assert rep.overall_mean == 0.0
        assert rep.per_index_sample == (0.0, 0.0, 0.0)
        assert rep.excluded_runs == 0
        assert rep.runs_used == (4, 4, 4)
        assert rep.method == "fixed"

    def test_random_topk_matches_monte_carlo(self):
        # Uniform-random magnitudes make the top-5 a uniform 5-subset of 22.
        def run(model, x0, budget, seed):
            return _scores_from_magnitudes(
                np.random.default_rng(seed).random(22))

        rep = stability_experiment(StabilityMethod("random", run),
                                   _ConstantModel(22), [np.zeros(22)],
                                   runs=150, budget=1, k=5, base_seed=0)

        rng = np.random.default_rng(123)
        total = 0.0
        pairs = 100_000
        for _ in range(pairs):
            a = frozenset(rng.choice(22, size=5, replace=False).tolist())
            b = frozenset(rng.choice(22, size=5, replace=False).tolist())
            total += jaccard_distance(a, b)
        assert rep.overall_mean == pytest.approx(total / pairs, abs=0.02)

    def test_failures_excluded_and_surfaced(self):
        def run(model, x0, budget, seed):
            if seed == 2:
                raise ValueError("injected failure")
            return _scores_from_magnitudes(np.random.default_rng(seed).random(6))

        rep = stability_experiment(StabilityMethod("flaky", run),
                                   _ConstantModel(6),
                                   [np.zeros(6), np.ones(6)],
                                   runs=4, budget=1, k=2, base_seed=0)
        assert rep.excluded_runs == 2  # seed 2 fails for both index samples
        assert rep.runs_used == (3, 3)
        assert len(rep.failure_messages) == 2
        assert "injected failure" in rep.failure_messages[0]
        assert 0.0 <= rep.overall_mean <= 1.0

    def test_all_runs_failing_raises(self):
        def run(model, x0, budget, seed):
            raise ValueError("always broken")

        with pytest.raises(EvaluationError, match="always broken"):
            stability_experiment(StabilityMethod("broken", run),
                                 _ConstantModel(3), [np.zeros(3)],
                                 runs=3, budget=1, k=1)

    def test_partial_sample_failure_excluded_from_mean(self):
        def run(model, x0, budget, seed):
            if x0[0] > 0.5 and seed != 0:
                raise ValueError("sample 2 unstable")
            mags = np.zeros(4)
            mags[seed % 4] = 1.0
            return _scores_from_magnitudes(mags)

        rep = stability_experiment(StabilityMethod("m", run),
                                   _ConstantModel(4),
                                   [np.zeros(4), np.ones(4)],
                                   runs=3, budget=1, k=1, base_seed=0)
        # Sample 1 has a single surviving run: excluded, reported as NaN.
        assert math.isnan(rep.per_index_sample[1])
        assert rep.runs_used == (3, 1)
        assert rep.overall_mean == rep.per_index_sample[0]

    def test_validation(self):
        method = StabilityMethod("x", lambda m, x0, b, s: None)
        with pytest.raises(ValueError):
            stability_experiment(method, _ConstantModel(2), [np.zeros(2)],
                                 runs=1, budget=1, k=1)
        with pytest.raises(ValueError):
            stability_experiment(method, _ConstantModel(2), [],
                                 runs=2, budget=1, k=1)

    def test_report_serialization(self):
        rep = StabilityReport(method="m", runs=3, top_k=2,
                              per_index_sample=(0.25, math.nan),
                              runs_used=(3, 1), overall_mean=0.25,
                              excluded_runs=2,
                              failure_messages=("sample 1 seed 1: boom",))
        obj = rep.to_json()
        assert obj["per_index_sample"] == [0.25, None]
        assert obj["overall_mean"] == 0.25
        csv = rep.to_csv_text().splitlines()
        assert csv[0] == "sample_index,mean_pairwise_jaccard,runs_used"
        assert csv[1] == "0,0.25,3"
        assert csv[2] == "1,,1"
        with pytest.raises(ValueError):
            StabilityReport("m", 2, 1, (2.0,), (2,), 2.0, 0, ())

    def test_unravel_method_end_to_end(self):
        model = builtin_model("logistic-synthetic", d=4, seed=3)
        method = unravel_stability_method(np.ones(4))
        rep = stability_experiment(method, model,
                                   [np.zeros(4), np.full(4, 0.2)],
                                   runs=2, budget=6, k=2, base_seed=1)
        assert rep.method == "unravel"
        assert rep.excluded_runs == 0
        assert 0.0 <= rep.overall_mean <= 1.0

    def test_lime_method_end_to_end(self):
        model = builtin_model("logistic-synthetic", d=4, seed=3)
        method = lime_stability_method(np.ones(4))
        rep = stability_experiment(method, model, [np.zeros(4)],
                                   runs=3, budget=12, k=2, base_seed=5)
        assert rep.method == "lime"
        assert rep.excluded_runs == 0
        assert 0.0 <= rep.overall_mean <= 1.0


class TestRegretExperiment:
    def forrester_report(self):
        model = builtin_model("forrester")
        domain = BoxDomain(np.array([0.0]), np.array([1.0]))
        return regret_experiment(model, domain, np.array([0.5]), budget=4,
                                 trials=3, epsilon_l=(0.5, 1.0), seed=0)

    def test_round_layout_and_bounds(self):
        rep = self.forrester_report()
        assert len(rep.rounds) == 2 * 4
        assert [r.epsilon_l for r in rep.rounds[:4]] == [0.5] * 4
        assert [r.round for r in rep.rounds[:4]] == [1, 2, 3, 4]
        for r in rep.rounds:
            assert 0.0 <= r.empirical_frequency <= 1.0
            assert r.d_hat >= 0.0
            assert r.delta_n >= 0.0
            assert r.bound_satisfied == (r.vacuous
                                         or r.empirical_frequency >= 1 - r.zeta)

    def test_eta_product_invariant(self):
        rep = self.forrester_report()
        for r in rep.rounds:
            if math.isfinite(r.eta1):
                assert r.eta1 * r.eta2 == pytest.approx(
                    r.epsilon_l + r.delta_n, abs=1e-9)
            assert r.zeta_statement == pytest.approx(1.0 - r.zeta)

    def test_slope_estimate_matches_analytic_derivative(self):
        rep = self.forrester_report()
        xs = np.linspace(0.0, 1.0, 100_001)
        m_true = max(abs(forrester_slope(x)) for x in xs)
        assert rep.m_hat == pytest.approx(m_true, rel=0.01)

    def test_reference_optimum_on_grid(self):
        rep = self.forrester_report()
        # Independent finer-grid oracle for the maximum (near x = 0.997).
        xs = np.linspace(0.0, 1.0, 100_001)
        fs = np.array([forrester_value(x) for x in xs])
        assert rep.x_star[0] == pytest.approx(xs[np.argmax(fs)], abs=1e-3)
        assert rep.f_star == pytest.approx(fs.max(), abs=1e-5)
        assert rep.gamma == pytest.approx(1.0)

    def test_regret_uses_recorded_queries(self):
        rep = self.forrester_report()
        # r = f(x) - f* <= 0 by construction of the grid maximum.
        for r in rep.rounds:
            assert r.r_g <= 1e-9 and r.r_l <= 1e-9
            assert r.abs_diff >= 0.0

    def test_constant_objective_trivial_rounds(self):
        model = _ConstantModel(1)
        domain = BoxDomain(np.array([0.0]), np.array([1.0]))
        rep = regret_experiment(model, domain, np.array([0.5]), budget=3,
                                trials=2, epsilon_l=0.5, seed=1)
        for r in rep.rounds:
            assert r.r_g == 0.0 and r.r_l == 0.0 and r.abs_diff == 0.0
            assert r.empirical_frequency == 1.0
            assert r.vacuous  # zero slope leaves the bound uninformative
            assert r.bound_satisfied
        assert rep.m_hat == 0.0

    def test_lemma_checks_present_and_consistent(self):
        rep = self.forrester_report()
        assert len(rep.lemma_checks) == 3
        fracs = [c.epsilon1 / rep.gamma for c in rep.lemma_checks]
        assert fracs == pytest.approx([0.1, 0.5, 0.9])
        for c in rep.lemma_checks:
            assert 0.0 <= c.empirical_probability <= 1.0
            expected = (rep.d_hat_overall / c.epsilon1
                        + (1 - rep.beta0_hat) * rep.gamma / c.epsilon1)
            assert c.bound == pytest.approx(expected, rel=1e-12)
            assert c.satisfied == (c.empirical_probability <= c.bound + 1e-12)

    def test_beta0_within_unit_interval(self):
        rep = self.forrester_report()
        assert 0.0 <= rep.beta0_hat <= 1.0
        assert rep.d_hat_overall >= 0.0

    def test_two_dimensional_grid(self):
        model = builtin_model("sphere", d=2)
        domain = BoxDomain(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
        rep = regret_experiment(model, domain, np.zeros(2), budget=2,
                                trials=1, epsilon_l=1.0, seed=0)
        # max axis-aligned slope of sum(x^2) on [-1,1]^2 is 2 at the edges.
        assert rep.m_hat == pytest.approx(2.0, rel=0.02)
        assert rep.gamma == pytest.approx(math.sqrt(8.0))
        # the grid corner (1,1) or (-1,-1) attains the maximum 2.0
        assert rep.f_star == pytest.approx(2.0, abs=1e-12)

    def test_validation_errors(self):
        model = builtin_model("sphere", d=3)
        domain3 = BoxDomain(-np.ones(3), np.ones(3))
        with pytest.raises(EvaluationError, match="1-D or 2-D"):
            regret_experiment(model, domain3, np.zeros(3), budget=2,
                              trials=1, epsilon_l=1.0)
        f = builtin_model("forrester")
        dom = BoxDomain(np.array([0.0]), np.array([1.0]))
        with pytest.raises(ValueError):
            regret_experiment(f, dom, np.array([2.0]), budget=2, trials=1,
                              epsilon_l=1.0)
        with pytest.raises(ValueError):
            regret_experiment(f, dom, np.array([0.5]), budget=2, trials=0,
                              epsilon_l=1.0)
        with pytest.raises(ValueError):
            regret_experiment(f, dom, np.array([0.5]), budget=2, trials=1,
                              epsilon_l=0.0)
        with pytest.raises(ValueError):
            regret_experiment(f, dom, np.array([0.5]), budget=2, trials=1,
                              epsilon_l=())

    def test_serialization_round_trip_shapes(self):
        rep = self.forrester_report()
        obj = rep.to_json()
        assert len(obj["rounds"]) == len(rep.rounds)
        assert set(obj["rounds"][0]) >= {"epsilon_l", "round", "r_g", "r_l",
                                         "abs_diff", "eta1", "eta2", "zeta",
                                         "empirical_frequency", "vacuous",
                                         "bound_satisfied"}
        assert len(obj["lemma_checks"]) == 3
        import json
        json.dumps(obj)  # strictly serializable
        csv = rep.to_csv_text().splitlines()
        assert len(csv) == 1 + len(rep.rounds)
        assert csv[0].startswith("epsilon_l,round,")

    def test_nonfinite_values_serialized_as_null(self):
        model = _ConstantModel(1)
        domain = BoxDomain(np.array([0.0]), np.array([1.0]))
        rep = regret_experiment(model, domain, np.array([0.5]), budget=2,
                                trials=1, epsilon_l=0.5, seed=3)
        obj = rep.to_json()
        assert obj["rounds"][0]["zeta"] is None
        assert obj["rounds"][0]["eta1"] is None
        import json
        json.dumps(obj, allow_nan=False)

    def test_same_seed_reproducible(self):
        a = self.forrester_report()
        b = self.forrester_report()
        assert a.to_json_text() == b.to_json_text()
