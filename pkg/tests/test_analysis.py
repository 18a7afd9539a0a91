import math
from fractions import Fraction

import numpy as np
import pytest

from conftest import binary_model, random_model
from pushlearn.analysis import (
    decay_slope,
    default_window,
    empirical_delta,
    ergodicity_check,
    format_record,
    matrix_chain,
    parse_record,
    phi_estimate,
    rate_constants,
    recursion_check,
    reference_rates,
    static_influence,
    transient_length,
    variation_bound,
    verify_bound,
)
from pushlearn.graphs import Digraph, generate, path_graph, ring_graph
from pushlearn.model import RateConstants, gamma2, n_rho
from pushlearn.sim import SimConfig, run
from pushlearn.trace import Trace


def exact_weights(g: Digraph):
    d = g.out_degrees()
    A = [[Fraction(0)] * g.n for _ in range(g.n)]
    for j, i in g.edges:
        A[i][j] = Fraction(1, int(d[j]))
    return A


def exact_delta(seq, horizon):
    y = [Fraction(1)] * seq.n
    best = None
    for k in range(horizon + 1):
        A = exact_weights(seq.graph(k))
        y = [sum(A[i][j] * y[j] for j in range(seq.n)) for i in range(seq.n)]
        best = min(y) if best is None else min(best, min(y))
    return best


def synthetic_trace(log_beliefs, weights=None):
    lb = np.asarray(log_beliefs, dtype=float)
    T, n, _ = lb.shape
    return Trace(
        {"horizon": T},
        np.arange(1, T + 1),
        lb,
        np.ones((T, n)) if weights is None else np.asarray(weights, dtype=float),
        np.zeros((T, n), dtype=np.int64),
        np.zeros(T, dtype=np.int64),
    )


def constants_for(gamma1, gamma2_, delta=1.0, n=100, non_optimal=(1,)):
    return RateConstants(
        alpha=0.5, delta=delta, C=4.0, lam=0.5, gamma1=gamma1, gamma2=gamma2_, n_rho=n, rho=0.1,
        non_optimal=non_optimal,
    )


class TestChains:
    def test_single_step(self, alternating_paths):
        np.testing.assert_array_equal(matrix_chain(alternating_paths, 3, 3).value, alternating_paths.weights(3))

    def test_associative(self):
        seq = generate("seeded-random", 5, 2, seed=3, p=0.3)
        whole = matrix_chain(seq, 9, 2).value
        split = matrix_chain(seq, 9, 6).value @ matrix_chain(seq, 5, 2).value
        np.testing.assert_allclose(whole, split, rtol=1e-14, atol=1e-16)

    def test_column_stochastic(self):
        seq = generate("seeded-random", 5, 2, seed=4, p=0.3)
        np.testing.assert_allclose(matrix_chain(seq, 30, 0).value.sum(axis=0), 1.0, atol=1e-13)

    def test_order_matters(self, alternating_paths):
        P = matrix_chain(alternating_paths, 1, 0).value
        A0, A1 = alternating_paths.weights(0), alternating_paths.weights(1)
        np.testing.assert_allclose(P, A1 @ A0)

    def test_bad_range(self, ring4):
        with pytest.raises(ValueError):
            matrix_chain(ring4, 2, 3)


class TestInfluence:
    def test_unbalanced_exact(self, unbalanced5):
        # solved by hand from the balance equations v = A v
        expected = np.array([4, 14, 10, 4, 3]) / 35
        np.testing.assert_allclose(static_influence(np.asarray(unbalanced5.weights(0))), expected, atol=1e-14)

    def test_matches_eigenvector(self, unbalanced5):
        A = np.asarray(unbalanced5.weights(0))
        vals, vecs = np.linalg.eig(A)
        v = np.real(vecs[:, np.argmin(np.abs(vals - 1))])
        v /= v.sum()
        np.testing.assert_allclose(static_influence(A), v, atol=1e-12)

    def test_phi_estimate_converges(self, unbalanced5):
        est = phi_estimate(unbalanced5, 400, 400)
        np.testing.assert_allclose(est.phi, np.array([4, 14, 10, 4, 3]) / 35, atol=1e-12)

    def test_phi_estimate_budget(self, unbalanced5):
        est = phi_estimate(unbalanced5, 10, 10, tol=1e-3)
        assert est.insufficient and est.error_budget > 1e-3

    def test_regular_is_uniform(self, ring4):
        np.testing.assert_allclose(phi_estimate(ring4, 200, 200).phi, 0.25, atol=1e-12)


class TestDelta:
    def test_regular_is_one(self, ring4):
        assert empirical_delta(ring4, 200) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_exact_fraction_oracle(self, seed):
        seq = generate("seeded-random", 4, 2, seed=seed, p=0.3)
        exact = exact_delta(seq, 25)
        assert empirical_delta(seq, 25) == pytest.approx(float(exact), rel=1e-12)
        assert math.log(float(exact)) >= -4 * 2 * math.log(4)

    def test_paths_above_floor(self, alternating_paths):
        d = empirical_delta(alternating_paths, 100)
        assert math.log(d) >= -4 * 2 * math.log(4)
        assert d == pytest.approx(float(exact_delta(alternating_paths, 100)), rel=1e-12)


class TestErgodicity:
    @pytest.mark.parametrize("seed", range(3))
    def test_random_sequences(self, seed):
        seq = generate("seeded-random", 3, 1, seed=seed, p=0.5)
        assert ergodicity_check(seq, 40).max_excess <= 0

    def test_regular(self, ring4):
        result = ergodicity_check(ring4, 60)
        assert result.case == 2 and result.max_excess <= 0

    def test_tight_constants_report_excess(self, alternating_paths):
        from pushlearn.graphs import TheoremConstants

        fake = TheoremConstants(1e-9, 1e-9, 1 - 1e-9, 0.0, 1)
        result = ergodicity_check(alternating_paths, 10, fake)
        assert result.max_excess > 0 and result.worst is not None


class TestSlope:
    def test_linear_exact(self):
        k = np.arange(1, 101)
        lb = np.stack([np.stack([np.zeros(100), -0.3 * k + 2], axis=1)] * 2, axis=1)
        trace = synthetic_trace(lb)
        assert decay_slope(trace, 1, 1, (10, 100)) == pytest.approx(-0.3, abs=1e-12)
        assert decay_slope(trace, 0, 0, (10, 100)) == 0.0

    def test_noise_averages_out(self):
        rng = np.random.default_rng(0)
        k = np.arange(1, 20001)
        y = -0.01 * k + rng.normal(0, 1, k.size)
        lb = np.stack([np.zeros_like(y), y], axis=1)[:, None, :]
        assert decay_slope(synthetic_trace(lb), 0, 1, (1, 20000)) == pytest.approx(-0.01, abs=1e-4)

    def test_window_checks(self):
        trace = synthetic_trace(np.zeros((10, 1, 2)))
        with pytest.raises(ValueError):
            decay_slope(trace, 0, 1, (5, 5))
        with pytest.raises(ValueError):
            decay_slope(trace, 0, 1, (0, 10))

    def test_default_window(self):
        assert default_window(1000) == (100, 1000)
        assert default_window(1000, 400) == (400, 1000)
        assert default_window(1000, 5000) == (100, 1000)


class TestVerifyBound:
    def make(self, T=300, n=2):
        k = np.arange(1, T + 1, dtype=float)
        lb = np.zeros((T, n, 2))
        lb[:, :, 1] = (-0.2 * k)[:, None] - 1.0
        lb[:, :, 0] = np.log1p(-np.exp(lb[:, :, 1]))
        return lb

    def test_clean(self):
        c = constants_for([0.0, 0.0], 0.3, n=50)
        report = verify_bound(synthetic_trace(self.make()), c)
        assert report.violations == 0 and report.total_points == 2 * 251

    def test_injected_violation(self):
        lb = self.make()
        lb[199, 1, 1] = -1.0
        lb[249, 0, 1] = -1.0
        c = constants_for([0.0, 0.0], 0.3, n=50)
        report = verify_bound(synthetic_trace(lb), c)
        assert report.violations == 2
        assert report.first_violation == (0, 1, 250)

    def test_bound_edge(self):
        # exactly on the bound counts as satisfied
        lb = self.make(T=100, n=1)
        k = np.arange(1, 101, dtype=float)
        lb[:, 0, 1] = -0.15 * k + 0.5
        c = constants_for([0.5], 0.3, n=1)
        assert verify_bound(synthetic_trace(lb), c).violations == 0

    def test_shortfall(self):
        c = constants_for([0.0, 0.0], 0.3, n=500)
        report = verify_bound(synthetic_trace(self.make()), c)
        assert report.shortfall and report.total_points == 0

    def test_transient_length(self):
        c = constants_for([0.0], 0.1, n=1)
        assert transient_length(c) == 1
        assert transient_length(c, 0.05) == n_rho(0.5, 1.0, 0.1, 0.05)


class TestRecursion:
    @pytest.mark.parametrize("variant", ["push-sum", "plain"])
    def test_simulated_trace(self, rng, variant):
        model = random_model(rng, 5, 3)
        seq = generate("seeded-random", 5, 2, seed=11, p=0.3)
        trace = run(SimConfig(model, seq, variant=variant, horizon=300, master_seed=1))
        assert recursion_check(trace, model, seq) < 1e-9

    def test_detects_tampering(self, model3):
        seq = generate("static", 3, 1, graphs=(Digraph.from_edges(3, [(0, 1), (1, 2), (2, 0), (0, 2)]),))
        trace = run(SimConfig(model3, seq, horizon=50, master_seed=2))
        lb = np.array(trace.log_beliefs)
        lb[20, 1, 2] += 0.01
        tampered = Trace(trace.header, trace.steps, lb, trace.weights, trace.signals, trace.graph_index)
        assert recursion_check(tampered, model3, seq) > 1e-3

    def test_needs_full_trace(self, model3, ring4):
        seq = generate("static", 3, 1, graphs=(ring_graph(3),))
        trace = run(SimConfig(model3, seq, horizon=50, record="summary"))
        with pytest.raises(ValueError):
            recursion_check(trace, model3, seq)


class TestConstants:
    def test_variation_bound(self):
        assert variation_bound(0.25, 0.5) == pytest.approx(4 * math.log(4))

    def test_rate_constants_ring(self, model3):
        seq = generate("static", 3, 1, graphs=(ring_graph(3),))
        c = rate_constants(model3, seq, 0.1, 200)
        assert c.case == 2 and c.delta == pytest.approx(1.0)
        assert c.C == pytest.approx(math.sqrt(2)) and c.lam == pytest.approx(1 - 1 / 108)
        assert c.gamma2 == pytest.approx(gamma2(model3))
        assert c.n_rho == n_rho(c.alpha, 1.0, c.gamma2, 0.1)
        assert c.non_optimal == (1, 2)

    def test_rate_constants_analytic(self, model3):
        seq = generate("static", 3, 1, graphs=(path_graph(3).union(path_graph(3, reverse=True)),))
        emp = rate_constants(model3, seq, 0.1, 200)
        ana = rate_constants(model3, seq, 0.1, 200, delta_mode="analytic")
        assert emp.case == ana.case == 1
        assert ana.delta == pytest.approx(3.0**-3)
        assert emp.delta >= ana.delta
        assert ana.n_rho >= emp.n_rho

    def test_reference_rates(self, unbalanced5):
        model = binary_model([0.5] * 5, [[0.5, 0.3]] * 5)
        ref = reference_rates(model, unbalanced5)
        gap = -5 * (0.5 * math.log(0.5 / 0.3) + 0.5 * math.log(0.5 / 0.7))
        np.testing.assert_allclose(ref.uniform, [[gap / 5] * 5])
        np.testing.assert_allclose(ref.influence[0], gap * np.array([4, 14, 10, 4, 3]) / 35)
        assert ref.theta_v == (1,)

    def test_reference_rates_time_varying(self, model3):
        seq = generate("seeded-random", 3, 1, seed=0, p=0.5)
        assert reference_rates(model3, seq).influence is None


def test_record_round_trip():
    rec = {"a": 1, "b": 0.1, "c": "x", "d": 1e-300}
    back = parse_record(format_record(rec))
    assert back["a"] == "1" and back["c"] == "x"
    assert float(back["b"]) == 0.1 and float(back["d"]) == 1e-300
