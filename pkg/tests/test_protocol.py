import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import binary_model, random_model
from pushlearn.graphs import Digraph, complete_graph, ring_graph, weight_matrix
from pushlearn.model import NetworkModel
from pushlearn.protocol import (
    NetworkState,
    RoundError,
    RoundInput,
    init_state,
    log_normalize,
    phi,
    phi_hat,
    step_plain,
    step_push_sum,
)


def product_form_oracle(A, beliefs, weights, likelihoods, dps=60):
    """Push-sum round in linear space with arbitrary precision.

    Agent i combines prod_j mu_j^(A_ij y_j), multiplies by its likelihood and
    raises the result to 1 / y_i', then normalizes.
    """
    mp.mp.dps = dps
    n, m = len(beliefs), len(beliefs[0])
    y_next = [mp.fsum(mp.mpf(A[i][j]) * mp.mpf(weights[j]) for j in range(n)) for i in range(n)]
    out = []
    for i in range(n):
        raw = []
        for t in range(m):
            prod = mp.mpf(likelihoods[i][t])
            for j in range(n):
                if A[i][j]:
                    prod *= mp.mpf(beliefs[j][t]) ** (mp.mpf(A[i][j]) * mp.mpf(weights[j]))
            raw.append(prod ** (1 / y_next[i]))
        z = mp.fsum(raw)
        out.append([r / z for r in raw])
    return out, y_next


def run_rounds(step, model, graph, signals):
    state = init_state(model.n, model.m)
    for s in signals:
        state = step(state, RoundInput(graph, s), model)
    return state


class TestInit:
    def test_uniform(self):
        s = init_state(3, 4)
        np.testing.assert_allclose(s.beliefs, 0.25)
        np.testing.assert_array_equal(s.weights, 1.0)
        assert s.step == 0

    def test_agents_view(self):
        s = init_state(2, 3)
        assert len(s.agents) == 2 and s.agents[1].weight == 1.0

    def test_state_read_only(self):
        s = init_state(2, 2)
        with pytest.raises(ValueError):
            s.log_beliefs[0, 0] = 0.0


class TestLogNormalize:
    def test_extreme_values(self):
        u = np.array([[-1e4, -1e4 - math.log(3)]])
        got = log_normalize(u)
        # the input difference itself carries ~1e-12 rounding at this magnitude
        np.testing.assert_allclose(np.exp(got), [[0.75, 0.25]], rtol=1e-11)


class TestBayesReduction:
    def test_single_agent_is_bayes(self):
        # n=1: the update is elementwise multiplication by the likelihood and renormalization
        model = binary_model([0.3], [[0.2, 0.5, 0.7]])
        signals = [0, 1, 1, 0, 1, 1, 1]
        state = init_state(1, 3)
        g = Digraph.from_edges(1, [])
        mu = np.full(3, 1 / 3)
        for s in signals:
            state = step_push_sum(state, RoundInput(g, [s]), model)
            lik = np.array([0.2, 0.5, 0.7]) if s == 0 else np.array([0.8, 0.5, 0.3])
            mu = mu * lik
            mu = mu / mu.sum()
            np.testing.assert_allclose(state.beliefs[0], mu, rtol=1e-13)
            assert state.weights[0] == 1.0


class TestProductFormOracle:
    @pytest.mark.parametrize("seed", range(8))
    def test_random_rounds(self, seed):
        rng = np.random.default_rng(seed)
        n, m = 4, 3
        model = random_model(rng, n, m, alphabet=(2, 3))
        edges = [(j, i) for j in range(n) for i in range(n) if j != i and rng.random() < 0.4]
        g = Digraph.from_edges(n, edges)
        A = weight_matrix(g)
        state = init_state(n, m)
        ref_mu = [[mp.mpf(1) / m] * m for _ in range(n)]
        ref_y = [mp.mpf(1)] * n
        for _ in range(5):
            s = [int(rng.integers(model.agents[i].alphabet_size)) for i in range(n)]
            lik = [[float(model.agents[i].likelihoods[t, s[i]]) for t in range(m)] for i in range(n)]
            state = step_push_sum(state, RoundInput(g, s), model)
            ref_mu, ref_y = product_form_oracle(A.tolist(), ref_mu, ref_y, lik)
            expected = np.array([[float(mp.log(v)) for v in row] for row in ref_mu])
            np.testing.assert_allclose(state.log_beliefs, expected, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(state.weights, [float(v) for v in ref_y], rtol=1e-14)


class TestVariants:
    def test_regular_graph_variants_match(self, rng):
        # column sums and row sums agree, so the weights stay at one
        model = random_model(rng, 4, 3)
        g = ring_graph(4)
        signals = [[int(rng.integers(a.alphabet_size)) for a in model.agents] for _ in range(30)]
        a = run_rounds(step_push_sum, model, g, signals)
        b = run_rounds(step_plain, model, g, signals)
        np.testing.assert_allclose(a.log_beliefs, b.log_beliefs, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(a.weights, 1.0, atol=1e-14)

    def test_plain_keeps_unit_weights(self, rng, model3):
        g = Digraph.from_edges(3, [(0, 1), (0, 2), (2, 0)])
        state = run_rounds(step_plain, model3, g, [[0, 1, 0]] * 5)
        np.testing.assert_array_equal(state.weights, 1.0)

    def test_weights_conserved(self, rng, model3):
        g = Digraph.from_edges(3, [(0, 1), (0, 2), (2, 0)])
        state = run_rounds(step_push_sum, model3, g, [[0, 1, 0]] * 7)
        assert state.weights.sum() == pytest.approx(3.0, abs=1e-13)
        A = weight_matrix(g)
        np.testing.assert_allclose(state.weights, np.linalg.matrix_power(A, 7) @ np.ones(3), rtol=1e-14)


class TestPhi:
    def test_phi_hat_recursion(self, rng, model3):
        # y'(phi') = A (y phi) + log-likelihood ratio, exactly
        g = Digraph.from_edges(3, [(0, 1), (0, 2), (2, 0), (1, 0)])
        A = weight_matrix(g)
        state = init_state(3, 3)
        for _ in range(10):
            s = [int(rng.integers(2)) for _ in range(3)]
            hat = np.array([phi_hat(state, i, 1, 0) for i in range(3)])
            L = model3.signal_log_likelihoods(s)
            nxt = step_push_sum(state, RoundInput(g, s), model3)
            got = np.array([phi_hat(nxt, i, 1, 0) for i in range(3)])
            np.testing.assert_allclose(got, A @ hat + (L[:, 1] - L[:, 0]), rtol=1e-12, atol=1e-13)
            state = nxt

    def test_phi_antisymmetric(self, model3):
        s = NetworkState(0, np.log([[0.2, 0.3, 0.5]] * 3), np.ones(3))
        assert phi(s, 0, 0, 2) == pytest.approx(-phi(s, 0, 2, 0))
        assert phi(s, 0, 0, 2) == pytest.approx(math.log(0.4))


class TestErrors:
    def test_non_finite_raises(self):
        # unsupported outcome 1 has zero likelihood under hypothesis 1
        model = NetworkModel.from_tables([[1.0, 0.0]], [[[0.5, 0.5], [1.0, 0.0]]])
        state = init_state(1, 2)
        with pytest.raises(RoundError):
            step_push_sum(state, RoundInput(Digraph.from_edges(1, []), [1]), model)

    def test_signal_out_of_alphabet(self, model3):
        with pytest.raises(ValueError):
            step_push_sum(init_state(3, 3), RoundInput(ring_graph(3), [0, 2, 0]), model3)

    def test_size_mismatch(self, model3):
        with pytest.raises(ValueError):
            step_push_sum(init_state(3, 3), RoundInput(ring_graph(4), [0, 0, 0, 0]), model3)


@st.composite
def small_networks(draw):
    n = draw(st.integers(1, 4))
    m = draw(st.integers(2, 4))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    model = random_model(rng, n, m, alphabet=(2, 3))
    edges = [(j, i) for j in range(n) for i in range(n) if j != i and rng.random() < 0.5]
    signals = [[int(rng.integers(a.alphabet_size)) for a in model.agents] for _ in range(draw(st.integers(1, 15)))]
    return model, Digraph.from_edges(n, edges), signals, rng


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(small_networks())
    def test_beliefs_on_simplex(self, net):
        model, g, signals, _ = net
        for step in (step_push_sum, step_plain):
            state = run_rounds(step, model, g, signals)
            np.testing.assert_allclose(state.beliefs.sum(axis=1), 1.0, atol=1e-12)
            assert np.all(state.weights > 0)

    @settings(max_examples=60, deadline=None)
    @given(small_networks())
    def test_permutation_equivariant(self, net):
        model, g, signals, rng = net
        order = rng.permutation(model.n)
        pm, pg = model.permuted(order), g.relabeled(order)
        ps = [[s[o] for o in order] for s in signals]
        for step in (step_push_sum, step_plain):
            a = run_rounds(step, model, g, signals)
            b = run_rounds(step, pm, pg, ps)
            np.testing.assert_allclose(b.log_beliefs, a.log_beliefs[order], rtol=1e-11, atol=1e-11)
            np.testing.assert_allclose(b.weights, a.weights[order], rtol=1e-13)

    @settings(max_examples=40, deadline=None)
    @given(small_networks())
    def test_complete_graph_consensus(self, net):
        # one round on the complete graph yields the same state at every agent up to each likelihood
        model, _, signals, _ = net
        g = complete_graph(model.n)
        state = run_rounds(step_push_sum, model, g, signals[:1])
        L = model.signal_log_likelihoods(signals[0])
        np.testing.assert_allclose(state.log_beliefs, log_normalize(-math.log(model.m) + L), atol=1e-12)
