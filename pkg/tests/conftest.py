import numpy as np
import pytest

from pushlearn.graphs import Digraph, generate, ring_graph
from pushlearn.model import NetworkModel

# Static digraph on 5 nodes whose push-sum influence vector is far from
# uniform: phi = (4, 14, 10, 4, 3) / 35.
UNBALANCED_EDGES = [(0, 1), (1, 2), (2, 0), (2, 1), (2, 3), (2, 4), (3, 1), (4, 1), (4, 2)]


def random_model(rng, n, m, alphabet=(2, 4), floor=0.05):
    """Random valid model with full-support true distributions."""
    f, lik = [], []
    for _ in range(n):
        a = int(rng.integers(alphabet[0], alphabet[1] + 1))
        p = rng.dirichlet(np.ones(a)) * (1 - a * floor) + floor
        f.append(p / p.sum())
        rows = rng.dirichlet(np.ones(a), size=m) * (1 - a * floor) + floor
        lik.append(rows / rows.sum(axis=1, keepdims=True))
    return NetworkModel.from_tables(f, lik)


def binary_model(true_p, hyp_p):
    """Binary-alphabet model: agent i has P(s=0)=true_p[i] and P(s=0|theta)=hyp_p[i][theta]."""
    f = [[p, 1 - p] for p in true_p]
    lik = [[[q, 1 - q] for q in row] for row in hyp_p]
    return NetworkModel.from_tables(f, lik)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def ring4():
    return generate("static", 4, 1, graphs=(ring_graph(4),))


@pytest.fixture
def unbalanced5():
    return generate("static", 5, 1, edges=UNBALANCED_EDGES)


@pytest.fixture
def model3():
    """Three agents, three hypotheses, unique optimum at hypothesis 0."""
    return binary_model(
        [0.6, 0.3, 0.5],
        [[0.6, 0.8, 0.35], [0.3, 0.5, 0.15], [0.5, 0.7, 0.3]],
    )


@pytest.fixture
def alternating_paths():
    return generate(
        "periodic",
        4,
        2,
        graphs=(
            Digraph.from_edges(4, [(0, 1), (1, 2), (2, 3)]),
            Digraph.from_edges(4, [(3, 2), (2, 1), (1, 0)]),
        ),
    )


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
