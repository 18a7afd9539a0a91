"""Observation models, divergences and the model-derived rate constants.

Every agent observes i.i.d. draws from a finite alphabet.  An agent carries
its true signal distribution (simulation ground truth, never read by the
protocol) and one likelihood row per hypothesis.

All logarithms are natural.
"""

from __future__ import annotations

import decimal
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from ._validation import (
    PROB_ATOL,
    ValidationError,
    check_int,
    check_probability_vector,
    normalize_loaded_row,
)

DEFAULT_REL_TOL = 1e-9


class ModelError(ValidationError):
    """A network model violates one of its structural assumptions."""


class SupportError(ModelError):
    """A likelihood vanishes where the true distribution has mass."""

    def __init__(self, message: str, index: int, field: str | None = None):
        self.index = index
        super().__init__(message, field)


@dataclass(frozen=True)
class HypothesisSet:
    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise ModelError("at least two hypotheses are required", "hypotheses")
        if len(set(labels)) != len(labels):
            raise ModelError("hypothesis labels must be unique", "hypotheses")

    @classmethod
    def of_size(cls, m: int) -> "HypothesisSet":
        return cls(tuple(f"theta{p}" for p in range(m)))

    @property
    def m(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True, eq=False)
class AgentModel:
    """One agent's true signal distribution and per-hypothesis likelihoods.

    Parameters
    ----------
    true_dist : array_like, shape (alphabet_size,)
        Distribution of the agent's signals.
    likelihoods : array_like, shape (m, alphabet_size)
        Row ``p`` is the signal distribution the agent expects under
        hypothesis ``p``.
    """

    true_dist: np.ndarray
    likelihoods: np.ndarray

    def __post_init__(self):
        f = check_probability_vector(self.true_dist, "true_dist", error=ModelError)
        rows = np.array(self.likelihoods, dtype=float)
        if rows.ndim != 2 or rows.shape[1] != f.size:
            raise ModelError(
                f"likelihood table must have shape (m, {f.size}), got {rows.shape}", "likelihoods"
            )
        for p, row in enumerate(rows):
            check_probability_vector(row, f"likelihoods[{p}]", error=ModelError)
        supported = f > 0
        bad = np.argwhere((rows <= 0) & supported[None, :])
        if bad.size:
            p, s = (int(v) for v in bad[0])
            raise SupportError(
                f"likelihood of outcome {s} under hypothesis {p} is zero "
                "but the outcome has positive true probability",
                s,
                f"likelihoods[{p}][{s}]",
            )
        rows.setflags(write=False)
        object.__setattr__(self, "true_dist", f)
        object.__setattr__(self, "likelihoods", rows)

    @property
    def alphabet_size(self) -> int:
        return self.true_dist.size

    @property
    def m(self) -> int:
        return self.likelihoods.shape[0]


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """A shared hypothesis set and one observation model per agent.

    By default the optimal set is required to be a strict subset of the
    hypotheses; pass ``require_strict_optimum=False`` to build degenerate
    models for testing.
    """

    hypotheses: HypothesisSet
    agents: tuple[AgentModel, ...]
    require_strict_optimum: bool = True
    rel_tol: float = DEFAULT_REL_TOL
    _log_lik: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        agents = tuple(self.agents)
        object.__setattr__(self, "agents", agents)
        if not agents:
            raise ModelError("a network needs at least one agent", "agents")
        m = self.hypotheses.m
        for i, agent in enumerate(agents):
            if agent.m != m:
                raise ModelError(f"agent has {agent.m} likelihood rows, expected {m}", f"agents[{i}]")
        # Padded (n, max_alphabet, m) log-likelihood table for vectorized gathers.
        width = max(a.alphabet_size for a in agents)
        table = np.zeros((len(agents), width, m))
        with np.errstate(divide="ignore"):
            for i, agent in enumerate(agents):
                table[i, : agent.alphabet_size, :] = np.log(agent.likelihoods.T)
        table.setflags(write=False)
        object.__setattr__(self, "_log_lik", table)
        if self.require_strict_optimum:
            optimal_set(self, self.rel_tol)

    @classmethod
    def from_tables(cls, true_dists, likelihoods, labels: Sequence[str] | None = None, **kwargs):
        agents = tuple(AgentModel(f, lik) for f, lik in zip(true_dists, likelihoods, strict=True))
        hyps = HypothesisSet(tuple(labels)) if labels is not None else HypothesisSet.of_size(agents[0].m)
        return cls(hyps, agents, **kwargs)

    @property
    def n(self) -> int:
        return len(self.agents)

    @property
    def m(self) -> int:
        return self.hypotheses.m

    @property
    def log_likelihood_table(self) -> np.ndarray:
        """Array of shape (n, max_alphabet, m); padding entries are 0 and never valid signals."""
        return self._log_lik

    def signal_log_likelihoods(self, signals) -> np.ndarray:
        """Per-agent log-likelihood rows ``log l^i(s^i | .)``, shape (n, m)."""
        signals = np.asarray(signals, dtype=np.intp)
        return self._log_lik[np.arange(self.n), signals]

    def permuted(self, order: Sequence[int]) -> "NetworkModel":
        return NetworkModel(
            self.hypotheses,
            tuple(self.agents[j] for j in order),
            self.require_strict_optimum,
            self.rel_tol,
        )


@dataclass(frozen=True, eq=False)
class RateConstants:
    """Constants entering the finite-time belief bound.

    ``gamma1`` has one entry per agent.  ``case`` records which graph case
    produced ``C`` and ``lam``; ``delta_source`` whether ``delta`` is the
    empirical floor of the realized sequence or the analytic one.
    """

    alpha: float
    delta: float
    C: float
    lam: float
    gamma1: np.ndarray
    gamma2: float
    n_rho: int
    rho: float
    case: int = 1
    delta_source: str = "empirical"
    non_optimal: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "non_optimal", tuple(int(v) for v in self.non_optimal))
        g1 = np.array(self.gamma1, dtype=float)
        g1.setflags(write=False)
        object.__setattr__(self, "gamma1", g1)
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0 < self.lam < 1:
            raise ValueError(f"lambda must lie in (0, 1), got {self.lam}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not self.gamma2 > 0:
            raise ValueError(f"gamma2 must be positive, got {self.gamma2}")
        if self.n_rho < 1:
            raise ValueError(f"n_rho must be >= 1, got {self.n_rho}")

    def as_dict(self) -> dict:
        out = {
            "alpha": self.alpha,
            "delta": self.delta,
            "delta_source": self.delta_source,
            "case": self.case,
            "C": self.C,
            "lambda": self.lam,
            "gamma2": self.gamma2,
            "rho": self.rho,
            "n_rho": self.n_rho,
            "non_optimal": ",".join(str(v) for v in self.non_optimal),
        }
        for i, g in enumerate(self.gamma1):
            out[f"gamma1[{i}]"] = float(g)
        return out


def kl_divergence(p, q) -> float:
    """Kullback-Leibler divergence ``D(p || q)`` between categorical distributions.

    Terms with ``p[s] == 0`` contribute nothing.

    Raises
    ------
    SupportError
        If some ``p[s] > 0`` has ``q[s] == 0``.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    mask = p > 0
    bad = np.flatnonzero(mask & (q <= 0))
    if bad.size:
        raise SupportError(f"q vanishes at index {int(bad[0])} where p is positive", int(bad[0]))
    pm = p[mask]
    return max(float(np.sum(pm * (np.log(pm) - np.log(q[mask])))), 0.0)


def _kl_table(model: NetworkModel) -> np.ndarray:
    """``D(f^i || l^i(.|theta))`` for every agent and hypothesis, shape (n, m)."""
    return np.array(
        [[kl_divergence(a.true_dist, row) for row in a.likelihoods] for a in model.agents]
    )


def group_confidences(model: NetworkModel) -> np.ndarray:
    return -_kl_table(model).sum(axis=0)


def group_confidence(model: NetworkModel, theta: int) -> float:
    if not 0 <= theta < model.m:
        raise IndexError(f"hypothesis index {theta} out of range for m={model.m}")
    return -sum(kl_divergence(a.true_dist, a.likelihoods[theta]) for a in model.agents)


def optimal_set(model: NetworkModel, rel_tol: float = DEFAULT_REL_TOL) -> tuple[int, ...]:
    """Indices maximizing the group confidence, ties resolved with `rel_tol`."""
    if rel_tol < 0:
        raise ValueError("rel_tol must be non-negative")
    conf = group_confidences(model)
    best = conf.max()
    chosen = tuple(int(p) for p in np.flatnonzero(conf >= best - rel_tol * (1 + abs(best))))
    if len(chosen) == model.m:
        raise ModelError("every hypothesis is optimal; the optimal set must be a strict subset", "likelihoods")
    return chosen


def non_optimal_set(model: NetworkModel, rel_tol: float = DEFAULT_REL_TOL) -> tuple[int, ...]:
    opt = set(optimal_set(model, rel_tol))
    return tuple(p for p in range(model.m) if p not in opt)


def h_vector(model: NetworkModel, theta_v: int, theta_w: int) -> np.ndarray:
    """Per-agent KL differences ``D(f^i||l^i(.|v)) - D(f^i||l^i(.|w))``."""
    for t in (theta_v, theta_w):
        if not 0 <= t < model.m:
            raise IndexError(f"hypothesis index {t} out of range for m={model.m}")
    return np.array(
        [
            kl_divergence(a.true_dist, a.likelihoods[theta_v])
            - kl_divergence(a.true_dist, a.likelihoods[theta_w])
            for a in model.agents
        ]
    )


def alpha_bound(model: NetworkModel) -> float:
    """Smallest likelihood over all agents, hypotheses and supported outcomes."""
    best = math.inf
    for i, agent in enumerate(model.agents):
        supported = agent.true_dist > 0
        low = float(agent.likelihoods[:, supported].min())
        if low <= 0:
            raise SupportError("support condition violated", int(np.argmin(agent.likelihoods.min(0))), f"agents[{i}]")
        best = min(best, low)
    return best


def gamma2(model: NetworkModel, rel_tol: float = DEFAULT_REL_TOL) -> float:
    conf = group_confidences(model)
    opt = optimal_set(model, rel_tol)
    rest = [p for p in range(model.m) if p not in opt]
    c_star = conf[list(opt)].max()
    return float(min(c_star - conf[p] for p in rest)) / model.n


def gamma1(
    model: NetworkModel,
    C: float,
    lam: float,
    one_minus_lambda: float | None = None,
    rel_tol: float = DEFAULT_REL_TOL,
) -> np.ndarray:
    """Per-agent transient constants.

    The maximum runs over pairs ``(theta_w optimal, theta_v non-optimal)`` of
    ``2C/(1-lam) * ||H||_1 - H_i``.  Under uniform priors every optimal
    hypothesis has positive prior mass, so the pair range is the full
    optimal set.  Supply ``one_minus_lambda`` when ``lam`` is too close to 1
    to be represented.
    """
    if not 0 < lam < 1 and one_minus_lambda is None:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    gap = (1.0 - lam) if one_minus_lambda is None else one_minus_lambda
    conf = group_confidences(model)
    best = conf.max()
    opt = [p for p in range(model.m) if conf[p] >= best - rel_tol * (1 + abs(best))]
    rest = [p for p in range(model.m) if p not in opt] or list(range(model.m))
    out = np.full(model.n, -math.inf)
    for w in opt:
        for v in rest:
            h = h_vector(model, v, w)
            out = np.maximum(out, 2 * C / gap * np.abs(h).sum() - h)
    return out


def n_rho_from_log_delta(alpha: float, log_delta: float, gamma2: float, rho: float) -> int:
    """Transient length with the graph floor given as ``log(delta)``.

    Exact even when the result does not fit in a float.
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if not gamma2 > 0:
        raise ValueError(f"gamma2 must be positive, got {gamma2}")
    if not 0 < rho < 1:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    if not math.isfinite(log_delta):
        raise ValueError("delta must be positive and finite")
    num = 8 * math.log(alpha) ** 2 * -math.log(rho)
    if num == 0:
        return 1
    log_term = math.log(num) - 2 * log_delta - 2 * math.log(gamma2)
    if log_term < 700:
        return max(1, math.ceil(num / (math.exp(log_delta) ** 2 * gamma2**2) + 1))
    with decimal.localcontext() as ctx:
        ctx.prec = 60
        big = decimal.Decimal(log_term).exp() + 1
        return int(big.to_integral_value(rounding=decimal.ROUND_CEILING))


def n_rho(alpha: float, delta: float, gamma2: float, rho: float) -> int:
    """Transient time after which the belief bound holds with probability ``1 - rho``."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    return n_rho_from_log_delta(alpha, math.log(delta), gamma2, rho)


def log_belief_bound(k: int, gamma1_i: float, gamma2: float, delta: float) -> float:
    if k < 0:
        raise ValueError("k must be non-negative")
    return -0.5 * k * gamma2 + gamma1_i / delta


def belief_bound(k: int, gamma1_i: float, gamma2: float, delta: float) -> float:
    """``exp(-k*gamma2/2 + gamma1_i/delta)``; values above 1 are vacuous."""
    x = log_belief_bound(k, gamma1_i, gamma2, delta)
    return math.exp(x) if x < 709.0 else math.inf


def sample_signal(agent: AgentModel, rng: np.random.Generator) -> int:
    """Draw one outcome by inverting the CDF at a single uniform draw."""
    return inverse_cdf(agent.true_dist, rng.random())


def inverse_cdf(dist: np.ndarray, u):
    cdf = np.cumsum(dist)
    cdf[-1] = 1.0
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), dist.size - 1)
    return int(idx) if np.ndim(idx) == 0 else idx


# ---------------------------------------------------------------------------
# file format


def model_to_dict(model: NetworkModel) -> dict:
    return {
        "m": model.m,
        "n": model.n,
        "hypotheses": list(model.hypotheses.labels),
        "agents": [
            {
                "alphabet_size": a.alphabet_size,
                "true_dist": a.true_dist.tolist(),
                "likelihoods": a.likelihoods.tolist(),
            }
            for a in model.agents
        ],
    }


def model_from_dict(doc: dict, rel_tol: float = DEFAULT_REL_TOL) -> NetworkModel:
    """Build a model from a parsed model document, validating every field."""
    if not isinstance(doc, dict):
        raise ModelError("model document must be a mapping")
    for key in ("m", "n", "agents"):
        if key not in doc:
            raise ModelError("missing required key", key)
    m = check_int(doc["m"], "m", minimum=2, error=ModelError)
    n = check_int(doc["n"], "n", minimum=1, error=ModelError)
    labels = doc.get("hypotheses") or [f"theta{p}" for p in range(m)]
    if len(labels) != m:
        raise ModelError(f"{len(labels)} labels given for m={m}", "hypotheses")
    agents_doc = doc["agents"]
    if not isinstance(agents_doc, list) or len(agents_doc) != n:
        raise ModelError(f"expected a list of {n} agents", "agents")
    agents = []
    for i, entry in enumerate(agents_doc):
        where = f"agents[{i}]"
        if not isinstance(entry, dict):
            raise ModelError("agent entry must be a mapping", where)
        for key in ("true_dist", "likelihoods"):
            if key not in entry:
                raise ModelError("missing required key", f"{where}.{key}")
        f = normalize_loaded_row(entry["true_dist"], f"{where}.true_dist", error=ModelError)
        size = entry.get("alphabet_size", f.size)
        size = check_int(size, f"{where}.alphabet_size", minimum=1, error=ModelError)
        if size != f.size:
            raise ModelError(f"true_dist has {f.size} entries, alphabet_size is {size}", f"{where}.true_dist")
        rows = entry["likelihoods"]
        if not isinstance(rows, list) or len(rows) != m:
            raise ModelError(f"expected {m} likelihood rows", f"{where}.likelihoods")
        table = []
        for p, row in enumerate(rows):
            r = normalize_loaded_row(row, f"{where}.likelihoods[{p}]", error=ModelError)
            if r.size != size:
                raise ModelError(f"row has {r.size} entries, alphabet_size is {size}", f"{where}.likelihoods[{p}]")
            table.append(r)
        try:
            agents.append(AgentModel(f, np.array(table)))
        except SupportError as exc:
            raise SupportError(exc.args[0].split(": ", 1)[-1], exc.index, f"{where}.{exc.field}") from None
    return NetworkModel(HypothesisSet(tuple(labels)), tuple(agents), rel_tol=rel_tol)


def load_model(path) -> NetworkModel:
    """Read a YAML (or JSON) model file."""
    path = Path(path)
    with path.open() as fh:
        doc = yaml.safe_load(fh)
    return model_from_dict(doc)


def dump_model(model: NetworkModel, path) -> None:
    Path(path).write_text(yaml.safe_dump(model_to_dict(model), sort_keys=False))
