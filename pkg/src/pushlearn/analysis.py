"""Diagnostics over graph sequences and recorded traces.

Products of mixing matrices ``A_{k:t} = A_k ... A_t`` converge geometrically
to rank-one matrices ``phi_k 1^T``; the helpers here estimate ``phi_k``,
the weight floor ``delta``, and check recorded trajectories against the
finite-time belief bound and the linear recursion satisfied by the weighted
log-belief ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graphs import GraphSequence, TheoremConstants, theorem_constants
from .model import (
    DEFAULT_REL_TOL,
    NetworkModel,
    RateConstants,
    alpha_bound,
    gamma1,
    gamma2,
    group_confidences,
    n_rho_from_log_delta,
    non_optimal_set,
    optimal_set,
)
from .trace import Trace

COLUMN_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class MatrixChain:
    value: np.ndarray
    k: int
    t: int


def matrix_chain(seq: GraphSequence, k: int, t: int) -> MatrixChain:
    """Left-multiplied product ``A_k A_{k-1} ... A_t``."""
    if not 0 <= t <= k:
        raise ValueError(f"need 0 <= t <= k, got t={t}, k={k}")
    P = np.array(seq.weights(k))
    for s in range(k - 1, t - 1, -1):
        P = P @ seq.weights(s)
    return MatrixChain(P, k, t)


@dataclass(frozen=True, eq=False)
class PhiEstimate:
    phi: np.ndarray
    error_budget: float
    insufficient: bool = False


def _chain_bound(c: TheoremConstants, steps: int) -> float:
    return c.C * math.exp(steps * c.log_lambda) if c.one_minus_lambda < 1 else 0.0


def phi_estimate(
    seq: GraphSequence,
    k: int,
    depth: int,
    tol: float | None = None,
    constants: TheoremConstants | None = None,
) -> PhiEstimate:
    """Row means of ``A_{k:k-depth}`` as an estimate of the limiting influence vector.

    ``error_budget`` is ``C lam^depth``; ``insufficient`` is set when it
    exceeds `tol`.
    """
    if not 0 <= depth <= k:
        raise ValueError(f"need 0 <= depth <= k, got depth={depth}, k={k}")
    constants = constants or theorem_constants(seq)
    P = matrix_chain(seq, k, k - depth).value
    budget = _chain_bound(constants, depth)
    return PhiEstimate(P.mean(axis=1), budget, tol is not None and budget >= tol)


def static_influence(A: np.ndarray, tol: float = 1e-15, max_iter: int = 1_000_000) -> np.ndarray:
    """Fixed vector ``v = A v`` (summing to 1) of a primitive column-stochastic matrix."""
    n = A.shape[0]
    v = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        w = A @ v
        w /= w.sum()
        if np.max(np.abs(w - v)) < tol:
            return w
        v = w
    raise RuntimeError("power iteration did not converge")


def empirical_delta(seq: GraphSequence, horizon: int) -> float:
    """``min`` over ``k <= horizon`` of the smallest row sum of ``A_{k:0}``."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    y = np.ones(seq.n)
    best = math.inf
    for k in range(horizon + 1):
        y = seq.weights(k) @ y
        best = min(best, float(y.min()))
    return best


@dataclass(frozen=True)
class ErgodicityResult:
    max_excess: float
    worst: tuple[int, int, int, int] | None
    case: int


def ergodicity_check(seq: GraphSequence, horizon: int, constants: TheoremConstants | None = None) -> ErgodicityResult:
    """Largest ``|[A_{k:t}]_ij - phi_k^i| - C lam^(k-t) - budget_k`` over ``t <= k <= horizon``.

    ``phi_k`` is estimated from the full chain ``A_{k:0}`` and ``budget_k``
    is that estimate's error allowance.  A negative result means the
    geometric bound held everywhere.
    """
    constants = constants or theorem_constants(seq)
    worst_val, worst_at = -math.inf, None
    for k in range(horizon + 1):
        chains = [np.array(seq.weights(k))]
        for t in range(k - 1, -1, -1):
            chains.append(chains[-1] @ seq.weights(t))
        phi_k = chains[-1].mean(axis=1)
        budget = _chain_bound(constants, k)
        for lag, P in enumerate(chains):
            dev = np.abs(P - phi_k[:, None]) - _chain_bound(constants, lag) - budget
            idx = np.unravel_index(np.argmax(dev), dev.shape)
            if dev[idx] > worst_val:
                worst_val, worst_at = float(dev[idx]), (k, k - lag, int(idx[0]), int(idx[1]))
    return ErgodicityResult(worst_val, worst_at, constants.case)


def decay_slope(trace: Trace, i: int, theta_v: int, window: tuple[int, int]) -> float:
    """Least-squares slope of ``log mu_k^i(theta_v)`` against ``k`` on ``[k0, k1]``."""
    k0, k1 = window
    if k1 <= k0:
        raise ValueError(f"empty window {window}")
    if k0 < int(trace.steps[0]) or k1 > int(trace.steps[-1]):
        raise ValueError(f"window {window} exceeds trace steps [{trace.steps[0]}, {trace.steps[-1]}]")
    sel = (trace.steps >= k0) & (trace.steps <= k1)
    x = trace.steps[sel].astype(float)
    y = trace.log_beliefs[sel, i, theta_v]
    if x.size < 2:
        raise ValueError(f"window {window} holds fewer than two records")
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


def default_window(horizon: int, n_rho: int | None = None) -> tuple[int, int]:
    """Burn-in of ``max(N(rho), 10% of horizon)``; falls back to 10% if that leaves nothing."""
    k0 = max(1, math.ceil(0.1 * horizon))
    if n_rho is not None and n_rho < horizon - 1:
        k0 = max(k0, n_rho)
    return k0, horizon


@dataclass(frozen=True)
class BoundReport:
    total_points: int
    violations: int
    first_violation: tuple[int, int, int] | None
    n_rho: int
    shortfall: bool = False

    @property
    def violated(self) -> bool:
        return self.violations > 0

    def as_dict(self) -> dict:
        return {
            "total_points": self.total_points,
            "violations": self.violations,
            "first_violation": "none" if self.first_violation is None else "%d,%d,%d" % self.first_violation,
            "n_rho": self.n_rho,
            "shortfall": self.shortfall,
        }


def transient_length(constants: RateConstants, rho: float | None = None) -> int:
    """``N(rho)`` for the constants; reuses the stored value when `rho` matches."""
    if rho is None or rho == constants.rho:
        return constants.n_rho
    return n_rho_from_log_delta(constants.alpha, math.log(constants.delta), constants.gamma2, rho)


def verify_bound(trace: Trace, constants: RateConstants, rho: float | None = None, theta_v=None) -> BoundReport:
    """Count points ``(i, theta_v, k >= N(rho))`` where the belief exceeds the bound.

    `theta_v` defaults to the constants' non-optimal hypotheses.  The first
    violation is the lexicographically smallest ``(i, theta_v, k)``.
    """
    N = transient_length(constants, rho)
    thetas = tuple(constants.non_optimal if theta_v is None else theta_v)
    end = int(trace.steps[-1]) if len(trace.steps) else 0
    if end < N:
        return BoundReport(0, 0, None, N, shortfall=True)
    sel = trace.steps >= N
    k = trace.steps[sel].astype(float)
    log_bound = -0.5 * k[:, None] * constants.gamma2 + constants.gamma1[None, :] / constants.delta
    total = 0
    violations = 0
    first = None
    for i in range(trace.n):
        for v in thetas:
            over = trace.log_beliefs[sel, i, v] > log_bound[:, i]
            total += over.size
            count = int(over.sum())
            if count:
                violations += count
                if first is None:
                    first = (i, v, int(trace.steps[sel][np.argmax(over)]))
    return BoundReport(total, violations, first, N)


def recursion_check(trace: Trace, model: NetworkModel, graphs: GraphSequence, rel_tol: float = DEFAULT_REL_TOL) -> float:
    """Largest gap between recorded weighted log-ratios and one step of their linear recursion.

    Compares ``y_{k+1}(log mu_{k+1}(v) - log mu_{k+1}(w))`` with
    ``A_k`` applied to the step-``k`` values plus the signal log-likelihood
    ratio, for every ``w`` optimal and ``v != w``.  Requires a full trace.
    """
    if not trace.is_full:
        raise ValueError("recursion_check needs a full trace")
    opt = optimal_set(model, rel_tol)
    others = [[v for v in range(model.m) if v != w] for w in opt]
    prev_lb = np.full((trace.n, trace.m), -math.log(trace.m))
    prev_y = np.ones(trace.n)
    worst = 0.0
    for r in range(len(trace.steps)):
        k = int(trace.steps[r]) - 1
        if graphs.index(k) != int(trace.graph_index[r]):
            raise ValueError(f"graph slot mismatch at step {k + 1}")
        A = graphs.weights(k)
        L = model.signal_log_likelihoods(trace.signals[r])
        lb, y = trace.log_beliefs[r], trace.weights[r]
        for w, vs in zip(opt, others):
            before = prev_y[:, None] * (prev_lb[:, vs] - prev_lb[:, [w]])
            after = y[:, None] * (lb[:, vs] - lb[:, [w]])
            predicted = A @ before + (L[:, vs] - L[:, [w]])
            worst = max(worst, float(np.max(np.abs(predicted - after))))
        prev_lb, prev_y = lb, y
    return worst


def variation_bound(alpha: float, delta: float) -> float:
    """Largest change of any log-belief ratio caused by altering one signal."""
    return 2.0 / delta * math.log(1.0 / alpha)


def rate_constants(
    model: NetworkModel,
    seq: GraphSequence,
    rho: float,
    horizon: int,
    delta_mode: str = "empirical",
    rel_tol: float = DEFAULT_REL_TOL,
) -> RateConstants:
    """Assemble every constant of the finite-time bound for a model and sequence.

    ``delta_mode="empirical"`` uses the realized weight floor over
    `horizon` steps; ``"analytic"`` uses the worst-case floor of the graph
    case.
    """
    tc = theorem_constants(seq, horizon)
    alpha = alpha_bound(model)
    g2 = gamma2(model, rel_tol)
    if delta_mode == "empirical":
        log_delta = math.log(empirical_delta(seq, horizon))
    elif delta_mode == "analytic":
        log_delta = tc.log_delta_floor
    else:
        raise ValueError(f"unknown delta_mode {delta_mode!r}")
    g1 = gamma1(model, tc.C, tc.lam, tc.one_minus_lambda, rel_tol)
    N = n_rho_from_log_delta(alpha, log_delta, g2, rho)
    return RateConstants(
        alpha=alpha,
        delta=math.exp(log_delta),
        C=tc.C,
        lam=tc.lam if tc.lam < 1 else math.nextafter(1.0, 0.0),
        gamma1=g1,
        gamma2=g2,
        n_rho=N,
        rho=rho,
        case=tc.case,
        delta_source=delta_mode,
        non_optimal=non_optimal_set(model, rel_tol),
    )


@dataclass(frozen=True, eq=False)
class ReferenceRates:
    """Predicted decay rates of ``log mu^i(theta_v)``, one row per non-optimal hypothesis.

    ``uniform`` is ``-(C* - C(theta_v))/n`` for every agent; ``influence``
    is ``-phi_i (C* - C(theta_v))`` with ``phi`` the limiting influence
    vector of a static graph (``None`` for time-varying sequences).
    """

    theta_v: tuple[int, ...]
    uniform: np.ndarray
    influence: np.ndarray | None
    phi: np.ndarray | None


def reference_rates(model: NetworkModel, seq: GraphSequence | None = None, rel_tol: float = DEFAULT_REL_TOL) -> ReferenceRates:
    conf = group_confidences(model)
    opt = optimal_set(model, rel_tol)
    c_star = conf[list(opt)].max()
    rest = tuple(p for p in range(model.m) if p not in opt)
    gaps = np.array([c_star - conf[v] for v in rest])
    uniform = np.repeat(-gaps[:, None] / model.n, model.n, axis=1)
    phi = influence = None
    if seq is not None and seq.kind == "static":
        phi = static_influence(np.asarray(seq.weights(0)))
        influence = -gaps[:, None] * phi[None, :]
    return ReferenceRates(rest, uniform, influence, phi)


def format_record(record: dict) -> str:
    """Flat ``key=value`` lines; floats in 17 significant digits."""
    lines = []
    for key, value in record.items():
        if isinstance(value, (float, np.floating)):
            value = format(float(value), ".17g")
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def parse_record(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"malformed record line {line!r}")
        out[key.strip()] = value.strip()
    return out
