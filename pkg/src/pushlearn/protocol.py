"""Synchronous belief rounds over a directed graph.

Beliefs are kept as log-probabilities and normalized with log-sum-exp, so
exponentially small beliefs never underflow.  A round reads only step-``k``
values and produces a fresh step-``k+1`` state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import Digraph, weight_matrix
from .model import NetworkModel


class RoundError(RuntimeError):
    """A round produced a non-finite log-belief."""


@dataclass(frozen=True, eq=False)
class AgentState:
    log_belief: np.ndarray
    weight: float


@dataclass(frozen=True, eq=False)
class NetworkState:
    """All agents' log-beliefs (shape ``(n, m)``) and push-sum weights (shape ``(n,)``)."""

    step: int
    log_beliefs: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        lb = np.array(self.log_beliefs, dtype=float)
        y = np.array(self.weights, dtype=float)
        if lb.ndim != 2 or y.shape != (lb.shape[0],):
            raise ValueError(f"inconsistent shapes {lb.shape} and {y.shape}")
        lb.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "log_beliefs", lb)
        object.__setattr__(self, "weights", y)

    @property
    def n(self) -> int:
        return self.log_beliefs.shape[0]

    @property
    def m(self) -> int:
        return self.log_beliefs.shape[1]

    @property
    def agents(self) -> list[AgentState]:
        return [AgentState(self.log_beliefs[i], float(self.weights[i])) for i in range(self.n)]

    @property
    def beliefs(self) -> np.ndarray:
        return np.exp(self.log_beliefs)


@dataclass(frozen=True, eq=False)
class RoundInput:
    graph: Digraph
    signals: np.ndarray

    def __post_init__(self):
        s = np.array(self.signals, dtype=np.intp)
        s.setflags(write=False)
        object.__setattr__(self, "signals", s)


def init_state(n: int, m: int) -> NetworkState:
    """Uniform beliefs and unit weights."""
    if n < 1 or m < 2:
        raise ValueError("need n >= 1 and m >= 2")
    return NetworkState(0, np.full((n, m), -np.log(m)), np.ones(n))


def log_normalize(u: np.ndarray) -> np.ndarray:
    """Subtract the row-wise log-sum-exp."""
    mx = u.max(axis=1, keepdims=True)
    return u - (mx + np.log(np.exp(u - mx).sum(axis=1, keepdims=True)))


def push_sum_update(A: np.ndarray, log_beliefs: np.ndarray, weights: np.ndarray, log_lik: np.ndarray):
    """Array kernel of one push-sum round; returns ``(log_beliefs, weights)``."""
    y_next = A @ weights
    u = (A @ (weights[:, None] * log_beliefs) + log_lik) / y_next[:, None]
    return log_normalize(u), y_next


def plain_update(A: np.ndarray, log_beliefs: np.ndarray, log_lik: np.ndarray) -> np.ndarray:
    return log_normalize(A @ log_beliefs + log_lik)


def _check_round(state: NetworkState, inp: RoundInput, model: NetworkModel) -> np.ndarray:
    if inp.graph.n != state.n or model.n != state.n:
        raise ValueError(f"round input has {inp.graph.n} nodes, state has {state.n}")
    if inp.signals.shape != (state.n,):
        raise ValueError("one signal per agent is required")
    for i, (s, agent) in enumerate(zip(inp.signals, model.agents)):
        if not 0 <= s < agent.alphabet_size:
            raise ValueError(f"signal {s} of agent {i} outside alphabet of size {agent.alphabet_size}")
    log_lik = model.signal_log_likelihoods(inp.signals)
    dead = np.flatnonzero(np.all(np.isneginf(log_lik), axis=1))
    if dead.size:
        raise RoundError(f"agent {int(dead[0])}: signal has zero likelihood under every hypothesis")
    return log_lik


def _finish(state: NetworkState, lb: np.ndarray, y: np.ndarray) -> NetworkState:
    if not np.all(np.isfinite(lb)):
        bad = int(np.argwhere(~np.isfinite(lb))[0, 0])
        raise RoundError(f"step {state.step + 1}: agent {bad} has a non-finite log-belief")
    return NetworkState(state.step + 1, lb, y)


def step_push_sum(state: NetworkState, inp: RoundInput, model: NetworkModel) -> NetworkState:
    """One round of the weighted geometric-averaging update with push-sum weights."""
    log_lik = _check_round(state, inp, model)
    lb, y = push_sum_update(weight_matrix(inp.graph), state.log_beliefs, state.weights, log_lik)
    return _finish(state, lb, y)


def step_plain(state: NetworkState, inp: RoundInput, model: NetworkModel) -> NetworkState:
    """Same round without the auxiliary weights; weights stay at 1."""
    log_lik = _check_round(state, inp, model)
    lb = plain_update(weight_matrix(inp.graph), state.log_beliefs, log_lik)
    return _finish(state, lb, np.ones(state.n))


STEPS = {"push-sum": step_push_sum, "plain": step_plain}


def phi(state: NetworkState, i: int, theta_v: int, theta_w: int) -> float:
    """Log-ratio of agent ``i``'s beliefs on two hypotheses."""
    lb = state.log_beliefs[i]
    return float(lb[theta_v] - lb[theta_w])


def phi_hat(state: NetworkState, i: int, theta_v: int, theta_w: int) -> float:
    return float(state.weights[i]) * phi(state, i, theta_v, theta_w)
