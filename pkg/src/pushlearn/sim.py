"""Seeded trajectories, Monte Carlo batches and the centralized Bayes reference.

Run ``r`` of a configuration draws its uniforms from
``SeedSequence(master_seed, spawn_key=(r,))``: a ``(horizon, n)`` block in
row-major order, so the draw for ``(step, agent)`` is fixed by
``(master_seed, r, step, agent)`` alone.  Distinct runs get distinct spawn
keys and therefore independent streams.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import analysis
from .graphs import GraphSequence, sequence_to_dict
from .model import NetworkModel, RateConstants, inverse_cdf, model_to_dict
from .protocol import log_normalize, plain_update, push_sum_update
from .trace import Trace

VARIANTS = ("push-sum", "plain")
RECORD_MODES = ("full", "summary")
SUMMARY_STRIDE = 10


@dataclass(frozen=True, eq=False)
class SimConfig:
    model: NetworkModel
    graph: GraphSequence
    variant: str = "push-sum"
    horizon: int = 1000
    master_seed: int = 0
    runs: int = 1
    record: str = "full"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.record not in RECORD_MODES:
            raise ValueError(f"record must be one of {RECORD_MODES}, got {self.record!r}")
        if int(self.horizon) < 1:
            raise ValueError("horizon must be >= 1")
        if int(self.runs) < 1:
            raise ValueError("runs must be >= 1")
        if self.model.n != self.graph.n:
            raise ValueError(f"model has {self.model.n} agents, graph has {self.graph.n} nodes")

    def config_hash(self) -> str:
        doc = {
            "model": model_to_dict(self.model),
            "graph": sequence_to_dict(self.graph),
            "variant": self.variant,
            "horizon": int(self.horizon),
            "master_seed": int(self.master_seed),
            "record": self.record,
        }
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def run_stream(master_seed: int, run_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=(int(run_index),)))


def sample_signals(model: NetworkModel, horizon: int, rng: np.random.Generator) -> np.ndarray:
    """Signals for steps ``1..horizon``, shape ``(horizon, n)``."""
    u = rng.random((horizon, model.n))
    out = np.empty((horizon, model.n), dtype=np.int64)
    for i, agent in enumerate(model.agents):
        out[:, i] = inverse_cdf(agent.true_dist, u[:, i])
    return out


def recorded_steps(horizon: int, record: str) -> np.ndarray:
    if record == "full":
        return np.arange(1, horizon + 1)
    picks = set(range(SUMMARY_STRIDE, horizon + 1, SUMMARY_STRIDE)) | {1, horizon}
    return np.array(sorted(picks))


def simulate_signals(
    model: NetworkModel,
    graphs: GraphSequence,
    signals: np.ndarray,
    variant: str = "push-sum",
    record: str = "full",
    header: dict | None = None,
) -> Trace:
    """Run the protocol on a fixed signal sequence (row ``k`` is consumed at step ``k+1``)."""
    signals = np.asarray(signals, dtype=np.int64)
    horizon, n = signals.shape
    m = model.m
    keep = recorded_steps(horizon, record)
    slot = np.full(horizon + 1, -1)
    slot[keep] = np.arange(len(keep))
    lb_out = np.empty((len(keep), n, m))
    y_out = np.empty((len(keep), n))
    g_out = np.empty(len(keep), dtype=np.int64)
    lb = np.full((n, m), -math.log(m))
    y = np.ones(n)
    table = model.log_likelihood_table
    agents = np.arange(n)
    push = variant == "push-sum"
    for k in range(horizon):
        A = graphs.weights(k)
        log_lik = table[agents, signals[k]]
        if push:
            lb, y = push_sum_update(A, lb, y, log_lik)
        else:
            lb = plain_update(A, lb, log_lik)
        r = slot[k + 1]
        if r >= 0:
            if not np.all(np.isfinite(lb)):
                raise RuntimeError(f"step {k + 1}: non-finite log-belief")
            lb_out[r] = lb
            y_out[r] = y
            g_out[r] = graphs.index(k)
    if not np.all(np.isfinite(lb)):
        raise RuntimeError("non-finite log-belief encountered")
    hdr = dict(header or {})
    hdr.update(n=n, m=m, horizon=horizon, variant=variant, record=record)
    return Trace(hdr, keep.astype(np.int64), lb_out, y_out, signals[keep - 1].copy(), g_out)


def run(config: SimConfig, run_index: int = 0) -> Trace:
    """One seeded trajectory of ``config``."""
    signals = sample_signals(config.model, int(config.horizon), run_stream(config.master_seed, run_index))
    header = {"config_hash": config.config_hash(), "seed": int(config.master_seed), "run": int(run_index)}
    return simulate_signals(config.model, config.graph, signals, config.variant, config.record, header)


def centralized_bayes(model: NetworkModel, signals) -> np.ndarray:
    """Log-beliefs of a fusion centre seeing every signal, shape ``(T, m)``."""
    signals = np.asarray(signals, dtype=np.int64)
    table = model.log_likelihood_table
    agents = np.arange(model.n)
    lb = np.full((1, model.m), -math.log(model.m))
    out = np.empty((len(signals), model.m))
    for k, s in enumerate(signals):
        lb = log_normalize(lb + table[agents, s].sum(axis=0, keepdims=True))
        out[k] = lb[0]
    return out


@dataclass(frozen=True, eq=False)
class RunDigest:
    run: int
    violated: bool
    slopes: np.ndarray  # (n, |non_optimal|)
    final_beliefs: np.ndarray  # (n, |non_optimal|)


@dataclass(frozen=True, eq=False)
class MonteCarloSummary:
    runs: int
    violating_runs: int
    n_rho: int
    shortfall: bool
    window: tuple[int, int]
    theta_v: tuple[int, ...]
    slopes: np.ndarray = field(repr=False)  # (runs, n, |theta_v|)
    mean_final_beliefs: np.ndarray = field(repr=False)  # (n, |theta_v|)

    @property
    def violating_fraction(self) -> float:
        return self.violating_runs / self.runs

    def slope_quantiles(self, qs=(0.05, 0.5, 0.95)) -> np.ndarray:
        """Per-agent, per-hypothesis slope quantiles, shape ``(len(qs), n, |theta_v|)``."""
        return np.quantile(self.slopes, qs, axis=0)

    def as_dict(self) -> dict:
        out = {
            "runs": self.runs,
            "violating_runs": self.violating_runs,
            "violating_fraction": self.violating_fraction,
            "n_rho": self.n_rho,
            "shortfall": self.shortfall,
            "window": f"{self.window[0]}:{self.window[1]}",
        }
        q = self.slope_quantiles()
        for i in range(self.slopes.shape[1]):
            for c, v in enumerate(self.theta_v):
                out[f"slope_q05[{i}][{v}]"] = float(q[0, i, c])
                out[f"slope_q50[{i}][{v}]"] = float(q[1, i, c])
                out[f"slope_q95[{i}][{v}]"] = float(q[2, i, c])
                out[f"mean_final_belief[{i}][{v}]"] = float(self.mean_final_beliefs[i, c])
        return out


def _digest(args) -> RunDigest:
    config, constants, rho, r, window = args
    trace = run(config, r)
    report = analysis.verify_bound(trace, constants, rho)
    thetas = constants.non_optimal
    slopes = np.array(
        [[analysis.decay_slope(trace, i, v, window) for v in thetas] for i in range(trace.n)]
    ).reshape(trace.n, len(thetas))
    final = np.exp(trace.log_beliefs[-1][:, list(thetas)])
    return RunDigest(r, report.violated, slopes, final)


def monte_carlo(
    config: SimConfig,
    constants: RateConstants,
    rho: float | None = None,
    workers: int | None = 1,
    window: tuple[int, int] | None = None,
) -> MonteCarloSummary:
    """Run ``config.runs`` independent trajectories and aggregate bound checks and slopes.

    ``workers=None`` uses every CPU.  Results are collected in run order,
    so the summary does not depend on scheduling.
    """
    rho = constants.rho if rho is None else rho
    N = analysis.transient_length(constants, rho)
    horizon = int(config.horizon)
    window = window or analysis.default_window(horizon, N)
    jobs = [(config, constants, rho, r, window) for r in range(int(config.runs))]
    workers = os.cpu_count() if workers is None else workers
    if workers <= 1 or len(jobs) == 1:
        digests = [_digest(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            digests = list(pool.map(_digest, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    digests.sort(key=lambda d: d.run)
    slopes = np.stack([d.slopes for d in digests])
    final = np.mean(np.stack([d.final_beliefs for d in digests]), axis=0)
    return MonteCarloSummary(
        runs=len(digests),
        violating_runs=sum(d.violated for d in digests),
        n_rho=N,
        shortfall=horizon < N,
        window=window,
        theta_v=tuple(constants.non_optimal),
        slopes=slopes,
        mean_final_beliefs=final,
    )
