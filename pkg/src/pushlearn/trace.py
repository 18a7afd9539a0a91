"""Per-step simulation records and their text/JSON file forms.

Record ``r`` holds the state after step ``steps[r]``: every agent's
log-beliefs and weight, the signals consumed to produce it and the schedule
slot of the graph used.  The initial state (uniform beliefs, unit weights)
is implicit.

Text form::

    #pushlearn-trace version=1 config_hash=<hex> seed=<int> n=<int> m=<int> horizon=<int> ...
    <step> <graph> <logb_0> ... <logb_{m-1}> <weight> <signal> [per further agent ...]

Floats are written with 17 significant digits, which round-trips IEEE
doubles exactly; the JSON form relies on ``repr`` for the same guarantee.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import ValidationError

MAGIC = "#pushlearn-trace"
VERSION = 1
_INT_KEYS = ("seed", "run", "n", "m", "horizon", "version")


class TraceFormatError(ValidationError):
    """A trace file is malformed."""


@dataclass(frozen=True, eq=False)
class Trace:
    header: dict
    steps: np.ndarray
    log_beliefs: np.ndarray
    weights: np.ndarray
    signals: np.ndarray
    graph_index: np.ndarray

    def __post_init__(self):
        T = len(self.steps)
        shapes = {
            "log_beliefs": (self.log_beliefs, 3),
            "weights": (self.weights, 2),
            "signals": (self.signals, 2),
            "graph_index": (self.graph_index, 1),
        }
        for name, (arr, nd) in shapes.items():
            if np.ndim(arr) != nd or len(arr) != T:
                raise TraceFormatError(f"expected {nd}-d array with {T} records", name)
        for arr in (self.steps, self.log_beliefs, self.weights, self.signals, self.graph_index):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.log_beliefs.shape[1]

    @property
    def m(self) -> int:
        return self.log_beliefs.shape[2]

    @property
    def horizon(self) -> int:
        return int(self.header.get("horizon", int(self.steps[-1]) if len(self.steps) else 0))

    @property
    def is_full(self) -> bool:
        return len(self.steps) == self.horizon and np.array_equal(self.steps, np.arange(1, self.horizon + 1))

    def payload_equal(self, other: "Trace") -> bool:
        return all(
            np.array_equal(a, b)
            for a, b in zip(
                (self.steps, self.log_beliefs, self.weights, self.signals, self.graph_index),
                (other.steps, other.log_beliefs, other.weights, other.signals, other.graph_index),
            )
        )


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def format_header(header: dict) -> str:
    parts = [MAGIC, f"version={VERSION}"]
    parts += [f"{k}={v}" for k, v in header.items() if k != "version"]
    return " ".join(parts)


def trace_to_text(trace: Trace) -> str:
    lines = [format_header(trace.header)]
    for r in range(len(trace.steps)):
        tokens = [str(int(trace.steps[r])), str(int(trace.graph_index[r]))]
        for i in range(trace.n):
            tokens += [_fmt(x) for x in trace.log_beliefs[r, i]]
            tokens.append(_fmt(trace.weights[r, i]))
            tokens.append(str(int(trace.signals[r, i])))
        lines.append(" ".join(tokens))
    return "\n".join(lines) + "\n"


def _parse_header(line: str) -> dict:
    parts = line.split()
    if not parts or parts[0] != MAGIC:
        raise TraceFormatError("missing trace header", "header")
    header = {}
    for token in parts[1:]:
        key, sep, value = token.partition("=")
        if not sep:
            raise TraceFormatError(f"malformed header token {token!r}", "header")
        header[key] = int(value) if key in _INT_KEYS else value
    for key in ("n", "m", "horizon"):
        if key not in header:
            raise TraceFormatError("missing header key", f"header.{key}")
    header.pop("version", None)
    return header


def trace_from_text(text: str) -> Trace:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise TraceFormatError("empty trace", "header")
    try:
        header = _parse_header(lines[0])
    except ValueError as exc:
        if isinstance(exc, TraceFormatError):
            raise
        raise TraceFormatError(str(exc), "header") from None
    n, m = header["n"], header["m"]
    width = 2 + n * (m + 2)
    T = len(lines) - 1
    steps = np.zeros(T, dtype=np.int64)
    graph = np.zeros(T, dtype=np.int64)
    lb = np.zeros((T, n, m))
    y = np.zeros((T, n))
    s = np.zeros((T, n), dtype=np.int64)
    for r, line in enumerate(lines[1:]):
        tok = line.split()
        if len(tok) != width:
            raise TraceFormatError(f"expected {width} fields, found {len(tok)}", f"record[{r}]")
        try:
            steps[r] = int(tok[0])
            graph[r] = int(tok[1])
            for i in range(n):
                base = 2 + i * (m + 2)
                lb[r, i] = [float(t) for t in tok[base : base + m]]
                y[r, i] = float(tok[base + m])
                s[r, i] = int(tok[base + m + 1])
        except ValueError as exc:
            raise TraceFormatError(str(exc), f"record[{r}]") from None
    return Trace(header, steps, lb, y, s, graph)


def trace_to_json(trace: Trace) -> str:
    doc = {
        "header": dict(trace.header, version=VERSION),
        "records": [
            {
                "step": int(trace.steps[r]),
                "graph": int(trace.graph_index[r]),
                "agents": [
                    {
                        "log_belief": [float(x) for x in trace.log_beliefs[r, i]],
                        "weight": float(trace.weights[r, i]),
                        "signal": int(trace.signals[r, i]),
                    }
                    for i in range(trace.n)
                ],
            }
            for r in range(len(trace.steps))
        ],
    }
    return json.dumps(doc, separators=(",", ":")) + "\n"


def trace_from_json(text: str) -> Trace:
    try:
        doc = json.loads(text)
        header = dict(doc["header"])
        header.pop("version", None)
        n, m = int(header["n"]), int(header["m"])
        recs = doc["records"]
        T = len(recs)
        lb = np.array([[a["log_belief"] for a in r["agents"]] for r in recs], dtype=float).reshape(T, n, m)
        y = np.array([[a["weight"] for a in r["agents"]] for r in recs], dtype=float).reshape(T, n)
        s = np.array([[a["signal"] for a in r["agents"]] for r in recs], dtype=np.int64).reshape(T, n)
        steps = np.array([r["step"] for r in recs], dtype=np.int64)
        graph = np.array([r["graph"] for r in recs], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(f"malformed JSON trace ({exc})") from None
    return Trace(header, steps, lb, y, s, graph)


def write_trace(trace: Trace, path, fmt: str | None = None) -> Path:
    path = Path(path)
    fmt = fmt or ("json" if path.suffix == ".json" else "text")
    path.write_text(trace_to_json(trace) if fmt == "json" else trace_to_text(trace))
    return path


def read_trace(path) -> Trace:
    path = Path(path)
    text = path.read_text()
    if text.lstrip().startswith("{"):
        return trace_from_json(text)
    return trace_from_text(text)
