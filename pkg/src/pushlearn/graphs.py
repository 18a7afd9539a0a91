"""Time-varying directed graphs and their column-stochastic mixing matrices.

Edge ``(j, i)`` means node ``j`` transmits to node ``i``.  Every node is its
own neighbour, so self-loops are always present in memory.  Mixing matrices
are column-stochastic with columns indexed by the sender.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from ._validation import ValidationError, check_int, check_open_unit

MAX_WINDOW_RETRIES = 1000
KINDS = ("static", "periodic", "seeded-random")


class GraphError(ValidationError):
    """Invalid graph or graph-sequence description."""


class GenerationError(RuntimeError):
    """A random sequence could not satisfy its connectivity requirement."""


@dataclass(frozen=True)
class Digraph:
    n: int
    edges: frozenset

    def __post_init__(self):
        if self.n < 1:
            raise GraphError("a graph needs at least one node", "n")
        edges = set()
        for e in self.edges:
            j, i = (int(x) for x in e)
            if not (0 <= j < self.n and 0 <= i < self.n):
                raise GraphError(f"edge ({j}, {i}) out of range for n={self.n}", "edges")
            edges.add((j, i))
        edges.update((i, i) for i in range(self.n))
        object.__setattr__(self, "edges", frozenset(edges))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "Digraph":
        return cls(n, frozenset(edges))

    def out_degrees(self) -> np.ndarray:
        d = np.zeros(self.n, dtype=int)
        for j, _ in self.edges:
            d[j] += 1
        return d

    def in_degrees(self) -> np.ndarray:
        d = np.zeros(self.n, dtype=int)
        for _, i in self.edges:
            d[i] += 1
        return d

    def in_neighbors(self, i: int) -> list[int]:
        return sorted(j for j, t in self.edges if t == i)

    def union(self, other: "Digraph") -> "Digraph":
        return Digraph(self.n, self.edges | other.edges)

    def relabeled(self, order: Sequence[int]) -> "Digraph":
        """Graph where new node ``a`` plays the role of old node ``order[a]``."""
        where = {old: new for new, old in enumerate(order)}
        return Digraph(self.n, frozenset((where[j], where[i]) for j, i in self.edges))

    def edge_list(self, with_self_loops: bool = False) -> list[tuple[int, int]]:
        return sorted(e for e in self.edges if with_self_loops or e[0] != e[1])


def complete_graph(n: int) -> Digraph:
    return Digraph(n, frozenset((j, i) for j in range(n) for i in range(n)))


def ring_graph(n: int) -> Digraph:
    """Directed cycle ``0 -> 1 -> ... -> n-1 -> 0`` plus self-loops."""
    return Digraph(n, frozenset((j, (j + 1) % n) for j in range(n)))


def path_graph(n: int, reverse: bool = False) -> Digraph:
    if reverse:
        return Digraph(n, frozenset((j + 1, j) for j in range(n - 1)))
    return Digraph(n, frozenset((j, j + 1) for j in range(n - 1)))


def weight_matrix(g: Digraph) -> np.ndarray:
    """Mixing matrix with ``A[i, j] = 1/d_j`` for every edge ``(j, i)``."""
    d = g.out_degrees()
    A = np.zeros((g.n, g.n))
    for j, i in g.edges:
        A[i, j] = 1.0 / d[j]
    return A


def _reaches_all(adj: list[list[int]], n: int) -> bool:
    seen = [False] * n
    seen[0] = True
    stack = [0]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                stack.append(v)
    return all(seen)


def is_strongly_connected(g: Digraph) -> bool:
    """Forward and reverse reachability sweeps from node 0."""
    fwd = [[] for _ in range(g.n)]
    rev = [[] for _ in range(g.n)]
    for j, i in g.edges:
        fwd[j].append(i)
        rev[i].append(j)
    return _reaches_all(fwd, g.n) and _reaches_all(rev, g.n)


def is_regular(g: Digraph) -> bool:
    """All in- and out-degrees (self-loops included) share one value."""
    degrees = np.concatenate([g.out_degrees(), g.in_degrees()])
    return bool(np.all(degrees == degrees[0]))


@dataclass(frozen=True, eq=False)
class GraphSequence:
    """Deterministic schedule ``k -> Digraph``.

    ``static`` repeats ``graphs[0]``; ``periodic`` cycles through ``graphs``;
    ``seeded-random`` draws each length-``B`` window from its own stream
    derived from ``(seed, window)``, so ``graph(k)`` never depends on the
    order of evaluation.
    """

    n: int
    B: int
    kind: str
    graphs: tuple[Digraph, ...] = ()
    seed: int | None = None
    p: float | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GraphError(f"unknown kind {self.kind!r}; expected one of {KINDS}", "kind")
        check_int(self.n, "n", minimum=1, error=GraphError)
        check_int(self.B, "B", minimum=1, error=GraphError)
        object.__setattr__(self, "graphs", tuple(self.graphs))
        if self.kind == "seeded-random":
            if self.seed is None or self.p is None:
                raise GraphError("seeded-random sequences need seed and p", "seed")
            if not 0.0 <= float(self.p) <= 1.0:
                raise GraphError(f"p must lie in [0, 1], got {self.p}", "p")
        else:
            if not self.graphs:
                raise GraphError(f"{self.kind} sequences need at least one graph", "graphs")
            if self.kind == "static" and len(self.graphs) != 1:
                raise GraphError("static sequences carry exactly one graph", "graphs")
            for g in self.graphs:
                if g.n != self.n:
                    raise GraphError(f"graph has {g.n} nodes, sequence has {self.n}", "graphs")

    def index(self, k: int) -> int:
        """Schedule slot used at step ``k`` (period position, or ``k`` itself for random kinds)."""
        if self.kind == "static":
            return 0
        if self.kind == "periodic":
            return k % len(self.graphs)
        return k

    @property
    def period(self) -> int | None:
        """Number of distinct scheduled slots, ``None`` for random sequences."""
        return None if self.kind == "seeded-random" else len(self.graphs)

    def graph(self, k: int) -> Digraph:
        if k < 0:
            raise IndexError("steps are non-negative")
        if self.kind != "seeded-random":
            return self.graphs[self.index(k)]
        return self._window(k // self.B)[k % self.B]

    __call__ = graph

    def weights(self, k: int) -> np.ndarray:
        """Cached read-only mixing matrix for step ``k``."""
        key = ("A", self.index(k))
        A = self._cache.get(key)
        if A is None:
            A = weight_matrix(self.graph(k))
            A.setflags(write=False)
            if self.kind != "seeded-random" or len(self._cache) < 200_000:
                self._cache[key] = A
        return A

    def _window(self, w: int) -> tuple[Digraph, ...]:
        key = ("W", w)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        rng = np.random.default_rng(np.random.SeedSequence(int(self.seed), spawn_key=(w,)))
        off = ~np.eye(self.n, dtype=bool)
        for _ in range(MAX_WINDOW_RETRIES):
            draws = (rng.random((self.B, self.n, self.n)) < self.p) & off
            graphs = tuple(
                Digraph(self.n, frozenset((int(j), int(i)) for j, i in zip(*np.nonzero(d))))
                for d in draws
            )
            union = Digraph(self.n, frozenset().union(*(g.edges for g in graphs)))
            if is_strongly_connected(union):
                self._cache[key] = graphs
                return graphs
        raise GenerationError(
            f"window {w}: no strongly connected union after {MAX_WINDOW_RETRIES} draws "
            f"(n={self.n}, B={self.B}, p={self.p})"
        )

    def relabeled(self, order: Sequence[int]) -> "GraphSequence":
        if self.kind == "seeded-random":
            raise GraphError("relabeling is only defined for explicit schedules", "kind")
        return GraphSequence(self.n, self.B, self.kind, tuple(g.relabeled(order) for g in self.graphs))


def generate(kind: str, n: int, B: int = 1, seed: int | None = None, *, graphs=None, edges=None, p=None) -> GraphSequence:
    """Build a graph sequence of the requested kind.

    ``static`` takes ``edges`` (or a single graph in ``graphs``), ``periodic``
    takes ``graphs``, ``seeded-random`` takes ``p`` and ``seed``.  Random
    windows are produced lazily; the first window is drawn eagerly so that
    infeasible parameters fail here.
    """
    if kind == "static":
        if graphs is None:
            graphs = (Digraph.from_edges(n, edges or ()),)
        seq = GraphSequence(n, B, "static", tuple(graphs))
    elif kind == "periodic":
        seq = GraphSequence(n, B, "periodic", tuple(graphs or ()))
    elif kind == "seeded-random":
        if seed is None:
            raise GraphError("seeded-random sequences need a seed", "seed")
        seq = GraphSequence(n, B, "seeded-random", seed=int(seed), p=float(p) if p is not None else None)
        seq.graph(0)
    else:
        raise GraphError(f"unknown kind {kind!r}; expected one of {KINDS}", "kind")
    return seq


@dataclass(frozen=True)
class AuditResult:
    ok: bool
    first_failure: int | None = None

    def __bool__(self) -> bool:
        return self.ok


def audit_b_connectivity(seq: GraphSequence, B: int, windows: int) -> AuditResult:
    """Check that each union over ``[wB, (w+1)B - 1]`` is strongly connected."""
    if B < 1 or windows < 1:
        raise ValueError("B and windows must be >= 1")
    for w in range(windows):
        edges = frozenset().union(*(seq.graph(k).edges for k in range(w * B, (w + 1) * B)))
        if not is_strongly_connected(Digraph(seq.n, edges)):
            return AuditResult(False, w)
    return AuditResult(True)


@dataclass(frozen=True)
class TheoremConstants:
    """Ergodicity pair ``(C, lam)`` and the floor on push-sum weights.

    ``one_minus_lambda`` keeps ``1 - lam`` accurate when ``lam`` rounds to 1;
    ``log_delta_floor`` is the floor in log form (0 for the regular case).
    """

    C: float
    lam: float
    one_minus_lambda: float
    log_delta_floor: float
    case: int

    @property
    def log_lambda(self) -> float:
        return math.log1p(-self.one_minus_lambda)


def general_constants(n: int, B: int) -> TheoremConstants:
    if n == 1:
        # single node: A_{k:t} = [[1]] exactly; any lam in (0,1) works
        return TheoremConstants(4.0, 0.5, 0.5, 0.0, 1)
    log_x = -n * B * math.log(n)
    log_lam = math.log1p(-math.exp(log_x)) / B
    return TheoremConstants(4.0, math.exp(log_lam), -math.expm1(log_lam), log_x, 1)


def regular_constants(n: int) -> TheoremConstants:
    x = 1.0 / (4.0 * n**3)
    return TheoremConstants(math.sqrt(2.0), 1.0 - x, x, 0.0, 2)


def theorem_constants(seq: GraphSequence, horizon: int | None = None) -> TheoremConstants:
    """Pick the regular-case constants when they apply, the general case otherwise.

    The regular case requires ``B == 1`` and every scheduled graph regular
    and strongly connected.  For random sequences the graphs over the first
    ``horizon`` steps (default ``100 * B``) are inspected.
    """
    if seq.B == 1:
        if seq.kind == "seeded-random":
            scheduled = (seq.graph(k) for k in range(horizon or 100))
        else:
            scheduled = iter(seq.graphs)
        if all(is_regular(g) and is_strongly_connected(g) for g in scheduled):
            return regular_constants(seq.n)
    return general_constants(seq.n, seq.B)


# ---------------------------------------------------------------------------
# file format


def _parse_edges(items, n: int, where: str) -> frozenset:
    if not isinstance(items, list):
        raise GraphError("edge list must be a list of 'j i' pairs", where)
    edges = set()
    for idx, item in enumerate(items):
        tokens = item.split() if isinstance(item, str) else list(item) if isinstance(item, (list, tuple)) else None
        if tokens is None or len(tokens) != 2:
            raise GraphError(f"malformed edge {item!r}", f"{where}[{idx}]")
        try:
            j, i = int(tokens[0]), int(tokens[1])
        except (TypeError, ValueError):
            raise GraphError(f"malformed edge {item!r}", f"{where}[{idx}]") from None
        if not (0 <= j < n and 0 <= i < n):
            raise GraphError(f"edge {item!r} out of range for n={n}", f"{where}[{idx}]")
        edges.add((j, i))
    return frozenset(edges)


def sequence_from_dict(doc: dict) -> GraphSequence:
    if not isinstance(doc, dict):
        raise GraphError("graph document must be a mapping")
    for key in ("kind", "n"):
        if key not in doc:
            raise GraphError("missing required key", key)
    kind = doc["kind"]
    n = check_int(doc["n"], "n", minimum=1, error=GraphError)
    B = check_int(doc.get("B", 1), "B", minimum=1, error=GraphError)
    if kind == "static":
        if "edges" not in doc:
            raise GraphError("missing required key", "edges")
        return GraphSequence(n, B, kind, (Digraph(n, _parse_edges(doc["edges"], n, "edges")),))
    if kind == "periodic":
        steps = doc.get("steps")
        if not isinstance(steps, list) or not steps:
            raise GraphError("periodic sequences need a non-empty list of edge lists", "steps")
        return GraphSequence(
            n, B, kind, tuple(Digraph(n, _parse_edges(s, n, f"steps[{t}]")) for t, s in enumerate(steps))
        )
    if kind == "seeded-random":
        for key in ("seed", "p"):
            if key not in doc:
                raise GraphError("missing required key", key)
        seed = check_int(doc["seed"], "seed", minimum=0, error=GraphError)
        p = float(doc["p"])
        if not 0 <= p <= 1:
            raise GraphError(f"must lie in [0, 1], got {p}", "p")
        return GraphSequence(n, B, kind, seed=seed, p=p)
    raise GraphError(f"unknown kind {kind!r}; expected one of {KINDS}", "kind")


def sequence_to_dict(seq: GraphSequence) -> dict:
    doc = {"kind": seq.kind, "n": seq.n, "B": seq.B}
    fmt = lambda g: [f"{j} {i}" for j, i in g.edge_list()]  # noqa: E731
    if seq.kind == "static":
        doc["edges"] = fmt(seq.graphs[0])
    elif seq.kind == "periodic":
        doc["steps"] = [fmt(g) for g in seq.graphs]
    else:
        doc["seed"] = seq.seed
        doc["p"] = seq.p
    return doc


def load_graph_sequence(path) -> GraphSequence:
    with Path(path).open() as fh:
        return sequence_from_dict(yaml.safe_load(fh))


def dump_graph_sequence(seq: GraphSequence, path) -> None:
    Path(path).write_text(yaml.safe_dump(sequence_to_dict(seq), sort_keys=False))


def random_audited_sequence(n: int, B: int, seed: int, p: float = 0.3) -> GraphSequence:
    """Seeded-random sequence; convenience used by experiments and tests."""
    check_open_unit(p, "p")
    return generate("seeded-random", n, B, seed, p=p)
