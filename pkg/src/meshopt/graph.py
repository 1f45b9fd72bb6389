"""Communication graphs, connectivity predicates, and lossy-topology sampling.

Robots are vertices ``0 .. n-1``. Undirected graphs store each edge once and
answer symmetric neighbor queries; directed graphs distinguish in- and
out-neighbors (an in-neighbor of ``i`` can *send* to ``i``). Time-varying and
lossy networks are modeled as a :class:`TopologySequence` whose per-iteration
snapshot is a pure function of ``(base, model, seed, k)``, so iteration ``k``
can be sampled without sampling ``k - 1``.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Graph",
    "GraphError",
    "TopologySequence",
    "GeometricGraphSpec",
    "complete_graph",
    "path_graph",
    "cycle_graph",
    "is_connected",
    "is_strongly_connected",
    "is_weakly_connected",
    "sample_topology",
    "is_b_connected",
    "generate_geometric",
    "write_edgelist",
    "read_edgelist",
]

TOPOLOGY_MODELS = ("static", "undirected-drop", "directed-drop")


class GraphError(ValueError):
    """Raised on malformed graphs or directed/undirected contract violations."""


class Graph:
    """Immutable communication graph.

    Parameters
    ----------
    n : int
        Number of vertices (positive).
    edges : iterable of (int, int)
        Vertex pairs with ``i != j`` and both endpoints in ``[0, n)``.
        For undirected graphs, ``(i, j)`` and ``(j, i)`` denote the same edge.
    directed : bool
        Whether edges are one-way links.
    """

    __slots__ = ("n", "directed", "_edges", "_in", "_out")

    def __init__(self, n: int, edges=(), directed: bool = False):
        if n < 1:
            raise GraphError(f"graph needs at least one vertex, got n={n}")
        canon = set()
        for i, j in edges:
            if i == j:
                raise GraphError(f"self-loop at vertex {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise GraphError(f"edge ({i}, {j}) out of range for n={n}")
            canon.add((i, j) if directed else (min(i, j), max(i, j)))
        self.n = int(n)
        self.directed = bool(directed)
        self._edges = frozenset(canon)
        incoming = [[] for _ in range(n)]
        outgoing = [[] for _ in range(n)]
        for i, j in canon:
            outgoing[i].append(j)
            incoming[j].append(i)
            if not directed:
                outgoing[j].append(i)
                incoming[i].append(j)
        # neighbors are always iterated in ascending index for determinism
        self._in = tuple(tuple(sorted(a)) for a in incoming)
        self._out = tuple(tuple(sorted(a)) for a in outgoing)

    @property
    def edges(self) -> frozenset:
        """Canonical edge set: ``(i, j)`` with ``i < j`` when undirected."""
        return self._edges

    @property
    def n_edges(self) -> int:
        return len(self._edges)

    def neighbors(self, i: int) -> tuple:
        """Symmetric neighbor set (undirected graphs only)."""
        if self.directed:
            raise GraphError("neighbors() is undefined for directed graphs; "
                             "use in_neighbors()/out_neighbors()")
        return self._out[i]

    def in_neighbors(self, i: int) -> tuple:
        """Vertices that can send to ``i``."""
        return self._in[i]

    def out_neighbors(self, i: int) -> tuple:
        """Vertices that ``i`` can send to."""
        return self._out[i]

    def degree(self, i: int) -> int:
        if self.directed:
            raise GraphError("degree() is undefined for directed graphs")
        return len(self._out[i])

    def has_edge(self, i: int, j: int) -> bool:
        """True if ``i`` can send to ``j``."""
        if self.directed:
            return (i, j) in self._edges
        return (min(i, j), max(i, j)) in self._edges

    def as_undirected(self) -> "Graph":
        """Underlying undirected graph (each directed edge made bidirectional)."""
        if not self.directed:
            return self
        return Graph(self.n, self._edges, directed=False)

    def fingerprint(self) -> str:
        """Stable hash of (n, directedness, edge set); ties weight matrices to graphs."""
        payload = f"{self.n}|{int(self.directed)}|" + ",".join(
            f"{i}-{j}" for i, j in sorted(self._edges)
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def __eq__(self, other):
        return (isinstance(other, Graph)
                and self.n == other.n
                and self.directed == other.directed
                and self._edges == other._edges)

    def __hash__(self):
        return hash((self.n, self.directed, self._edges))

    def __repr__(self):
        kind = "directed" if self.directed else "undirected"
        return f"Graph(n={self.n}, {kind}, {len(self._edges)} edges)"


def complete_graph(n: int) -> Graph:
    return Graph(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def path_graph(n: int) -> Graph:
    return Graph(n, [(i, i + 1) for i in range(n - 1)])


def cycle_graph(n: int) -> Graph:
    if n < 3:
        raise GraphError("cycle needs at least 3 vertices")
    return Graph(n, [(i, (i + 1) % n) for i in range(n)])


def _reachable(n: int, adjacency, start: int = 0) -> bool:
    seen = [False] * n
    seen[start] = True
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in adjacency[u]:
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return all(seen)


def is_connected(g: Graph) -> bool:
    """True iff a path exists between every vertex pair. Undirected input only."""
    if g.directed:
        raise GraphError("is_connected() requires an undirected graph")
    return _reachable(g.n, g._out)


def is_strongly_connected(g: Graph) -> bool:
    """True iff a directed path exists both ways for all pairs. Directed input only."""
    if not g.directed:
        raise GraphError("is_strongly_connected() requires a directed graph")
    return _reachable(g.n, g._out) and _reachable(g.n, g._in)


def is_weakly_connected(g: Graph) -> bool:
    """True iff the underlying undirected graph is connected. Directed input only."""
    if not g.directed:
        raise GraphError("is_weakly_connected() requires a directed graph")
    return is_connected(g.as_undirected())


@dataclass(frozen=True)
class GeometricGraphSpec:
    """Random geometric graph on the unit square: edge iff distance <= radius.

    ``positions`` may be supplied explicitly; otherwise they are drawn
    uniformly from the seed.
    """

    n_vertices: int
    radius: float
    seed: int = 0
    positions: np.ndarray | None = None

    def __post_init__(self):
        if self.n_vertices < 1:
            raise GraphError("n_vertices must be positive")
        if not 0.0 < self.radius <= np.sqrt(2.0) + 1e-12:
            raise GraphError(f"radius must lie in (0, sqrt(2)], got {self.radius}")
        if self.positions is not None:
            pos = np.asarray(self.positions, dtype=float)
            if pos.shape != (self.n_vertices, 2):
                raise GraphError(f"positions must have shape ({self.n_vertices}, 2)")
            object.__setattr__(self, "positions", pos)


def generate_geometric(spec: GeometricGraphSpec) -> Graph:
    """Build the geometric graph from the spec, deterministic in its seed."""
    pos = spec.positions
    if pos is None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))
        pos = rng.random((spec.n_vertices, 2))
    edges = []
    for i in range(spec.n_vertices):
        for j in range(i + 1, spec.n_vertices):
            if np.hypot(*(pos[i] - pos[j])) <= spec.radius:
                edges.append((i, j))
    return Graph(spec.n_vertices, edges)


@dataclass(frozen=True)
class TopologySequence:
    """Time-varying communication topology.

    ``static`` replays the base graph forever. ``undirected-drop`` removes each
    undirected edge independently with probability ``p`` at every iteration
    (both directions gone). ``directed-drop`` removes each *direction* of each
    edge independently, so an edge may survive one-way and the snapshot becomes
    a directed graph. Sampling iteration ``k`` is a pure function of
    ``(base, model, seed, k)``.
    """

    base: Graph
    model: str = "static"
    p: float = 0.0
    seed: int = 0
    window_b: int = 1

    def __post_init__(self):
        if self.model not in TOPOLOGY_MODELS:
            raise GraphError(f"unknown topology model {self.model!r}; "
                             f"expected one of {TOPOLOGY_MODELS}")
        if self.model != "static":
            if self.base.directed:
                raise GraphError("drop models require an undirected base graph")
            if not 0.0 <= self.p <= 1.0:
                raise GraphError(f"drop probability must lie in [0, 1], got {self.p}")
        if self.window_b < 1:
            raise GraphError("window_b must be >= 1")
        if self.seed < 0:
            raise GraphError("seed must be a non-negative integer")


def _iteration_uniforms(seed: int, k: int, count: int) -> np.ndarray:
    # Counter-based: the stream is keyed by (seed, k), indexed by edge id,
    # so snapshot k never depends on having sampled snapshot k - 1.
    ss = np.random.SeedSequence([int(seed), int(k)])
    return np.random.Generator(np.random.PCG64(ss)).random(count)


def sample_topology(seq: TopologySequence, k: int) -> Graph:
    """Communication graph in effect at iteration ``k``."""
    if k < 0:
        raise GraphError("iteration index must be >= 0")
    if seq.model == "static":
        return seq.base
    edges = sorted(seq.base.edges)
    if seq.model == "undirected-drop":
        if seq.p == 0.0:
            return seq.base
        u = _iteration_uniforms(seq.seed, k, len(edges))
        kept = [e for e, ue in zip(edges, u) if ue >= seq.p]
        return Graph(seq.base.n, kept, directed=False)
    # directed-drop: two independent survival draws per undirected edge
    u = _iteration_uniforms(seq.seed, k, 2 * len(edges))
    kept = []
    for e, (i, j) in enumerate(edges):
        if u[2 * e] >= seq.p:
            kept.append((i, j))
        if u[2 * e + 1] >= seq.p:
            kept.append((j, i))
    return Graph(seq.base.n, kept, directed=True)


def is_b_connected(seq: TopologySequence, k0: int, b: int) -> bool:
    """True iff the union of snapshots over ``k0 .. k0+b-1`` is connected.

    The union is checked for connectivity when snapshots are undirected and
    for strong connectivity when they are directed.
    """
    if b < 1:
        raise GraphError("connectivity window must be >= 1")
    union = set()
    directed = seq.model == "directed-drop"
    for k in range(k0, k0 + b):
        union.update(sample_topology(seq, k).edges)
    g_union = Graph(seq.base.n, union, directed=directed)
    return is_strongly_connected(g_union) if directed else is_connected(g_union)


def write_edgelist(g: Graph, path) -> None:
    """Serialize to the text format ``n <count> <directed|undirected>`` + edge lines."""
    kind = "directed" if g.directed else "undirected"
    lines = [f"n {g.n} {kind}"]
    lines += [f"{i} {j}" for i, j in sorted(g.edges)]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_edgelist(path) -> Graph:
    with open(path, "r", encoding="ascii") as fh:
        tokens = fh.readline().split()
        if len(tokens) != 3 or tokens[0] != "n" or tokens[2] not in ("directed", "undirected"):
            raise GraphError(f"bad edge-list header in {path}: expected 'n <count> <directed|undirected>'")
        n = int(tokens[1])
        edges = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            i, j = line.split()
            edges.append((int(i), int(j)))
    return Graph(n, edges, directed=tokens[2] == "directed")
