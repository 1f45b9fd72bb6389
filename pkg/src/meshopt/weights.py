"""Stochastic mixing matrices compatible with a communication graph.

A weight ``w[i, j]`` (``i != j``) may be nonzero only if ``j`` can send to
``i``. Metropolis weights need a single exchange of degrees between neighbors
and are symmetric doubly-stochastic on undirected networks; the uniform
constructions cover directed networks where only row- or column-stochasticity
is achievable without global knowledge.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .graph import Graph, GraphError

__all__ = [
    "WeightMatrix",
    "Violation",
    "metropolis",
    "uniform_row_stochastic",
    "uniform_column_stochastic",
    "renormalize_rows",
    "validate",
]

KINDS = ("row-stochastic", "column-stochastic", "doubly-stochastic")
SUM_TOL = 1e-12


@dataclass(frozen=True)
class WeightMatrix:
    """Dense n-by-n mixing matrix plus the fingerprint of the graph it fits."""

    values: np.ndarray
    kind: str
    graph_fingerprint: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"values must be square, got shape {v.shape}")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices and values of the nonzero entries of row ``i``."""
        idx = np.nonzero(self.values[i])[0]
        return idx, self.values[i, idx]


class Violation(NamedTuple):
    kind: str        # "negative" | "sparsity" | "row-sum" | "column-sum"
    position: tuple  # (i, j) for entries, (i,) for sums
    value: float


def metropolis(g: Graph) -> WeightMatrix:
    """Metropolis weights: ``w_ij = 1 / max(deg_i, deg_j)`` for neighbors.

    The diagonal absorbs the remaining mass, so the result is symmetric and
    doubly-stochastic. Isolated vertices mix only with themselves.
    """
    if g.directed:
        raise GraphError("Metropolis weights assume a bidirectional (undirected) network")
    w = np.zeros((g.n, g.n))
    for i in range(g.n):
        for j in g.neighbors(i):
            w[i, j] = 1.0 / max(g.degree(i), g.degree(j))
        w[i, i] = 1.0 - w[i].sum()
    return WeightMatrix(w, "doubly-stochastic", g.fingerprint())


def uniform_row_stochastic(g: Graph) -> WeightMatrix:
    """Equal weight on every in-neighbor and self: ``1 / (|in(i)| + 1)``."""
    w = np.zeros((g.n, g.n))
    for i in range(g.n):
        senders = g.in_neighbors(i)
        share = 1.0 / (len(senders) + 1)
        w[i, i] = share
        for j in senders:
            w[i, j] = share
    return WeightMatrix(w, "row-stochastic", g.fingerprint())


def uniform_column_stochastic(g: Graph) -> WeightMatrix:
    """Transpose construction: sender ``j`` splits mass over out-neighbors and self."""
    w = np.zeros((g.n, g.n))
    for j in range(g.n):
        receivers = g.out_neighbors(j)
        share = 1.0 / (len(receivers) + 1)
        w[j, j] = share
        for i in receivers:
            w[i, j] = share
    return WeightMatrix(w, "column-stochastic", g.fingerprint())


def renormalize_rows(w: WeightMatrix, g: Graph) -> WeightMatrix:
    """Restrict ``w`` to the links surviving in ``g``, folding lost mass into the diagonal.

    Used when a lossy snapshot removes senders that the base weights counted
    on: each row stays stochastic over the senders that actually got through,
    which is all a receiver can normalize over. The result is row-stochastic
    (symmetry is generally lost when the snapshot is directed).
    """
    if g.n != w.n:
        raise GraphError(f"graph has {g.n} vertices but weights are {w.n}x{w.n}")
    v = w.values.copy()
    for i in range(g.n):
        alive = set(g.in_neighbors(i))
        for j in range(g.n):
            if j != i and v[i, j] != 0.0 and j not in alive:
                v[i, i] += v[i, j]
                v[i, j] = 0.0
    return WeightMatrix(v, "row-stochastic", g.fingerprint())


def validate(w: WeightMatrix, g: Graph) -> list[Violation]:
    """Check nonnegativity, sparsity compatibility with ``g``, and stochasticity.

    Violations are data, not errors: an empty list means the matrix is a valid
    mixing matrix of its declared kind for this graph.
    """
    out: list[Violation] = []
    v = w.values
    if g.n != w.n:
        return [Violation("sparsity", (g.n, w.n), float("nan"))]
    for i in range(w.n):
        for j in range(w.n):
            if v[i, j] < 0:
                out.append(Violation("negative", (i, j), float(v[i, j])))
            if i != j and v[i, j] != 0.0 and not g.has_edge(j, i):
                out.append(Violation("sparsity", (i, j), float(v[i, j])))
    if w.kind in ("row-stochastic", "doubly-stochastic"):
        for i in range(w.n):
            s = float(v[i].sum())
            if abs(s - 1.0) > SUM_TOL:
                out.append(Violation("row-sum", (i,), s))
    if w.kind in ("column-stochastic", "doubly-stochastic"):
        for j in range(w.n):
            s = float(v[:, j].sum())
            if abs(s - 1.0) > SUM_TOL:
                out.append(Violation("column-sum", (j,), s))
    return out
