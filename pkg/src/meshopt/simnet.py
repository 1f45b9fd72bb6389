"""Barrier-synchronous round engine for the distributed algorithms.

Each round: (a) sample the topology, (b) every robot produces its outbound
message from round-k state, (c) messages are delivered along the surviving
edges, (d) every robot updates, (e) metrics are recorded. No robot's
round-(k+1) state can influence another robot's round-(k+1) computation
except through the delivered round-k messages; a dropped message simply
leaves the sender out of the receiver's inbox for that iteration.

C-ADMM rounds contain two exchange sub-phases (primal values, then the fresh
primals for the dual ascent) on the same topology snapshot.

Runs are deterministic in their seed: identical inputs produce identical
traces for any worker count. Wall-clock time is recorded per iteration but is
environment-dependent, so the canonical serialized form used for determinism
comparisons zeroes it.
"""

from __future__ import annotations

import json
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import algorithms as alg
from .algorithms import AlgorithmSpec
from .graph import Graph, TopologySequence, sample_topology
from .problem import SeparableProblem
from .weights import metropolis, renormalize_rows, uniform_row_stochastic

__all__ = [
    "CompatibilityError",
    "StopRule",
    "RoundPlan",
    "IterationRecord",
    "RunTrace",
    "compute_mse",
    "consensus_residual",
    "account_packets",
    "run",
    "read_trace_csv",
    "read_trace",
]

TRACE_SCHEMA_VERSION = 1
CSV_HEADER = "iter,mse,consensus_residual,bytes_sent,packets_sent,wall_ns,diverged"
MSE_FLOOR = 1e-30
DIVERGENCE_FACTOR = 1e6
WEIGHT_POLICIES = ("metropolis", "uniform-row")


class CompatibilityError(RuntimeError):
    """Algorithm/topology pairing outside a method's supported regime."""


@dataclass(frozen=True)
class StopRule:
    """Stop after ``max_iters`` rounds or once the thresholds are met.

    ``mse_threshold`` is the normalized error versus the centralized oracle;
    the optional ``residual_threshold`` additionally requires the edge-wise
    consensus residual to fall below it before stopping.
    """

    max_iters: int
    mse_threshold: float | None = None
    residual_threshold: float | None = None

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")

    def satisfied(self, mse: float, residual: float) -> bool:
        if self.mse_threshold is None or mse > self.mse_threshold:
            return False
        return self.residual_threshold is None or residual <= self.residual_threshold


@dataclass(frozen=True)
class RoundPlan:
    """Delivery schedule of one round: who hears whom, and the packet model."""

    k: int
    graph: Graph
    payload_bytes: int | None

    def senders_for(self, i: int) -> tuple:
        return self.graph.in_neighbors(i)

    @property
    def n_messages(self) -> int:
        e = self.graph.n_edges
        return e if self.graph.directed else 2 * e


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    mse: float
    consensus_residual: float
    bytes_sent: int
    packets_sent: int
    wall_ns: int
    diverged: bool


def compute_mse(states, oracle: np.ndarray) -> float:
    """Normalized mean-square error: ``mean_i ||x_i - x*||^2 / max(||x*||^2, 1e-30)``."""
    x = np.asarray(states, dtype=float)
    oracle = np.asarray(oracle, dtype=float)
    diffs = x - oracle
    per_robot = np.sum(diffs * diffs, axis=-1)
    return float(np.mean(per_robot)) / max(float(oracle @ oracle), MSE_FLOOR)


def consensus_residual(states, edges) -> float:
    """Edge-wise disagreement ``sum_(i,j) ||x_i - x_j||^2`` over the base edges."""
    x = np.asarray(states, dtype=float)
    total = 0.0
    for i, j in edges:
        d = x[i] - x[j]
        total += float(d @ d)
    return total


def account_packets(message_bytes: int, payload_bytes: int) -> int:
    """Packets needed to ship one message: ``ceil(bytes / payload)``."""
    if payload_bytes <= 0:
        raise ValueError("payload_bytes must be positive")
    if message_bytes < 0:
        raise ValueError("message_bytes must be >= 0")
    return -(-message_bytes // payload_bytes)


def _check_compatibility(spec: AlgorithmSpec, topology: TopologySequence,
                         weights_policy: str, allow_unsupported: bool) -> None:
    if weights_policy not in WEIGHT_POLICIES:
        raise CompatibilityError(f"unknown weights policy {weights_policy!r}; "
                                 f"expected one of {WEIGHT_POLICIES}")
    base = topology.base
    lossy = topology.model != "static" and topology.p > 0
    if spec.name == "c-admm":
        if base.directed:
            raise CompatibilityError(
                "c-admm assumes bidirectional communication between all robots; "
                "directed networks are unsupported")
        if lossy and not allow_unsupported:
            raise CompatibilityError(
                "c-admm is not suited to dynamic or lossy networks; pass "
                "allow_unsupported=True (CLI: --allow-unsupported) to experiment anyway")
        return
    if spec.name == "next-q":
        if base.directed or topology.model == "directed-drop":
            raise CompatibilityError(
                "next-q requires a doubly-stochastic mixing matrix at every "
                "iteration, which cannot be built on unidirectional links")
        if weights_policy != "metropolis":
            raise CompatibilityError(
                "next-q requires doubly-stochastic weights; use the metropolis policy")
        return
    if base.directed and weights_policy == "metropolis":
        raise CompatibilityError(
            "metropolis weights assume an undirected base network; "
            "use the uniform-row policy on directed graphs")


def _weight_rows(policy: str, g: Graph, base_metropolis) -> list[dict]:
    """Per-robot mixing rows derived from the surviving snapshot.

    Undirected snapshots get fresh Metropolis weights (doubly-stochastic);
    directed snapshots fall back to the base Metropolis rows renormalized
    over the senders that got through (row-stochastic).
    """
    if policy == "metropolis":
        w = renormalize_rows(base_metropolis, g) if g.directed else metropolis(g)
    else:
        w = uniform_row_stochastic(g)
    rows = []
    for i in range(g.n):
        idx, vals = w.row(i)
        rows.append(dict(zip(idx.tolist(), vals.tolist())))
    return rows


def _default_x0(problem: SeparableProblem, seed: int) -> np.ndarray:
    # independent per-robot streams keyed by (seed, robot)
    out = np.empty((problem.n_robots, problem.dim))
    for i in range(problem.n_robots):
        ss = np.random.SeedSequence([int(seed), int(i), 0xA11])
        out[i] = np.random.Generator(np.random.PCG64(ss)).standard_normal(problem.dim)
    return out


@dataclass
class RunTrace:
    """Per-iteration metrics plus the run header and final per-robot states."""

    header: dict
    records: list[IterationRecord]
    final_states: np.ndarray

    @property
    def diverged(self) -> bool:
        return bool(self.records) and self.records[-1].diverged

    @property
    def final_mse(self) -> float:
        return self.records[-1].mse

    def iterations_to(self, mse_threshold: float,
                      residual_threshold: float | None = None) -> int | None:
        """First iteration index at which the thresholds were met, else None."""
        for rec in self.records:
            if rec.mse <= mse_threshold and (
                    residual_threshold is None
                    or rec.consensus_residual <= residual_threshold):
                return rec.iter
        return None

    def to_csv_text(self, zero_wall_time: bool = False) -> str:
        """Render the trace table. All floats use round-trip decimal form.

        ``zero_wall_time`` writes 0 in the wall_ns column; wall clock is
        environment-dependent and excluded from determinism comparisons.
        """
        lines = [CSV_HEADER]
        for r in self.records:
            wall = 0 if zero_wall_time else r.wall_ns
            lines.append(f"{r.iter},{r.mse!r},{r.consensus_residual!r},"
                         f"{r.bytes_sent},{r.packets_sent},{wall},{int(r.diverged)}")
        return "\n".join(lines) + "\n"

    def canonical_bytes(self) -> bytes:
        """Deterministic serialized form: CSV + header, wall time zeroed."""
        head = {k: v for k, v in self.header.items() if k != "wall_ns_total"}
        return (self.to_csv_text(zero_wall_time=True)
                + json.dumps(head, sort_keys=True)).encode()

    def write(self, prefix: str) -> tuple[str, str]:
        """Atomically write ``<prefix>.csv`` and the sidecar ``<prefix>.json``."""
        csv_path, json_path = f"{prefix}.csv", f"{prefix}.json"
        _atomic_write(csv_path, self.to_csv_text())
        _atomic_write(json_path, json.dumps(self.header, indent=1, sort_keys=True))
        return csv_path, json_path


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_trace_csv(path) -> list[IterationRecord]:
    """Parse a trace table back with zero data loss."""
    records = []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected trace header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            it, mse, res, byt, pkt, wall, div = line.split(",")
            records.append(IterationRecord(
                iter=int(it), mse=float(mse), consensus_residual=float(res),
                bytes_sent=int(byt), packets_sent=int(pkt), wall_ns=int(wall),
                diverged=bool(int(div))))
    return records


def read_trace(prefix: str) -> RunTrace:
    with open(f"{prefix}.json", "r") as fh:
        header = json.load(fh)
    records = read_trace_csv(f"{prefix}.csv")
    final = _dec_states(header["final_states_hex"])
    return RunTrace(header=header, records=records, final_states=final)


def _enc_states(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "hex": [float(v).hex() for v in a.ravel()]}


def _dec_states(obj) -> np.ndarray:
    return np.array([float.fromhex(s) for s in obj["hex"]]).reshape(obj["shape"])


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------

def run(problem: SeparableProblem, spec: AlgorithmSpec,
        topology: TopologySequence, *, weights_policy: str = "metropolis",
        stop: StopRule | None = None, seed: int = 0,
        payload_bytes: int | None = None, n_workers: int = 1,
        x0: np.ndarray | None = None, allow_unsupported: bool = False,
        robot_order=None) -> RunTrace:
    """Execute one simulated run and return its trace.

    ``n_workers`` fans per-robot computations out to a thread pool; results
    are reduced in robot order, so the trace is identical for any worker
    count. ``robot_order`` permutes the evaluation order (testing hook for
    the phase-isolation property).
    """
    if stop is None:
        stop = StopRule(max_iters=1000)
    n = problem.n_robots
    if topology.base.n != n:
        raise CompatibilityError(
            f"topology has {topology.base.n} vertices for {n} robots")
    _check_compatibility(spec, topology, weights_policy, allow_unsupported)
    if payload_bytes is not None and payload_bytes <= 0:
        raise ValueError("payload_bytes must be positive when set")
    if n_workers < 1:
        raise ValueError("n_workers must be >= 1")
    order = list(range(n)) if robot_order is None else list(robot_order)
    if sorted(order) != list(range(n)):
        raise ValueError("robot_order must be a permutation of all robots")

    oracle = problem.oracle_solve()
    base_edges = sorted(topology.base.as_undirected().edges)
    if x0 is None:
        x0 = _default_x0(problem, seed)
    else:
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (n, problem.dim):
            raise ValueError(f"x0 must have shape ({n}, {problem.dim})")
    states = [alg.init_state(problem, spec, i, x0[i]) for i in range(n)]

    message_reals = spec.payload_reals(problem.dim)
    message_bytes = 8 * message_reals
    packets_per_message = (account_packets(message_bytes, payload_bytes)
                           if payload_bytes else 1)

    lossy = topology.model != "static" and topology.p > 0
    static_graph = None if lossy else sample_topology(topology, 0)
    base_metropolis = (metropolis(topology.base)
                       if weights_policy == "metropolis" and not topology.base.directed
                       else None)
    static_rows = None
    if static_graph is not None and spec.name != "c-admm":
        static_rows = _weight_rows(weights_policy, static_graph, base_metropolis)

    executor = ThreadPoolExecutor(max_workers=n_workers) if n_workers > 1 else None

    def fanout(fn, arg_order):
        # results land in robot-index slots regardless of evaluation order
        out = [None] * n
        if executor is None:
            for i in arg_order:
                out[i] = fn(i)
        else:
            for i, res in zip(arg_order, executor.map(fn, arg_order)):
                out[i] = res
        return out

    def snapshot_states() -> np.ndarray:
        return np.stack([np.asarray(s.x) for s in states])

    records: list[IterationRecord] = []
    renormalizations = 0
    wall_total = 0

    def record_metrics(k: int, bytes_sent: int, packets_sent: int,
                       wall_ns: int, initial_mse: float | None) -> IterationRecord:
        xs = snapshot_states()
        mse = compute_mse(xs, oracle)
        residual = consensus_residual(xs, base_edges)
        diverged = not np.isfinite(mse) or (
            initial_mse is not None and initial_mse > 0.0
            and mse > DIVERGENCE_FACTOR * initial_mse)
        rec = IterationRecord(iter=k, mse=mse, consensus_residual=residual,
                              bytes_sent=bytes_sent, packets_sent=packets_sent,
                              wall_ns=wall_ns, diverged=diverged)
        records.append(rec)
        return rec

    first = record_metrics(0, 0, 0, 0, None)
    initial_mse = first.mse
    stopped = stop.satisfied(first.mse, first.consensus_residual)

    k = 0
    while not stopped and k < stop.max_iters:
        tic = time.perf_counter_ns()
        g = static_graph if static_graph is not None else sample_topology(topology, k)
        if lossy:
            full = topology.base.n_edges * (2 if g.directed else 1)
            if g.n_edges < full:
                renormalizations += 1
        plan = RoundPlan(k=k, graph=g, payload_bytes=payload_bytes)

        if spec.name == "c-admm":
            states = _cadmm_round_all(problem, spec, states, g, order, fanout)
            n_msgs = 2 * plan.n_messages
        else:
            rows = static_rows if static_rows is not None else _weight_rows(
                weights_policy, g, base_metropolis)
            states = _dfo_round_all(problem, spec, states, g, rows, k, order, fanout)
            n_msgs = plan.n_messages

        wall_ns = time.perf_counter_ns() - tic
        wall_total += wall_ns
        rec = record_metrics(k + 1, n_msgs * message_bytes,
                             n_msgs * packets_per_message, wall_ns, initial_mse)
        stopped = rec.diverged or stop.satisfied(rec.mse, rec.consensus_residual)
        k += 1

    if executor is not None:
        executor.shutdown()

    final_states = snapshot_states()
    last = records[-1]
    header = {
        "schema_version": TRACE_SCHEMA_VERSION,
        "kind": "meshopt-run-trace",
        "algorithm": spec.describe(),
        "weights_policy": weights_policy,
        "topology": {
            "model": topology.model,
            "p": topology.p,
            "seed": topology.seed,
            "window_b": topology.window_b,
            "n_vertices": topology.base.n,
            "n_base_edges": topology.base.n_edges,
            "directed_base": topology.base.directed,
            "base_fingerprint": topology.base.fingerprint(),
        },
        "problem": {
            "name": problem.name,
            "fingerprint": problem.fingerprint(),
            "n_robots": problem.n_robots,
            "dim": problem.dim,
        },
        "stop": {
            "max_iters": stop.max_iters,
            "mse_threshold": stop.mse_threshold,
            "residual_threshold": stop.residual_threshold,
        },
        "seed": seed,
        "payload_bytes": payload_bytes,
        "n_workers": n_workers,
        "mse_definition": "mean_i ||x_i - x*||^2 / max(||x*||^2, 1e-30); "
                          "x* is the centralized oracle solution",
        "initial_mse": initial_mse,
        "iterations": last.iter,
        "diverged": last.diverged,
        "converged": (stop.mse_threshold is not None and not last.diverged
                      and stop.satisfied(last.mse, last.consensus_residual)),
        "iterations_to_threshold": (
            None if stop.mse_threshold is None
            else next((r.iter for r in records
                       if stop.satisfied(r.mse, r.consensus_residual)), None)),
        "weight_renormalizations": renormalizations,
        "wall_ns_total": wall_total,
        "oracle_hex": _enc_states(oracle),
        "final_states_hex": _enc_states(final_states),
    }
    return RunTrace(header=header, records=records, final_states=final_states)


def _dfo_round_all(problem, spec, states, g, rows, k, order, fanout):
    """One compute/exchange/update round for the mixing-based methods."""
    name = spec.name

    def outbound(i):
        s = states[i]
        if name == "dgd-cta":
            return s.x
        if name == "dgd-atc":
            return alg.dgd_adapt(problem, i, s, spec.schedule, k)
        if name == "diging":
            return (s.x, s.y)
        return (alg.next_q_local(problem, i, s, spec.schedule, k), s.y)

    payloads = fanout(outbound, order)

    def update(i):
        inbox = {j: payloads[j] for j in g.in_neighbors(i)}
        inbox[i] = payloads[i]  # own contribution, computed once in the compute phase
        row = rows[i]
        s = states[i]
        if name == "dgd-cta":
            return alg.dgd_cta_step(problem, i, s, inbox, row, spec.schedule, k)
        if name == "dgd-atc":
            return alg.dgd_atc_step(problem, i, s, inbox, row, spec.schedule, k)
        if name == "diging":
            return alg.diging_step(problem, i, s, inbox, row, spec.alpha)
        return alg.next_q_step(problem, i, s, inbox, row, spec.schedule, k)

    return fanout(update, order)


def _cadmm_round_all(problem, spec, states, g, order, fanout):
    """C-ADMM round: primal exchange, local prox, second exchange, dual ascent."""
    first_payloads = [s.x for s in states]

    def primal(i):
        inbox = {j: first_payloads[j] for j in g.in_neighbors(i)}
        interim, out = alg.cadmm_round(problem, i, states[i], inbox, spec.rho)
        return interim, out

    results = fanout(primal, order)
    interim = [res[0] for res in results]
    second_payloads = [res[1] for res in results]

    def dual(i):
        inbox = {j: second_payloads[j] for j in g.in_neighbors(i)}
        return alg.cadmm_dual_update(interim[i], inbox, spec.rho)

    return fanout(dual, order)
