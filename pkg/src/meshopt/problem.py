"""Separable convex problems: per-robot quadratic costs with a shared variable.

Every in-scope instance is a sum of squared, information-weighted residuals,
so each robot's term is stored in the canonical form

    f_i(x) = 0.5 * x' P_i x + r_i' x + c_i

with ``P_i`` symmetric PSD and ``sum_i P_i`` positive definite. One gradient /
Hessian / proximal implementation then serves every instance. Construction of
the paper-scale instances (multi-drone target tracking, factored least
squares) happens here, along with the centralized oracle used as ground truth
by the simulator's error metric.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .graph import Graph, is_connected, is_weakly_connected

__all__ = [
    "ProblemError",
    "QuadraticLocalCost",
    "SeparableProblem",
    "TargetTrackingSpec",
    "FactoredLeastSquaresSpec",
    "default_tracking_spec",
    "simulate_target_data",
    "simulated_trajectory",
    "build_target_tracking",
    "random_factored_ls",
    "build_factored_ls",
    "scalar_consensus",
    "lift_to_consensus",
    "spec_to_json",
    "spec_from_json",
]

SYM_TOL = 1e-12
HESSIAN_REG = 1e-8  # fallback regularization for singular local Hessians


class ProblemError(ValueError):
    """Raised on malformed problem data (dimension mismatch, singular covariances)."""


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class QuadraticLocalCost:
    """One robot's cost ``0.5 x'Px + r'x + c`` with ``P`` symmetric PSD."""

    P: np.ndarray
    r: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        P = _frozen(self.P)
        r = _frozen(self.r)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ProblemError(f"P must be square, got shape {P.shape}")
        if r.shape != (P.shape[0],):
            raise ProblemError(f"r has shape {r.shape}, expected ({P.shape[0]},)")
        if np.max(np.abs(P - P.T), initial=0.0) > SYM_TOL:
            raise ProblemError("P must be symmetric within 1e-12")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "c", float(self.c))

    @property
    def dim(self) -> int:
        return self.P.shape[0]


class SeparableProblem:
    """Joint cost ``sum_i f_i(x)`` over ``n_robots`` quadratic terms.

    Immutable after construction; gradient and prox evaluations are pure and
    may run concurrently for different robots. Factorizations are cached
    (local Hessians once, prox systems per penalty value).
    """

    def __init__(self, costs, name: str = "separable"):
        costs = tuple(costs)
        if not costs:
            raise ProblemError("need at least one robot")
        dim = costs[0].dim
        for q in costs:
            if q.dim != dim:
                raise ProblemError("all local costs must share the decision dimension")
        self.costs = costs
        self.dim = dim
        self.name = name
        self._sum_p = sum(q.P for q in costs)
        self._sum_r = sum(q.r for q in costs)
        self._oracle: np.ndarray | None = None
        self._hess_factors: dict[int, tuple] = {}
        self._prox_factors: dict[tuple[int, float], tuple] = {}

    @property
    def n_robots(self) -> int:
        return len(self.costs)

    # -- local oracles -------------------------------------------------

    def local_cost(self, i: int, x: np.ndarray) -> float:
        q = self.costs[i]
        return float(0.5 * x @ q.P @ x + q.r @ x + q.c)

    def gradient(self, i: int, x: np.ndarray) -> np.ndarray:
        q = self.costs[i]
        return q.P @ x + q.r

    def hessian(self, i: int) -> np.ndarray:
        return self.costs[i].P

    def joint_cost(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self._sum_p @ x + self._sum_r @ x
                     + sum(q.c for q in self.costs))

    def joint_gradient(self, x: np.ndarray) -> np.ndarray:
        return self._sum_p @ x + self._sum_r

    def newton_solve(self, i: int, rhs: np.ndarray) -> np.ndarray:
        """Solve ``P_i h = rhs``, regularizing by 1e-8 I if P_i is singular."""
        factor = self._hess_factors.get(i)
        if factor is None:
            p = self.costs[i].P
            try:
                factor = scipy.linalg.cho_factor(p)
            except np.linalg.LinAlgError:
                factor = scipy.linalg.cho_factor(p + HESSIAN_REG * np.eye(self.dim))
            self._hess_factors[i] = factor
        return scipy.linalg.cho_solve(factor, rhs)

    def local_prox(self, i: int, linear: np.ndarray, penalty_scale: float,
                   anchor: np.ndarray) -> np.ndarray:
        """argmin_x  f_i(x) + linear'x + penalty_scale * ||x - anchor||^2.

        Closed form for quadratics: ``(P_i + 2s I)^{-1} (2s anchor - r_i - linear)``.
        """
        if penalty_scale < 0:
            raise ProblemError("penalty_scale must be >= 0")
        key = (i, float(penalty_scale))
        factor = self._prox_factors.get(key)
        if factor is None:
            system = self.costs[i].P + 2.0 * penalty_scale * np.eye(self.dim)
            try:
                factor = scipy.linalg.cho_factor(system)
            except np.linalg.LinAlgError as exc:
                raise ProblemError(
                    f"prox system for robot {i} is singular at penalty_scale="
                    f"{penalty_scale}") from exc
            self._prox_factors[key] = factor
        rhs = 2.0 * penalty_scale * anchor - self.costs[i].r - linear
        return scipy.linalg.cho_solve(factor, rhs)

    # -- centralized oracle ---------------------------------------------

    def oracle_solve(self) -> np.ndarray:
        """Centralized minimizer ``-(sum P_i)^{-1} (sum r_i)`` via a dense symmetric solve."""
        if self._oracle is None:
            try:
                factor = scipy.linalg.cho_factor(self._sum_p)
            except np.linalg.LinAlgError as exc:
                raise ProblemError("joint Hessian is singular; no unique minimizer") from exc
            self._oracle = _frozen(scipy.linalg.cho_solve(factor, -self._sum_r))
        return self._oracle

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for q in self.costs:
            h.update(q.P.tobytes())
            h.update(q.r.tobytes())
            h.update(np.float64(q.c).tobytes())
        return h.hexdigest()[:16]

    def __repr__(self):
        return f"SeparableProblem({self.name!r}, n_robots={self.n_robots}, dim={self.dim})"


def scalar_consensus(targets) -> SeparableProblem:
    """Toy instance ``f_i(x) = (x - a_i)^2``; the joint minimizer is the mean."""
    costs = [QuadraticLocalCost(P=[[2.0]], r=[-2.0 * a], c=float(a) ** 2)
             for a in targets]
    return SeparableProblem(costs, name="scalar-consensus")


def lift_to_consensus(problem: SeparableProblem, g: Graph) -> tuple:
    """Edge-indexed consensus constraints ``x_i = x_j`` for the lifted problem.

    Requires a connected (undirected) or weakly connected (directed) graph;
    otherwise local copies can disagree across components and the lifted
    problem is not equivalent to the joint one.
    """
    if g.n != problem.n_robots:
        raise ProblemError(f"graph has {g.n} vertices for {problem.n_robots} robots")
    ok = is_weakly_connected(g) if g.directed else is_connected(g)
    if not ok:
        raise ProblemError(
            "communication graph is not connected (directed graphs: not weakly "
            "connected); the edge-wise agreement constraints would not force a "
            "common value, so the lifted problem is not equivalent to the joint one")
    return tuple(sorted(g.edges))


# ---------------------------------------------------------------------------
# Multi-drone target tracking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TargetTrackingSpec:
    """Batch trajectory-estimation instance: N drones, T stacked target states.

    The target follows linear dynamics ``x_{t+1} = A_t x_t + w_t`` with
    ``w_t ~ N(0, Q_t)``; drone ``i`` records positional measurements
    ``y_{i,t} = C_{i,t} x_t + v_{i,t}`` at the timesteps in its visibility
    window ``obs_times[i]`` (range limitation abstracted into the windows).
    The decision variable stacks all ``T`` states, dimension ``state_dim * T``.
    """

    n_robots: int
    timesteps: int
    A: np.ndarray          # (T-1, s, s) dynamics
    Q: np.ndarray          # (T-1, s, s) process-noise covariances
    C: np.ndarray          # (N, T, m, s) measurement matrices
    R: np.ndarray          # (N, T, m, m) measurement-noise covariances
    xbar0: np.ndarray      # (s,) prior mean
    pbar0: np.ndarray      # (s, s) prior covariance
    obs_times: tuple       # per-robot sorted tuples of measurement timesteps
    y: np.ndarray | None   # (N, T, m) measurements; defined only where observed
    seed: int = 0

    def __post_init__(self):
        n, t = self.n_robots, self.timesteps
        if n < 1 or t < 1:
            raise ProblemError("need n_robots >= 1 and timesteps >= 1")
        a = _frozen(self.A)
        q = _frozen(self.Q)
        c = _frozen(self.C)
        r = _frozen(self.R)
        xbar0 = _frozen(self.xbar0)
        pbar0 = _frozen(self.pbar0)
        s = xbar0.shape[0]
        m = c.shape[2]
        if a.shape != (t - 1, s, s) or q.shape != (t - 1, s, s):
            raise ProblemError(f"A and Q must have shape ({t - 1}, {s}, {s})")
        if c.shape != (n, t, m, s) or r.shape != (n, t, m, m):
            raise ProblemError(f"C must be (N, T, m, s) and R (N, T, m, m); got {c.shape}, {r.shape}")
        if pbar0.shape != (s, s):
            raise ProblemError("prior covariance shape must match the state dimension")
        windows = tuple(tuple(sorted(int(x) for x in w)) for w in self.obs_times)
        if len(windows) != n:
            raise ProblemError("obs_times must have one window per robot")
        for w in windows:
            if any(not 0 <= tt < t for tt in w):
                raise ProblemError("observation timesteps must lie in [0, T)")
        y = None if self.y is None else _frozen(self.y)
        if y is not None and y.shape != (n, t, m):
            raise ProblemError(f"y must have shape ({n}, {t}, {m})")
        for name, val in (("A", a), ("Q", q), ("C", c), ("R", r),
                          ("xbar0", xbar0), ("pbar0", pbar0),
                          ("obs_times", windows), ("y", y)):
            object.__setattr__(self, name, val)

    @property
    def state_dim(self) -> int:
        return self.xbar0.shape[0]

    @property
    def dim(self) -> int:
        """Decision dimension: all T target states stacked."""
        return self.state_dim * self.timesteps


def _constant_velocity(dt: float) -> np.ndarray:
    return np.array([[1.0, 0.0, dt, 0.0],
                     [0.0, 1.0, 0.0, dt],
                     [0.0, 0.0, 1.0, 0.0],
                     [0.0, 0.0, 0.0, 1.0]])


def default_tracking_spec(n_robots: int, timesteps: int, seed: int = 0,
                          dt: float = 1.0, process_noise: float = 0.1,
                          measurement_noise: float = 0.25,
                          window: int | None = None) -> TargetTrackingSpec:
    """Case-study configuration: 2-D constant-velocity target, position sensors.

    Visibility windows are contiguous, evenly spread, and jointly cover every
    timestep, so the joint Hessian stays well conditioned. The returned spec
    has no measurements yet; pass it through :func:`simulate_target_data`.
    """
    s, m = 4, 2
    t = timesteps
    a = np.broadcast_to(_constant_velocity(dt), (t - 1, s, s))
    q = np.broadcast_to(process_noise * np.eye(s), (t - 1, s, s))
    c_single = np.array([[1.0, 0.0, 0.0, 0.0],
                         [0.0, 1.0, 0.0, 0.0]])
    c = np.broadcast_to(c_single, (n_robots, t, m, s))
    r = np.broadcast_to(measurement_noise * np.eye(m), (n_robots, t, m, m))
    if window is None:
        window = max(2, math.ceil(t / n_robots) + 1)
    window = min(window, t)
    if n_robots == 1:
        starts = [0]
        window = t
    else:
        starts = [round(i * (t - window) / (n_robots - 1)) for i in range(n_robots)]
    obs = tuple(tuple(range(st, st + window)) for st in starts)
    return TargetTrackingSpec(
        n_robots=n_robots, timesteps=t, A=a, Q=q, C=c, R=r,
        xbar0=np.array([0.0, 0.0, 1.0, 0.5]), pbar0=np.eye(s),
        obs_times=obs, y=None, seed=seed)


def rollout(spec: TargetTrackingSpec) -> np.ndarray:
    """Noise-free trajectory from the prior mean: ``x_{t+1} = A_t x_t``. Shape (T, s)."""
    states = np.empty((spec.timesteps, spec.state_dim))
    states[0] = spec.xbar0
    for t in range(spec.timesteps - 1):
        states[t + 1] = spec.A[t] @ states[t]
    return states


def _simulate(spec: TargetTrackingSpec) -> tuple[np.ndarray, np.ndarray]:
    """Realized trajectory and measurements. Draw order is fixed: initial
    state, process noise per timestep, then measurement noise in
    (robot, timestep) order, so the trajectory prefix is reproducible."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, 0x7A12])))
    s, m, t = spec.state_dim, spec.C.shape[2], spec.timesteps
    try:
        l0 = np.linalg.cholesky(spec.pbar0)
        lq = [np.linalg.cholesky(spec.Q[k]) for k in range(t - 1)]
        lr = {(i, tt): np.linalg.cholesky(spec.R[i, tt])
              for i in range(spec.n_robots) for tt in spec.obs_times[i]}
    except np.linalg.LinAlgError as exc:
        raise ProblemError("noise covariances must be positive definite") from exc
    truth = np.empty((t, s))
    truth[0] = spec.xbar0 + l0 @ rng.standard_normal(s)
    for k in range(t - 1):
        truth[k + 1] = spec.A[k] @ truth[k] + lq[k] @ rng.standard_normal(s)
    y = np.full((spec.n_robots, t, m), np.nan)
    for i in range(spec.n_robots):
        for tt in spec.obs_times[i]:
            y[i, tt] = spec.C[i, tt] @ truth[tt] + lr[(i, tt)] @ rng.standard_normal(m)
    return truth, y


def simulate_target_data(spec: TargetTrackingSpec) -> TargetTrackingSpec:
    """Roll the target forward with process noise and record windowed measurements.

    Deterministic in ``spec.seed``: calling twice yields identical data.
    """
    _, y = _simulate(spec)
    return replace(spec, y=y)


def simulated_trajectory(spec: TargetTrackingSpec) -> np.ndarray:
    """The realized (noisy) trajectory behind :func:`simulate_target_data`. Shape (T, s)."""
    truth, _ = _simulate(spec)
    return truth


def _inv_pd(name: str, mat: np.ndarray) -> np.ndarray:
    try:
        factor = scipy.linalg.cho_factor(mat)
    except np.linalg.LinAlgError as exc:
        raise ProblemError(f"{name} must be positive definite") from exc
    return scipy.linalg.cho_solve(factor, np.eye(mat.shape[0]))


def build_target_tracking(spec: TargetTrackingSpec) -> SeparableProblem:
    """Assemble the per-drone costs whose sum is the global estimation cost.

    Each drone carries a 1/N share of the prior and dynamics terms plus its
    own measurement terms, so summing the local costs reproduces the global
    cost exactly.
    """
    n, t, s = spec.n_robots, spec.timesteps, spec.state_dim
    dim = spec.dim
    if spec.y is None and any(spec.obs_times[i] for i in range(n)):
        raise ProblemError("spec has observation windows but no measurement data; "
                           "run simulate_target_data first")
    p0_inv = _inv_pd("prior covariance", spec.pbar0)
    q_inv = [_inv_pd(f"Q[{k}]", spec.Q[k]) for k in range(t - 1)]

    shared_p = np.zeros((dim, dim))
    shared_r = np.zeros(dim)
    shared_c = float(spec.xbar0 @ p0_inv @ spec.xbar0)
    shared_p[:s, :s] += 2.0 * p0_inv
    shared_r[:s] += -2.0 * p0_inv @ spec.xbar0
    for k in range(t - 1):
        a, qi = spec.A[k], q_inv[k]
        b0, b1 = k * s, (k + 1) * s
        shared_p[b0:b0 + s, b0:b0 + s] += 2.0 * a.T @ qi @ a
        shared_p[b0:b0 + s, b1:b1 + s] += -2.0 * a.T @ qi
        shared_p[b1:b1 + s, b0:b0 + s] += -2.0 * qi @ a
        shared_p[b1:b1 + s, b1:b1 + s] += 2.0 * qi

    costs = []
    for i in range(n):
        p = shared_p / n
        r = shared_r / n
        c = shared_c / n
        for tt in spec.obs_times[i]:
            ci = spec.C[i, tt]
            ri = _inv_pd(f"R[{i},{tt}]", spec.R[i, tt])
            yi = spec.y[i, tt]
            if np.any(np.isnan(yi)):
                raise ProblemError(f"missing measurement for robot {i} at t={tt}")
            b = tt * s
            p[b:b + s, b:b + s] += 2.0 * ci.T @ ri @ ci
            r[b:b + s] += -2.0 * ci.T @ ri @ yi
            c += float(yi @ ri @ yi)
        costs.append(QuadraticLocalCost(P=0.5 * (p + p.T), r=r, c=c))
    return SeparableProblem(costs, name=f"target-tracking-N{n}-T{t}")


# ---------------------------------------------------------------------------
# Factored least squares (hardware stand-in)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FactoredLeastSquaresSpec:
    """Weighted linear least squares split across robots.

    Robot ``i`` holds ``(G_i, M_i, z_i)`` and contributes
    ``(G_i p - z_i)' M_i (G_i p - z_i)``. ``M_i`` may be a 1-D array (diagonal
    weight) or a full positive-definite matrix.
    """

    n_robots: int
    dim: int
    G: tuple          # per robot (m_i, n)
    M: tuple          # per robot (m_i,) diagonal or (m_i, m_i) dense
    z: tuple          # per robot (m_i,)
    seed: int = 0

    def __post_init__(self):
        if len(self.G) != self.n_robots or len(self.M) != self.n_robots \
                or len(self.z) != self.n_robots:
            raise ProblemError("G, M, z must each have one entry per robot")
        gs, ms, zs = [], [], []
        for i in range(self.n_robots):
            g = _frozen(self.G[i])
            m = _frozen(self.M[i])
            zi = _frozen(self.z[i])
            if g.ndim != 2 or g.shape[1] != self.dim:
                raise ProblemError(f"G[{i}] must be (m_{i}, {self.dim}), got {g.shape}")
            rows = g.shape[0]
            if zi.shape != (rows,):
                raise ProblemError(f"z[{i}] must have {rows} entries")
            if m.shape not in ((rows,), (rows, rows)):
                raise ProblemError(f"M[{i}] must be ({rows},) or ({rows}, {rows})")
            gs.append(g)
            ms.append(m)
            zs.append(zi)
        object.__setattr__(self, "G", tuple(gs))
        object.__setattr__(self, "M", tuple(ms))
        object.__setattr__(self, "z", tuple(zs))

    @property
    def rows(self) -> tuple:
        return tuple(g.shape[0] for g in self.G)


def random_factored_ls(n_robots: int, dim: int, rows, seed: int = 0,
                       noise: float = 0.1) -> FactoredLeastSquaresSpec:
    """Synthetic instance: all robots measure the same ground-truth vector.

    ``G_i`` has unit-scale columns (entries ~ N(0, 1/m_i)), ``M_i`` is a
    diagonal weight in [0.5, 2], and ``z_i = G_i p + noise * v_i``, matching a
    sensor-fusion setting where local solutions agree up to noise.
    """
    rows = tuple(int(m) for m in rows)
    if len(rows) != n_robots:
        raise ProblemError("rows must list one measurement count per robot")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x4C5])))
    truth = rng.standard_normal(dim)
    gs, ms, zs = [], [], []
    for m_i in rows:
        g = rng.standard_normal((m_i, dim)) / np.sqrt(m_i)
        w = rng.uniform(0.5, 2.0, size=m_i)
        z = g @ truth + noise * rng.standard_normal(m_i)
        gs.append(g)
        ms.append(w)
        zs.append(z)
    return FactoredLeastSquaresSpec(n_robots=n_robots, dim=dim, G=tuple(gs),
                                    M=tuple(ms), z=tuple(zs), seed=seed)


def build_factored_ls(spec: FactoredLeastSquaresSpec) -> SeparableProblem:
    """Expand each robot's weighted residual into canonical quadratic form."""
    costs = []
    for i in range(spec.n_robots):
        g, m, z = spec.G[i], spec.M[i], spec.z[i]
        mg = m[:, None] * g if m.ndim == 1 else m @ g
        mz = m * z if m.ndim == 1 else m @ z
        p = 2.0 * g.T @ mg
        costs.append(QuadraticLocalCost(P=0.5 * (p + p.T), r=-2.0 * g.T @ mz,
                                        c=float(z @ mz)))
    return SeparableProblem(costs, name=f"factored-ls-N{spec.n_robots}-n{spec.dim}")


# ---------------------------------------------------------------------------
# Spec serialization (hex floats for bit-exact round trips)
# ---------------------------------------------------------------------------

def _enc(a: np.ndarray | None):
    if a is None:
        return None
    arr = np.asarray(a, dtype=float)
    return {"shape": list(arr.shape), "hex": [float(v).hex() for v in arr.ravel()]}


def _dec(obj) -> np.ndarray | None:
    if obj is None:
        return None
    flat = np.array([float.fromhex(s) for s in obj["hex"]], dtype=float)
    return flat.reshape(obj["shape"])


def spec_to_json(spec) -> str:
    """Serialize a problem spec to JSON. Floats use hex encoding (bit exact)."""
    if isinstance(spec, TargetTrackingSpec):
        doc = {
            "kind": "target_tracking",
            "N": spec.n_robots,
            "T": spec.timesteps,
            "A_t": _enc(spec.A),
            "Q_t": _enc(spec.Q),
            "C_it": _enc(spec.C),
            "R_it": _enc(spec.R),
            "xbar_0": _enc(spec.xbar0),
            "Pbar_0": _enc(spec.pbar0),
            "T_i": [list(w) for w in spec.obs_times],
            "y_it": _enc(spec.y),
            "seed": spec.seed,
        }
    elif isinstance(spec, FactoredLeastSquaresSpec):
        doc = {
            "kind": "factored_ls",
            "N": spec.n_robots,
            "n": spec.dim,
            "G_i": [_enc(g) for g in spec.G],
            "M_i": [_enc(m) for m in spec.M],
            "z_i": [_enc(z) for z in spec.z],
            "seed": spec.seed,
        }
    else:
        raise ProblemError(f"cannot serialize {type(spec).__name__}")
    return json.dumps(doc)


def spec_from_json(text: str):
    doc = json.loads(text)
    kind = doc.get("kind")
    if kind == "target_tracking":
        return TargetTrackingSpec(
            n_robots=doc["N"], timesteps=doc["T"],
            A=_dec(doc["A_t"]), Q=_dec(doc["Q_t"]),
            C=_dec(doc["C_it"]), R=_dec(doc["R_it"]),
            xbar0=_dec(doc["xbar_0"]), pbar0=_dec(doc["Pbar_0"]),
            obs_times=tuple(tuple(w) for w in doc["T_i"]),
            y=_dec(doc["y_it"]), seed=doc["seed"])
    if kind == "factored_ls":
        return FactoredLeastSquaresSpec(
            n_robots=doc["N"], dim=doc["n"],
            G=tuple(_dec(g) for g in doc["G_i"]),
            M=tuple(_dec(m) for m in doc["M_i"]),
            z=tuple(_dec(z) for z in doc["z_i"]),
            seed=doc["seed"])
    raise ProblemError(f"unknown problem spec kind {kind!r}")
