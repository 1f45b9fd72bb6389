"""Per-robot update rules for the three distributed-optimization families.

Five methods are implemented as pure compute/communicate round functions:

* ``dgd-cta`` / ``dgd-atc`` -- distributed (sub)gradient descent, mixing
  before (Combine-Then-Adapt) or after (Adapt-Then-Combine) the local
  gradient step;
* ``diging`` -- gradient tracking with a constant step-size, where an
  auxiliary variable ``y_i`` tracks the average gradient through dynamic
  average consensus;
* ``next-q`` -- sequential convex programming with an exact quadratic
  surrogate (one local Newton-type solve per iteration);
* ``c-admm`` -- consensus ADMM: a local proximal primal update followed by
  dual ascent on the edge-wise agreement constraints.

Every step maps ``(state, inbox, params) -> state'`` without touching any
other robot's round-(k+1) data; the simulator enforces the phase barrier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .problem import SeparableProblem

__all__ = [
    "AlgorithmError",
    "StepSchedule",
    "make_schedule",
    "AlgorithmSpec",
    "OutboundMessage",
    "DgdState",
    "DigingState",
    "NextState",
    "AdmmState",
    "init_state",
    "dgd_cta_step",
    "dgd_adapt",
    "dgd_atc_step",
    "diging_step",
    "next_q_surrogate",
    "next_q_local",
    "next_q_step",
    "cadmm_round",
    "cadmm_dual_update",
    "ALGORITHM_NAMES",
]

ALGORITHM_NAMES = ("dgd-cta", "dgd-atc", "diging", "next-q", "c-admm")
SCHEDULE_KINDS = ("constant", "inverse", "inverse-sqrt")
ROW_SUM_TOL = 1e-9


class AlgorithmError(ValueError):
    """Raised on parameter or protocol violations in the update rules."""


@dataclass(frozen=True)
class StepSchedule:
    """Step-size rule alpha(k).

    ``inverse`` (``alpha0 / (k+1)``) is non-summable with square-summable
    terms, the classic guarantee for exact convergence of diminishing-step
    methods; ``inverse-sqrt`` (``alpha0 / sqrt(k+1)``) is non-summable but not
    square-summable and typically faster in practice. Indices are shifted by
    one so the step is defined at k = 0.
    """

    kind: str
    alpha0: float

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise AlgorithmError(f"unknown schedule kind {self.kind!r}; "
                                 f"expected one of {SCHEDULE_KINDS}")
        if not self.alpha0 > 0:
            raise AlgorithmError(f"alpha0 must be positive, got {self.alpha0}")

    def evaluate(self, k: int) -> float:
        if self.kind == "constant":
            return self.alpha0
        if self.kind == "inverse":
            return self.alpha0 / (k + 1)
        return self.alpha0 / math.sqrt(k + 1)


def make_schedule(kind: str, alpha0: float) -> StepSchedule:
    return StepSchedule(kind=kind, alpha0=alpha0)


@dataclass(frozen=True)
class AlgorithmSpec:
    """Which method to run and with what scalar parameters.

    ``schedule`` drives dgd-cta / dgd-atc / next-q, ``alpha`` is the constant
    DIGing step-size, ``rho`` the C-ADMM penalty.
    """

    name: str
    schedule: StepSchedule | None = None
    alpha: float | None = None
    rho: float | None = None

    def __post_init__(self):
        if self.name not in ALGORITHM_NAMES:
            raise AlgorithmError(f"unknown algorithm {self.name!r}; "
                                 f"expected one of {ALGORITHM_NAMES}")
        if self.name in ("dgd-cta", "dgd-atc", "next-q"):
            if self.schedule is None:
                raise AlgorithmError(f"{self.name} needs a step schedule")
        elif self.name == "diging":
            if self.alpha is None or not self.alpha > 0:
                raise AlgorithmError("diging needs a positive constant step-size alpha")
        elif self.name == "c-admm":
            if self.rho is None or not self.rho > 0:
                raise AlgorithmError("c-admm needs a positive penalty rho")

    @property
    def tunable(self) -> str:
        """Name of the scalar a tuner may adjust for this method."""
        return "rho" if self.name == "c-admm" else "alpha"

    def param_value(self) -> float:
        if self.name == "c-admm":
            return self.rho
        if self.name == "diging":
            return self.alpha
        return self.schedule.alpha0

    def with_param(self, value: float) -> "AlgorithmSpec":
        """Copy of this spec with its tunable scalar replaced."""
        if self.name == "c-admm":
            return replace(self, rho=float(value))
        if self.name == "diging":
            return replace(self, alpha=float(value))
        return replace(self, schedule=replace(self.schedule, alpha0=float(value)))

    def payload_reals(self, n: int) -> int:
        """Reals per message: the communicated-variable bundle of the method."""
        return 2 * n if self.name in ("diging", "next-q") else n

    def describe(self) -> dict:
        out = {"name": self.name}
        if self.schedule is not None:
            out["schedule"] = {"kind": self.schedule.kind, "alpha0": self.schedule.alpha0}
        if self.alpha is not None:
            out["alpha"] = self.alpha
        if self.rho is not None:
            out["rho"] = self.rho
        return out


@dataclass(frozen=True)
class OutboundMessage:
    """One robot's broadcast for a round: named vectors, 8 bytes per real."""

    sender: int
    payload: tuple

    @property
    def n_reals(self) -> int:
        return int(sum(np.asarray(v).size for v in self.payload))

    @property
    def byte_size(self) -> int:
        return 8 * self.n_reals


# ---------------------------------------------------------------------------
# Per-robot state bundles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DgdState:
    x: np.ndarray


@dataclass(frozen=True)
class DigingState:
    x: np.ndarray
    y: np.ndarray          # average-gradient tracker
    last_grad: np.ndarray  # own gradient at x (kept locally across rounds)


@dataclass(frozen=True)
class NextState:
    x: np.ndarray
    y: np.ndarray          # average-gradient tracker
    pi_tilde: np.ndarray   # estimate of the others' aggregate gradient
    last_grad: np.ndarray


@dataclass(frozen=True)
class AdmmState:
    x: np.ndarray
    y: np.ndarray                          # composite dual over incident edges
    neighbor_x: Mapping[int, np.ndarray] | None = None  # snapshot within a round


def init_state(problem: SeparableProblem, spec: AlgorithmSpec, i: int,
               x0: np.ndarray):
    """Initial per-robot state with the method's required auxiliaries.

    Gradient trackers start at the local gradient; the composite ADMM dual
    starts at zero.
    """
    x0 = np.asarray(x0, dtype=float)
    if spec.name in ("dgd-cta", "dgd-atc"):
        return DgdState(x=x0)
    if spec.name == "diging":
        g = problem.gradient(i, x0)
        return DigingState(x=x0, y=g, last_grad=g)
    if spec.name == "next-q":
        g = problem.gradient(i, x0)
        return NextState(x=x0, y=g, pi_tilde=problem.n_robots * g - g, last_grad=g)
    return AdmmState(x=x0, y=np.zeros_like(x0))


# ---------------------------------------------------------------------------
# Mixing helper
# ---------------------------------------------------------------------------

def _mix(row: Mapping[int, float], contributions: Mapping[int, np.ndarray]) -> np.ndarray:
    """Weighted combination over the senders that are actually available.

    If the available weights do not sum to one (a sender in the row is
    missing from the inbox), the row is renormalized over the survivors;
    the engine re-derives weights from each topology snapshot, so this is a
    fallback for frozen weights under message loss.
    """
    acc = None
    total = 0.0
    for j in sorted(contributions):
        w = row.get(j)
        if w is None or w == 0.0:
            continue
        total += w
        acc = w * contributions[j] if acc is None else acc + w * contributions[j]
    if acc is None:
        raise AlgorithmError("no overlap between weight row and available senders")
    if abs(total - 1.0) > ROW_SUM_TOL:
        acc = acc / total
    return acc


# ---------------------------------------------------------------------------
# Distributed first-order methods
# ---------------------------------------------------------------------------

def dgd_cta_step(problem: SeparableProblem, i: int, state: DgdState,
                 inbox: Mapping[int, np.ndarray], row: Mapping[int, float],
                 schedule: StepSchedule, k: int) -> DgdState:
    """Combine-Then-Adapt: mix pre-step iterates, then descend the local gradient.

    x_i <- sum_j w_ij x_j - alpha(k) grad f_i(x_i), with j ranging over the
    received neighbors and i itself.
    """
    mixed = _mix(row, {i: state.x, **inbox})
    return DgdState(x=mixed - schedule.evaluate(k) * problem.gradient(i, state.x))


def dgd_adapt(problem: SeparableProblem, i: int, state: DgdState,
              schedule: StepSchedule, k: int) -> np.ndarray:
    """Sender-side half of ATC: the locally adapted value x_i - alpha(k) grad f_i(x_i)."""
    return state.x - schedule.evaluate(k) * problem.gradient(i, state.x)


def dgd_atc_step(problem: SeparableProblem, i: int, state: DgdState,
                 inbox: Mapping[int, np.ndarray], row: Mapping[int, float],
                 schedule: StepSchedule, k: int) -> DgdState:
    """Adapt-Then-Combine: mix post-adaptation values.

    The inbox carries each neighbor's already-adapted value, so step-sizes
    need not be coordinated across robots (each sender applied its own).
    """
    contributions = dict(inbox)
    if i not in contributions:
        contributions[i] = dgd_adapt(problem, i, state, schedule, k)
    return DgdState(x=_mix(row, contributions))


def diging_step(problem: SeparableProblem, i: int, state: DigingState,
                inbox: Mapping[int, tuple], row: Mapping[int, float],
                alpha: float) -> DigingState:
    """Gradient-tracking update with constant step-size.

    x first, then y, with the y-mix using round-k tracker values:

        x_i+ = sum_j w_ij x_j - alpha y_i
        y_i+ = sum_j w_ij y_j + grad f_i(x_i+) - grad f_i(x_i)

    The gradient difference is purely local, so message loss never requires
    interpolating another robot's state.
    """
    xs = {i: state.x}
    ys = {i: state.y}
    for j, (xj, yj) in inbox.items():
        xs[j] = xj
        ys[j] = yj
    x_new = _mix(row, xs) - alpha * state.y
    g_new = problem.gradient(i, x_new)
    y_new = _mix(row, ys) + g_new - state.last_grad
    return DigingState(x=x_new, y=y_new, last_grad=g_new)


# ---------------------------------------------------------------------------
# Distributed sequential convex programming (quadratic surrogate)
# ---------------------------------------------------------------------------

def next_q_surrogate(problem: SeparableProblem, i: int, state: NextState) -> np.ndarray:
    """Minimizer of the local quadratic model around x_i.

    The model pairs the tracked global descent direction
    ``grad f_i(x_i) + pi_i`` with the exact local Hessian, so for quadratic
    costs the solve is a single linear system.
    """
    g = problem.gradient(i, state.x)
    return state.x - problem.newton_solve(i, g + state.pi_tilde)


def next_q_local(problem: SeparableProblem, i: int, state: NextState,
                 schedule: StepSchedule, k: int) -> np.ndarray:
    """Damped local target z_i = x_i + alpha(k) (xtilde_i - x_i) broadcast to neighbors."""
    x_tilde = next_q_surrogate(problem, i, state)
    return state.x + schedule.evaluate(k) * (x_tilde - state.x)


def next_q_step(problem: SeparableProblem, i: int, state: NextState,
                inbox: Mapping[int, tuple], row: Mapping[int, float],
                schedule: StepSchedule, k: int) -> NextState:
    """Full round: surrogate solve, damped step, mix, then tracker updates.

        x_i+  = sum_j w_ij z_j
        y_i+  = sum_j w_ij y_j + grad f_i(x_i+) - grad f_i(x_i)
        pi_i+ = N y_i+ - grad f_i(x_i+)

    Mixing uses exactly the received round-k values; the weights should be
    doubly-stochastic for the tracker identity to hold.
    """
    zs = {}
    ys = {}
    for j, (zj, yj) in inbox.items():
        zs[j] = zj
        ys[j] = yj
    if i not in zs:
        zs[i] = next_q_local(problem, i, state, schedule, k)
        ys[i] = state.y
    x_new = _mix(row, zs)
    g_new = problem.gradient(i, x_new)
    y_new = _mix(row, ys) + g_new - state.last_grad
    pi_new = problem.n_robots * y_new - g_new
    return NextState(x=x_new, y=y_new, pi_tilde=pi_new, last_grad=g_new)


# ---------------------------------------------------------------------------
# Consensus ADMM
# ---------------------------------------------------------------------------

def cadmm_round(problem: SeparableProblem, i: int, state: AdmmState,
                inbox: Mapping[int, np.ndarray], rho: float) -> tuple[AdmmState, np.ndarray]:
    """Primal half of a C-ADMM round.

    Minimizes ``f_i(x) + x'y_i + rho sum_j ||x - (x_i + x_j)/2||^2`` over the
    neighbors whose round-k iterates arrived, via the closed-form local prox.
    Returns the provisional state (new primal, snapshot of the senders) and
    the value to broadcast for the dual exchange; apply
    :func:`cadmm_dual_update` with the second inbox to finish the round.
    """
    if not rho > 0:
        raise AlgorithmError(f"rho must be positive, got {rho}")
    degree = len(inbox)
    if degree:
        anchor = (degree * state.x + sum(inbox[j] for j in sorted(inbox))) / (2.0 * degree)
    else:
        anchor = state.x  # no neighbors: penalty term is empty
    x_new = problem.local_prox(i, linear=state.y, penalty_scale=rho * degree,
                               anchor=anchor)
    new_state = AdmmState(x=x_new, y=state.y, neighbor_x=dict(inbox))
    return new_state, x_new


def cadmm_dual_update(state: AdmmState, inbox: Mapping[int, np.ndarray],
                      rho: float) -> AdmmState:
    """Dual half: ascend on the consensus residuals of the fresh primals.

        y_i+ = y_i + rho sum_j (x_i+ - x_j+)

    The sender set must match the primal half's; the network may not change
    between the two exchanges of one round.
    """
    if state.neighbor_x is None:
        raise AlgorithmError("dual update called before the primal half of the round")
    if set(inbox) != set(state.neighbor_x):
        raise AlgorithmError(
            "neighbor set changed between the primal and dual exchanges of a "
            "C-ADMM round; the topology must hold still within a round")
    increment = np.zeros_like(state.x)
    for j in sorted(inbox):
        increment += state.x - inbox[j]
    return AdmmState(x=state.x, y=state.y + rho * increment, neighbor_x=None)
