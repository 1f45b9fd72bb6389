"""Scalar hyperparameter search by golden-section bracketing.

Convergence behavior of the step-size / penalty parameters spans orders of
magnitude, so the search runs on log10(parameter). The objective is the
number of iterations a simulated run needs to reach the target error
(divergent or non-converging probes score +inf); unimodality is assumed, not
verified.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .algorithms import AlgorithmSpec
from .graph import TopologySequence
from .problem import SeparableProblem
from .simnet import StopRule, run

__all__ = [
    "TunerError",
    "TuneSpec",
    "Probe",
    "TuneResult",
    "golden_section_minimize",
    "gss_tune",
    "grid_sweep",
    "SweepRow",
]

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0
INVPHI = 1.0 / GOLDEN


class TunerError(RuntimeError):
    pass


@dataclass(frozen=True)
class TuneSpec:
    """Search configuration for one scalar (step-size alpha or penalty rho)."""

    parameter: str                    # "alpha" | "rho"
    lo: float
    hi: float
    budget: int = 20                  # max probe evaluations
    mse_threshold: float = 1e-6
    max_iters: int = 20000            # per-probe iteration cap
    seed: int = 0
    weights_policy: str = "metropolis"

    def __post_init__(self):
        if self.parameter not in ("alpha", "rho"):
            raise TunerError(f"parameter must be 'alpha' or 'rho', got {self.parameter!r}")
        if not 0 < self.lo < self.hi:
            raise TunerError(f"need 0 < lo < hi, got [{self.lo}, {self.hi}]")
        if self.budget < 5:
            raise TunerError("budget must be >= 5")


@dataclass(frozen=True)
class Probe:
    index: int
    param: float
    iters: float          # +inf when divergent or threshold not reached
    diverged: bool


@dataclass(frozen=True)
class TuneResult:
    best_param: float
    best_iters: float
    probes: tuple


def golden_section_minimize(fn, lo: float, hi: float, budget: int):
    """Golden-section contraction of [lo, hi]; returns (best_x, best_f, probes).

    ``fn`` may return +inf. Exactly ``budget`` evaluations are spent (fewer if
    the interval is already degenerate). After m probes the bracket has width
    (hi - lo) * phi^-(m-2): the first two probes place the interior points,
    each later probe replaces one of them after a contraction. Ties prefer
    the smaller argument.
    """
    if not lo < hi:
        raise TunerError(f"need lo < hi, got [{lo}, {hi}]")
    width_tol = 1e-6  # bracket width below which further probes are pointless
    probes = []

    def evaluate(x):
        val = fn(x)
        probes.append((x, val))
        return val

    a, b = lo, hi
    c = b - (b - a) * INVPHI
    d = a + (b - a) * INVPHI
    fc = evaluate(c)
    fd = evaluate(d)
    while len(probes) < budget and (b - a) > width_tol:
        if fc <= fd:        # keep the left bracket on ties: smaller parameter
            b, d, fd = d, c, fc
            c = b - (b - a) * INVPHI
            fc = evaluate(c)
        else:
            a, c, fc = c, d, fd
            d = a + (b - a) * INVPHI
            fd = evaluate(d)
    best_x, best_f = min(probes, key=lambda p: (p[1], p[0]))
    return best_x, best_f, probes


def _probe_run(problem, spec, topology, tune: TuneSpec, param: float) -> Probe:
    trial = spec.with_param(param)
    trace = run(problem, trial, topology,
                weights_policy=tune.weights_policy,
                stop=StopRule(max_iters=tune.max_iters,
                              mse_threshold=tune.mse_threshold),
                seed=tune.seed)
    iters = trace.iterations_to(tune.mse_threshold)
    return Probe(index=-1, param=param,
                 iters=float(iters) if iters is not None and not trace.diverged else math.inf,
                 diverged=trace.diverged)


def gss_tune(tune: TuneSpec, problem: SeparableProblem, spec: AlgorithmSpec,
             topology: TopologySequence, objective=None) -> TuneResult:
    """Tune the method's scalar parameter by golden-section search.

    Each probe is one full simulated run scored by iterations-to-threshold.
    ``objective`` substitutes a synthetic callable ``param -> value`` (used by
    the tests to verify the search itself). Raises if no probe converged.
    """
    if tune.parameter != spec.tunable:
        raise TunerError(f"{spec.name} is tuned via {spec.tunable!r}, "
                         f"not {tune.parameter!r}")
    log: list[Probe] = []

    if objective is None:
        def fn(u):
            probe = _probe_run(problem, spec, topology, tune, 10.0 ** u)
            log.append(Probe(index=len(log), param=probe.param,
                             iters=probe.iters, diverged=probe.diverged))
            return probe.iters
    else:
        def fn(u):
            param = 10.0 ** u
            val = float(objective(param))
            log.append(Probe(index=len(log), param=param,
                             iters=val, diverged=not math.isfinite(val)))
            return val

    _, best_f, _ = golden_section_minimize(
        fn, math.log10(tune.lo), math.log10(tune.hi), tune.budget)
    if not math.isfinite(best_f):
        raise TunerError(
            f"no convergent parameter in [{tune.lo}, {tune.hi}]: every probe "
            f"diverged or missed the threshold within {tune.max_iters} iterations")
    best = min(log, key=lambda p: (p.iters, p.param))
    return TuneResult(best_param=best.param, best_iters=best.iters,
                      probes=tuple(log))


@dataclass(frozen=True)
class SweepRow:
    param: float
    iters: int | None     # None when the threshold was not reached
    diverged: bool


def grid_sweep(params, problem: SeparableProblem, spec: AlgorithmSpec,
               topology: TopologySequence, *, mse_threshold: float = 1e-6,
               max_iters: int = 20000, seed: int = 0,
               weights_policy: str = "metropolis") -> list[SweepRow]:
    """One run per grid value; divergent entries are marked, not raised."""
    params = list(params)
    if not params:
        raise TunerError("sweep grid must not be empty")
    rows = []
    for p in params:
        trace = run(problem, spec.with_param(p), topology,
                    weights_policy=weights_policy,
                    stop=StopRule(max_iters=max_iters, mse_threshold=mse_threshold),
                    seed=seed)
        iters = trace.iterations_to(mse_threshold)
        rows.append(SweepRow(param=float(p),
                             iters=None if trace.diverged else iters,
                             diverged=trace.diverged))
    return rows
