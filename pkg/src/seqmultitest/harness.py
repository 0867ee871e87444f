"""Declarative experiment runner.

An ExperimentSpec names the streams, the error budget, the procedures
with their threshold sources, the truth configurations, and the trial
budget. run_experiment resolves thresholds, fans the trials out through
the vectorized engine, and aggregates integer counters into RunResults;
run_trial walks a single seeded path with scalar arithmetic and is the
reference the engine is held to.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from typing import Union

import numpy as np

from .calibration import (
    ABORT_TOLERANCE,
    CalibrationReport,
    Thresholds,
    analytic_threshold_gmis,
    analytic_thresholds_gfwer,
    calibrate_bisection,
    error_configs,
    min_fixed_n,
    wilson_interval,
)
from .engine import (
    PURPOSE_MAIN,
    aligned_cap,
    chunk_start,
    chunk_width,
    purpose_seed,
    raw_init_normals,
    raw_normals,
    raw_uniforms,
    simulate,
)
from .models import (
    Bernoulli,
    CompositeGaussianMean,
    GaussianMean,
    StreamBank,
    llr_increment,
)
from .procedures import (
    LABELS,
    AsymSumIntersection,
    Intersection,
    Leap,
    LeapStar,
    Mnp,
    ProcedureSpec,
    SumIntersection,
    decide_mnp,
    decide_mnp_composite,
    step_asym_sum_intersection,
    step_intersection,
    step_leap,
    step_leap_star,
    step_sum_intersection,
)
from .statistics import (
    LlrState,
    adaptive_update_composite,
    adaptive_view,
    initial_adaptive_state,
    update,
)
from .theory import ErrorBudget, GfwerBudget, GmisBudget, solve_h_d, validate_budget

_Z95 = 1.959963984540054

BOUNDARY_SWEEP = "boundary-sweep"

ThresholdSource = Union[str, Thresholds]


class SpecError(ValueError):
    """Invalid experiment description; collects every problem found."""

    def __init__(self, messages: list[str]):
        super().__init__("; ".join(messages))
        self.messages = messages


@dataclass(frozen=True)
class ProcedureRequest:
    """One procedure to run, with its threshold source.

    `thresholds` is "analytic", "calibrated", or an explicit Thresholds.
    The fixed-sample rule instead takes an explicit sample size `n` and
    per-stream decision cuts `h`, or resolves both via "calibrated".
    """

    label: str
    thresholds: ThresholdSource = "analytic"
    n: int | None = None
    h: tuple[float, ...] | None = None


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything a run needs; hashable into a reproducibility stamp."""

    bank: StreamBank
    budget: ErrorBudget
    procedures: tuple[ProcedureRequest, ...]
    truths: Union[str, tuple[tuple[float, ...], ...]] = BOUNDARY_SWEEP
    trials: int = 20_000
    seed: int = 0
    cap: int = 10_000
    ratio: float | None = None
    out: str | None = None

    @property
    def J(self) -> int:
        return self.bank.J


def validate_spec(spec: ExperimentSpec) -> None:
    """Collect every config problem before any simulation starts."""
    problems: list[str] = []
    try:
        validate_budget(spec.budget, spec.bank.J)
    except ValueError as e:
        problems.append(str(e))
    if spec.trials < 1:
        problems.append("trials must be at least 1")
    if spec.cap < 1:
        problems.append("cap must be at least 1")
    if not spec.procedures:
        problems.append("at least one procedure is required")
    for i, req in enumerate(spec.procedures):
        where = f"procedure #{i + 1} ({req.label})"
        if req.label not in LABELS:
            problems.append(f"{where}: unknown label")
            continue
        if req.label == "mnp":
            if isinstance(req.thresholds, Thresholds):
                problems.append(f"{where}: takes n and h, not thresholds")
            elif req.n is None and req.thresholds != "calibrated":
                problems.append(
                    f"{where}: has no analytic sample size; use calibrated or explicit n"
                )
            elif req.n is not None and req.thresholds == "calibrated":
                problems.append(f"{where}: explicit n conflicts with calibrated thresholds")
            if req.n is not None and req.n < 1:
                problems.append(f"{where}: n must be positive")
            if req.h is not None and len(req.h) != spec.bank.J:
                problems.append(f"{where}: h must list one cut per stream")
        else:
            if req.n is not None or req.h is not None:
                problems.append(f"{where}: n and h apply only to mnp")
            if isinstance(req.thresholds, str) and req.thresholds not in (
                "analytic",
                "calibrated",
            ):
                problems.append(
                    f"{where}: threshold source must be analytic, calibrated, "
                    "or explicit values"
                )
        if spec.bank.is_composite and req.label in (
            "sum_intersection",
            "asym_sum_intersection",
            "leap",
        ):
            problems.append(f"{where}: needs adaptive statistics on composite streams")
        if not spec.bank.is_composite and req.label == "leap_star":
            problems.append(f"{where}: adaptive rule needs composite streams")
    if isinstance(spec.truths, str):
        if spec.truths != BOUNDARY_SWEEP:
            problems.append(f"truths must be explicit or '{BOUNDARY_SWEEP}'")
    else:
        for t in spec.truths:
            if len(t) != spec.bank.J:
                problems.append("each truth must assign one value per stream")
                break
    if problems:
        raise SpecError(problems)


def _model_dict(model) -> dict:
    if isinstance(model, GaussianMean):
        return {"kind": "gaussian", "mu": model.mu, "sigma": model.sigma}
    if isinstance(model, Bernoulli):
        return {"kind": "bernoulli", "p": model.p}
    return {
        "kind": "composite_gaussian",
        "mu": model.mu,
        "n0": model.n0,
        "theta_hat0": model.theta_hat0,
    }


def _budget_dict(budget: ErrorBudget) -> dict:
    if isinstance(budget, GmisBudget):
        return {"kind": "mistakes", "k": budget.k, "alpha": budget.alpha}
    return {
        "kind": "familywise",
        "k1": budget.k1,
        "k2": budget.k2,
        "alpha": budget.alpha,
        "beta": budget.beta,
    }


def spec_hash(spec: ExperimentSpec) -> str:
    """Twelve hex digits identifying everything that shapes the output."""
    payload = {
        "models": [_model_dict(m) for m in spec.bank.models],
        "budget": _budget_dict(spec.budget),
        "procedures": [
            {
                "label": r.label,
                "thresholds": (
                    r.thresholds
                    if isinstance(r.thresholds, str)
                    else {"a": r.thresholds.a, "b": r.thresholds.b}
                ),
                "n": r.n,
                "h": None if r.h is None else list(r.h),
            }
            for r in spec.procedures
        ],
        "truths": (
            spec.truths
            if isinstance(spec.truths, str)
            else [list(t) for t in spec.truths]
        ),
        "trials": spec.trials,
        "seed": spec.seed,
        "cap": spec.cap,
        "ratio": spec.ratio,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Scalar reference path.
# ---------------------------------------------------------------------------


def _step_simple(procedure: ProcedureSpec, state: LlrState):
    view = state.view
    if isinstance(procedure, SumIntersection):
        return step_sum_intersection(procedure, view)
    if isinstance(procedure, Intersection):
        return step_intersection(procedure, view)
    if isinstance(procedure, AsymSumIntersection):
        return step_asym_sum_intersection(procedure, view)
    if isinstance(procedure, Leap):
        return step_leap(procedure, view)
    raise TypeError(f"{type(procedure).__name__} does not run on simple streams")


def _run_trial_composite(
    bank: StreamBank,
    procedure: ProcedureSpec,
    truth: tuple[float, ...],
    trial: int,
    seed: int,
    cap_eff: int,
) -> tuple[int, frozenset[int], bool]:
    J = bank.J
    n0 = bank.models[0].n0
    if n0 > 0:
        z = raw_init_normals(seed, trial, n0, J)
        rows = tuple(
            tuple(truth[j] + z[i, j] for j in range(J)) for i in range(n0)
        )
    else:
        rows = ()
    state = initial_adaptive_state(bank, rows)
    if isinstance(procedure, Mnp):
        chunk = 0
        while state.n < procedure.n:
            z = raw_normals(seed, trial, chunk, J)
            todo = min(chunk_width(chunk), procedure.n - chunk_start(chunk))
            for t in range(todo):
                x = tuple(truth[j] + z[t, j] for j in range(J))
                state = adaptive_update_composite(state, x, bank)
            chunk += 1
        return state.n, decide_mnp_composite(procedure, state, bank), False
    chunk = 0
    while True:
        z = raw_normals(seed, trial, chunk, J)
        for t in range(chunk_width(chunk)):
            x = tuple(truth[j] + z[t, j] for j in range(J))
            state = adaptive_update_composite(state, x, bank)
            if isinstance(procedure, LeapStar):
                decision = step_leap_star(procedure, state, bank)
            elif isinstance(procedure, Intersection):
                view = adaptive_view(state, bank)
                decision = None if view is None else step_intersection(procedure, view)
            else:
                raise TypeError(
                    f"{type(procedure).__name__} does not run on composite streams"
                )
            if decision is not None:
                return state.n, decision, False
        chunk += 1
        if chunk_start(chunk) >= cap_eff:
            # Aborted paths fall back to the likelihood sign rule.
            decision = frozenset(
                j for j in range(J) if state.ell1(j, bank) > state.ell0(j, bank)
            )
            return cap_eff, decision, True


def _run_trial_simple(
    bank: StreamBank,
    procedure: ProcedureSpec,
    truth: tuple[float, ...],
    trial: int,
    seed: int,
    cap_eff: int,
) -> tuple[int, frozenset[int], bool]:
    J = bank.J
    gauss = [isinstance(m, GaussianMean) for m in bank.models]
    need_n = any(gauss)
    need_u = not all(gauss)

    def observe(z, u, t: int) -> tuple[float, ...]:
        xs = []
        for j, m in enumerate(bank.models):
            if gauss[j]:
                xs.append(m.sigma * z[t, j] + m.mu * truth[j])
            else:
                thresh = m.q if truth[j] > 0.5 else m.p
                xs.append(1.0 if u[t, j] < thresh else 0.0)
        return tuple(xs)

    state = LlrState.zeros(J)
    if isinstance(procedure, Mnp):
        chunk = 0
        while state.n < procedure.n:
            z = raw_normals(seed, trial, chunk, J) if need_n else None
            u = raw_uniforms(seed, trial, chunk, J) if need_u else None
            todo = min(chunk_width(chunk), procedure.n - chunk_start(chunk))
            for t in range(todo):
                x = observe(z, u, t)
                inc = tuple(
                    llr_increment(m, x[j]) for j, m in enumerate(bank.models)
                )
                state = update(state, inc)
            chunk += 1
        return state.n, decide_mnp(procedure, state), False
    chunk = 0
    while True:
        z = raw_normals(seed, trial, chunk, J) if need_n else None
        u = raw_uniforms(seed, trial, chunk, J) if need_u else None
        for t in range(chunk_width(chunk)):
            x = observe(z, u, t)
            inc = tuple(llr_increment(m, x[j]) for j, m in enumerate(bank.models))
            state = update(state, inc)
            decision = _step_simple(procedure, state)
            if decision is not None:
                return state.n, decision, False
        chunk += 1
        if chunk_start(chunk) >= cap_eff:
            decision = frozenset(j for j in range(J) if state.lam[j] > 0.0)
            return cap_eff, decision, True


def run_trial(
    spec: ExperimentSpec,
    procedure: ProcedureSpec,
    truth: tuple[float, ...],
    trial: int,
) -> tuple[int, frozenset[int], bool]:
    """One seeded path, scalar arithmetic throughout.

    Returns (stopping time, decision set, aborted). Identical
    (seed, trial) pairs give identical paths in the vectorized engine;
    the horizon cap rounds up to the engine's block boundary.
    """
    seed = purpose_seed(spec.seed, PURPOSE_MAIN)
    cap_eff = aligned_cap(spec.cap)
    if spec.bank.is_composite:
        return _run_trial_composite(
            spec.bank, procedure, truth, trial, seed, cap_eff
        )
    return _run_trial_simple(spec.bank, procedure, truth, trial, seed, cap_eff)


# ---------------------------------------------------------------------------
# Threshold resolution and the aggregate run.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResolvedProcedure:
    """A request bound to concrete stopping parameters."""

    label: str
    procedure: ProcedureSpec
    source: str
    description: dict
    calibration: CalibrationReport | None = None


def _analytic_procedure(
    req: ProcedureRequest, budget: ErrorBudget, J: int
) -> ProcedureSpec:
    if isinstance(budget, GmisBudget):
        b = analytic_threshold_gmis(
            budget.alpha, J, budget.k, intersection=req.label == "intersection"
        )
        th = Thresholds.tied(b)
    else:
        th = analytic_thresholds_gfwer(
            budget.alpha,
            budget.beta,
            J,
            budget.k1,
            budget.k2,
            intersection=req.label == "intersection",
        )
    return _from_thresholds(req.label, budget, th)


def _from_thresholds(
    label: str, budget: ErrorBudget, th: Thresholds
) -> ProcedureSpec:
    if label == "sum_intersection":
        if not isinstance(budget, GmisBudget):
            raise SpecError(["sum_intersection needs a k-mistake budget"])
        return SumIntersection(budget.k, th.b)
    if label == "intersection":
        return Intersection(th.a, th.b)
    if not isinstance(budget, GfwerBudget):
        raise SpecError([f"{label} needs a familywise budget"])
    cls = {
        "asym_sum_intersection": AsymSumIntersection,
        "leap": Leap,
        "leap_star": LeapStar,
    }[label]
    return cls(budget.k1, budget.k2, th.a, th.b)


def _describe(procedure: ProcedureSpec) -> dict:
    if isinstance(procedure, Mnp):
        return {"n": procedure.n, "h": list(procedure.h)}
    if isinstance(procedure, SumIntersection):
        return {"b": procedure.b}
    return {"a": procedure.a, "b": procedure.b}


def resolve_procedure(
    req: ProcedureRequest,
    spec: ExperimentSpec,
    *,
    workers: int = 1,
) -> ResolvedProcedure:
    """Turn a threshold source into a concrete procedure."""
    bank, budget = spec.bank, spec.budget
    calibration = None
    if req.label == "mnp":
        if req.thresholds == "calibrated":
            if req.h is not None:
                cut = tuple(float(v) for v in req.h)
            elif bank.is_composite:
                if isinstance(budget, GfwerBudget) and budget.alpha != budget.beta:
                    raise SpecError(
                        ["asymmetric budgets on composite banks need an "
                         "explicit mnp cut (h)"]
                    )
                cut = tuple(m.mu / 2.0 for m in bank.models)
            elif isinstance(budget, GfwerBudget) and budget.alpha != budget.beta:
                d = math.log(budget.alpha) / math.log(budget.beta)
                root, _ = solve_h_d(bank.models[0], d)
                cut = (root,) * bank.J
            else:
                cut = (0.0,) * bank.J
            n = min_fixed_n(
                budget, bank, spec.trials, spec.seed,
                h=cut, cap=spec.cap, workers=workers,
            )
            procedure: ProcedureSpec = Mnp(n, cut)
            source = "calibrated"
        else:
            h_vec = req.h if req.h is not None else (0.0,) * bank.J
            procedure = Mnp(req.n, tuple(h_vec))
            source = "explicit"
    elif isinstance(req.thresholds, Thresholds):
        procedure = _from_thresholds(req.label, budget, req.thresholds)
        source = "explicit"
    elif req.thresholds == "analytic":
        procedure = _analytic_procedure(req, budget, bank.J)
        source = "analytic"
    else:
        calibration = calibrate_bisection(
            req.label,
            budget,
            bank,
            spec.trials,
            spec.seed,
            ratio=spec.ratio,
            cap=spec.cap,
            workers=workers,
        )
        procedure = _from_thresholds(req.label, budget, calibration.thresholds)
        source = "calibrated"
    return ResolvedProcedure(
        label=req.label,
        procedure=procedure,
        source=source,
        description=_describe(procedure),
        calibration=calibration,
    )


@dataclass(frozen=True)
class ErrorRate:
    metric: str
    count: int
    estimate: float
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class RunResult:
    """Aggregates for one (procedure, truth, threshold) cell.

    The integer counters are exact and worker-independent; the expected
    sample size is their ratio, switched to infinity when the abort rate
    crosses the tolerance since capped paths censor the mean. Composite
    runs fold the initial sample into the ESS of the sequential rules;
    the fixed-sample rule never draws it.
    """

    procedure: str
    source: str
    thresholds: dict
    truth: tuple[float, ...]
    trials: int
    stopped: int
    aborted: int
    sum_t: int
    sum_t_sq: int
    errors: tuple[ErrorRate, ...]
    ess: float
    ess_ci_half: float

    def error(self, metric: str) -> ErrorRate:
        for e in self.errors:
            if e.metric == metric:
                return e
        raise KeyError(metric)


def _metric_fields(budget: ErrorBudget) -> list[tuple[str, str]]:
    if isinstance(budget, GmisBudget):
        return [("mistakes", "mistakes_ge")]
    return [
        ("false_positives", "false_pos_ge"),
        ("false_negatives", "false_neg_ge"),
    ]


def _ess_with_ci(
    sum_t: int, sum_t_sq: int, trials: int, offset: int
) -> tuple[float, float]:
    mean = sum_t / trials + offset
    if trials < 2:
        return mean, math.inf
    var = (sum_t_sq - sum_t * sum_t / trials) / (trials - 1)
    half = _Z95 * math.sqrt(max(var, 0.0) / trials)
    return mean, half


def run_experiment(spec: ExperimentSpec, *, workers: int = 1) -> list[RunResult]:
    """Resolve, simulate, aggregate, and optionally persist.

    Results arrive in (procedure, truth) order. When `spec.out` is set,
    a results.json stamped with the spec hash and seed is written there.
    """
    validate_spec(spec)
    bank, budget = spec.bank, spec.budget
    if isinstance(spec.truths, str):
        truths = [tuple(t) for t in error_configs(bank, budget)]
    else:
        truths = [tuple(float(v) for v in t) for t in spec.truths]
    resolved = [resolve_procedure(r, spec, workers=workers) for r in spec.procedures]
    if isinstance(budget, GmisBudget):
        ks = {"k_mistakes": budget.k}
    else:
        ks = {"k_fp": budget.k1, "k_fn": budget.k2}
    n0 = bank.models[0].n0 if bank.is_composite else 0
    main_seed = purpose_seed(spec.seed, PURPOSE_MAIN)
    results: list[RunResult] = []
    for res in resolved:
        # The fixed-sample rule never draws the initial block, so the
        # estimation overhead is charged to the sequential rules only.
        off = 0 if isinstance(res.procedure, Mnp) else n0
        counters = simulate(
            bank,
            res.procedure,
            [np.asarray(t) for t in truths],
            spec.trials,
            main_seed,
            spec.cap,
            workers=workers,
            **ks,
        )
        for truth, c in zip(truths, counters):
            rates = []
            for name, field_name in _metric_fields(budget):
                count = getattr(c, field_name)
                lo, hi = wilson_interval(count, c.trials)
                rates.append(ErrorRate(name, count, count / c.trials, lo, hi))
            ess, half = _ess_with_ci(c.sum_t, c.sum_t_sq, c.trials, off)
            if c.aborted > ABORT_TOLERANCE * c.trials:
                ess, half = math.inf, math.inf
            results.append(
                RunResult(
                    procedure=res.label,
                    source=res.source,
                    thresholds=res.description,
                    truth=truth,
                    trials=c.trials,
                    stopped=c.trials - c.aborted,
                    aborted=c.aborted,
                    sum_t=c.sum_t,
                    sum_t_sq=c.sum_t_sq,
                    errors=tuple(rates),
                    ess=ess,
                    ess_ci_half=half,
                )
            )
    if spec.out is not None:
        persist_results(spec, resolved, results)
    return results


def result_dict(r: RunResult) -> dict:
    return {
        "procedure": r.procedure,
        "source": r.source,
        "thresholds": r.thresholds,
        "truth": list(r.truth),
        "trials": r.trials,
        "stopped": r.stopped,
        "aborted": r.aborted,
        "sum_t": r.sum_t,
        "sum_t_sq": r.sum_t_sq,
        "errors": {
            e.metric: {
                "count": e.count,
                "estimate": e.estimate,
                "ci_low": e.ci_low,
                "ci_high": e.ci_high,
            }
            for e in r.errors
        },
        "ess": r.ess,
        "ess_ci_half": r.ess_ci_half,
    }


def persist_results(
    spec: ExperimentSpec,
    resolved: list[ResolvedProcedure],
    results: list[RunResult],
) -> str:
    """Write results.json under spec.out; returns the path."""
    os.makedirs(spec.out, exist_ok=True)
    payload = {
        "config_hash": spec_hash(spec),
        "seed": spec.seed,
        "trials": spec.trials,
        "budget": _budget_dict(spec.budget),
        "procedures": [
            {
                "label": res.label,
                "source": res.source,
                "thresholds": res.description,
                "calibration": (
                    None if res.calibration is None else res.calibration.to_json_dict()
                ),
            }
            for res in resolved
        ],
        "results": [result_dict(r) for r in results],
    }
    path = os.path.join(spec.out, "results.json")
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
    return path
