"""Threshold selection: closed-form bounds and Monte-Carlo search.

The closed forms carry union-bound slack and are safe at any error level.
The Monte-Carlo path trades that slack for simulation time: it bisects a
tied threshold under common random numbers, so the estimated error curve
is monotone in the threshold and the search is sound, and stops when the
worst-case estimate lands on the target with its confidence interval
still covering it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .engine import PURPOSE_CALIBRATION, TrialCounters, purpose_seed, simulate
from .models import CompositeGaussianMean, StreamBank
from .procedures import (
    AsymSumIntersection,
    Intersection,
    Leap,
    LeapStar,
    Mnp,
    ProcedureSpec,
    SumIntersection,
)
from .theory import ErrorBudget, GfwerBudget, GmisBudget, solve_h_d, validate_budget

DEFAULT_CAP = 10_000

# A horizon-cap abort rate above this marks an estimate unreliable.
ABORT_TOLERANCE = 0.01

# Smallest supported target error is 30 expected events per run;
# below that the binomial estimate is too coarse to calibrate on.
MIN_EXPECTED_ERRORS = 30

# Full enumeration over signal configurations is capped here (2^12).
MAX_CONFIGS = 4096

_Z95 = 1.959963984540054

FamilyLike = Union[str, Callable[["Thresholds"], ProcedureSpec]]


def wilson_interval(count: int, trials: int) -> tuple[float, float]:
    """95% Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    if not 0 <= count <= trials:
        raise ValueError("count must lie in [0, trials]")
    z2 = _Z95 * _Z95
    phat = count / trials
    denom = 1.0 + z2 / trials
    centre = phat + z2 / (2.0 * trials)
    half = _Z95 * math.sqrt(
        phat * (1.0 - phat) / trials + z2 / (4.0 * trials * trials)
    )
    return (centre - half) / denom, (centre + half) / denom


@dataclass(frozen=True)
class Thresholds:
    """Stopping boundaries: `a` guards the negative side, `b` the positive.

    Rules that watch only the positive side read `b` and ignore `a`.
    """

    a: float
    b: float

    def __post_init__(self) -> None:
        if not (self.a > 0.0 and self.b > 0.0):
            raise ValueError("thresholds must be positive")

    @classmethod
    def tied(cls, value: float) -> "Thresholds":
        return cls(value, value)

    @property
    def symmetric(self) -> bool:
        return self.a == self.b


def threshold_family(label: str, budget: ErrorBudget) -> Callable[[Thresholds], ProcedureSpec]:
    """Bind a procedure label and a budget into a thresholds -> procedure map."""
    if label == "sum_intersection":
        if not isinstance(budget, GmisBudget):
            raise ValueError("sum_intersection calibrates against a k-mistake budget")
        return lambda t: SumIntersection(budget.k, t.b)
    if label == "intersection":
        return lambda t: Intersection(t.a, t.b)
    if label in ("asym_sum_intersection", "leap", "leap_star"):
        if not isinstance(budget, GfwerBudget):
            raise ValueError(f"{label} calibrates against a familywise budget")
        cls = {
            "asym_sum_intersection": AsymSumIntersection,
            "leap": Leap,
            "leap_star": LeapStar,
        }[label]
        return lambda t: cls(budget.k1, budget.k2, t.a, t.b)
    if label == "mnp":
        raise ValueError(
            "the fixed-sample rule has no stopping threshold to calibrate; "
            "use min_fixed_n"
        )
    raise ValueError(f"unknown procedure label: {label!r}")


def _check_level(value: float, name: str) -> None:
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must lie in (0, 1)")


def analytic_threshold_gmis(alpha: float, J: int, k: int, *, intersection: bool = False) -> float:
    """Conservative boundary for controlling >= k mistakes at level alpha.

    Returns |log alpha| + log C(J, k); the intersection rule gets by with
    that value divided by k.
    """
    _check_level(alpha, "alpha")
    validate_budget(GmisBudget(k=k, alpha=alpha), J)
    b = abs(math.log(alpha)) + math.log(math.comb(J, k))
    return b / k if intersection else b


def analytic_thresholds_gfwer(
    alpha: float,
    beta: float,
    J: int,
    k1: int,
    k2: int,
    *,
    intersection: bool = False,
) -> Thresholds:
    """Conservative boundaries for the two familywise error rates.

    b = |log alpha| + log(2^k1 C(J, k1)) guards false positives and
    a = |log beta| + log(2^k2 C(J, k2)) false negatives; the intersection
    rule divides them by k1 and k2 respectively.
    """
    validate_budget(GfwerBudget(k1=k1, k2=k2, alpha=alpha, beta=beta), J)
    a = abs(math.log(beta)) + math.log((2.0 ** k2) * math.comb(J, k2))
    b = abs(math.log(alpha)) + math.log((2.0 ** k1) * math.comb(J, k1))
    if intersection:
        return Thresholds(a / k2, b / k1)
    return Thresholds(a, b)


def _model_groups(bank: StreamBank) -> list[tuple[list[int], float]]:
    """Groups of interchangeable streams with the signal value each takes."""
    by_model: dict = {}
    for j, model in enumerate(bank.models):
        by_model.setdefault(model, []).append(j)
    groups = []
    for model, idx in by_model.items():
        value = model.mu if isinstance(model, CompositeGaussianMean) else 1.0
        groups.append((idx, value))
    return groups


def error_configs(bank: StreamBank, budget: ErrorBudget) -> list[tuple[float, ...]]:
    """Truth configurations whose worst case bounds the error.

    Streams sharing a model are interchangeable, so only the number of
    signals per group matters; one representative per count combination
    is kept. Under the k-mistake metric the simple stream models are
    additionally sign-symmetric, which collapses everything to a single
    configuration (this assumes tied boundaries, which is how the
    k-mistake rules are run here). Composite banks enumerate the
    boundary values {0, mu} per group.
    """
    validate_budget(budget, bank.J)
    if isinstance(budget, GmisBudget) and not bank.is_composite:
        return [(0.0,) * bank.J]
    return _group_configs(bank)


def _group_configs(bank: StreamBank) -> list[tuple[float, ...]]:
    """One representative truth per signal-count combination over groups."""
    groups = _model_groups(bank)
    total = 1
    for idx, _ in groups:
        total *= len(idx) + 1
    if total > MAX_CONFIGS:
        raise ValueError(
            f"{total} truth configurations exceed the enumeration limit "
            f"({MAX_CONFIGS}); this needs more stream grouping or smaller J"
        )
    configs = []
    for counts in itertools.product(*(range(len(idx) + 1) for idx, _ in groups)):
        truth = [0.0] * bank.J
        for (idx, value), m in zip(groups, counts):
            for j in idx[:m]:
                truth[j] = value
        configs.append(tuple(truth))
    return configs


@dataclass(frozen=True)
class MetricEstimate:
    """Worst-case frequency of one error event across configurations."""

    metric: str
    count: int
    trials: int
    estimate: float
    ci_low: float
    ci_high: float
    worst_config: tuple[float, ...]


@dataclass(frozen=True)
class ErrorReport:
    """Monte-Carlo error estimates, maximised over truth configurations."""

    metrics: tuple[MetricEstimate, ...]
    trials: int
    configurations: tuple[tuple[float, ...], ...]
    counters: tuple[TrialCounters, ...]
    seed: int
    max_abort_rate: float
    unreliable: bool

    def metric(self, name: str) -> MetricEstimate:
        for m in self.metrics:
            if m.metric == name:
                return m
        raise KeyError(name)


def _metric_plan(budget: ErrorBudget) -> list[tuple[str, str, float]]:
    """(name, counter field, target level) per metric of the budget."""
    if isinstance(budget, GmisBudget):
        return [("mistakes", "mistakes_ge", budget.alpha)]
    return [
        ("false_positives", "false_pos_ge", budget.alpha),
        ("false_negatives", "false_neg_ge", budget.beta),
    ]


def mc_error_estimate(
    procedure: ProcedureSpec,
    bank: StreamBank,
    budget: ErrorBudget,
    truths: list,
    trials: int,
    seed: int,
    *,
    cap: int = DEFAULT_CAP,
    workers: int = 1,
) -> ErrorReport:
    """Estimate the worst-case error frequencies of a procedure.

    Runs `trials` seeded paths under every truth configuration and keeps,
    per metric, the largest frequency together with its 95% Wilson
    interval. An abort rate above ABORT_TOLERANCE on any configuration
    flags the report as unreliable.
    """
    if not truths:
        raise ValueError("truth set must be nonempty")
    validate_budget(budget, bank.J)
    if isinstance(budget, GmisBudget):
        ks = {"k_mistakes": budget.k}
    else:
        ks = {"k_fp": budget.k1, "k_fn": budget.k2}
    arrays = [np.asarray(t, dtype=np.float64) for t in truths]
    counters = simulate(
        bank, procedure, arrays, trials, seed, cap, workers=workers, **ks
    )
    metrics = []
    for name, field, _ in _metric_plan(budget):
        counts = [getattr(c, field) for c in counters]
        worst = int(np.argmax(counts))
        count = int(counts[worst])
        lo, hi = wilson_interval(count, trials)
        metrics.append(
            MetricEstimate(
                metric=name,
                count=count,
                trials=trials,
                estimate=count / trials,
                ci_low=lo,
                ci_high=hi,
                worst_config=tuple(float(v) for v in arrays[worst]),
            )
        )
    max_abort = max(c.aborted for c in counters) / trials
    return ErrorReport(
        metrics=tuple(metrics),
        trials=trials,
        configurations=tuple(tuple(float(v) for v in a) for a in arrays),
        counters=tuple(counters),
        seed=seed,
        max_abort_rate=max_abort,
        unreliable=max_abort > ABORT_TOLERANCE,
    )


class CalibrationError(RuntimeError):
    """The threshold search failed; diagnostics carry the final state."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class CalibrationReport:
    """Outcome of a Monte-Carlo threshold search.

    On success the achieved estimate of the calibrated metric is at most
    its target while the confidence interval still covers the target.
    """

    thresholds: Thresholds
    targets: tuple[tuple[str, float], ...]
    achieved: tuple[MetricEstimate, ...]
    trials: int
    configurations: int
    seed: int
    iterations: int
    unreliable: bool

    def achieved_metric(self, name: str) -> MetricEstimate:
        for m in self.achieved:
            if m.metric == name:
                return m
        raise KeyError(name)

    def to_json_dict(self) -> dict:
        return {
            "thresholds": {"a": self.thresholds.a, "b": self.thresholds.b},
            "targets": {name: level for name, level in self.targets},
            "achieved": {
                m.metric: {
                    "count": m.count,
                    "estimate": m.estimate,
                    "ci_low": m.ci_low,
                    "ci_high": m.ci_high,
                    "worst_config": list(m.worst_config),
                }
                for m in self.achieved
            },
            "trials": self.trials,
            "configurations": self.configurations,
            "seed": self.seed,
            "iterations": self.iterations,
            "unreliable": self.unreliable,
        }


def _analytic_reference(label: str | None, budget: ErrorBudget, J: int) -> Thresholds:
    """Analytic thresholds matching the family, used to seed the search."""
    if isinstance(budget, GmisBudget):
        b = analytic_threshold_gmis(
            budget.alpha, J, budget.k, intersection=label == "intersection"
        )
        return Thresholds.tied(b)
    return analytic_thresholds_gfwer(
        budget.alpha,
        budget.beta,
        J,
        budget.k1,
        budget.k2,
        intersection=label == "intersection",
    )


def calibrate_bisection(
    family: FamilyLike,
    budget: ErrorBudget,
    bank: StreamBank,
    trials: int,
    seed: int,
    *,
    ratio: float | None = None,
    cap: int = DEFAULT_CAP,
    workers: int = 1,
    max_iterations: int = 60,
    truths: list | None = None,
) -> CalibrationReport:
    """Bisect a tied threshold until the worst-case error sits on target.

    `family` is a procedure label or a callable mapping Thresholds to a
    procedure. The search moves the positive boundary b and keeps
    a = ratio * b, defaulting the ratio to the analytic one (1 for
    symmetric budgets). The calibrated metric is the k-mistake rate for
    mistake budgets and the false-positive rate for familywise budgets;
    the other familywise metric is estimated and reported but not
    searched on, since a single tied knob cannot hit two targets.

    Every candidate threshold is evaluated on the same seeded paths, so
    the estimated error is nonincreasing in the threshold and bisection
    is sound. Early rounds use a trial prefix to narrow the bracket
    cheaply and only move it when the coarse interval is clear of the
    target; the accept test always runs at full size. Success requires
    the full-size estimate to be at most the target with the target
    inside its confidence interval. Targets below 30 expected errors per
    run raise the trial count to compensate.
    """
    validate_budget(budget, bank.J)
    if isinstance(family, str):
        label: str | None = family
        make = threshold_family(family, budget)
    else:
        label = None
        make = family
    if isinstance(budget, GmisBudget):
        metric_name, target = "mistakes", budget.alpha
    else:
        metric_name, target = "false_positives", budget.alpha
    trials_eff = max(trials, math.ceil(MIN_EXPECTED_ERRORS / target))
    sub_seed = purpose_seed(seed, PURPOSE_CALIBRATION)
    if truths is None:
        truths = error_configs(bank, budget)
    reference = _analytic_reference(label, budget, bank.J)
    if ratio is None:
        ratio = reference.a / reference.b

    evaluations = 0

    def estimate(b: float, n: int) -> tuple[Thresholds, ErrorReport]:
        nonlocal evaluations
        evaluations += 1
        th = Thresholds(ratio * b, b)
        report = mc_error_estimate(
            make(th), bank, budget, truths, n, sub_seed, cap=cap, workers=workers
        )
        return th, report

    def fail(message: str, extra: dict) -> CalibrationError:
        extra.update(
            {
                "target": target,
                "metric": metric_name,
                "trials": trials_eff,
                "evaluations": evaluations,
                "ratio": ratio,
            }
        )
        return CalibrationError(message, extra)

    # Coarse rounds need a few expected errors at the target to ever be
    # decisive, so their size grows as the target shrinks.
    coarse = min(trials_eff, max(2048, math.ceil(8.0 / target)))

    # Bracket: the analytic boundary should sit on the safe side; expand
    # if the coarse estimate is confidently above target even there.
    hi = reference.b
    for _ in range(8):
        _, report = estimate(hi, coarse)
        if report.metric(metric_name).ci_low <= target:
            break
        hi *= 1.5
    else:
        raise fail("error stays above target beyond the analytic threshold", {"hi": hi})
    lo = hi / 64.0

    # Narrow with cheap estimates while their verdict is unambiguous.
    while evaluations < max_iterations and hi - lo > 0.02 * hi:
        mid = 0.5 * (lo + hi)
        _, report = estimate(mid, coarse)
        m = report.metric(metric_name)
        if m.ci_low > target:
            lo = mid
        elif m.ci_high < target:
            hi = mid
        else:
            break

    # Full-size rounds drive the accept test.
    last = None
    while evaluations < max_iterations:
        mid = 0.5 * (lo + hi)
        th, report = estimate(mid, trials_eff)
        m = report.metric(metric_name)
        last = m
        if m.estimate <= target <= m.ci_high:
            return CalibrationReport(
                thresholds=th,
                targets=tuple((name, level) for name, _, level in _metric_plan(budget)),
                achieved=report.metrics,
                trials=trials_eff,
                configurations=len(truths),
                seed=sub_seed,
                iterations=evaluations,
                unreliable=report.unreliable,
            )
        if m.estimate > target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-6 * hi:
            # The bracket collapsed without landing on the target, so a
            # coarse move must have overshot; reopen around the collapse.
            lo, hi = lo / 1.5, hi * 1.5
    raise fail(
        "bisection did not land on the target",
        {
            "bracket": (lo, hi),
            "last_estimate": None if last is None else last.estimate,
        },
    )


def min_fixed_n(
    budget: ErrorBudget,
    bank: StreamBank,
    trials: int,
    seed: int,
    *,
    h: Sequence[float] | None = None,
    truths: list | None = None,
    cap: int = DEFAULT_CAP,
    workers: int = 1,
) -> int:
    """Smallest fixed sample size meeting the budget at a given cut.

    Without `h` the bank must consist of identical simple streams and
    the cut is the known optimal drift: zero for symmetric budgets, and
    for familywise budgets with alpha != beta the root balancing the two
    error exponents. An explicit per-stream `h` lifts that restriction
    (composite banks compare the plain sample mean against it).

    Fixed-sample decisions are independent across streams, so the
    false-positive count is stochastically largest with every stream
    null and the false-negative count with every stream a signal; the
    familywise search therefore evaluates just those two configurations.
    The mistake metric mixes both error kinds and keeps the usual
    worst-case enumeration. Pass `truths` to override either choice.

    A sample size is accepted when every metric's Wilson upper bound is
    at most its target; the scan doubles n to bracket and then bisects
    for the smallest accepted value.
    """
    validate_budget(budget, bank.J)
    if h is None:
        if bank.is_composite or not bank.is_homogeneous:
            raise ValueError(
                "the optimal cut is only derived for identical simple "
                "streams; pass h explicitly for anything else"
            )
        if isinstance(budget, GmisBudget):
            cut = (0.0,) * bank.J
        else:
            d = math.log(budget.alpha) / math.log(budget.beta)
            root, _ = solve_h_d(bank.models[0], d)
            cut = (root,) * bank.J
    else:
        if len(h) != bank.J:
            raise ValueError(f"h must have {bank.J} entries, got {len(h)}")
        cut = tuple(float(v) for v in h)
    plan = _metric_plan(budget)
    smallest_target = min(level for _, _, level in plan)
    trials_eff = max(trials, math.ceil(MIN_EXPECTED_ERRORS / smallest_target))
    sub_seed = purpose_seed(seed, PURPOSE_CALIBRATION)
    if truths is None:
        if isinstance(budget, GmisBudget):
            if any(v != 0.0 for v in cut):
                truths = _group_configs(bank)
            else:
                truths = error_configs(bank, budget)
        else:
            signal = [
                m.mu if isinstance(m, CompositeGaussianMean) else 1.0
                for m in bank.models
            ]
            truths = [(0.0,) * bank.J, tuple(signal)]

    def accepted(n: int) -> bool:
        procedure = Mnp(n, cut)
        report = mc_error_estimate(
            procedure, bank, budget, truths, trials_eff, sub_seed,
            cap=cap, workers=workers,
        )
        return all(
            report.metric(name).ci_high <= level for name, _, level in plan
        )

    n = 1
    while not accepted(n):
        n *= 2
        if n > cap:
            raise CalibrationError(
                "no fixed sample size within the horizon cap meets the budget",
                {"cap": cap, "trials": trials_eff},
            )
    lo, hi = n // 2, n
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if accepted(mid):
            hi = mid
        else:
            lo = mid
    return hi
