"""Stopping rules and terminal decisions.

Each procedure is a small frozen parameter record plus a pure step
function.  A step function looks at the current ordered statistic view
and either returns the accepted-signal set (stop now) or None (keep
sampling).  The fixed-sample rule instead decides at its preset time.

Stream indices in decision sets are 0-based.  Thresholds a and b are on
the log scale and must be positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .models import CompositeGaussianMean, StreamBank
from .statistics import (
    AdaptiveState,
    LlrState,
    OrderedLlrView,
    adaptive_view,
    check_partial_sum,
    hat_partial_sum,
    sum_k_smallest_abs,
)

__all__ = [
    "SumIntersection",
    "Intersection",
    "AsymSumIntersection",
    "Leap",
    "Mnp",
    "LeapStar",
    "ProcedureSpec",
    "LABELS",
    "step_sum_intersection",
    "step_intersection",
    "step_hat_component",
    "step_check_component",
    "step_leap",
    "step_asym_sum_intersection",
    "decide_mnp",
    "decide_mnp_composite",
    "step_leap_star",
]


def _check_positive(name: str, value: float) -> None:
    if not value > 0.0:
        raise ValueError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class SumIntersection:
    """Stop when the k least significant streams jointly clear b.

    Controls the probability of k or more total errors (false positives
    and false negatives combined).
    """

    k: int
    b: float

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        _check_positive("b", self.b)


@dataclass(frozen=True)
class Intersection:
    """Stop when every stream has left the continuation band (-a, b)."""

    a: float
    b: float

    def __post_init__(self) -> None:
        _check_positive("a", self.a)
        _check_positive("b", self.b)


@dataclass(frozen=True)
class AsymSumIntersection:
    """Leading hat/check partial sums must clear b and a respectively.

    The zero-leap component on its own; controls k1 or more false
    positives at level tied to b and k2 or more false negatives at level
    tied to a.
    """

    k1: int
    k2: int
    a: float
    b: float

    def __post_init__(self) -> None:
        if self.k1 < 1 or self.k2 < 1:
            raise ValueError(f"k1 and k2 must be >= 1, got {self.k1}, {self.k2}")
        _check_positive("a", self.a)
        _check_positive("b", self.b)


@dataclass(frozen=True)
class Leap:
    """First passage over all leap components; decisions may leap over
    the sign boundary by reclassifying the weakest streams."""

    k1: int
    k2: int
    a: float
    b: float

    def __post_init__(self) -> None:
        if self.k1 < 1 or self.k2 < 1:
            raise ValueError(f"k1 and k2 must be >= 1, got {self.k1}, {self.k2}")
        _check_positive("a", self.a)
        _check_positive("b", self.b)


@dataclass(frozen=True)
class Mnp:
    """Fixed-sample rule: at time n accept stream j when its statistic
    strictly exceeds the per-stream slope h[j] * n.

    h entries may be -inf (always accept) or +inf (never accept), which
    gives up control on that stream in exchange for budget elsewhere.
    """

    n: int
    h: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        for hj in self.h:
            if math.isnan(hj):
                raise ValueError("h entries must not be NaN")


@dataclass(frozen=True)
class LeapStar:
    """Leap rule driven by adaptive statistics for composite streams."""

    k1: int
    k2: int
    a: float
    b: float

    def __post_init__(self) -> None:
        if self.k1 < 1 or self.k2 < 1:
            raise ValueError(f"k1 and k2 must be >= 1, got {self.k1}, {self.k2}")
        _check_positive("a", self.a)
        _check_positive("b", self.b)


ProcedureSpec = (
    SumIntersection | Intersection | AsymSumIntersection | Leap | Mnp | LeapStar
)

# Config-file labels for each rule.
LABELS: dict[str, type] = {
    "sum_intersection": SumIntersection,
    "intersection": Intersection,
    "asym_sum_intersection": AsymSumIntersection,
    "leap": Leap,
    "mnp": Mnp,
    "leap_star": LeapStar,
}


def step_sum_intersection(spec: SumIntersection, view: OrderedLlrView) -> frozenset[int] | None:
    """Accept the positive streams once the k smallest |statistics| sum to b."""
    if sum_k_smallest_abs(view, spec.k) >= spec.b:
        return frozenset(view.hat_streams)
    return None


def step_intersection(spec: Intersection, view: OrderedLlrView) -> frozenset[int] | None:
    """Accept the positive streams once no statistic remains in (-a, b).

    An empty side imposes no constraint: its smallest member is +inf.
    """
    if view.hat_at(1) >= spec.b and view.check_at(1) >= spec.a:
        return frozenset(view.hat_streams)
    return None


def step_hat_component(
    k1: int, k2: int, a: float, b: float, ell: int, view: OrderedLlrView
) -> frozenset[int] | None:
    """Component that leaps ell streams from the negative to the positive side.

    Fires when hat ranks 1..k1-ell reach b and check ranks ell+1..ell+k2
    reach a; the decision adds the ell weakest check streams (as many as
    exist) to the positives.
    """
    if not 0 <= ell < k1:
        raise ValueError(f"ell must lie in [0, {k1}), got {ell}")
    if (
        hat_partial_sum(view, 1, k1 - ell) >= b
        and check_partial_sum(view, ell + 1, ell + k2) >= a
    ):
        extra = view.check_streams[: min(ell, view.q)]
        return frozenset(view.hat_streams) | frozenset(extra)
    return None


def step_check_component(
    k1: int, k2: int, a: float, b: float, ell: int, view: OrderedLlrView
) -> frozenset[int] | None:
    """Component that leaps ell streams from the positive to the negative side.

    Fires when hat ranks ell+1..ell+k1 reach b and check ranks 1..k2-ell
    reach a; the decision drops the ell weakest positive streams.
    """
    if not 1 <= ell < k2:
        raise ValueError(f"ell must lie in [1, {k2}), got {ell}")
    if (
        hat_partial_sum(view, ell + 1, ell + k1) >= b
        and check_partial_sum(view, 1, k2 - ell) >= a
    ):
        return frozenset(view.hat_streams[ell:])
    return None


def step_asym_sum_intersection(
    spec: AsymSumIntersection, view: OrderedLlrView
) -> frozenset[int] | None:
    return step_hat_component(spec.k1, spec.k2, spec.a, spec.b, 0, view)


def step_leap(spec: Leap, view: OrderedLlrView) -> frozenset[int] | None:
    """Fire on the first component to clear; ties merge their decisions."""
    fired: list[frozenset[int]] = []
    for ell in range(spec.k1):
        d = step_hat_component(spec.k1, spec.k2, spec.a, spec.b, ell, view)
        if d is not None:
            fired.append(d)
    for ell in range(1, spec.k2):
        d = step_check_component(spec.k1, spec.k2, spec.a, spec.b, ell, view)
        if d is not None:
            fired.append(d)
    if not fired:
        return None
    return frozenset().union(*fired)


def decide_mnp(spec: Mnp, state: LlrState) -> frozenset[int]:
    """Threshold the LLR vector at its preset time against slopes h."""
    if state.n != spec.n:
        raise ValueError(f"decision is taken at n={spec.n}, state is at n={state.n}")
    if len(spec.h) != len(state.lam):
        raise ValueError("h must have one entry per stream")
    out = []
    for j, (lam, hj) in enumerate(zip(state.lam, spec.h)):
        if hj == -math.inf:
            out.append(j)
        elif hj != math.inf and lam > spec.n * hj:
            out.append(j)
    return frozenset(out)


def decide_mnp_composite(
    spec: Mnp, state: AdaptiveState, bank: StreamBank
) -> frozenset[int]:
    """Fixed-sample rule for composite streams: threshold the running mean.

    h[j] is on the observation scale here, typically the midpoint mu/2.
    """
    if state.n != spec.n:
        raise ValueError(f"decision is taken at n={spec.n}, state is at n={state.n}")
    if len(spec.h) != state.J:
        raise ValueError("h must have one entry per stream")
    assert isinstance(bank.models[0], CompositeGaussianMean)
    out = []
    for j, hj in enumerate(spec.h):
        if hj == -math.inf:
            out.append(j)
        elif hj != math.inf and state.xbar(j) > hj:
            out.append(j)
    return frozenset(out)


def step_leap_star(
    spec: LeapStar, state: AdaptiveState, bank: StreamBank
) -> frozenset[int] | None:
    """Leap step over the adaptive statistics.

    While any stream's statistic is undefined the procedure must keep
    sampling, whatever the defined streams show.
    """
    view = adaptive_view(state, bank)
    if view is None:
        return None
    inner = Leap(spec.k1, spec.k2, spec.a, spec.b)
    return step_leap(inner, view)
