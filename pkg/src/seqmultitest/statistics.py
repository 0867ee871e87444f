"""Per-path test statistics.

Two families of running state are maintained for a bank of J streams:

* :class:`LlrState` accumulates the log-likelihood-ratio vector
  lambda^j(n) for simple hypothesis pairs and exposes three ordered views
  of it (see :class:`OrderedLlrView`).

* :class:`AdaptiveState` tracks, for composite Gaussian-mean streams, the
  adaptive log-likelihood ell_*^j(n) built by plugging yesterday's
  parameter estimate into today's likelihood term, together with the
  generalized log-likelihoods ell_0, ell_1 under each hypothesis set.  The
  adaptive statistic lambda_*^j(n) derived from them can be *undefined* at
  some times, which blocks stopping.

Ranks into ordered views are 1-based throughout, and a rank past the end
of a view yields +inf (IEEE infinity): a partial sum that touches such a
rank is exactly +inf, which makes the corresponding stopping condition
vacuously true.  Sorting is stable, with ties broken by stream index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

from .models import CompositeGaussianMean, StreamBank

__all__ = [
    "LlrState",
    "OrderedLlrView",
    "update",
    "sum_k_smallest_abs",
    "hat_partial_sum",
    "check_partial_sum",
    "AdaptiveState",
    "initial_adaptive_state",
    "adaptive_update_composite",
    "lambda_star",
    "adaptive_view",
]


@dataclass(frozen=True)
class OrderedLlrView:
    """Ordered views of a statistic vector at a fixed time.

    tilde: all |values| ascending.  hat: the strictly positive values
    ascending (there are p of them).  check: the absolute values of the
    non-positive entries ascending (q = J - p of them).  Zero counts as
    non-positive, so a zero statistic lands in the check view.
    """

    n: int
    tilde_values: tuple[float, ...]
    tilde_streams: tuple[int, ...]
    hat_values: tuple[float, ...]
    hat_streams: tuple[int, ...]
    check_values: tuple[float, ...]
    check_streams: tuple[int, ...]

    @property
    def J(self) -> int:
        return len(self.tilde_values)

    @property
    def p(self) -> int:
        return len(self.hat_values)

    @property
    def q(self) -> int:
        return len(self.check_values)

    def hat_at(self, rank: int) -> float:
        """rank-th smallest positive value (1-based); +inf past rank p."""
        if rank < 1:
            raise ValueError(f"rank must be >= 1, got {rank}")
        if rank > self.p:
            return math.inf
        return self.hat_values[rank - 1]

    def check_at(self, rank: int) -> float:
        """rank-th smallest |non-positive| (1-based); +inf past rank q."""
        if rank < 1:
            raise ValueError(f"rank must be >= 1, got {rank}")
        if rank > self.q:
            return math.inf
        return self.check_values[rank - 1]


def _build_view(n: int, lam: tuple[float, ...]) -> OrderedLlrView:
    J = len(lam)
    order = sorted(range(J), key=lambda j: (abs(lam[j]), j))
    pos = sorted((j for j in range(J) if lam[j] > 0.0), key=lambda j: (lam[j], j))
    nonpos = sorted(
        (j for j in range(J) if lam[j] <= 0.0), key=lambda j: (-lam[j], j)
    )
    return OrderedLlrView(
        n=n,
        tilde_values=tuple(abs(lam[j]) for j in order),
        tilde_streams=tuple(order),
        hat_values=tuple(lam[j] for j in pos),
        hat_streams=tuple(pos),
        check_values=tuple(-lam[j] for j in nonpos),
        check_streams=tuple(nonpos),
    )


@dataclass(frozen=True)
class LlrState:
    """Running LLR vector after n observation rounds."""

    n: int
    lam: tuple[float, ...]

    @classmethod
    def zeros(cls, J: int) -> "LlrState":
        return cls(n=0, lam=(0.0,) * J)

    @cached_property
    def view(self) -> OrderedLlrView:
        return _build_view(self.n, self.lam)


def update(state: LlrState, increments: tuple[float, ...]) -> LlrState:
    """Accumulate one round of LLR increments."""
    if len(increments) != len(state.lam):
        raise ValueError(
            f"expected {len(state.lam)} increments, got {len(increments)}"
        )
    lam = tuple(a + b for a, b in zip(state.lam, increments))
    return LlrState(n=state.n + 1, lam=lam)


def sum_k_smallest_abs(view: OrderedLlrView, k: int) -> float:
    """Sum of the k smallest |values|, the least significant evidence."""
    if not 1 <= k <= view.J:
        raise ValueError(f"k must lie in [1, {view.J}], got {k}")
    return sum(view.tilde_values[:k])


def _ranged_sum(values: tuple[float, ...], lo: int, hi: int, J: int) -> float:
    if not 1 <= lo <= hi <= J:
        raise ValueError(f"invalid rank range [{lo}, {hi}] for J={J}")
    if hi > len(values):
        return math.inf
    return sum(values[lo - 1 : hi])


def hat_partial_sum(view: OrderedLlrView, lo: int, hi: int) -> float:
    """Sum of hat ranks lo..hi inclusive; +inf if any rank exceeds p."""
    return _ranged_sum(view.hat_values, lo, hi, view.J)


def check_partial_sum(view: OrderedLlrView, lo: int, hi: int) -> float:
    """Sum of check ranks lo..hi inclusive; +inf if any rank exceeds q."""
    return _ranged_sum(view.check_values, lo, hi, view.J)


# ---------------------------------------------------------------------------
# Adaptive statistics for composite Gaussian-mean streams.
# ---------------------------------------------------------------------------


def _project_estimate(xbar: float, mu: float) -> float:
    """Maximum-likelihood value over the union of the two hypothesis sets.

    The unrestricted maximizer is the running mean; inside the gap (0, mu)
    the likelihood n*(theta*xbar - theta^2/2) is larger at the endpoint
    nearer xbar, with the tie at mu/2 going to the mu side.
    """
    if xbar <= 0.0 or xbar >= mu:
        return xbar
    return 0.0 if xbar < 0.5 * mu else mu


@dataclass(frozen=True)
class AdaptiveState:
    """Adaptive log-likelihood state for a composite bank after n rounds.

    ``theta_prev`` is the estimate formed after round n (or from the
    initial sample when n = 0); it prices the *next* observation in
    ell_*.  ``sum_x`` excludes the initial sample, which enters only
    through ``init_sum`` in the estimator.
    """

    n: int
    sum_x: tuple[float, ...]
    init_sum: tuple[float, ...]
    ell_star: tuple[float, ...]
    theta_prev: tuple[float, ...]

    @property
    def J(self) -> int:
        return len(self.sum_x)

    def xbar(self, j: int) -> float:
        if self.n == 0:
            raise ValueError("no observations yet")
        return self.sum_x[j] / self.n

    def ell0(self, j: int, bank: StreamBank) -> float:
        """sup over theta <= 0 of the log-likelihood n*(theta*xbar - theta^2/2)."""
        xb = self.xbar(j)
        if xb <= 0.0:
            return 0.5 * self.n * xb * xb
        return 0.0

    def ell1(self, j: int, bank: StreamBank) -> float:
        """sup over theta >= mu of the log-likelihood."""
        model = bank.models[j]
        assert isinstance(model, CompositeGaussianMean)
        xb = self.xbar(j)
        if xb >= model.mu:
            return 0.5 * self.n * xb * xb
        return self.n * (model.mu * xb - 0.5 * model.mu * model.mu)


def initial_adaptive_state(
    bank: StreamBank,
    initial_observations: tuple[tuple[float, ...], ...] = (),
) -> AdaptiveState:
    """State at n = 0, seeding theta_prev from the initial sample.

    ``initial_observations`` holds n0 rows of J values.  With n0 = 0 the
    deterministic per-stream theta_hat0 seeds the estimate instead.
    """
    if not bank.is_composite:
        raise TypeError("adaptive state requires a composite bank")
    J = bank.J
    model0 = bank.models[0]
    assert isinstance(model0, CompositeGaussianMean)
    n0 = model0.n0
    if len(initial_observations) != n0:
        raise ValueError(
            f"expected {n0} initial rows, got {len(initial_observations)}"
        )
    init_sum = tuple(
        sum(row[j] for row in initial_observations) for j in range(J)
    )
    theta0 = []
    for j, model in enumerate(bank.models):
        assert isinstance(model, CompositeGaussianMean)
        if n0 > 0:
            theta0.append(_project_estimate(init_sum[j] / n0, model.mu))
        else:
            theta0.append(model.theta_hat0)
    return AdaptiveState(
        n=0,
        sum_x=(0.0,) * J,
        init_sum=init_sum,
        ell_star=(0.0,) * J,
        theta_prev=tuple(theta0),
    )


def adaptive_update_composite(
    state: AdaptiveState,
    observations: tuple[float, ...],
    bank: StreamBank,
) -> AdaptiveState:
    """Advance the adaptive state by one observation round.

    The new observation is priced at yesterday's estimate, then the
    estimate is refreshed to the projected running mean over all data
    including the initial sample.
    """
    if len(observations) != state.J:
        raise ValueError(
            f"expected {state.J} observations, got {len(observations)}"
        )
    n = state.n + 1
    ell_star = []
    sum_x = []
    theta_next = []
    for j, model in enumerate(bank.models):
        assert isinstance(model, CompositeGaussianMean)
        x = observations[j]
        th = state.theta_prev[j]
        ell_star.append(state.ell_star[j] + x * th - 0.5 * th * th)
        s = state.sum_x[j] + x
        sum_x.append(s)
        total = state.init_sum[j] + s
        theta_next.append(_project_estimate(total / (model.n0 + n), model.mu))
    return AdaptiveState(
        n=n,
        sum_x=tuple(sum_x),
        init_sum=state.init_sum,
        ell_star=tuple(ell_star),
        theta_prev=tuple(theta_next),
    )


def lambda_star(state: AdaptiveState, j: int, bank: StreamBank) -> float | None:
    """The adaptive statistic for stream j, or None when undefined.

    Positive branch: ell_* - ell_0 when ell_0 is strictly the smallest of
    the three quantities on the H1-favoring side; negative branch
    symmetrically.  When neither strict case-split holds the statistic is
    undefined and the procedures must not stop at this time.
    """
    if state.n == 0:
        return None
    e0 = state.ell0(j, bank)
    e1 = state.ell1(j, bank)
    es = state.ell_star[j]
    if e0 < e1 and e0 < es:
        return es - e0
    if e1 < e0 and e1 < es:
        return -(es - e1)
    return None


def adaptive_view(state: AdaptiveState, bank: StreamBank) -> OrderedLlrView | None:
    """Ordered views over the adaptive statistics, or None if any is undefined."""
    lam = []
    for j in range(state.J):
        value = lambda_star(state, j, bank)
        if value is None:
            return None
        lam.append(value)
    return _build_view(state.n, tuple(lam))
