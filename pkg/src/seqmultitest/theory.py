"""Closed-form quantities of the asymptotic theory.

Information numbers, ordered partial sums with infinity sentinels, the
first-order optimal expected-sample-size limits, Chernoff information,
and the fixed-sample comparison constants.

All set arguments take 0-based stream indices.  Profile entries may be
`fractions.Fraction` (or int), in which case sums, minima and reciprocal
coefficients stay exact; the only rounding then happens in the final
multiplication by a log-budget.  Rank arguments into ordered sequences
are 1-based, and a rank beyond the available streams yields +inf, which
drops the corresponding term after taking reciprocals (1/inf = 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .models import Bernoulli, GaussianMean, SimpleModel, StreamBank, kl_pair

__all__ = [
    "Num",
    "InformationProfile",
    "GmisBudget",
    "GfwerBudget",
    "ErrorBudget",
    "validate_budget",
    "pairwise_info",
    "d_a_k",
    "d1",
    "d0",
    "l_hat",
    "l_check",
    "big_l",
    "chernoff_phi",
    "chernoff_info",
    "b_of_k",
    "solve_h_d",
    "fixed_sample_ratios",
]

Num = int | float | Fraction


@dataclass(frozen=True)
class InformationProfile:
    """Per-stream information numbers, optionally with Chernoff constants.

    ``models`` may retain the generating models; the fixed-sample
    comparisons need the full rate function, which the summary numbers
    alone cannot provide.
    """

    i1: tuple[Num, ...]
    i0: tuple[Num, ...]
    chernoff: tuple[float, ...] | None = None
    models: tuple[SimpleModel, ...] | None = None

    def __post_init__(self) -> None:
        if len(self.i1) != len(self.i0):
            raise ValueError("i1 and i0 must have one entry per stream")
        if not self.i1:
            raise ValueError("profile needs at least one stream")
        if any(v <= 0 for v in self.i1 + self.i0):
            raise ValueError("information numbers must be positive")
        if self.chernoff is not None and len(self.chernoff) != len(self.i1):
            raise ValueError("chernoff must have one entry per stream")

    @property
    def J(self) -> int:
        return len(self.i1)

    @classmethod
    def from_bank(cls, bank: StreamBank) -> "InformationProfile":
        if bank.is_composite:
            raise TypeError("information profiles are defined for simple-model banks")
        pairs = [kl_pair(m) for m in bank.models]
        cher = tuple(chernoff_info(m) for m in bank.models)
        return cls(
            i1=tuple(p[0] for p in pairs),
            i0=tuple(p[1] for p in pairs),
            chernoff=cher,
            models=tuple(bank.models),  # type: ignore[arg-type]
        )


@dataclass(frozen=True)
class GmisBudget:
    """Tolerate up to k-1 total mistakes except with probability alpha."""

    k: int
    alpha: float

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class GfwerBudget:
    """Tolerate up to k1-1 false positives except with probability alpha
    and up to k2-1 false negatives except with probability beta."""

    k1: int
    k2: int
    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if self.k1 < 1 or self.k2 < 1:
            raise ValueError(f"k1 and k2 must be >= 1, got {self.k1}, {self.k2}")
        for name, value in (("alpha", self.alpha), ("beta", self.beta)):
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")


ErrorBudget = GmisBudget | GfwerBudget


def validate_budget(budget: ErrorBudget, J: int) -> None:
    """Check the J-dependent budget invariants."""
    if isinstance(budget, GmisBudget):
        if not budget.k < J:
            raise ValueError(f"k must be < J={J}, got {budget.k}")
    else:
        if budget.k1 + budget.k2 > J:
            raise ValueError(
                f"k1 + k2 must be <= J={J}, got {budget.k1} + {budget.k2}"
            )


def _check_subset(name: str, s: frozenset[int], J: int) -> None:
    if not all(isinstance(j, int) and 0 <= j < J for j in s):
        raise ValueError(f"{name} must be a subset of 0..{J - 1}")


def pairwise_info(
    profile: InformationProfile, A: frozenset[int], C: frozenset[int]
) -> Num:
    """Information distance between truth A and decision C.

    Sum of I1 over missed signals (A minus C) and I0 over false alarms
    (C minus A); the rate at which configuration A distinguishes itself
    from any path that ends in decision C.
    """
    _check_subset("A", A, profile.J)
    _check_subset("C", C, profile.J)
    return sum(profile.i1[j] for j in A - C) + sum(profile.i0[j] for j in C - A)


def d_a_k(profile: InformationProfile, A: frozenset[int], k: int) -> Num:
    """Sum of the k smallest information numbers under truth A.

    Equals the minimum of pairwise_info(A, C) over all C at symmetric
    difference at least k from A; the reciprocal is the first-order
    optimal ESS slope for the total-mistakes criterion.
    """
    _check_subset("A", A, profile.J)
    if not 1 <= k <= profile.J:
        raise ValueError(f"k must lie in [1, {profile.J}], got {k}")
    pool = [profile.i1[j] if j in A else profile.i0[j] for j in range(profile.J)]
    pool.sort()
    return sum(pool[:k])


def _ordered_partial(values: list[Num], lo: int, hi: int, J: int) -> Num:
    if not 1 <= lo <= hi <= J:
        raise ValueError(f"invalid rank range [{lo}, {hi}] for J={J}")
    if hi > len(values):
        return math.inf
    values.sort()
    return sum(values[lo - 1 : hi])


def d1(profile: InformationProfile, B: frozenset[int], lo: int, hi: int) -> Num:
    """Sum of ranks lo..hi of the ascending I1 values over B; +inf past |B|."""
    _check_subset("B", B, profile.J)
    return _ordered_partial([profile.i1[j] for j in B], lo, hi, profile.J)


def d0(profile: InformationProfile, B: frozenset[int], lo: int, hi: int) -> Num:
    """Sum of ranks lo..hi of the ascending I0 values over B; +inf past |B|."""
    _check_subset("B", B, profile.J)
    return _ordered_partial([profile.i0[j] for j in B], lo, hi, profile.J)


def _recip(value: Num) -> Num:
    """Reciprocal with 1/inf = 0; exact for Fraction and int inputs."""
    if value == math.inf:
        return 0
    if isinstance(value, (int, Fraction)):
        return Fraction(1, 1) / value
    return 1.0 / value


def _hat_denominators(
    profile: InformationProfile, A: frozenset[int], ell: int, k1: int, k2: int
) -> tuple[Num, Num]:
    Ac = frozenset(range(profile.J)) - A
    return (
        d1(profile, A, 1, k1 - ell),
        d0(profile, Ac, ell + 1, ell + k2),
    )


def _check_denominators(
    profile: InformationProfile, A: frozenset[int], ell: int, k1: int, k2: int
) -> tuple[Num, Num]:
    Ac = frozenset(range(profile.J)) - A
    return (
        d1(profile, A, ell + 1, ell + k1),
        d0(profile, Ac, 1, k2 - ell),
    )


def l_hat(
    profile: InformationProfile,
    A: frozenset[int],
    ell: int,
    alpha: float,
    beta: float,
    k1: int,
    k2: int,
) -> float:
    """First-order time for the component leaping ell streams to positive.

    Max of the two budget-over-rate terms; a term whose rate is +inf
    drops out.  If both drop out the component is vacuous and the value
    is 0, which callers must treat as "no constraint".
    """
    if not 0 <= ell < k1:
        raise ValueError(f"ell must lie in [0, {k1}), got {ell}")
    d1v, d0v = _hat_denominators(profile, A, ell, k1, k2)
    return max(abs(math.log(alpha)) * _recip(d1v), abs(math.log(beta)) * _recip(d0v))


def l_check(
    profile: InformationProfile,
    A: frozenset[int],
    ell: int,
    alpha: float,
    beta: float,
    k1: int,
    k2: int,
) -> float:
    """First-order time for the component leaping ell streams to negative."""
    if not 0 <= ell < k2:
        raise ValueError(f"ell must lie in [0, {k2}), got {ell}")
    d1v, d0v = _check_denominators(profile, A, ell, k1, k2)
    return max(abs(math.log(alpha)) * _recip(d1v), abs(math.log(beta)) * _recip(d0v))


def big_l(
    profile: InformationProfile, A: frozenset[int], budget: GfwerBudget
) -> float:
    """First-order optimal ESS under the two-sided familywise budget.

    Minimum over all leap components of their first-order times.
    Components whose both rates are +inf impose no constraint and are
    skipped; if every component is vacuous the budget is degenerate.
    """
    if not isinstance(budget, GfwerBudget):
        raise TypeError("big_l is defined for the two-sided familywise budget")
    validate_budget(budget, profile.J)
    _check_subset("A", A, profile.J)
    k1, k2 = budget.k1, budget.k2
    candidates: list[float] = []
    for ell in range(k1):
        d1v, d0v = _hat_denominators(profile, A, ell, k1, k2)
        if d1v == math.inf and d0v == math.inf:
            continue
        candidates.append(
            l_hat(profile, A, ell, budget.alpha, budget.beta, k1, k2)
        )
    for ell in range(1, k2):
        d1v, d0v = _check_denominators(profile, A, ell, k1, k2)
        if d1v == math.inf and d0v == math.inf:
            continue
        candidates.append(
            l_check(profile, A, ell, budget.alpha, budget.beta, k1, k2)
        )
    if not candidates:
        raise ValueError("all components are vacuous for this budget")
    return min(candidates)


# ---------------------------------------------------------------------------
# Chernoff information and the generalized Chernoff root.
# ---------------------------------------------------------------------------


def _bernoulli_psi(p: float, theta: float) -> float:
    """Cumulant generating function of the LLR increment, overflow-safe."""
    q = 1.0 - p
    r = math.log(q / p)
    if theta >= 0.0:
        return theta * r + math.log(p + q * math.exp(-2.0 * theta * r))
    return -theta * r + math.log(p * math.exp(2.0 * theta * r) + q)


def _bernoulli_psi_prime(p: float, theta: float) -> float:
    q = 1.0 - p
    r = math.log(q / p)
    if theta >= 0.0:
        w = q * math.exp(-2.0 * theta * r)
        return r * (p - w) / (p + w)
    w = p * math.exp(2.0 * theta * r)
    return r * (w - q) / (w + q)


def _bernoulli_phi(p: float, z: float) -> float:
    """Legendre transform sup_theta {z*theta - Psi(theta)} for a Bernoulli LLR.

    The increment is bounded by r = log((1-p)/p), so the transform is
    +inf beyond |z| = r and finite on the closed interval.  Interior
    values come from golden-section search followed by Newton steps on
    the stationarity condition.
    """
    q = 1.0 - p
    r = math.log(q / p)
    if abs(z) > r:
        return math.inf
    if z == r:
        return -math.log(p)
    if z == -r:
        return -math.log(q)

    def objective(theta: float) -> float:
        return z * theta - _bernoulli_psi(p, theta)

    # Golden-section on a bracket that contains the maximizer for any
    # interior z of practical interest.
    lo, hi = -10.0, 10.0
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc, fd = objective(c), objective(d)
    while hi - lo > 1e-7:
        if fc > fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = objective(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = objective(d)
    theta = 0.5 * (lo + hi)
    # Newton on Psi'(theta) = z; Psi'' = r^2 - Psi'^2 in closed form.
    for _ in range(50):
        g = _bernoulli_psi_prime(p, theta)
        curvature = r * r - g * g
        if curvature <= 0.0:
            break
        step = (g - z) / curvature
        theta -= step
        if abs(step) < 1e-15:
            break
    return z * theta - _bernoulli_psi(p, theta)


def chernoff_phi(model: SimpleModel, z: float) -> float:
    """Large-deviation rate of the per-stream LLR at drift z.

    Gaussian mean shift has the closed form (z + I)^2 / (4 I); the
    Bernoulli case is solved numerically.  Returns +inf where the drift
    is unachievable.
    """
    if isinstance(model, GaussianMean):
        i = kl_pair(model)[0]
        return (z + i) ** 2 / (4.0 * i)
    if isinstance(model, Bernoulli):
        return _bernoulli_phi(model.p, z)
    raise TypeError(f"no rate function for model {type(model).__name__}")


def chernoff_info(model: SimpleModel) -> float:
    """Best fixed-sample error exponent of the single-stream test: Phi(0)."""
    return chernoff_phi(model, 0.0)


def b_of_k(profile: InformationProfile, k: int) -> float:
    """Sum of the k smallest per-stream Chernoff constants."""
    if profile.chernoff is None:
        raise ValueError("profile carries no Chernoff constants")
    if not 1 <= k <= profile.J:
        raise ValueError(f"k must lie in [1, {profile.J}], got {k}")
    return sum(sorted(profile.chernoff)[:k])


def solve_h_d(model: SimpleModel, d: float) -> tuple[float, float]:
    """Root of Phi(h)/d = Phi(h) - h in (-I0, I1), with Phi at the root.

    g(h) = Phi(h)/d - Phi(h) + h is strictly increasing on the interval
    for every d > 0, negative at -I0 (where Phi vanishes) and positive
    at I1 (where Phi equals I1), so bisection applies.
    """
    if not d > 0.0:
        raise ValueError(f"d must be positive, got {d}")
    i1, i0 = kl_pair(model)

    def g(h: float) -> float:
        phi = chernoff_phi(model, h)
        return phi / d - phi + h

    lo, hi = -i0, i1
    g_lo, g_hi = g(lo), g(hi)
    if not (g_lo < 0.0 < g_hi):
        raise ValueError(
            f"no sign change of the crossing identity on ({lo}, {hi}) "
            f"for this model and d={d}"
        )
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        g_mid = g(mid)
        if g_mid == 0.0:
            return mid, chernoff_phi(model, mid)
        if g_mid < 0.0:
            lo = mid
        else:
            hi = mid
    h = 0.5 * (lo + hi)
    return h, chernoff_phi(model, h)


def fixed_sample_ratios(
    profile: InformationProfile, A: frozenset[int], budget: ErrorBudget
) -> dict:
    """First-order cost of the best fixed-sample rule versus sequential.

    For the total-mistakes budget: the ratio D_A(k)/B(k) and the
    proven-lower-bound constant D_A(k)/B(2k-1).  For the familywise
    budget with k1 = k2 and alpha = beta^d: the slope d/(k1*Phi(h_d)) of
    fixed-sample size over |log beta|, with lower-bound constant
    d/((2k1-1)*Phi(h_d)).  Lower-bound constants whose order 2k-1
    exceeds J are reported as None.
    """
    validate_budget(budget, profile.J)
    _check_subset("A", A, profile.J)
    if isinstance(budget, GmisBudget):
        k = budget.k
        d_val = float(d_a_k(profile, A, k))
        bk = b_of_k(profile, k)
        lower = (
            d_val / b_of_k(profile, 2 * k - 1) if 2 * k - 1 <= profile.J else None
        )
        return {
            "mode": "gmis",
            "d_a_k": d_val,
            "b_k": bk,
            "ratio": d_val / bk,
            "lower_bound_constant": lower,
        }
    if profile.models is None:
        raise ValueError("familywise ratios need the generating models")
    if len(set(profile.models)) != 1:
        raise ValueError("familywise ratios require a homogeneous profile")
    if budget.k1 != budget.k2:
        raise ValueError("familywise ratios require k1 = k2")
    model = profile.models[0]
    d = math.log(budget.alpha) / math.log(budget.beta)
    h, phi_h = solve_h_d(model, d)
    k1 = budget.k1
    lower = (
        d / ((2 * k1 - 1) * phi_h) if 2 * k1 - 1 <= profile.J else None
    )
    return {
        "mode": "gfwer",
        "d": d,
        "h_d": h,
        "phi_at_h": phi_h,
        "ratio": d / (k1 * phi_h),
        "lower_bound_constant": lower,
    }
