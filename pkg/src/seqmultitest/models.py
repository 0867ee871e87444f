"""Per-stream observation models.

A testing problem consists of J independent data streams.  Stream j produces
i.i.d. observations whose law is governed by a per-stream hypothesis pair:
either a simple null/alternative density pair (Gaussian mean shift, Bernoulli
success-probability flip) or a composite one-sided pair for a Gaussian mean
(theta <= 0 versus theta >= mu, with an indifference zone in between).

For simple pairs the module provides the log-likelihood-ratio increment
log(f1/f0)(x), the Kullback-Leibler numbers

    I1 = E1[log(f1/f0)],    I0 = E0[log(f0/f1)],

and the cumulant generating function Psi(t) = log E0[exp(t * llr)], all in
closed form.  Composite streams carry no single LLR; their adaptive
statistics live in :mod:`seqmultitest.statistics`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "GaussianMean",
    "Bernoulli",
    "CompositeGaussianMean",
    "StreamModel",
    "SimpleModel",
    "StreamBank",
    "TruthAssignment",
    "sample",
    "llr_increment",
    "kl_pair",
    "cgf",
]


@dataclass(frozen=True)
class GaussianMean:
    """Simple pair f0 = N(0, sigma^2) versus f1 = N(mu, sigma^2)."""

    mu: float
    sigma: float = 1.0

    def __post_init__(self) -> None:
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @property
    def snr(self) -> float:
        """Signal-to-noise ratio mu/sigma; the KL numbers equal snr^2/2."""
        return self.mu / self.sigma


@dataclass(frozen=True)
class Bernoulli:
    """Simple pair Bernoulli(p) versus Bernoulli(1-p), with p < 1/2."""

    p: float

    def __post_init__(self) -> None:
        # p < 1/2 keeps the alternative q = 1-p on the "success" side.
        if not 0.0 < self.p < 0.5:
            raise ValueError(f"p must lie in (0, 1/2), got {self.p}")

    @property
    def q(self) -> float:
        return 1.0 - self.p

    @property
    def log_odds(self) -> float:
        """log(q/p), the LLR increment magnitude of a single observation."""
        return math.log(self.q / self.p)


@dataclass(frozen=True)
class CompositeGaussianMean:
    """One-sided composite pair for the mean of N(theta, 1).

    H0: theta <= 0 versus H1: theta >= mu.  The gap (0, mu) is an
    indifference zone: truth assignments inside it are rejected.  ``n0``
    observations per stream are reserved up front to seed the running mean
    estimate; with n0 = 0 the deterministic ``theta_hat0`` seeds it instead.
    """

    mu: float
    n0: int = 0
    theta_hat0: float = 0.0

    def __post_init__(self) -> None:
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.n0 < 0:
            raise ValueError(f"n0 must be >= 0, got {self.n0}")
        # The initial estimate must itself be a valid parameter value.
        if self.n0 == 0 and 0.0 < self.theta_hat0 < self.mu:
            raise ValueError(
                f"theta_hat0={self.theta_hat0} falls in the gap (0, {self.mu})"
            )

    def kl_at(self, theta: float) -> float:
        """Distance of a parameter value to the *opposite* hypothesis set.

        For theta >= mu this is inf over theta' <= 0 of KL(theta, theta') =
        theta^2/2; for theta <= 0 it is (theta - mu)^2 / 2.
        """
        if theta >= self.mu:
            return 0.5 * theta * theta
        if theta <= 0.0:
            d = theta - self.mu
            return 0.5 * d * d
        raise ValueError(f"theta={theta} lies in the gap (0, {self.mu})")


SimpleModel = Union[GaussianMean, Bernoulli]
StreamModel = Union[GaussianMean, Bernoulli, CompositeGaussianMean]


def _require_simple(model: StreamModel) -> SimpleModel:
    if isinstance(model, CompositeGaussianMean):
        raise TypeError(
            "operation requires a simple hypothesis pair; composite streams "
            "use the adaptive statistics module"
        )
    return model


@dataclass(frozen=True)
class StreamBank:
    """The full bank of per-stream models for one testing problem."""

    models: tuple[StreamModel, ...]

    def __post_init__(self) -> None:
        if not self.models:
            raise ValueError("a stream bank needs at least one stream")
        kinds = {type(m) for m in self.models}
        if CompositeGaussianMean in kinds:
            if len(kinds) > 1:
                raise ValueError("composite and simple streams cannot be mixed")
            # One shared sampling clock: the initial sample is drawn once
            # for the whole bank, so n0 must agree across streams.
            n0s = {m.n0 for m in self.models if isinstance(m, CompositeGaussianMean)}
            if len(n0s) > 1:
                raise ValueError("composite streams must share one n0")

    @property
    def J(self) -> int:
        return len(self.models)

    @property
    def is_composite(self) -> bool:
        return isinstance(self.models[0], CompositeGaussianMean)

    @property
    def is_homogeneous(self) -> bool:
        return all(m == self.models[0] for m in self.models)

    def min_kl(self) -> float:
        """Smallest information number over streams and hypothesis sides.

        Used to size simulation horizons: every stopping rule considered here
        terminates at a rate no worse than the hardest single stream.
        """
        vals: list[float] = []
        for m in self.models:
            if isinstance(m, CompositeGaussianMean):
                # Boundary parameters are the slowest-drift truths.
                vals.append(m.kl_at(m.mu))
                vals.append(m.kl_at(0.0))
            else:
                i1, i0 = kl_pair(m)
                vals.extend((i1, i0))
        return min(vals)


@dataclass(frozen=True)
class TruthAssignment:
    """Ground truth for one simulated scenario.

    ``signals`` holds the (0-based) streams where the alternative is true.
    Composite banks additionally need one parameter value per stream in
    ``theta``, compatible with membership: theta[j] >= mu iff j in signals,
    theta[j] <= 0 iff j not in signals.
    """

    signals: frozenset[int]
    theta: tuple[float, ...] | None = None

    def signal_mask(self, J: int) -> np.ndarray:
        mask = np.zeros(J, dtype=bool)
        mask[sorted(self.signals)] = True
        return mask


def validate_truth(bank: StreamBank, truth: TruthAssignment) -> None:
    """Reject truth assignments inconsistent with the bank."""
    J = bank.J
    for j in truth.signals:
        if not 0 <= j < J:
            raise ValueError(f"signal stream {j} outside range [0, {J})")
    if bank.is_composite:
        if truth.theta is None:
            raise ValueError("composite banks need a theta per stream")
        if len(truth.theta) != J:
            raise ValueError(
                f"theta has length {len(truth.theta)}, expected {J}"
            )
        for j, (model, theta) in enumerate(zip(bank.models, truth.theta)):
            assert isinstance(model, CompositeGaussianMean)
            if 0.0 < theta < model.mu:
                raise ValueError(
                    f"stream {j}: theta={theta} lies in the gap (0, {model.mu})"
                )
            if (j in truth.signals) != (theta >= model.mu):
                raise ValueError(
                    f"stream {j}: theta={theta} inconsistent with signal "
                    f"membership {j in truth.signals}"
                )
    elif truth.theta is not None:
        raise ValueError("theta is only meaningful for composite banks")


def sample(
    model: StreamModel,
    truth: Union[bool, float],
    rng: np.random.Generator,
) -> float:
    """Draw one observation from a stream under the given truth.

    For simple models ``truth`` is the signal indicator; for composite
    models it is the parameter value theta.
    """
    if isinstance(model, GaussianMean):
        mean = model.mu if truth else 0.0
        return mean + model.sigma * rng.standard_normal()
    if isinstance(model, Bernoulli):
        prob = model.q if truth else model.p
        return float(rng.random() < prob)
    theta = float(truth)
    if 0.0 < theta < model.mu:
        raise ValueError(f"theta={theta} lies in the gap (0, {model.mu})")
    return theta + rng.standard_normal()


def llr_increment(model: StreamModel, x: float) -> float:
    """log(f1/f0) at a single observation, for simple pairs only."""
    model = _require_simple(model)
    if isinstance(model, GaussianMean):
        t = model.snr
        return t * t * (x / model.mu - 0.5)
    if x == 1.0:
        return model.log_odds
    if x == 0.0:
        return -model.log_odds
    raise ValueError(f"Bernoulli observation must be 0 or 1, got {x}")


def kl_pair(model: StreamModel) -> tuple[float, float]:
    """(I1, I0): the Kullback-Leibler numbers of a simple pair.

    Both shipped simple pairs are symmetric, so I1 = I0.
    """
    model = _require_simple(model)
    if isinstance(model, GaussianMean):
        info = 0.5 * model.snr**2
        return info, info
    p, q = model.p, model.q
    info = p * math.log(p / q) + q * math.log(q / p)
    return info, info


def cgf(model: StreamModel, t: float) -> float:
    """Cumulant generating function log E0[exp(t * llr(X))].

    Gaussian: I*t^2 - I*t with I = snr^2/2.  Bernoulli:
    log(p^(1-t) q^t + q^(1-t) p^t).  Both vanish at t = 0 and t = 1
    because 1 and the likelihood ratio both integrate to one under f0.
    """
    model = _require_simple(model)
    if isinstance(model, GaussianMean):
        info = 0.5 * model.snr**2
        return info * t * t - info * t
    p, q = model.p, model.q
    # Stable form: p^(1-t) q^t + q^(1-t) p^t = p*e^(t*r) + q*e^(-t*r).
    r = model.log_odds
    return math.log(p * math.exp(t * r) + q * math.exp(-t * r))
