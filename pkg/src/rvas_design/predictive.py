"""Closed-form predictive counts under the three-parameter beta-Bernoulli model.

Given ``n_pilot`` samples called with detection probability ``phi_pilot``,
the number of new variants seen exactly ``k`` times among ``m_follow``
further samples called with ``phi_follow`` is Poisson with mean

    gamma_k = mass * C(M, k) * phi_follow^k * (1 - sigma)_{k-1} / (1 + c)_{k-1}
              * E[(1 - phi_follow B)^(M - k) (1 - phi_pilot B)^N],

with B ~ Beta(k - sigma, c + sigma) and (a)_n the rising factorial. The
prefactor follows from integrating the Levy intensity
``theta^(-1-sigma) (1-theta)^(c+sigma-1)`` against the binomial k-ton
probability.
"""

from dataclasses import dataclass
import math

from scipy import special

from .exceptions import DegenerateError, DomainError
from .numerics import DEFAULT_TOL, log_beta_expectation_power, log_rising_factorial

__all__ = [
    "PriorParams",
    "KtonPrediction",
    "gamma_k",
    "cumulative_gamma",
    "per_sample_kton_rate",
    "expected_new_variants",
    "excess_ratio",
]


@dataclass(frozen=True)
class PriorParams:
    """Hyperparameters of the three-parameter beta process."""

    mass: float
    concentration: float
    discount: float

    def __post_init__(self):
        if not self.mass > 0:
            raise DomainError(f"mass must be > 0, got {self.mass}")
        if not 0 <= self.discount < 1:
            raise DomainError(f"discount must lie in [0, 1), got {self.discount}")
        if not self.concentration > -self.discount:
            raise DomainError(
                f"concentration must exceed -discount ({-self.discount}), got {self.concentration}"
            )

    def scaled(self, factor):
        return PriorParams(self.mass * factor, self.concentration, self.discount)


@dataclass(frozen=True)
class KtonPrediction:
    frequency: int
    n_pilot: int
    m_follow: int
    phi_pilot: float
    phi_follow: float
    gamma: float

    def __post_init__(self):
        if not self.gamma >= 0:
            raise DomainError(f"gamma must be >= 0, got {self.gamma}")
        if not 1 <= self.frequency <= self.m_follow:
            raise DomainError(
                f"frequency must lie in [1, m_follow={self.m_follow}], got {self.frequency}"
            )


def _check_probability(name, value):
    if not 0 <= value <= 1:
        raise DomainError(f"{name} must lie in [0, 1], got {value}")


def _check_design(n_pilot, m_follow):
    if int(n_pilot) != n_pilot or n_pilot < 0:
        raise DomainError(f"n_pilot must be a nonnegative integer, got {n_pilot}")
    if int(m_follow) != m_follow or m_follow < 1:
        raise DomainError(f"m_follow must be a positive integer, got {m_follow}")


def _log_binom(n, k):
    return float(special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1))


def gamma_k(prior, n_pilot, m_follow, k, phi_pilot, phi_follow, tol=DEFAULT_TOL):
    """Poisson mean of the number of new variants seen exactly ``k`` times."""
    _check_design(n_pilot, m_follow)
    if int(k) != k or not 1 <= k <= m_follow:
        raise DomainError(f"k must be an integer in [1, {m_follow}], got {k}")
    _check_probability("phi_pilot", phi_pilot)
    _check_probability("phi_follow", phi_follow)
    n_pilot, m_follow, k = int(n_pilot), int(m_follow), int(k)

    if phi_follow == 0:
        value = 0.0
    else:
        sigma, c = prior.discount, prior.concentration
        # mass stays outside the exponential so gamma is exactly linear in it
        log_rest = (
            _log_binom(m_follow, k)
            + k * math.log(phi_follow)
            + log_rising_factorial(1.0 - sigma, k - 1)
            - log_rising_factorial(1.0 + c, k - 1)
            + log_beta_expectation_power(
                k - sigma, c + sigma, phi_follow, m_follow - k, phi_pilot, n_pilot, tol
            )
        )
        value = prior.mass * math.exp(log_rest)
    return KtonPrediction(k, n_pilot, m_follow, phi_pilot, phi_follow, value)


def cumulative_gamma(prior, n_pilot, m_follow, k, phi_pilot, phi_follow, tol=DEFAULT_TOL):
    """Expected number of new variants seen between 1 and ``k`` times."""
    return math.fsum(
        gamma_k(prior, n_pilot, m_follow, j, phi_pilot, phi_follow, tol).gamma
        for j in range(1, int(k) + 1)
    )


def kton_mean(prior, n_pilot, m_follow, k, phi_pilot, phi_follow, mode="exact", tol=DEFAULT_TOL):
    """Dispatch between exactly-``k`` and at-most-``k`` expectations."""
    if mode == "exact":
        return gamma_k(prior, n_pilot, m_follow, k, phi_pilot, phi_follow, tol).gamma
    if mode == "at_most":
        return cumulative_gamma(prior, n_pilot, m_follow, k, phi_pilot, phi_follow, tol)
    raise DomainError(f"k-ton mode must be 'exact' or 'at_most', got {mode!r}")


def per_sample_kton_rate(pred):
    """Poisson mean of the per-sample k-ton count, ``gamma / M``."""
    return pred.gamma / pred.m_follow


def expected_new_variants(prior, n_pilot, m_follow, phi_pilot, phi_follow, tol=DEFAULT_TOL):
    """Expected number of distinct new variants among ``m_follow`` samples."""
    _check_design(n_pilot, m_follow)
    if phi_follow == 0:
        _check_probability("phi_pilot", phi_pilot)
        return 0.0
    return cumulative_gamma(prior, n_pilot, m_follow, m_follow, phi_pilot, phi_follow, tol)


def excess_ratio(prior_a, prior_u, n, m, k=None, phi=1.0, tol=DEFAULT_TOL):
    """Ratio of expected new variants, affected over unaffected.

    With ``k=None`` all new variants are compared; otherwise only those seen
    exactly ``k`` times. The same ``phi`` is used for pilot and follow-up.
    """
    if k is None:
        num = expected_new_variants(prior_a, n, m, phi, phi, tol)
        den = expected_new_variants(prior_u, n, m, phi, phi, tol)
    else:
        num = gamma_k(prior_a, n, m, k, phi, phi, tol).gamma
        den = gamma_k(prior_u, n, m, k, phi, phi, tol).gamma
    if den == 0:
        raise DegenerateError("unaffected expectation is zero; excess ratio undefined")
    return num / den
