"""Special functions and distributions used by the design calculations.

Nothing here knows about variants or sequencing; the functions are pure and
safe to call from concurrent workers.
"""

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy import special

from .exceptions import ConvergenceError, DomainError

__all__ = [
    "Tolerance",
    "DEFAULT_TOL",
    "log_rising_factorial",
    "poisson_sf",
    "central_t_cdf",
    "central_t_quantile",
    "noncentral_t_cdf",
    "noncentral_t_sf",
    "beta_expectation_power",
    "log_beta_expectation_power",
]


@dataclass(frozen=True)
class Tolerance:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-9
    max_iter: int = 10_000

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise DomainError(f"abs_tol must be > 0, got {self.abs_tol}")
        if not self.rel_tol > 0:
            raise DomainError(f"rel_tol must be > 0, got {self.rel_tol}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise DomainError(f"max_iter must be a positive integer, got {self.max_iter}")


DEFAULT_TOL = Tolerance()

# below this length the product is summed directly; gammaln differences lose
# digits when a is large relative to n
_DIRECT_PRODUCT_MAX = 64


def log_rising_factorial(a, n):
    """Return log of the rising factorial ``Gamma(a + n) / Gamma(a)``."""
    if not a > 0:
        raise DomainError(f"rising factorial needs a > 0, got {a}")
    n = int(n)
    if n < 0:
        raise DomainError(f"rising factorial needs n >= 0, got {n}")
    if n == 0:
        return 0.0
    if n <= _DIRECT_PRODUCT_MAX:
        return math.fsum(math.log(a + i) for i in range(n))
    return float(special.gammaln(a + n) - special.gammaln(a))


def poisson_sf(mean, threshold):
    """P(Y >= threshold) for Y ~ Poisson(mean).

    Uses the identity P(Y >= d) = P(d, mean), the regularized lower incomplete
    gamma function, which stays accurate deep in both tails.
    """
    if not mean >= 0:
        raise DomainError(f"Poisson mean must be >= 0, got {mean}")
    threshold = int(threshold)
    if threshold < 0:
        raise DomainError(f"threshold must be >= 0, got {threshold}")
    if threshold == 0:
        return 1.0
    if mean == 0:
        return 0.0
    return float(special.gammainc(threshold, mean))


def central_t_cdf(x, df):
    """CDF of the central Student t distribution."""
    if not df > 0:
        raise DomainError(f"degrees of freedom must be > 0, got {df}")
    return float(special.stdtr(df, x))


def central_t_quantile(p, df):
    """Inverse of :func:`central_t_cdf` in its first argument."""
    if not 0 < p < 1:
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    if not df > 0:
        raise DomainError(f"degrees of freedom must be > 0, got {df}")
    if p == 0.5:
        return 0.0
    return float(special.stdtrit(df, p))


_INV_GAMMA_3_2 = 1.0 / math.gamma(1.5)


def _nct_series(t, df, delta, tol, upper):
    """Half the Poisson-mixture sum for t > 0.

    With x = t^2/(t^2+df), P_j the Poisson(delta^2/2) pmf and
    Q_j = exp(-y) y^j / Gamma(j+3/2), the lower form sums
    P_j I_x(j+1/2, df/2) + delta/sqrt(2) Q_j I_x(j+1, df/2), and
    F(t) = Phi(-delta) + half of it. The upper form replaces each I_x by its
    complement, evaluated at 1 - x = df/(t^2+df) so it keeps precision when
    x rounds to one; half of that sum is 1 - F(t).
    """
    if math.isinf(t):
        x, cx = 1.0, 0.0
    else:
        x, cx = t * t / (t * t + df), df / (t * t + df)
    y = 0.5 * delta * delta
    half_df = 0.5 * df
    coef = delta / math.sqrt(2.0)

    def ibeta(shape):
        if upper:
            return special.betainc(half_df, shape, cx)
        return special.betainc(shape, half_df, x)

    if y == 0:
        # only the j = 0 Poisson weight survives; the Q terms carry delta = 0
        return 0.5 * float(ibeta(0.5))

    mode = int(math.floor(y))
    width = max(8, int(math.ceil(4.0 * math.sqrt(y))))
    iterations = 0
    while True:
        iterations += 1
        lo = max(0, mode - width)
        hi = mode + width
        j = np.arange(lo, hi + 1, dtype=float)
        log_y = math.log(y)
        p = np.exp(-y + j * log_y - special.gammaln(j + 1.0))
        q = np.exp(-y + j * log_y - special.gammaln(j + 1.5))
        # omitted Poisson mass from the two tails; 1 - sum(p) cancels badly
        missing = float(special.pdtrc(hi, y))
        if lo > 0:
            missing += float(special.pdtr(lo - 1, y))
        bound = 0.5 * missing * (1.0 + abs(coef) * _INV_GAMMA_3_2)
        if bound <= tol.abs_tol * 1e-2:
            terms = p * ibeta(j + 0.5) + coef * q * ibeta(j + 1.0)
            return 0.5 * math.fsum(terms)
        if iterations >= tol.max_iter or width > 1e8:
            raise ConvergenceError(
                f"noncentral t series did not converge for t={t}, df={df}, delta={delta}",
                iterations,
            )
        width *= 2


def _nct_upper_half(t, df, delta, tol):
    """CDF for t >= 0."""
    base = float(special.ndtr(-delta))
    if t == 0:
        return base
    return base + _nct_series(t, df, delta, tol, upper=False)


def noncentral_t_cdf(x, df, noncentrality, tol=DEFAULT_TOL):
    """P(X <= x) for X following a noncentral t law.

    Parameters
    ----------
    x : float
        Evaluation point; infinite values are allowed.
    df : float
        Degrees of freedom, > 0.
    noncentrality : float
        Noncentrality parameter.
    tol : Tolerance
        Controls the series truncation and the iteration cap.

    Raises
    ------
    ConvergenceError
        If the series has not converged after ``tol.max_iter`` window doublings.
    """
    if not df > 0:
        raise DomainError(f"degrees of freedom must be > 0, got {df}")
    if math.isnan(x) or math.isnan(noncentrality):
        raise DomainError("noncentral t CDF got NaN input")
    if x == math.inf:
        return 1.0
    if x == -math.inf:
        return 0.0
    if noncentrality == 0:
        return central_t_cdf(x, df)
    if x >= 0:
        value = _nct_upper_half(x, df, noncentrality, tol)
    else:
        value = 1.0 - _nct_upper_half(-x, df, -noncentrality, tol)
    return min(1.0, max(0.0, value))


def noncentral_t_sf(x, df, noncentrality, tol=DEFAULT_TOL):
    """P(X > x) for X following a noncentral t law.

    Accurate in the far upper tail, where ``1 - noncentral_t_cdf`` would
    round to zero.
    """
    if not df > 0:
        raise DomainError(f"degrees of freedom must be > 0, got {df}")
    if math.isnan(x) or math.isnan(noncentrality):
        raise DomainError("noncentral t survival function got NaN input")
    if x <= 0 or noncentrality < 0:
        # the complement is not small here, or its series has mixed signs
        return 1.0 - noncentral_t_cdf(x, df, noncentrality, tol)
    if x == math.inf:
        return 0.0
    if noncentrality == 0:
        return float(special.stdtr(df, -x))
    value = _nct_series(x, df, noncentrality, tol, upper=True)
    if value > 0.5:
        # the lower tail is the small one; it carries the precision here
        return 1.0 - noncentral_t_cdf(x, df, noncentrality, tol)
    return max(0.0, value)


@lru_cache(maxsize=256)
def _jacobi_rule(order, alpha, beta):
    # alpha + beta = -1 trips a masked 0/0 inside scipy for the first node
    with np.errstate(invalid="ignore", divide="ignore"):
        nodes, weights = special.roots_jacobi(order, alpha, beta)
    # map [-1, 1] onto [0, 1]; the Jacobi weight (1-x)^alpha (1+x)^beta then
    # matches a Beta(beta + 1, alpha + 1) density up to a constant
    points = 0.5 * (1.0 + nodes)
    log_w = np.log(weights) - math.log(math.fsum(weights))
    return points, log_w


def _log_quadrature(order, a, b, phi_follow, exp_follow, phi_pilot, exp_pilot):
    points, log_w = _jacobi_rule(order, b - 1.0, a - 1.0)
    log_f = log_w.copy()
    if exp_follow:
        log_f += exp_follow * np.log1p(-phi_follow * points)
    if exp_pilot:
        log_f += exp_pilot * np.log1p(-phi_pilot * points)
    return float(special.logsumexp(log_f))


def _check_expectation_args(a, b, phi_follow, exp_follow, phi_pilot, exp_pilot):
    if not (a > 0 and b > 0):
        raise DomainError(f"Beta shapes must be positive, got ({a}, {b})")
    for name, phi in (("phi_follow", phi_follow), ("phi_pilot", phi_pilot)):
        if not 0 <= phi <= 1:
            raise DomainError(f"{name} must lie in [0, 1], got {phi}")
    for name, e in (("exp_follow", exp_follow), ("exp_pilot", exp_pilot)):
        if int(e) != e or e < 0:
            raise DomainError(f"{name} must be a nonnegative integer, got {e}")


def _log_single_factor(a, b, phi, n):
    """log E[(1 - phi B)^n] for B ~ Beta(a, b) and 0 < phi < 1.

    The expectation is 2F1(-n, a; a + b; phi). After the Pfaff transformation
    it becomes (1 - phi)^n sum_j C(n, j) (b)_j / (a + b)_j (phi / (1 - phi))^j,
    a sum of positive terms that is evaluated exactly in log space.
    """
    j = np.arange(n + 1, dtype=float)
    log_terms = (
        special.gammaln(n + 1.0)
        - special.gammaln(j + 1.0)
        - special.gammaln(n - j + 1.0)
        + special.gammaln(b + j)
        - special.gammaln(b)
        - special.gammaln(a + b + j)
        + special.gammaln(a + b)
        + j * (math.log(phi) - math.log1p(-phi))
    )
    return n * math.log1p(-phi) + float(special.logsumexp(log_terms))


# two-factor integrands up to this many nodes go straight to the exact rule
_DIRECT_ORDER_MAX = 1024


def log_beta_expectation_power(
    k_minus_discount,
    conc_plus_discount,
    phi_follow,
    exp_follow,
    phi_pilot,
    exp_pilot,
    tol=DEFAULT_TOL,
):
    """Log of E[(1 - phi_follow B)^exp_follow (1 - phi_pilot B)^exp_pilot], B ~ Beta.

    Factors with ``phi = 1`` are folded into the Beta shape exactly. A single
    remaining factor is summed as a positive hypergeometric series. With two
    factors the integrand is a polynomial of degree ``exp_follow + exp_pilot``
    and a Gauss-Jacobi rule with ``degree // 2 + 1`` nodes is exact; large
    degrees first try smaller rules, doubling the order until two successive
    results agree to ``tol.rel_tol``.
    """
    a, b = float(k_minus_discount), float(conc_plus_discount)
    _check_expectation_args(a, b, phi_follow, exp_follow, phi_pilot, exp_pilot)
    exp_follow, exp_pilot = int(exp_follow), int(exp_pilot)
    if phi_follow == 0:
        exp_follow = 0
    if phi_pilot == 0:
        exp_pilot = 0
    degree = exp_follow + exp_pilot
    if degree == 0:
        return 0.0
    if (phi_follow == 1 and exp_follow) or (phi_pilot == 1 and exp_pilot):
        # (1 - B)^e has an endpoint zero; fold it into the Beta shape exactly
        e1 = exp_follow if phi_follow == 1 else 0
        e2 = exp_pilot if phi_pilot == 1 else 0
        shift = e1 + e2
        log_ratio = float(special.betaln(a, b + shift) - special.betaln(a, b))
        rest = log_beta_expectation_power(
            a,
            b + shift,
            phi_follow,
            exp_follow - e1,
            phi_pilot,
            exp_pilot - e2,
            tol,
        )
        return log_ratio + rest
    if exp_pilot == 0:
        return _log_single_factor(a, b, phi_follow, exp_follow)
    if exp_follow == 0:
        return _log_single_factor(a, b, phi_pilot, exp_pilot)

    exact_order = degree // 2 + 1
    if exact_order <= _DIRECT_ORDER_MAX:
        return _log_quadrature(exact_order, a, b, phi_follow, exp_follow, phi_pilot, exp_pilot)
    order = 64
    previous = _log_quadrature(order, a, b, phi_follow, exp_follow, phi_pilot, exp_pilot)
    while order < exact_order:
        order = min(2 * order, exact_order)
        current = _log_quadrature(order, a, b, phi_follow, exp_follow, phi_pilot, exp_pilot)
        # difference of logs is the relative change of the expectation
        if abs(current - previous) < tol.rel_tol:
            return current
        previous = current
    return previous


def beta_expectation_power(
    k_minus_discount,
    conc_plus_discount,
    phi_follow,
    exp_follow,
    phi_pilot,
    exp_pilot,
    tol=DEFAULT_TOL,
):
    """E[(1 - phi_follow B)^exp_follow (1 - phi_pilot B)^exp_pilot] for B ~ Beta(k - sigma, c + sigma).

    Deterministic (series or Gauss-Jacobi); see :func:`log_beta_expectation_power`.
    """
    value = math.exp(
        log_beta_expectation_power(
            k_minus_discount,
            conc_plus_discount,
            phi_follow,
            exp_follow,
            phi_pilot,
            exp_pilot,
            tol,
        )
    )
    return min(1.0, value)
