import math

import numpy as np
import pytest
from scipy import integrate, special

from rvas_design.exceptions import DegenerateError, DomainError
from rvas_design.predictive import (
    PriorParams,
    cumulative_gamma,
    excess_ratio,
    expected_new_variants,
    gamma_k,
    kton_mean,
    per_sample_kton_rate,
)
from rvas_design.seqmodel import SeqConfig
from rvas_design.simulate import mc_bernoulli_kton_summary, sample_bernoulli_cohort
from rvas_design.streams import RandomStream


def levy_gamma(prior, n, m, k, phi_p, phi_f):
    """Integrate the thinned binomial k-ton probability against the Levy density."""
    a, c, s = prior.mass, prior.concentration, prior.discount
    log_const = math.log(a) + special.gammaln(1 + c) - special.gammaln(1 - s) - special.gammaln(c + s)
    binom = math.comb(m, k)

    def f(t):
        return binom * phi_f**k * (1 - phi_f * t) ** (m - k) * (1 - phi_p * t) ** n

    # algebraic weight t^(k-1-s) (1-t)^(c+s-1) absorbs both endpoint singularities
    val, _ = integrate.quad(
        f, 0, 1, weight="alg", wvar=(k - 1 - s, c + s - 1), epsabs=0, epsrel=1e-12, limit=400
    )
    return math.exp(log_const) * val


def test_prior_validation():
    for bad in ((0, 1, 0.1), (1, 1, 1.0), (1, 1, -0.1), (1, -0.5, 0.2)):
        with pytest.raises(DomainError):
            PriorParams(*bad)
    PriorParams(1, -0.1, 0.2)


def test_single_sample_singletons_equal_mass():
    assert gamma_k(PriorParams(10, 4, 0.2), 0, 1, 1, 1, 1).gamma == pytest.approx(10, rel=1e-12)
    assert gamma_k(PriorParams(3, 0.5, 0.5), 0, 1, 1, 1, 0.7).gamma == pytest.approx(2.1, rel=1e-12)


def test_ibp_limit():
    prior = PriorParams(5, 1, 0)
    for m in (1, 7, 40):
        for k in range(1, m + 1, max(1, m // 5)):
            assert gamma_k(prior, 0, m, k, 1, 1).gamma == pytest.approx(5 / k, rel=1e-12)


LEVY_CASES = [
    (PriorParams(10, 4, 0.2), 0, 30, 1, 1.0, 1.0),
    (PriorParams(10, 4, 0.2), 0, 30, 3, 1.0, 0.9),
    (PriorParams(5, 4, 0.5), 100, 200, 2, 0.95, 0.9),
    (PriorParams(2.5, 0.3, 0.7), 20, 60, 5, 0.8, 0.6),
    (PriorParams(8, 1, 0.3), 0, 100, 1, 1.0, 1.0),
    (PriorParams(1, -0.2, 0.4), 10, 15, 15, 1.0, 1.0),
    (PriorParams(3, 0.0, 0.3), 40, 25, 1, 0.7, 0.8),
]


@pytest.mark.parametrize("prior,n,m,k,pp,pf", LEVY_CASES)
def test_gamma_matches_levy_integral(prior, n, m, k, pp, pf):
    assert gamma_k(prior, n, m, k, pp, pf).gamma == pytest.approx(levy_gamma(prior, n, m, k, pp, pf), rel=1e-8)


# the excess-variants setting: mass, discount and concentration in that order
XI_A = PriorParams(mass=10, concentration=0.1, discount=0.5)
XI_U = PriorParams(mass=8, concentration=1.0, discount=0.3)


def test_gamma_matches_simulation():
    prior = XI_A
    cfg = SeqConfig(1e4, 1, 0.0)
    s = mc_bernoulli_kton_summary(prior, 100, cfg, 2, "exact", 400, RandomStream(7), "A")
    assert abs(gamma_k(prior, 0, 100, 2, 1, 1).gamma - 100 * s.mean) <= 3 * 100 * s.se


def test_mass_linearity():
    p = PriorParams(3.3, 2.0, 0.4)
    for k in (1, 2, 5):
        g1 = gamma_k(p, 10, 50, k, 0.9, 0.8).gamma
        g2 = gamma_k(p.scaled(2.0), 10, 50, k, 0.9, 0.8).gamma
        assert g2 / g1 == pytest.approx(2.0, rel=1e-12)


def test_zero_detection_gives_zero():
    p = PriorParams(10, 4, 0.2)
    assert gamma_k(p, 5, 20, 3, 0.7, 0.0).gamma == 0.0
    assert expected_new_variants(p, 5, 20, 0.7, 0.0) == 0.0


def test_monotone_in_size_and_phi():
    p = PriorParams(10, 0.5, 0.1)
    # singletons alone are not monotone: a second sample turns some into doubletons
    assert gamma_k(p, 0, 2, 1, 1, 1).gamma < gamma_k(p, 0, 1, 1, 1, 1).gamma
    vals = [expected_new_variants(p, 0, m, 1, 1) for m in range(1, 80)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    vals = [expected_new_variants(p, 0, 50, 1, f) for f in np.linspace(0, 1, 21)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_pilot_depletes_new_variants():
    p = PriorParams(10, 4, 0.2)
    vals = [gamma_k(p, n, 30, 1, 0.9, 0.9).gamma for n in (0, 10, 100, 1000)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_expected_new_variants_ibp_harmonic():
    p = PriorParams(2, 1, 0)
    harmonic = math.fsum(1 / j for j in range(1, 51))
    assert expected_new_variants(p, 0, 50, 1, 1) == pytest.approx(2 * harmonic, rel=1e-12)


def test_expected_new_variants_matches_cohort_columns():
    prior = XI_A
    stream = RandomStream(3)
    cols = np.array([sample_bernoulli_cohort(prior, 100, stream.child(r)).shape[1] for r in range(400)])
    se = cols.std(ddof=1) / math.sqrt(cols.size)
    assert abs(expected_new_variants(prior, 0, 100, 1, 1) - cols.mean()) <= 3 * se


def test_kton_modes():
    p = PriorParams(4, 2, 0.3)
    cum = math.fsum(gamma_k(p, 3, 25, j, 0.9, 0.8).gamma for j in range(1, 5))
    assert kton_mean(p, 3, 25, 4, 0.9, 0.8, "at_most") == pytest.approx(cum, rel=1e-14)
    assert cumulative_gamma(p, 3, 25, 4, 0.9, 0.8) == pytest.approx(cum, rel=1e-14)
    assert kton_mean(p, 3, 25, 4, 0.9, 0.8, "exact") == gamma_k(p, 3, 25, 4, 0.9, 0.8).gamma
    with pytest.raises(DomainError):
        kton_mean(p, 3, 25, 4, 0.9, 0.8, "fuzzy")


def test_per_sample_rate():
    pred = gamma_k(PriorParams(6, 1, 0.2), 0, 12, 2, 1, 1)
    assert per_sample_kton_rate(pred) == pred.gamma / 12


def test_excess_ratio_examples():
    p, u = XI_A, XI_U
    assert excess_ratio(p, p, 0, 100) == 1.0
    assert excess_ratio(p.scaled(2.0), p, 0, 100) == 2.0
    oracle = levy_gamma(p, 0, 100, 1, 1, 1) / levy_gamma(u, 0, 100, 1, 1, 1)
    assert excess_ratio(p, u, 0, 100, k=1) == pytest.approx(oracle, rel=1e-8)
    assert excess_ratio(p, u, 0, 100, k=1) == pytest.approx(1.8079727708690079, rel=1e-10)
    assert excess_ratio(p, u, 0, 100) == pytest.approx(1.3681719892472075, rel=1e-10)


def test_excess_ratio_favors_affected_and_grows():
    # the affected prior yields more rare variants, increasingly so with N
    vals = [excess_ratio(XI_A, XI_U, 0, n, k=1) for n in (10, 100, 1000, 10000)]
    assert vals[0] > 1 and all(b > a for a, b in zip(vals, vals[1:]))


def test_excess_ratio_degenerate():
    p = PriorParams(1, 1, 0)
    with pytest.raises(DegenerateError):
        excess_ratio(p, p, 0, 10, phi=0.0)


def test_domain_errors():
    p = PriorParams(1, 1, 0.1)
    with pytest.raises(DomainError):
        gamma_k(p, 0, 10, 0, 1, 1)
    with pytest.raises(DomainError):
        gamma_k(p, 0, 10, 11, 1, 1)
    with pytest.raises(DomainError):
        gamma_k(p, -1, 10, 1, 1, 1)
    with pytest.raises(DomainError):
        gamma_k(p, 0, 10, 1, 1.2, 1)
    with pytest.raises(DomainError):
        gamma_k(p, 0, 2.5, 1, 1, 1)
