import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from rvas_design.exceptions import DegenerateError, DomainError, InfeasibleError
from rvas_design.power import (
    AnalyticBernoulliModel,
    BudgetCurve,
    HierarchicalMCModel,
    PowerResult,
    SampleSummary,
    default_depth_grid,
    fixed_budget_curve,
    fixed_design_curve,
    model_based_t,
    optimize_depth,
    power_at,
    t_statistic,
    welch_df,
)
from rvas_design.predictive import PriorParams, gamma_k
from rvas_design.seqmodel import CostModel, SeqConfig, cost, detection_prob
from rvas_design.simulate import HierParams

LEFT_A = PriorParams(10, 4, 0.2)
LEFT_U = PriorParams(7, 3, 0.1)


def test_welch_examples():
    s = SampleSummary(1.0, 4.0, 10)
    assert welch_df(s, s) == pytest.approx(18.0, rel=1e-14)
    assert welch_df(SampleSummary(0, 2.0, 5), SampleSummary(0, 0.0, 9)) == pytest.approx(4.0)


def test_welch_exact_rational_oracle():
    # (3/12 + 7/30)^2 / ((3/12)^2/11 + (7/30)^2/29) = 268279/8681
    df = welch_df(SampleSummary(0, 3, 12), SampleSummary(0, 7, 30))
    assert df == pytest.approx(268279 / 8681, rel=1e-14)


def test_welch_bounds():
    rng = np.random.default_rng(3)
    for _ in range(300):
        ma, mu = rng.integers(2, 200, size=2)
        a = SampleSummary(0, rng.uniform(1e-6, 10), int(ma))
        u = SampleSummary(0, rng.uniform(1e-6, 10), int(mu))
        df = welch_df(a, u)
        assert min(ma, mu) - 1 - 1e-9 <= df <= ma + mu - 2 + 1e-9


def test_welch_tiny_variances_do_not_underflow():
    df = welch_df(SampleSummary(0, 1e-200, 10), SampleSummary(0, 2e-200, 10))
    assert math.isfinite(df) and df > 9


def test_welch_degenerate():
    with pytest.raises(DegenerateError):
        welch_df(SampleSummary(0, 0, 5), SampleSummary(0, 0, 5))
    with pytest.raises(DegenerateError):
        welch_df(SampleSummary(0, 1, 1), SampleSummary(0, 1, 5))


def test_t_statistic_examples():
    a, u = SampleSummary(2.0, 1.0, 100), SampleSummary(1.0, 1.0, 100)
    assert t_statistic(a, u) == pytest.approx(1 / math.sqrt(0.02), rel=1e-15)
    assert t_statistic(u, u) == 0.0
    with pytest.raises(DegenerateError):
        t_statistic(SampleSummary(1, 0, 3), SampleSummary(0, 0, 3))


def test_t_statistic_scale_invariant():
    a, u = SampleSummary(2.5, 3.0, 17), SampleSummary(1.1, 2.0, 23)
    c = 7.3
    a2 = SampleSummary(c * a.mean_per_individual, c * c * a.variance, 17)
    u2 = SampleSummary(c * u.mean_per_individual, c * c * u.variance, 23)
    assert t_statistic(a2, u2) == pytest.approx(t_statistic(a, u), rel=1e-13)
    assert welch_df(a2, u2) == pytest.approx(welch_df(a, u), rel=1e-13)


def test_power_at_null_equals_size():
    for sig in (0.05, 1e-4):
        for df in (3.0, 18.0, 200.0):
            assert power_at(0.0, df, sig) == pytest.approx(sig, abs=1e-12)


def test_power_at_against_scipy_and_sampling():
    crit = stats.t.ppf(0.95, 18)
    assert power_at(3.0, 18, 0.05) == pytest.approx(stats.nct.sf(crit, 18, 3.0), abs=1e-10)
    rng = np.random.default_rng(99)
    n, hits = 10_000_000, 0
    for _ in range(10):
        x = (rng.standard_normal(n // 10) + 3.0) / np.sqrt(rng.chisquare(18, n // 10) / 18)
        hits += np.count_nonzero(x > crit)
    p = hits / n
    assert abs(power_at(3.0, 18, 0.05) - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_power_monotone():
    vals = [power_at(t, 30, 0.01) for t in np.linspace(-3, 10, 66)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    vals = [power_at(2.5, 30, s) for s in np.geomspace(1e-6, 0.5, 30)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_power_at_domain():
    with pytest.raises(DomainError):
        power_at(1.0, 10, 0.0)
    with pytest.raises(DomainError):
        power_at(1.0, 0.0, 0.05)


def test_power_result_validation():
    with pytest.raises(DomainError):
        PowerResult(1.0, 10.0, 0.05, 1.5, (1, 1, 10))
    with pytest.raises(DomainError):
        PowerResult(1.0, 0.0, 0.05, 0.5, (1, 1, 10))
    r = PowerResult(math.nan, math.nan, 0.05, 0.0, (5, 5, 10), degenerate=True)
    assert r.depth == 10 and r.size == 5


def test_model_based_t_symmetric_is_zero():
    p = PriorParams(10, 4, 0.2)
    assert model_based_t(p, p, 100, 100) == 0.0


def test_model_based_t_single_group_limit():
    # with no unaffected signal the statistic is sqrt(gamma_A)
    a = PriorParams(10, 4, 0.2)
    u = PriorParams(1e-12, 4, 0.2)
    t = model_based_t(a, u, 50, 50, phi=0.9)
    assert t == pytest.approx(math.sqrt(gamma_k(a, 0, 50, 1, 1, 0.9).gamma), rel=1e-9)


def _levy_gamma(prior, m, k, phi):
    a, c, s = prior.mass, prior.concentration, prior.discount
    const = math.exp(math.log(a) + special.gammaln(1 + c) - special.gammaln(1 - s) - special.gammaln(c + s))
    val, _ = integrate.quad(
        lambda t: math.comb(m, k) * phi**k * (1 - phi * t) ** (m - k),
        0, 1, weight="alg", wvar=(k - 1 - s, c + s - 1), epsabs=0, epsrel=1e-12, limit=400,
    )
    return const * val


def test_model_based_t_against_levy_route():
    phi = detection_prob(SeqConfig(30, 30, 0.05))
    ga, gu = _levy_gamma(LEFT_A, 100, 1, phi), _levy_gamma(LEFT_U, 100, 1, phi)
    expected = (ga - gu) / 100 / math.sqrt(ga / 100**2 + gu / 100**2)
    assert model_based_t(LEFT_A, LEFT_U, 100, 100, phi=phi) == pytest.approx(expected, rel=1e-8)


def test_model_based_t_against_simulated_counts():
    # Poisson counts with the predicted means give the same statistic on average
    phi = detection_prob(SeqConfig(30, 30, 0.05))
    t = model_based_t(LEFT_A, LEFT_U, 100, 100, phi=phi)
    ga, gu = _levy_gamma(LEFT_A, 100, 1, phi), _levy_gamma(LEFT_U, 100, 1, phi)
    rng = np.random.default_rng(5)
    ka, ku = rng.poisson(ga, 200_000), rng.poisson(gu, 200_000)
    est = (ka.mean() - ku.mean()) / math.sqrt(ka.var(ddof=1) + ku.var(ddof=1))
    assert est == pytest.approx(t, rel=0.01)


def test_analytic_model_rejects_exclusive():
    with pytest.raises(DomainError):
        AnalyticBernoulliModel(LEFT_A, LEFT_U).summaries(30, 10, 10, 1, "exact", True)


def test_fixed_design_single_point_and_order():
    model = AnalyticBernoulliModel(LEFT_A, LEFT_U)
    rows = fixed_design_curve(model, [30], [1])
    assert len(rows) == 1 and rows[0].size == 1
    rows = fixed_design_curve(model, [40, 20], [50, 10])
    assert [(r.depth, r.size) for r in rows] == [(20, 10), (20, 50), (40, 10), (40, 50)]
    assert all(r.power_se == 0 for r in rows)


def test_fixed_design_degenerate_point_recorded():
    rows = fixed_design_curve(AnalyticBernoulliModel(LEFT_A, LEFT_U), [0.0, 30.0], [10])
    assert rows[0].degenerate and rows[0].power == 0.0 and math.isnan(rows[0].statistic)
    assert not rows[1].degenerate


def test_fixed_design_power_grows_with_size():
    rows = fixed_design_curve(AnalyticBernoulliModel(LEFT_A, LEFT_U), [30], [10, 50, 200, 1000])
    powers = [r.power for r in rows]
    assert all(b >= a for a, b in zip(powers, powers[1:]))


def test_budget_curve_respects_budget():
    model = AnalyticBernoulliModel(LEFT_A, LEFT_U)
    cm = CostModel(100, 1.5)
    curve = fixed_budget_curve(model, 5000, [5, 10, 20, 40], cm)
    for p in curve:
        assert cost(2 * p.size, p.depth, cm) <= 5000
        assert cost(2 * (p.size + 1), p.depth, cm) > 5000
        assert p.budget == 5000


def test_budget_curve_skips_and_warns():
    model = AnalyticBernoulliModel(LEFT_A, LEFT_U)
    with pytest.warns(UserWarning):
        curve = fixed_budget_curve(model, 100, [10, 60])
    assert curve.infeasible_depths == [60.0]
    assert len(curve) == 1


def test_budget_curve_all_infeasible():
    with pytest.raises(InfeasibleError):
        fixed_budget_curve(AnalyticBernoulliModel(LEFT_A, LEFT_U), 10, [20, 40])


def test_default_grid():
    g = default_depth_grid()
    assert len(g) == 40 and g[0] == pytest.approx(1) and g[-1] == pytest.approx(100)


def test_optimize_tie_goes_to_smaller_depth():
    def pt(depth, power):
        return PowerResult(1.0, 10.0, 0.05, power, (5, 5, depth))

    curve = BudgetCurve(1000, [pt(40, 0.7), pt(20, 0.7), pt(30, 0.5)])
    best = optimize_depth(curve)
    assert best.depth == 20 and best.power == 0.7
    with pytest.raises(InfeasibleError):
        optimize_depth(BudgetCurve(1000, []))


def test_optimum_is_grid_max():
    model = AnalyticBernoulliModel(LEFT_A, LEFT_U)
    curve = fixed_budget_curve(model, 5000)
    best = optimize_depth(curve)
    assert best.power == max(p.power for p in curve)


HIER = HierParams(PriorParams(5, 4, 0.5), ((200, 100), (150, 100)), ("A", "U"))


def test_hier_model_summaries_and_se():
    model = HierarchicalMCModel(HIER, replicates=200, seed=3)
    rows = fixed_design_curve(model, [40], [20], exclusive=True, significance=0.05)
    r = rows[0]
    assert r.statistic > 0 and 0 < r.power_se < 0.2
    assert r.var_a > 0 and r.var_u > 0


def test_hier_model_poisson_variance_mode():
    model = HierarchicalMCModel(HIER, replicates=100, seed=3, variance="poisson")
    a, u, _ = model.summaries(40, 20, 20, 1, "exact", True)
    assert a.variance == a.mean_per_individual


def test_hier_model_validation():
    with pytest.raises(DomainError):
        HierarchicalMCModel(HierParams(PriorParams(1, 1, 0), ((1, 1),)))
    with pytest.raises(DomainError):
        HierarchicalMCModel(HIER, variance="robust")


def test_curve_argument_errors():
    model = AnalyticBernoulliModel(LEFT_A, LEFT_U)
    with pytest.raises(DomainError):
        fixed_design_curve(model, [], [10])
    with pytest.raises(DomainError):
        fixed_design_curve(model, [10], [10], mode="most")
    with pytest.raises(DomainError):
        fixed_design_curve(model, [10], [10], significance=1.0)
    with pytest.raises(DomainError):
        fixed_budget_curve(model, 1000, [0.0, 10])
