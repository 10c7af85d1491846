"""Burden-test statistics, power, and fixed-design / fixed-budget analyses.

Power is for the one-sided Welch test of ``mu_A > mu_U``: the statistic is
referred to a noncentral t law with Welch-Satterthwaite degrees of freedom
and the rejection threshold is the central t quantile at ``1 - significance``.

Per-group inputs are :class:`SampleSummary` objects holding the mean and
variance of the per-individual k-ton count. The analytic model fills them
from ``gamma_k`` using Poisson mean = variance (per-individual count ~
Poisson(gamma / M)); the hierarchical model fills them by Monte Carlo.
"""

from dataclasses import dataclass, field
import logging
import math
import warnings

import numpy as np

from .exceptions import DegenerateError, DomainError, InfeasibleError
from .numerics import central_t_quantile, noncentral_t_sf
from .predictive import PriorParams, kton_mean
from .seqmodel import CostModel, SeqConfig, detection_prob, max_samples_under_budget
from .simulate import HierParams, mc_kton_summary
from .streams import RandomStream

__all__ = [
    "SampleSummary",
    "PowerResult",
    "BudgetCurve",
    "DepthOptimum",
    "AnalyticBernoulliModel",
    "HierarchicalMCModel",
    "welch_df",
    "t_statistic",
    "model_based_t",
    "power_at",
    "fixed_design_curve",
    "fixed_budget_curve",
    "optimize_depth",
    "default_depth_grid",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SampleSummary:
    mean_per_individual: float
    variance: float
    group_size: int
    # Monte Carlo standard errors of the two estimates (zero for exact inputs)
    mc_se: float = 0.0
    variance_se: float = 0.0

    def __post_init__(self):
        if not self.variance >= 0:
            raise DomainError(f"variance must be >= 0, got {self.variance}")
        if int(self.group_size) != self.group_size or self.group_size < 1:
            raise DomainError(f"group_size must be a positive integer, got {self.group_size}")


@dataclass(frozen=True)
class PowerResult:
    statistic: float
    welch_df: float
    significance: float
    power: float
    design: tuple  # (M_A, M_U, depth)
    mean_a: float = math.nan
    mean_u: float = math.nan
    var_a: float = math.nan
    var_u: float = math.nan
    phi: float = math.nan
    budget: float = None
    power_se: float = 0.0
    degenerate: bool = False

    def __post_init__(self):
        if not 0 <= self.power <= 1:
            raise DomainError(f"power must lie in [0, 1], got {self.power}")
        if not self.degenerate and not self.welch_df > 0:
            raise DomainError(f"welch_df must be > 0, got {self.welch_df}")

    @property
    def depth(self):
        return self.design[2]

    @property
    def size(self):
        return self.design[0]


@dataclass
class BudgetCurve:
    budget: float
    points: list
    infeasible_depths: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class DepthOptimum:
    depth: float
    size: int
    power: float
    result: PowerResult


def welch_df(a, u):
    """Welch-Satterthwaite degrees of freedom for two sample summaries."""
    va = a.variance / a.group_size
    vu = u.variance / u.group_size
    if va == 0 and vu == 0:
        raise DegenerateError("both sample variances are zero; Welch df undefined")
    # the ratio is scale invariant; rescaling keeps tiny variances from underflowing
    scale = max(va, vu)
    va, vu = va / scale, vu / scale
    denom = 0.0
    for v, m in ((va, a.group_size), (vu, u.group_size)):
        if v == 0:
            continue
        if m < 2:
            raise DegenerateError("a group with positive variance needs at least 2 samples")
        denom += v * v / (m - 1)
    return (va + vu) ** 2 / denom


def t_statistic(a, u):
    """Two-sample statistic ``(mean_A - mean_U) / sqrt(s_A^2/M_A + s_U^2/M_U)``."""
    se2 = a.variance / a.group_size + u.variance / u.group_size
    if not se2 > 0:
        raise DegenerateError("zero standard error; t statistic undefined")
    return (a.mean_per_individual - u.mean_per_individual) / math.sqrt(se2)


def power_at(statistic, welch_df, significance):
    """Power of the one-sided test: P(X > t_{1-significance}) for X ~ nct(df, statistic)."""
    if not 0 < significance < 1:
        raise DomainError(f"significance must lie in (0, 1), got {significance}")
    if not welch_df > 0:
        raise DomainError(f"welch_df must be > 0, got {welch_df}")
    crit = central_t_quantile(1.0 - significance, welch_df)
    return noncentral_t_sf(crit, welch_df, statistic)


def _poisson_summary(gamma, m):
    rate = gamma / m
    return SampleSummary(rate, rate, m)


def model_based_t(prior_a, prior_u, m_a, m_u, k=1, mode="exact", phi=1.0):
    """Model-based burden statistic from the predicted k-ton means of both groups.

    Equals ``(g_A/M_A - g_U/M_U) / sqrt(g_A/M_A^2 + g_U/M_U^2)`` with
    ``g = gamma_k(N=0, phi_pilot=1, phi_follow=phi)``.
    """
    if int(k) != k or not 1 <= k <= min(m_a, m_u):
        raise DomainError(f"k must lie in [1, min(m_a, m_u)], got {k}")
    g_a = kton_mean(prior_a, 0, m_a, k, 1.0, phi, mode)
    g_u = kton_mean(prior_u, 0, m_u, k, 1.0, phi, mode)
    if g_a == 0 and g_u == 0:
        raise DegenerateError("both expected k-ton counts are zero")
    return t_statistic(_poisson_summary(g_a, m_a), _poisson_summary(g_u, m_u))


class AnalyticBernoulliModel:
    """Independent beta-Bernoulli populations with closed-form k-ton means."""

    name = "analytic_bernoulli"

    def __init__(self, prior_a, prior_u, call_threshold=30, err_rate=0.05):
        self.prior_a = prior_a
        self.prior_u = prior_u
        self.call_threshold = call_threshold
        self.err_rate = err_rate

    def seq_config(self, depth):
        return SeqConfig(depth, self.call_threshold, self.err_rate)

    def summaries(self, depth, m_a, m_u, k, mode, exclusive):
        if exclusive:
            raise DomainError("exclusive k-tons need the hierarchical model")
        if k > min(m_a, m_u):
            raise DomainError(f"k={k} exceeds the group size")
        phi = detection_prob(self.seq_config(depth))
        g_a = kton_mean(self.prior_a, 0, m_a, k, 1.0, phi, mode)
        g_u = kton_mean(self.prior_u, 0, m_u, k, 1.0, phi, mode)
        return _poisson_summary(g_a, m_a), _poisson_summary(g_u, m_u), phi

    @property
    def truncation_mass_bound(self):
        return 0.0


class HierarchicalMCModel:
    """Two-population hierarchical model evaluated by Monte Carlo.

    ``variance="mc"`` uses the across-replicate variance of the per-individual
    count rescaled to a per-individual variance (``s^2 = M * Var``);
    ``variance="poisson"`` plugs in the Monte Carlo mean as the variance.
    """

    name = "mc_hierarchical"

    def __init__(
        self,
        hier,
        call_threshold=30,
        err_rate=0.05,
        replicates=200,
        seed=0,
        variance="mc",
        threads=1,
        carrier_rule="any_nonzero",
        method="exact",
    ):
        if hier.n_populations != 2:
            raise DomainError("the burden test compares exactly two populations")
        if variance not in ("mc", "poisson"):
            raise DomainError(f"variance must be 'mc' or 'poisson', got {variance!r}")
        self.hier = hier
        self.call_threshold = call_threshold
        self.err_rate = err_rate
        self.replicates = replicates
        self.seed = seed
        self.variance = variance
        self.threads = threads
        self.carrier_rule = carrier_rule
        self.method = method
        self.truncation_mass_bound = 0.0

    def seq_config(self, depth):
        return SeqConfig(depth, self.call_threshold, self.err_rate)

    def summaries(self, depth, m_a, m_u, k, mode, exclusive):
        cfg = self.seq_config(depth)
        res = mc_kton_summary(
            self.hier,
            (m_a, m_u),
            cfg,
            k,
            mode,
            exclusive,
            self.replicates,
            RandomStream(self.seed),
            self.carrier_rule,
            self.threads,
            self.method,
        )
        self.truncation_mass_bound = max(
            [self.truncation_mass_bound] + [r.truncation_mass_bound for r in res]
        )
        out = []
        for r, m in zip(res, (m_a, m_u)):
            if self.variance == "mc":
                s2 = m * r.variance
                # normal-theory standard error of a sample variance
                s2_se = s2 * math.sqrt(2.0 / max(r.replicates - 1, 1))
            else:
                s2, s2_se = r.mean, r.se
            out.append(SampleSummary(r.mean, s2, m, r.se, s2_se))
        return out[0], out[1], detection_prob(cfg)


def _power_se(statistic, df, significance, a, u):
    """Delta-method standard error of power from Monte Carlo noise in the inputs."""
    se2 = a.variance / a.group_size + u.variance / u.group_size
    # T = diff / sqrt(se2); the two noise sources are treated as independent
    var_t = (a.mc_se**2 + u.mc_se**2) / se2
    var_t += (statistic / (2.0 * se2)) ** 2 * (
        (a.variance_se / a.group_size) ** 2 + (u.variance_se / u.group_size) ** 2
    )
    if var_t == 0:
        return 0.0
    se_t = math.sqrt(var_t)
    h = max(1e-4, 1e-3 * se_t)
    slope = (power_at(statistic + h, df, significance) - power_at(statistic - h, df, significance)) / (2 * h)
    return abs(slope) * se_t


def _evaluate(model, depth, m_a, m_u, k, mode, exclusive, significance, budget=None):
    a, u, phi = model.summaries(depth, m_a, m_u, k, mode, exclusive)
    common = dict(
        significance=significance,
        design=(m_a, m_u, depth),
        mean_a=a.mean_per_individual,
        mean_u=u.mean_per_individual,
        var_a=a.variance,
        var_u=u.variance,
        phi=phi,
        budget=budget,
    )
    try:
        stat = t_statistic(a, u)
        df = welch_df(a, u)
    except DegenerateError as exc:
        log.info("degenerate design point depth=%s size=%s: %s", depth, m_a, exc)
        # no usable data at this point: the test cannot reject
        return PowerResult(math.nan, math.nan, power=0.0, degenerate=True, **common)
    power = power_at(stat, df, significance)
    se = _power_se(stat, df, significance, a, u)
    return PowerResult(stat, df, power=power, power_se=se, **common)


def _check_common(k, mode, significance):
    if int(k) != k or k < 1:
        raise DomainError(f"k must be a positive integer, got {k}")
    if mode not in ("exact", "at_most"):
        raise DomainError(f"mode must be 'exact' or 'at_most', got {mode!r}")
    if not 0 < significance < 1:
        raise DomainError(f"significance must lie in (0, 1), got {significance}")


def fixed_design_curve(model, depths, sizes, k=1, mode="exact", exclusive=False, significance=1e-4):
    """Power over a grid of depths and balanced group sizes.

    Rows are ordered by depth, then size, both ascending.
    """
    _check_common(k, mode, significance)
    depths = sorted(float(d) for d in depths)
    sizes = sorted(int(m) for m in sizes)
    if not depths or not sizes:
        raise DomainError("depth and size grids must be non-empty")
    if any(d < 0 for d in depths) or any(m < 1 for m in sizes):
        raise DomainError("depths must be >= 0 and sizes >= 1")
    return [
        _evaluate(model, d, m, m, k, mode, exclusive, significance)
        for d in depths
        for m in sizes
    ]


def default_depth_grid(n=40, low=1.0, high=100.0):
    return [float(x) for x in np.geomspace(low, high, n)]


def fixed_budget_curve(
    model,
    budget,
    depth_grid=None,
    cm=CostModel(),
    k=1,
    mode="exact",
    exclusive=False,
    significance=1e-4,
):
    """Power along the budget frontier: at each depth the largest affordable balanced design.

    Depths where not even one sample per group is affordable are skipped and
    listed in ``infeasible_depths``.
    """
    _check_common(k, mode, significance)
    depth_grid = default_depth_grid() if depth_grid is None else depth_grid
    depths = sorted(float(d) for d in depth_grid)
    if not depths or any(not d > 0 for d in depths):
        raise DomainError("depth grid must be non-empty and strictly positive")
    points, skipped = [], []
    for d in depths:
        m = max_samples_under_budget(budget, d, cm, groups=2)
        if m < k:
            skipped.append(d)
            continue
        points.append(_evaluate(model, d, m, m, k, mode, exclusive, significance, budget))
    if not points:
        raise InfeasibleError(f"no depth in the grid is affordable with budget {budget}")
    if skipped:
        warnings.warn(
            f"budget {budget}: skipped {len(skipped)} infeasible depth(s) {skipped}",
            stacklevel=2,
        )
    return BudgetCurve(budget, points, skipped)


def optimize_depth(curve):
    """Grid point of maximum power; ties go to the smaller depth."""
    points = list(curve)
    if not points:
        raise InfeasibleError("cannot optimize an empty curve")
    best = None
    for p in sorted(points, key=lambda r: r.depth):
        if best is None or p.power > best.power:
            best = p
    return DepthOptimum(best.depth, best.size, best.power, best)
