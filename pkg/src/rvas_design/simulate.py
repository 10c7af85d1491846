"""Generative samplers and k-ton count statistics.

Two models are simulated:

* the three-parameter beta-Bernoulli model, by the sequential (buffet)
  marginal scheme, giving binary haploid matrices;
* the hierarchical model, where population frequencies are Beta-dispersed
  around shared beta-process frequencies and diploid genotypes follow
  Hardy-Weinberg proportions of the detection-thinned frequency.

For the hierarchical model the default sampler is exact: it simulates only
the variants that have at least one carrier, indexing each variant by its
first carrier allele, so no atoms are discarded and the reported truncation
bound is 0. A truncated sampler built on :func:`sample_shared_measure` is
kept for cross-checks on small designs.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math

import numpy as np
from scipy import special

from .exceptions import DomainError, TruncationError
from .predictive import PriorParams
from .seqmodel import detection_prob, thin_matrix
from .streams import RandomStream, as_generator

__all__ = [
    "GenotypeMatrix",
    "HierParams",
    "FrequencyMeasure",
    "KtonSummary",
    "sample_bernoulli_cohort",
    "sample_shared_measure",
    "sample_hier_cohorts",
    "hwe_probs",
    "count_ktons",
    "count_exclusive_ktons",
    "mc_kton_summary",
    "mc_bernoulli_kton_summary",
]

PLOIDY_MODES = ("binary", "diploid")
KTON_MODES = ("exact", "at_most")
CARRIER_RULES = ("any_nonzero", "allele_count")
TRUNCATION_BOUND = 0.01


@dataclass(frozen=True, eq=False)
class GenotypeMatrix:
    """Individuals-by-variants genotype matrix for one population.

    Columns are variant labels in order of appearance and are shared across
    the matrices of a joint draw.
    """

    entries: np.ndarray
    population_id: str = "0"
    ploidy_mode: str = "binary"

    def __post_init__(self):
        if self.ploidy_mode not in PLOIDY_MODES:
            raise DomainError(f"ploidy_mode must be one of {PLOIDY_MODES}, got {self.ploidy_mode!r}")
        entries = np.asarray(self.entries)
        if entries.ndim != 2:
            raise DomainError(f"genotype matrix must be 2-D, got shape {entries.shape}")
        top = 1 if self.ploidy_mode == "binary" else 2
        if entries.size and (entries.min() < 0 or entries.max() > top):
            raise DomainError(f"{self.ploidy_mode} entries must lie in [0, {top}]")
        entries = entries.astype(np.int8, copy=True)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def shape(self):
        return self.entries.shape

    def replace_entries(self, entries):
        return GenotypeMatrix(entries, self.population_id, self.ploidy_mode)

    def to_text(self):
        """Render in the ``#rvas-matrix v1`` dump format."""
        n, L = self.entries.shape
        lines = [f"#rvas-matrix v1 pop={self.population_id} mode={self.ploidy_mode} rows={n} cols={L}"]
        lines.extend(" ".join(str(v) for v in row) for row in self.entries.tolist())
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#rvas-matrix v1"):
            raise DomainError("missing '#rvas-matrix v1' header")
        header = dict(tok.split("=", 1) for tok in lines[0].split()[2:])
        n, L = int(header["rows"]), int(header["cols"])
        body = [[int(v) for v in line.split()] for line in lines[1 : 1 + n]]
        entries = np.array(body, dtype=np.int8).reshape(n, L)
        return cls(entries, header["pop"], header["mode"])


@dataclass(frozen=True)
class HierParams:
    """Shared beta-process hyperparameters plus per-population Beta dispersion (a_j, b_j)."""

    shared: PriorParams
    per_pop: tuple
    population_ids: tuple = None

    def __post_init__(self):
        per_pop = tuple((float(a), float(b)) for a, b in self.per_pop)
        if not per_pop:
            raise DomainError("at least one population is required")
        for j, (a, b) in enumerate(per_pop):
            if not (a > 0 and b > 0):
                raise DomainError(f"population {j}: a and b must be > 0, got ({a}, {b})")
        object.__setattr__(self, "per_pop", per_pop)
        ids = self.population_ids
        if ids is None:
            ids = tuple(str(j + 1) for j in range(len(per_pop)))
        ids = tuple(str(i) for i in ids)
        if len(ids) != len(per_pop):
            raise DomainError("population_ids must match per_pop in length")
        object.__setattr__(self, "population_ids", ids)

    @property
    def n_populations(self):
        return len(self.per_pop)


@dataclass(frozen=True, eq=False)
class FrequencyMeasure:
    """Finite atom list of a truncated beta-process draw."""

    atoms: np.ndarray
    truncation_mass_bound: float
    threshold: float = 0.0

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.size and (atoms.min() <= 0 or atoms.max() > 1):
            raise DomainError("atoms must lie in (0, 1]")
        object.__setattr__(self, "atoms", atoms)

    def __len__(self):
        return self.atoms.size


@dataclass(frozen=True)
class KtonSummary:
    population_id: str
    mean: float
    variance: float
    se: float
    replicates: int
    truncation_mass_bound: float = 0.0


def _check_kton_args(k, mode, carrier_rule="any_nonzero"):
    if int(k) != k or k < 1:
        raise DomainError(f"k must be a positive integer, got {k}")
    if mode not in KTON_MODES:
        raise DomainError(f"mode must be one of {KTON_MODES}, got {mode!r}")
    if carrier_rule not in CARRIER_RULES:
        raise DomainError(f"carrier_rule must be one of {CARRIER_RULES}, got {carrier_rule!r}")


def _kton_mask(carriers, k, mode):
    if mode == "exact":
        return carriers == k
    return (carriers >= 1) & (carriers <= k)


def _column_carriers(matrix, carrier_rule):
    entries = matrix.entries
    if carrier_rule == "any_nonzero":
        return (entries > 0).sum(axis=0)
    return entries.sum(axis=0, dtype=np.int64)


# --------------------------------------------------------------------------
# beta-Bernoulli model


def _new_variant_rate(prior, n_seen):
    """Expected number of new variants in row ``n_seen + 1`` of the buffet scheme."""
    c, s = prior.concentration, prior.discount
    log_rate = (
        special.gammaln(1.0 + c)
        + special.gammaln(n_seen + c + s)
        - special.gammaln(n_seen + 1.0 + c)
        - special.gammaln(c + s)
    )
    return prior.mass * math.exp(log_rate)


def sample_bernoulli_cohort(prior, n, rng, population_id="0"):
    """Draw ``n`` binary rows from the three-parameter beta-Bernoulli model.

    Row ``i + 1`` carries existing variant ``l`` with probability
    ``(m_l - sigma) / (i + c)``, ``m_l`` being its count so far, and adds a
    Poisson number of new variants.
    """
    if int(n) != n or n < 1:
        raise DomainError(f"n must be a positive integer, got {n}")
    gen = as_generator(rng)
    sigma, c = prior.discount, prior.concentration
    counts = np.zeros(0, dtype=np.int64)
    rows = []
    for i in range(int(n)):
        if counts.size:
            keep = gen.random(counts.size) < (counts - sigma) / (i + c)
        else:
            keep = np.zeros(0, dtype=bool)
        n_new = gen.poisson(_new_variant_rate(prior, i))
        present = np.concatenate([np.flatnonzero(keep), counts.size + np.arange(n_new)])
        counts = np.concatenate([counts + keep, np.ones(n_new, dtype=np.int64)])
        rows.append(present)
    entries = np.zeros((int(n), counts.size), dtype=np.int8)
    for i, present in enumerate(rows):
        entries[i, present] = 1
    return GenotypeMatrix(entries, population_id, "binary")


# --------------------------------------------------------------------------
# truncated shared measure


def _log_levy_constant(prior):
    c, s = prior.concentration, prior.discount
    return (
        math.log(prior.mass)
        + special.gammaln(1.0 + c)
        - special.gammaln(1.0 - s)
        - special.gammaln(c + s)
    )


def truncation_threshold(prior, horizon, bound=TRUNCATION_BOUND, carrier_factor=1.0):
    """Smallest atom size kept so that discarded atoms carry fewer than ``bound`` expected variants.

    The expected number of carriers among ``horizon`` individuals contributed
    by atoms below ``eps`` is at most
    ``horizon * carrier_factor * mass * I_eps(1 - sigma, c + sigma)``.
    Returns ``(eps, achieved_bound)``.
    """
    s, c = prior.discount, prior.concentration
    scale = horizon * carrier_factor * prior.mass
    target = bound / scale
    if target >= 1:
        return 0.5, scale * float(special.betainc(1.0 - s, c + s, 0.5))
    eps = float(special.betaincinv(1.0 - s, c + s, target))
    if not eps > 0:
        raise TruncationError(
            f"truncation threshold underflows for horizon={horizon}, bound={bound}"
        )
    return eps, scale * float(special.betainc(1.0 - s, c + s, eps))


def sample_shared_measure(
    prior,
    horizon,
    rng,
    bound=TRUNCATION_BOUND,
    carrier_factor=1.0,
    max_atoms=5_000_000,
):
    """Draw the atoms of a beta-process measure above an adaptive threshold.

    Atoms are sampled by thinning two envelopes of the Levy density, a power
    law on ``[eps, 1/2]`` and a Beta-like tail on ``[1/2, 1]``. ``horizon``
    is the number of individuals that will be drawn from the measure;
    ``carrier_factor`` inflates the per-atom carrier rate for diploid or
    dispersed emissions.

    Raises
    ------
    TruncationError
        If the expected number of proposals exceeds ``max_atoms``.
    """
    if int(horizon) != horizon or horizon < 1:
        raise DomainError(f"horizon must be a positive integer, got {horizon}")
    if not 0 < bound <= TRUNCATION_BOUND:
        raise DomainError(f"bound must lie in (0, {TRUNCATION_BOUND}], got {bound}")
    gen = as_generator(rng)
    eps, achieved = truncation_threshold(prior, horizon, bound, carrier_factor)
    s, c = prior.discount, prior.concentration
    cs = c + s
    log_C = _log_levy_constant(prior)

    # envelope on [eps, 1/2]: C * K1 * theta^(-1-s)
    K1 = max(1.0, 2.0 ** (1.0 - cs))
    if s > 0:
        mass1 = (eps ** (-s) - 2.0**s) / s
    else:
        mass1 = math.log(0.5 / eps)
    mass1 = max(mass1, 0.0) * K1
    # envelope on [lo, 1]: C * K2 * (1-theta)^(cs-1)
    lo = max(eps, 0.5)
    K2 = lo ** (-1.0 - s)
    mass2 = K2 * (1.0 - lo) ** cs / cs

    expected = math.exp(log_C) * (mass1 + mass2)
    if expected > max_atoms:
        raise TruncationError(
            f"truncation to bound {bound} needs ~{expected:.3g} atom proposals (budget {max_atoms})"
        )

    n1 = gen.poisson(math.exp(log_C) * mass1) if mass1 > 0 else 0
    u = gen.random(n1)
    if s > 0:
        theta1 = (eps ** (-s) - u * (eps ** (-s) - 2.0**s)) ** (-1.0 / s)
    else:
        theta1 = eps * (0.5 / eps) ** u
    keep1 = gen.random(n1) < (1.0 - theta1) ** (cs - 1.0) / K1

    n2 = gen.poisson(math.exp(log_C) * mass2)
    theta2 = 1.0 - (1.0 - lo) * gen.random(n2) ** (1.0 / cs)
    keep2 = gen.random(n2) < theta2 ** (-1.0 - s) / K2

    atoms = np.concatenate([theta1[keep1], theta2[keep2]])
    atoms = atoms[atoms > 0]
    return FrequencyMeasure(atoms, achieved, eps)


# --------------------------------------------------------------------------
# hierarchical model


def hwe_probs(theta):
    """Hardy-Weinberg genotype probabilities ``((1-t)^2, 2t(1-t), t^2)``."""
    if not 0 <= theta <= 1:
        raise DomainError(f"theta must lie in [0, 1], got {theta}")
    q = 1.0 - theta
    # each term directly; differencing from one goes negative for tiny theta
    return (q * q, 2.0 * theta * q, theta * theta)


def _beta_draw(gen, a, b):
    """Beta draws that tolerate vanishing shape parameters at the boundary."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    tiny = 1e-300
    out = gen.beta(np.maximum(a, tiny), np.maximum(b, tiny))
    out = np.where(b <= tiny, 1.0, out)
    out = np.where(a <= tiny, 0.0, out)
    return out


@dataclass
class _FirstCarrierAtoms:
    theta: np.ndarray  # (L, J) detection-thinned allele probabilities
    first_pop: np.ndarray  # (L,)
    first_pos: np.ndarray  # (L,) allele index inside first_pop
    sizes: tuple = field(default_factory=tuple)


def _first_carrier_atoms(hp, sizes, phi, gen):
    """Variants with at least one carrier allele, drawn exactly.

    Each carried variant is indexed by its first carrier allele (populations
    in order, alleles in order). Proposals arrive per allele at rate
    ``mass * phi * kappa_j`` with shared frequency ~ Beta(1 - sigma, c + sigma);
    accepting with ``E[theta_j | theta_0] / (kappa_j theta_0)`` and drawing
    theta_j size-biased gives the intensity of "this allele is a carrier",
    and a final acceptance asks that every earlier allele is not.
    """
    prior = hp.shared
    s, c = prior.discount, prior.concentration
    J = hp.n_populations
    thetas, firsts, positions = [], [], []
    for j, (a_j, b_j) in enumerate(hp.per_pop):
        n_alleles = 2 * sizes[j]
        kappa = max(1.0, a_j / b_j)
        n_prop = gen.poisson(prior.mass * phi * kappa * n_alleles) if phi > 0 else 0
        if n_prop == 0:
            continue
        theta0 = gen.beta(1.0 - s, c + s, size=n_prop)
        ratio = a_j / (a_j * theta0 + b_j * (1.0 - theta0)) / kappa
        theta0 = theta0[gen.random(n_prop) < ratio]
        n = theta0.size
        if n == 0:
            continue
        theta = np.empty((n, J))
        for jj, (a, b) in enumerate(hp.per_pop):
            if jj == j:
                theta[:, jj] = _beta_draw(gen, a * theta0 + 1.0, b * (1.0 - theta0))
            else:
                theta[:, jj] = _beta_draw(gen, a * theta0, b * (1.0 - theta0))
        theta *= phi
        pos = gen.integers(0, n_alleles, size=n)
        log_clear = pos * np.log1p(-np.minimum(theta[:, j], 1.0 - 1e-16))
        for jj in range(j):
            log_clear = log_clear + 2 * sizes[jj] * np.log1p(-np.minimum(theta[:, jj], 1.0 - 1e-16))
        # theta == 1 in an earlier slot means that slot certainly carries
        blocked = np.zeros(n, dtype=bool)
        for jj in range(j):
            blocked |= (theta[:, jj] >= 1.0) & (sizes[jj] > 0)
        blocked |= (theta[:, j] >= 1.0) & (pos > 0)
        keep = (gen.random(n) < np.exp(log_clear)) & ~blocked
        thetas.append(theta[keep])
        firsts.append(np.full(int(keep.sum()), j, dtype=np.int64))
        positions.append(pos[keep])
    if thetas:
        theta = np.concatenate(thetas)
        first_pop = np.concatenate(firsts)
        first_pos = np.concatenate(positions)
    else:
        theta = np.zeros((0, J))
        first_pop = np.zeros(0, dtype=np.int64)
        first_pos = np.zeros(0, dtype=np.int64)
    return _FirstCarrierAtoms(theta, first_pop, first_pos, tuple(sizes))


def _carrier_counts(atoms, carrier_rule, gen):
    """Per-variant carrier counts, shape (L, J), without building genotypes."""
    L, J = atoms.theta.shape
    out = np.zeros((L, J), dtype=np.int64)
    for j in range(J):
        M = atoms.sizes[j]
        p = atoms.theta[:, j]
        first = atoms.first_pop == j
        after = atoms.first_pop < j
        if carrier_rule == "any_nonzero":
            q = 1.0 - (1.0 - p) ** 2
            out[after, j] = gen.binomial(M, q[after])
            ind = atoms.first_pos[first] // 2
            out[first, j] = 1 + gen.binomial(M - ind - 1, q[first])
        else:
            out[after, j] = gen.binomial(2 * M, p[after])
            rest = 2 * M - atoms.first_pos[first] - 1
            out[first, j] = 1 + gen.binomial(rest, p[first])
    return out


def _genotypes_from_atoms(atoms, gen):
    """Dense diploid genotype matrices, one (M_j, L) array per population."""
    L, J = atoms.theta.shape
    mats = []
    for j in range(J):
        M = atoms.sizes[j]
        p = atoms.theta[:, j]
        g = gen.binomial(2, np.broadcast_to(p, (M, L))).astype(np.int8)
        g[:, atoms.first_pop > j] = 0
        cols = np.flatnonzero(atoms.first_pop == j)
        if cols.size:
            pos = atoms.first_pos[cols]
            ind = pos // 2
            partner = np.where(pos % 2 == 0, gen.random(cols.size) < p[cols], False)
            rows = np.arange(M)[:, None]
            g[:, cols] = np.where(rows < ind[None, :], 0, g[:, cols])
            g[ind, cols] = 1 + partner.astype(np.int8)
        mats.append(g)
    return mats


def _hier_truncated(hp, sizes, phi, gen, bound):
    kappa = max(max(1.0, a / b) for a, b in hp.per_pop)
    measure = sample_shared_measure(
        hp.shared, int(sum(sizes)), gen, bound=bound, carrier_factor=2.0 * kappa
    )
    theta0 = measure.atoms
    mats = []
    for j, (a, b) in enumerate(hp.per_pop):
        theta = phi * _beta_draw(gen, a * theta0, b * (1.0 - theta0))
        mats.append(gen.binomial(2, np.broadcast_to(theta, (sizes[j], theta0.size))).astype(np.int8))
    return mats, measure.truncation_mass_bound


def _check_sizes(hp, sizes):
    sizes = tuple(int(m) for m in sizes)
    if len(sizes) != hp.n_populations:
        raise DomainError(f"expected {hp.n_populations} sizes, got {len(sizes)}")
    if any(m < 1 for m in sizes):
        raise DomainError(f"population sizes must be positive, got {sizes}")
    return sizes


def sample_hier_cohorts(hp, sizes, cfg, rng, method="exact", bound=TRUNCATION_BOUND):
    """Joint diploid draw for every population of the hierarchical model.

    Genotypes follow Hardy-Weinberg proportions of ``phi * theta_j`` with
    ``phi = detection_prob(cfg)``. Columns are shared across the returned
    matrices; variants without any carrier in any population are dropped.

    ``method="exact"`` (default) never discards carried variants.
    ``method="truncated"`` draws the shared measure through
    :func:`sample_shared_measure` and may raise :class:`TruncationError`.
    """
    sizes = _check_sizes(hp, sizes)
    gen = as_generator(rng)
    phi = detection_prob(cfg)
    if method == "exact":
        atoms = _first_carrier_atoms(hp, sizes, phi, gen)
        mats = _genotypes_from_atoms(atoms, gen)
    elif method == "truncated":
        mats, _ = _hier_truncated(hp, sizes, phi, gen, bound)
        carried = np.zeros(mats[0].shape[1], dtype=bool)
        for g in mats:
            carried |= (g > 0).any(axis=0)
        mats = [g[:, carried] for g in mats]
    else:
        raise DomainError(f"method must be 'exact' or 'truncated', got {method!r}")
    return [
        GenotypeMatrix(g, pid, "diploid") for g, pid in zip(mats, hp.population_ids)
    ]


# --------------------------------------------------------------------------
# counting


def count_ktons(m, k, mode="exact", carrier_rule="any_nonzero"):
    """Number of columns with exactly (or at most) ``k`` carriers."""
    _check_kton_args(k, mode, carrier_rule)
    return int(_kton_mask(_column_carriers(m, carrier_rule), k, mode).sum())


def count_exclusive_ktons(target, others, k, mode="exact", carrier_rule="any_nonzero"):
    """k-tons of ``target`` that have no carrier in any matrix of ``others``."""
    _check_kton_args(k, mode, carrier_rule)
    L = target.shape[1]
    mask = _kton_mask(_column_carriers(target, carrier_rule), k, mode)
    for other in others:
        if other.shape[1] != L:
            raise DomainError(
                f"column spaces differ: target has {L} variants, other has {other.shape[1]}"
            )
        mask &= ~(other.entries > 0).any(axis=0)
    return int(mask.sum())


def _counts_from_carriers(carriers, k, mode, exclusive):
    L, J = carriers.shape
    out = np.zeros(J, dtype=np.int64)
    for j in range(J):
        mask = _kton_mask(carriers[:, j], k, mode)
        if exclusive and J > 1:
            others = np.delete(carriers, j, axis=1)
            mask &= (others == 0).all(axis=1)
        out[j] = mask.sum()
    return out


def _summarize(per_individual, ids, bound=0.0):
    R = per_individual.shape[0]
    out = []
    for j, pid in enumerate(ids):
        col = per_individual[:, j]
        var = float(np.var(col, ddof=1)) if R > 1 else 0.0
        out.append(KtonSummary(pid, float(col.mean()), var, math.sqrt(var / R), R, bound))
    return out


def _run_replicates(fn, replicates, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            return list(pool.map(fn, range(replicates)))
    return [fn(r) for r in range(replicates)]


def mc_kton_summary(
    hp,
    sizes,
    cfg,
    k,
    mode="exact",
    exclusive=False,
    replicates=200,
    rng=0,
    carrier_rule="any_nonzero",
    threads=1,
    method="exact",
):
    """Monte Carlo mean and variance of per-individual k-ton counts, per population.

    Replicate ``r`` uses substream ``rng.child(r)``, so results do not depend
    on ``threads``. The variance is the across-replicate sample variance of
    the per-individual count; ``se`` is the standard error of the mean.
    """
    sizes = _check_sizes(hp, sizes)
    _check_kton_args(k, mode, carrier_rule)
    if int(replicates) != replicates or replicates < 2:
        raise DomainError(f"replicates must be an integer >= 2, got {replicates}")
    if method not in ("exact", "truncated"):
        raise DomainError(f"method must be 'exact' or 'truncated', got {method!r}")
    stream = rng if isinstance(rng, RandomStream) else RandomStream(int(rng))
    phi = detection_prob(cfg)

    def one(r):
        gen = stream.child(r).generator()
        if method == "exact":
            atoms = _first_carrier_atoms(hp, sizes, phi, gen)
            carriers = _carrier_counts(atoms, carrier_rule, gen)
            bound = 0.0
        else:
            mats, bound = _hier_truncated(hp, sizes, phi, gen, TRUNCATION_BOUND)
            if carrier_rule == "any_nonzero":
                carriers = np.stack([(g > 0).sum(axis=0) for g in mats], axis=1)
            else:
                carriers = np.stack([g.sum(axis=0, dtype=np.int64) for g in mats], axis=1)
        counts = _counts_from_carriers(carriers, k, mode, exclusive)
        return counts / np.asarray(sizes, dtype=float), bound

    results = _run_replicates(one, int(replicates), threads)
    per_individual = np.array([r[0] for r in results])
    bound = max(r[1] for r in results)
    return _summarize(per_individual, hp.population_ids, bound)


def mc_bernoulli_kton_summary(
    prior, size, cfg, k, mode="exact", replicates=200, rng=0, population_id="0", threads=1
):
    """Monte Carlo k-ton summary for the beta-Bernoulli model after thinning.

    Returns a :class:`KtonSummary` whose mean is the per-individual k-ton
    count; ``mean * size`` estimates ``gamma_k`` (or its cumulative sum).
    """
    _check_kton_args(k, mode)
    if int(replicates) != replicates or replicates < 2:
        raise DomainError(f"replicates must be an integer >= 2, got {replicates}")
    stream = rng if isinstance(rng, RandomStream) else RandomStream(int(rng))

    def one(r):
        gen = stream.child(r).generator()
        x = sample_bernoulli_cohort(prior, size, gen, population_id)
        z = thin_matrix(x, cfg, gen)
        return count_ktons(z, k, mode) / size

    values = np.array(_run_replicates(one, int(replicates), threads))[:, None]
    return _summarize(values, (population_id,))[0]
