"""Sequencing error model, threshold variant calling and sequencing cost."""

from dataclasses import dataclass
import math

import numpy as np

from .exceptions import DomainError, InfeasibleError
from .numerics import poisson_sf
from .streams import as_generator

__all__ = [
    "SeqConfig",
    "CostModel",
    "detection_prob",
    "thin_matrix",
    "cost",
    "max_samples_under_budget",
]


@dataclass(frozen=True)
class SeqConfig:
    """Sequencing depth, calling threshold and per-read error rate.

    A variant is called when at least ``call_threshold`` error-free reads
    cover it; read counts are Poisson with mean ``depth``.
    """

    depth: float
    call_threshold: int = 30
    err_rate: float = 0.05

    def __post_init__(self):
        if not self.depth >= 0 or math.isinf(self.depth):
            raise DomainError(f"depth must be finite and >= 0, got {self.depth}")
        if int(self.call_threshold) != self.call_threshold or self.call_threshold < 1:
            raise DomainError(f"call_threshold must be an integer >= 1, got {self.call_threshold}")
        if not 0 <= self.err_rate < 1:
            raise DomainError(f"err_rate must lie in [0, 1), got {self.err_rate}")

    def with_depth(self, depth):
        return SeqConfig(depth, self.call_threshold, self.err_rate)


@dataclass(frozen=True)
class CostModel:
    fixed_cost: float = 0.0
    per_sample_rate: float = 1.0

    def __post_init__(self):
        if not self.fixed_cost >= 0:
            raise DomainError(f"fixed_cost must be >= 0, got {self.fixed_cost}")
        if not self.per_sample_rate > 0:
            raise DomainError(f"per_sample_rate must be > 0, got {self.per_sample_rate}")


def detection_prob(cfg):
    """Probability that a present variant is called, P(Poisson(depth (1 - err)) >= D)."""
    return poisson_sf(cfg.depth * (1.0 - cfg.err_rate), cfg.call_threshold)


def thin_matrix(x, cfg, rng, simulate_reads=False):
    """Apply the threshold calling rule to a genotype matrix.

    Every nonzero entry survives independently with probability
    ``detection_prob(cfg)`` and keeps its full genotype value. With
    ``simulate_reads=True`` the read counts and read errors are drawn
    explicitly instead; the result has the same law and exists for
    cross-checking.

    ``x`` may be a :class:`~rvas_design.simulate.GenotypeMatrix` or an array;
    the return type matches the input.
    """
    entries = getattr(x, "entries", x)
    entries = np.asarray(entries)
    gen = as_generator(rng)
    if simulate_reads:
        reads = gen.poisson(cfg.depth, size=entries.shape)
        good = gen.binomial(reads, 1.0 - cfg.err_rate)
        keep = good >= cfg.call_threshold
    else:
        keep = gen.random(entries.shape) < detection_prob(cfg)
    thinned = np.where(keep, entries, 0).astype(entries.dtype)
    if hasattr(x, "entries"):
        return x.replace_entries(thinned)
    return thinned


def cost(total_samples, depth, cm):
    """Sequencing cost ``m * depth * per_sample_rate + fixed_cost``."""
    if total_samples < 0:
        raise DomainError(f"total_samples must be >= 0, got {total_samples}")
    if not depth >= 0:
        raise DomainError(f"depth must be >= 0, got {depth}")
    return total_samples * depth * cm.per_sample_rate + cm.fixed_cost


def max_samples_under_budget(budget, depth, cm, groups=2):
    """Largest per-group size m with ``cost(groups * m, depth, cm) <= budget``.

    Returns 0 when not even one sample per group is affordable.
    """
    if not depth > 0:
        raise DomainError(f"depth must be > 0, got {depth}")
    if int(groups) != groups or groups < 1:
        raise DomainError(f"groups must be a positive integer, got {groups}")
    if not budget > cm.fixed_cost:
        raise InfeasibleError(
            f"budget {budget} does not exceed the fixed cost {cm.fixed_cost}"
        )
    per_group_unit = groups * depth * cm.per_sample_rate
    m = int(math.floor((budget - cm.fixed_cost) / per_group_unit))
    # guard the floor against rounding in either direction
    while m > 0 and cost(groups * m, depth, cm) > budget:
        m -= 1
    while cost(groups * (m + 1), depth, cm) <= budget:
        m += 1
    return m
