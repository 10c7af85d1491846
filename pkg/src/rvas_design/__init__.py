"""Design calculations for sequencing-based rare-variant burden studies."""

__version__ = "0.1.0"

from .exceptions import (
    ConvergenceError,
    DegenerateError,
    DomainError,
    InfeasibleError,
    RvasError,
    TruncationError,
)
from .numerics import Tolerance, noncentral_t_cdf, noncentral_t_sf
from .power import (
    AnalyticBernoulliModel,
    HierarchicalMCModel,
    SampleSummary,
    fixed_budget_curve,
    fixed_design_curve,
    optimize_depth,
    power_at,
)
from .predictive import PriorParams, excess_ratio, gamma_k
from .seqmodel import CostModel, SeqConfig, detection_prob
from .simulate import GenotypeMatrix, HierParams
from .streams import RandomStream

__all__ = [
    "__version__",
    "AnalyticBernoulliModel",
    "ConvergenceError",
    "CostModel",
    "DegenerateError",
    "DomainError",
    "GenotypeMatrix",
    "HierParams",
    "HierarchicalMCModel",
    "InfeasibleError",
    "PriorParams",
    "RandomStream",
    "RvasError",
    "SampleSummary",
    "SeqConfig",
    "Tolerance",
    "TruncationError",
    "detection_prob",
    "excess_ratio",
    "fixed_budget_curve",
    "fixed_design_curve",
    "gamma_k",
    "noncentral_t_cdf",
    "noncentral_t_sf",
    "optimize_depth",
    "power_at",
]
