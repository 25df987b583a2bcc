"""Optimal privacy-budget allocation and release for hierarchical counts."""

from .allocator import (
    BudgetAllocation,
    allocate_fixed_budget,
    allocate_target_mse,
    level_marginal,
    uniform_allocation,
)
from .analytics import (
    LevelWeights,
    bias,
    mse,
    mse_deps,
    variance,
    weighted_total_mse,
)
from .downstream import (
    WeightFunction,
    compare_misallocation,
    make_tract_privatizer,
    misallocation_stats,
    proportions,
    weighted_shares,
)
from .evaluation import (
    ComparisonReport,
    MomentEstimate,
    analytic_total_mse,
    compare_allocations,
    monte_carlo_moments,
    skewness_bias_curve,
    weight_sweep,
)
from .hierarchy import (
    Hierarchy,
    HierNode,
    LevelStats,
    SynthSpec,
    check_consistency,
    level_stats,
    parse_hierarchy,
    serialize_hierarchy,
    synth_hierarchy,
)
from .release import (
    PrivatizedHierarchy,
    enforce_consistency,
    laplace_sample,
    project_children,
    release_no_hier,
)

__all__ = [
    "BudgetAllocation",
    "ComparisonReport",
    "Hierarchy",
    "HierNode",
    "LevelStats",
    "LevelWeights",
    "MomentEstimate",
    "PrivatizedHierarchy",
    "SynthSpec",
    "WeightFunction",
    "allocate_fixed_budget",
    "allocate_target_mse",
    "analytic_total_mse",
    "bias",
    "check_consistency",
    "compare_allocations",
    "compare_misallocation",
    "enforce_consistency",
    "laplace_sample",
    "level_marginal",
    "level_stats",
    "make_tract_privatizer",
    "misallocation_stats",
    "monte_carlo_moments",
    "mse",
    "mse_deps",
    "parse_hierarchy",
    "project_children",
    "proportions",
    "release_no_hier",
    "serialize_hierarchy",
    "skewness_bias_curve",
    "synth_hierarchy",
    "uniform_allocation",
    "variance",
    "weight_sweep",
    "weighted_shares",
    "weighted_total_mse",
]

__version__ = "0.1.0"
