"""Budget-share misallocation driven by privatized counts.

A fixed budget is split across sibling groups in proportion to a weight
function of their population shares. Computing those shares from noisy
counts misallocates; this module measures the squared bias and variance
of that misallocation in percentage points of share, comparing true
against privatized shares replicate by replicate.

Nonlinear weight functions shift the mean through the usual convexity
argument: a convex weight (quadratic) inflates expected weights of
noisy proportions, a concave one (log) deflates them. The reported
``jensen_gap`` is the summed gap between the mean weighted noisy
proportion and the weight of the mean noisy proportion, so its sign
exposes that direction directly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .allocator import allocate_fixed_budget, uniform_allocation
from .errors import DegenerateWeights, DomainError, ZeroTotal
from .hierarchy import HierNode, Hierarchy, level_stats
from .release import enforce_consistency, release_no_hier
from .rng import derive_seed


class WeightFunction(enum.Enum):
    """Share weighting: ln(p+1) favors small groups, p is proportional,
    p^2 favors large groups. All vanish at 0 and increase on [0, 1]."""

    LOG = "log"
    LINEAR = "linear"
    QUADRATIC = "quadratic"

    def apply(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if self is WeightFunction.LOG:
            return np.log1p(p)
        if self is WeightFunction.LINEAR:
            return p.copy()
        return p * p

    @classmethod
    def parse(cls, name: str) -> "WeightFunction":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise DomainError(
                f"unknown weight function {name!r}; "
                f"choose from {[m.value for m in cls]}"
            ) from None


def proportions(counts: Sequence[float]) -> np.ndarray:
    """Group sizes relative to the total; sums to one."""
    arr = np.asarray(counts, dtype=float)
    total = float(arr.sum())
    if not total > 0:
        raise ZeroTotal(f"counts sum to {total!r}; proportions undefined")
    if arr.min() < 0:
        raise DomainError("counts must be nonnegative")
    return arr / total


def weighted_shares(
    counts: Sequence[float], w: WeightFunction
) -> np.ndarray:
    """Budget shares: weight each group's proportion, then normalize."""
    weights = w.apply(proportions(counts))
    total = float(weights.sum())
    if not total > 0:
        raise DegenerateWeights("all weighted proportions are zero")
    return weights / total


@dataclass(frozen=True)
class MisallocationStats:
    """Misallocation moments in percentage points of share."""

    bias_sq_pct: float
    variance_pct: float
    mse_pct: float
    se_bias_sq_pct: float
    se_variance_pct: float
    se_mse_pct: float
    jensen_gap: float
    per_group_mean_error: tuple[float, ...]
    per_group_var_error: tuple[float, ...]
    replicates_used: int
    excluded_replicates: int

    def to_json_dict(self) -> dict:
        return {
            "bias_sq_pct": self.bias_sq_pct,
            "variance_pct": self.variance_pct,
            "mse_pct": self.mse_pct,
            "se_bias_sq_pct": self.se_bias_sq_pct,
            "se_variance_pct": self.se_variance_pct,
            "se_mse_pct": self.se_mse_pct,
            "jensen_gap": self.jensen_gap,
            "per_group_mean_error": list(self.per_group_mean_error),
            "per_group_var_error": list(self.per_group_var_error),
            "replicates_used": self.replicates_used,
            "excluded_replicates": self.excluded_replicates,
        }


def misallocation_stats(
    true_counts: Sequence[float],
    privatize_fn: Callable[[int], np.ndarray],
    w: WeightFunction,
    replicates: int,
    seed: int,
) -> MisallocationStats:
    """Replicate the privatization and accumulate share errors.

    ``privatize_fn`` receives a per-replicate seed derived from
    ``(seed, replicate)`` and returns noisy group counts; passing the
    same ``seed`` to several arms reuses identical noise (common random
    numbers). Replicates whose noisy counts clamp to an all-zero vector
    cannot form shares; they are excluded and counted, never imputed.
    """
    if replicates < 1000:
        raise DomainError(f"replicates must be >= 1000, got {replicates}")
    true_shares = weighted_shares(true_counts, w)
    n = len(true_shares)

    errors = np.empty((replicates, n))
    props = np.empty((replicates, n))
    kept = 0
    excluded = 0
    for r in range(replicates):
        noisy = privatize_fn(derive_seed(seed, r))
        try:
            p = proportions(noisy)
            shares = weighted_shares(noisy, w)
        except (ZeroTotal, DegenerateWeights):
            excluded += 1
            continue
        props[kept] = p
        errors[kept] = 100.0 * (shares - true_shares)
        kept += 1
    if kept < 2:
        raise DegenerateWeights(
            f"only {kept} usable replicates out of {replicates}"
        )
    errors = errors[:kept]
    props = props[:kept]

    mean_err = errors.mean(axis=0)
    var_err = errors.var(axis=0, ddof=1)
    bias_sq = float(np.sum(mean_err**2))
    variance = float(np.sum(var_err))

    per_rep_sq = np.sum(errors * errors, axis=1)
    mse = float(per_rep_sq.mean())
    se_mse = float(per_rep_sq.std(ddof=1)) / math.sqrt(kept)

    centered_sq = np.sum((errors - mean_err) ** 2, axis=1)
    se_variance = float(centered_sq.std(ddof=1)) / math.sqrt(kept)

    cov = np.cov(errors.T) if n > 1 else np.array([[errors.var(ddof=1)]])
    se_bias_sq = math.sqrt(
        max(4.0 * float(mean_err @ np.atleast_2d(cov) @ mean_err), 0.0) / kept
    )

    weighted = w.apply(props)
    jensen_gap = float(
        np.sum(weighted.mean(axis=0) - w.apply(props.mean(axis=0)))
    )

    return MisallocationStats(
        bias_sq_pct=bias_sq,
        variance_pct=variance,
        mse_pct=mse,
        se_bias_sq_pct=se_bias_sq,
        se_variance_pct=se_variance,
        se_mse_pct=se_mse,
        jensen_gap=jensen_gap,
        per_group_mean_error=tuple(mean_err.tolist()),
        per_group_var_error=tuple(var_err.tolist()),
        replicates_used=kept,
        excluded_replicates=excluded,
    )


ARM_OPTIMIZED = "optimized"
ARM_UNIFORM = "uniform"


def make_tract_privatizer(
    block_counts: Sequence[float],
    eps_total: float,
    arm: str = ARM_OPTIMIZED,
) -> Callable[[int], np.ndarray]:
    """Privatization recipe for one tract's blocks.

    Builds the two-level tract hierarchy (total over blocks), allocates
    the budget once (evenly split across levels for the uniform arm,
    optimally otherwise), and returns a closure that releases with
    clamping, projects the blocks onto the noisy total, and hands back
    the adjusted block counts. Arms differ only in the allocation step.
    """
    blocks = np.asarray(block_counts, dtype=float)
    if blocks.ndim != 1 or blocks.size == 0:
        raise DomainError("block_counts must be a nonempty vector")
    width = len(str(blocks.size))
    nodes = [HierNode("t", None, 1, float(blocks.sum()))]
    nodes += [
        HierNode(f"t-{j + 1:0{width}d}", "t", 2, float(c))
        for j, c in enumerate(blocks)
    ]
    h = Hierarchy(nodes)
    block_ids = h.level_ids(2)

    if arm == ARM_OPTIMIZED:
        alloc = allocate_fixed_budget(level_stats(h), (1.0, 1.0), eps_total)
    elif arm == ARM_UNIFORM:
        alloc = uniform_allocation(2, eps_total)
    else:
        raise DomainError(f"unknown arm {arm!r}")

    def privatize(release_seed: int) -> np.ndarray:
        released = enforce_consistency(
            release_no_hier(h, alloc, release_seed)
        )
        return np.array([released.values[i] for i in block_ids])

    return privatize


def compare_misallocation(
    block_counts: Sequence[float],
    eps_total: float,
    weight_fns: Sequence[WeightFunction],
    replicates: int,
    seed: int,
) -> dict[str, dict[str, MisallocationStats]]:
    """Both arms under every weight function, common random numbers."""
    report: dict[str, dict[str, MisallocationStats]] = {}
    for arm in (ARM_OPTIMIZED, ARM_UNIFORM):
        fn = make_tract_privatizer(block_counts, eps_total, arm)
        report[arm] = {
            w.value: misallocation_stats(block_counts, fn, w, replicates, seed)
            for w in weight_fns
        }
    return report
