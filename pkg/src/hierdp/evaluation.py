"""Monte Carlo evaluation of releases and the analytic sweeps.

Empirical squared bias, variance, and mse are per-node moments of the
release error summed over all released nodes, with standard errors from
per-replicate aggregates (exact for mse) and per-node moment expansions
(delta method for the bias term; treats nodes as independent, which is
exact for independent releases and approximate after the consistency
pass). Arm comparisons reuse identical noise streams per (node,
replicate): only the noise scales differ between arms, so the paired
differences are far tighter than the individual estimates.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .allocator import (
    BudgetAllocation,
    allocate_fixed_budget,
    uniform_allocation,
)
from .analytics import mse_sum
from .errors import AllocationMismatch, DomainError, InvalidSplit
from .hierarchy import Hierarchy, LevelStats, level_stats
from .release import project_rows
from .rng import centered_uniform_matrix, node_keys, standard_laplace

EPS_GRID_DEFAULT = (0.1, 0.25, 0.5, 1.0, 1.5, 2.0)

_CHUNK = 256


@dataclass(frozen=True)
class MomentEstimate:
    """Summed-over-nodes error moments with standard errors."""

    bias_sq: float
    variance: float
    mse: float
    se_bias_sq: float
    se_variance: float
    se_mse: float
    replicates: int

    def to_json_dict(self) -> dict:
        return {
            "bias_sq": self.bias_sq,
            "variance": self.variance,
            "mse": self.mse,
            "se_bias_sq": self.se_bias_sq,
            "se_variance": self.se_variance,
            "se_mse": self.se_mse,
            "replicates": self.replicates,
        }


@dataclass(frozen=True)
class ComparisonReport:
    """Four-arm comparison: {optimized, uniform} x {no hier, with hier},
    all arms driven by the same noise streams."""

    arms: dict[str, MomentEstimate]
    analytic_mse: dict[str, float]
    optimized: BudgetAllocation
    uniform: BudgetAllocation
    eps_total: float
    bias_sq_ratio: float
    variance_ratio: float

    def to_json_dict(self) -> dict:
        return {
            "eps_total": self.eps_total,
            "arms": {k: v.to_json_dict() for k, v in sorted(self.arms.items())},
            "analytic_mse": dict(sorted(self.analytic_mse.items())),
            "optimized": self.optimized.to_json_dict(),
            "uniform": self.uniform.to_json_dict(),
            "bias_sq_ratio_uniform_over_optimized": self.bias_sq_ratio,
            "variance_ratio_uniform_over_optimized": self.variance_ratio,
        }


class _ReleaseSampler:
    """Vectorized replicate machine for one (hierarchy, allocation)."""

    def __init__(self, h: Hierarchy, alloc: BudgetAllocation):
        if len(alloc.eps) != h.depth:
            raise AllocationMismatch(
                f"allocation has {len(alloc.eps)} levels, hierarchy {h.depth}"
            )
        self.h = h
        self.alloc = alloc
        self.levels = [
            lv for lv in range(1, h.depth + 1) if alloc.eps[lv - 1] > 0
        ]
        self.keys = {lv: node_keys(h.level_ids(lv)) for lv in self.levels}
        self.counts = {lv: h.level_counts(lv) for lv in self.levels}
        # per parent: (position of parent in its level, child columns)
        self.families = {}
        if self.levels == list(range(1, h.depth + 1)):
            for lv in range(1, h.depth):
                child_pos = {
                    nid: j for j, nid in enumerate(h.level_ids(lv + 1))
                }
                fams = []
                for i, pid in enumerate(h.level_ids(lv)):
                    cols = np.array(
                        [child_pos[c] for c in h.children_of(pid)], dtype=int
                    )
                    fams.append((i, cols))
                self.families[lv] = fams

    def noisy_chunk(self, seed: int, rep_lo: int, rep_hi: int) -> dict[int, np.ndarray]:
        """Clamped noisy counts per level, shape (reps, nodes)."""
        out = {}
        for lv in self.levels:
            scale = 1.0 / self.alloc.eps[lv - 1]
            noise = standard_laplace(
                centered_uniform_matrix(seed, self.keys[lv], rep_lo, rep_hi)
            )
            out[lv] = np.maximum(0.0, self.counts[lv][None, :] + scale * noise)
        return out

    def apply_consistency(self, noisy: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
        if not self.families and self.h.depth > 1:
            raise AllocationMismatch(
                "consistency pass requires every level released"
            )
        adjusted = {self.levels[0]: noisy[self.levels[0]]}
        for lv in range(1, self.h.depth):
            child = noisy[lv + 1].copy()
            parent = adjusted[lv]
            for i, cols in self.families[lv]:
                child[:, cols] = project_rows(child[:, cols], parent[:, i])
            adjusted[lv + 1] = child
        return adjusted


class _MomentAccumulator:
    def __init__(self, n_nodes: int, replicates: int):
        self.e1 = np.zeros(n_nodes)
        self.e2 = np.zeros(n_nodes)
        self.e3 = np.zeros(n_nodes)
        self.e4 = np.zeros(n_nodes)
        self.per_rep_sq = np.zeros(replicates)
        self.replicates = replicates

    def add(self, err: np.ndarray, rep_lo: int, rep_hi: int, col_lo: int):
        sl = slice(col_lo, col_lo + err.shape[1])
        sq = err * err
        self.e1[sl] += err.sum(axis=0)
        self.e2[sl] += sq.sum(axis=0)
        self.e3[sl] += (sq * err).sum(axis=0)
        self.e4[sl] += (sq * sq).sum(axis=0)
        self.per_rep_sq[rep_lo:rep_hi] += sq.sum(axis=1)

    def finalize(self) -> MomentEstimate:
        r = self.replicates
        m1 = self.e1 / r
        s2 = (self.e2 - r * m1 * m1) / (r - 1)
        m4 = (
            self.e4 / r
            - 4.0 * m1 * self.e3 / r
            + 6.0 * m1 * m1 * self.e2 / r
            - 3.0 * m1**4
        )
        bias_sq = float(np.sum(m1 * m1))
        var_total = float(np.sum(s2))
        se_bias = math.sqrt(max(float(np.sum(4.0 * m1 * m1 * s2)), 0.0) / r)
        se_var = math.sqrt(max(float(np.sum(np.maximum(m4 - s2 * s2, 0.0))), 0.0) / r)
        mse_emp = float(np.mean(self.per_rep_sq))
        se_mse = float(np.std(self.per_rep_sq, ddof=1)) / math.sqrt(r)
        return MomentEstimate(
            bias_sq=bias_sq,
            variance=var_total,
            mse=mse_emp,
            se_bias_sq=se_bias,
            se_variance=se_var,
            se_mse=se_mse,
            replicates=r,
        )


def monte_carlo_moments(
    h: Hierarchy,
    alloc: BudgetAllocation,
    replicates: int,
    seed: int,
    with_hier: bool = False,
) -> MomentEstimate:
    """Empirical release-error moments over all released nodes."""
    if replicates < 100:
        raise DomainError(f"replicates must be >= 100, got {replicates}")
    sampler = _ReleaseSampler(h, alloc)
    n_nodes = sum(len(sampler.counts[lv]) for lv in sampler.levels)
    acc = _MomentAccumulator(n_nodes, replicates)
    col_lo = {}
    offset = 0
    for lv in sampler.levels:
        col_lo[lv] = offset
        offset += len(sampler.counts[lv])

    for rep_lo in range(0, replicates, _CHUNK):
        rep_hi = min(rep_lo + _CHUNK, replicates)
        noisy = sampler.noisy_chunk(seed, rep_lo, rep_hi)
        if with_hier:
            noisy = sampler.apply_consistency(noisy)
        for lv in sampler.levels:
            err = noisy[lv] - sampler.counts[lv][None, :]
            acc.add(err, rep_lo, rep_hi, col_lo[lv])
    return acc.finalize()


def analytic_total_mse(h: Hierarchy, alloc: BudgetAllocation) -> float:
    """Unweighted closed-form total mse of the independent release."""
    if len(alloc.eps) != h.depth:
        raise AllocationMismatch(
            f"allocation has {len(alloc.eps)} levels, hierarchy {h.depth}"
        )
    total = 0.0
    for lv in range(1, h.depth + 1):
        eps = alloc.eps[lv - 1]
        if eps > 0:
            total += mse_sum(h.level_counts(lv), eps)
    return total


def compare_allocations(
    h: Hierarchy,
    eps_total: float,
    w: Sequence[float],
    replicates: int,
    seed: int,
    stats: Optional[LevelStats] = None,
) -> ComparisonReport:
    """Optimized-versus-uniform comparison with common random numbers.

    ``stats`` is the count source for the optimizer (pass previously
    released data to keep the split budget-true); defaults to the
    hierarchy's own counts.
    """
    stats = stats if stats is not None else level_stats(h)
    optimized = allocate_fixed_budget(stats, w, eps_total)
    uniform = uniform_allocation(h.depth, eps_total)

    arms: dict[str, MomentEstimate] = {}
    analytic: dict[str, float] = {}
    for name, alloc in (("optimized", optimized), ("uniform", uniform)):
        for hier_tag, with_hier in (("no_hier", False), ("with_hier", True)):
            arms[f"{name}_{hier_tag}"] = monte_carlo_moments(
                h, alloc, replicates, seed, with_hier=with_hier
            )
        analytic[name] = analytic_total_mse(h, alloc)

    opt = arms["optimized_no_hier"]
    uni = arms["uniform_no_hier"]
    return ComparisonReport(
        arms=arms,
        analytic_mse=analytic,
        optimized=optimized,
        uniform=uniform,
        eps_total=eps_total,
        bias_sq_ratio=uni.bias_sq / opt.bias_sq if opt.bias_sq > 0 else math.inf,
        variance_ratio=uni.variance / opt.variance if opt.variance > 0 else math.inf,
    )


@dataclass(frozen=True)
class WeightSweepRow:
    w3: float
    allocation: BudgetAllocation
    mse_levels: tuple[float, ...]
    total_mse: float
    empirical_mse: Optional[float] = None

    def to_json_dict(self) -> dict:
        d = {
            "w3": self.w3,
            "eps": list(self.allocation.eps),
            "mse_levels": list(self.mse_levels),
            "total_mse": self.total_mse,
        }
        if self.empirical_mse is not None:
            d["empirical_mse"] = self.empirical_mse
        return d


def weight_sweep(
    h: Hierarchy,
    eps_total: float,
    w3_grid: Sequence[float],
    replicates: int = 0,
    seed: int = 0,
    stats: Optional[LevelStats] = None,
) -> list[WeightSweepRow]:
    """Bottom-level weight ablation on a three-level hierarchy.

    For each w3, the remaining weight splits evenly across levels 1 and
    2; rows carry the resulting allocation and unweighted per-level
    analytic mse (plus an empirical total when replicates > 0).
    """
    if h.depth != 3:
        raise DomainError(f"weight sweep needs a 3-level hierarchy, got {h.depth}")
    stats = stats if stats is not None else level_stats(h)
    rows = []
    for w3 in w3_grid:
        if not 0.0 < w3 < 1.0:
            raise DomainError(f"w3 must lie in (0, 1), got {w3!r}")
        w = ((1.0 - w3) / 2.0, (1.0 - w3) / 2.0, w3)
        alloc = allocate_fixed_budget(stats, w, eps_total)
        per_level = tuple(
            mse_sum(h.level_counts(lv), alloc.eps[lv - 1]) for lv in (1, 2, 3)
        )
        empirical = None
        if replicates > 0:
            empirical = monte_carlo_moments(h, alloc, replicates, seed).mse
        rows.append(
            WeightSweepRow(
                w3=float(w3),
                allocation=alloc,
                mse_levels=per_level,
                total_mse=float(sum(per_level)),
                empirical_mse=empirical,
            )
        )
    return rows


def integer_splits(total: int, parts: int):
    """All ordered nonnegative integer splits of ``total`` into
    ``parts`` regions (stars and bars)."""
    if total < 0 or parts < 1:
        raise InvalidSplit(f"need total >= 0 and parts >= 1, got {total}, {parts}")
    for dividers in itertools.combinations(range(total + parts - 1), parts - 1):
        prev = -1
        split = []
        for d in dividers:
            split.append(d - prev - 1)
            prev = d
        split.append(total + parts - 2 - prev)
        yield tuple(split)


def uniform_split(total: int, parts: int) -> tuple[int, ...]:
    """Most even integer split: remainders spread one apiece."""
    base, rem = divmod(total, parts)
    return tuple(base + 1 if i < rem else base for i in range(parts))


def total_clamp_bias(split: Sequence[float], eps: float) -> float:
    """Closed-form total clamp bias of a flat region split."""
    arr = np.asarray(split, dtype=float)
    return float(np.sum(np.exp(-np.minimum(eps * arr, 745.0)))) / (2.0 * eps)


@dataclass(frozen=True)
class SkewnessPoint:
    split: tuple[int, ...]
    eps: float
    bias: float


def skewness_bias_curve(
    total_n: int,
    num_regions: int,
    eps_grid: Sequence[float],
    split_grid: Optional[Sequence[Sequence[int]]] = None,
) -> list[SkewnessPoint]:
    """Total clamp bias per (split, eps); exhausts all integer splits of
    ``total_n`` when no split grid is given. The most even split always
    attains the minimum at every eps."""
    splits = (
        [tuple(s) for s in split_grid]
        if split_grid is not None
        else list(integer_splits(total_n, num_regions))
    )
    for s in splits:
        if len(s) != num_regions:
            raise InvalidSplit(f"split {s} does not have {num_regions} regions")
        if any((x < 0 or x != int(x)) for x in s):
            raise InvalidSplit(f"split {s} has negative or non-integer entries")
        if sum(s) != total_n:
            raise InvalidSplit(f"split {s} does not sum to {total_n}")
    points = []
    for eps in eps_grid:
        if eps <= 0:
            raise DomainError(f"eps must be positive, got {eps!r}")
        for s in splits:
            points.append(SkewnessPoint(s, float(eps), total_clamp_bias(s, eps)))
    return points
