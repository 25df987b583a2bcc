"""Per-level privacy budget optimization by marginal water-filling.

Two programs over the weighted total-mse objective from
:mod:`hierdp.analytics`:

* fixed budget: minimize the objective subject to sum(eps) <= eps_total
  (the constraint always binds because the objective is strictly
  decreasing in every coordinate);
* target mse: minimize sum(eps) subject to objective <= tau (also
  always binding; every tau > 0 is feasible since mse -> 0 as
  eps -> infinity).

Strict convexity of per-node mse makes each level's marginal

    D_l(e) = w_l * sum_j d mse(N_j, e)/d e

strictly increasing in e with closed bounds

    -4 w_l k_l / e^3  <=  D_l(e)  <=  -2 w_l k_l / e^3,

so for any multiplier lam > 0 the stationarity condition
D_l(e) = -lam has a unique root bracketed by

    (2 w_l k_l / lam)^{1/3}  <=  e_l(lam)  <=  (4 w_l k_l / lam)^{1/3},

found by bisection refined with safeguarded Newton (the analytic second
derivative is available). The outer loop bisects the shared multiplier:
sum(e_l(lam)) is strictly decreasing in lam for the fixed-budget
program, and the objective at e(lam) is strictly increasing in lam for
the target-mse program. Both outer brackets have ratio at most 2, so
200 halvings always reach float resolution.

Levels with zero weight contribute nothing to the objective; any budget
given to them would be wasted, so they receive eps = 0 and are excluded
from release rather than released with no noise.

Feeding the allocator the very counts about to be privatized leaks
information through the budget split if the per-level budgets are
published. Callers should pass previously released statistics as the
stats source; the CLI's --prior flag exists for exactly that.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .analytics import (
    EPS_MIN,
    LevelWeights,
    as_weights,
    mse_deps2_sum,
    mse_deps_sum,
    mse_sum,
    weighted_total_mse,
)
from .errors import ConvergenceFailure, DomainError, NoPositiveWeight
from .hierarchy import LevelStats

PROGRAM_FIXED_BUDGET = "fixed_budget"
PROGRAM_TARGET_MSE = "target_mse"
PROGRAM_UNIFORM = "uniform"

_MAX_ITER = 200
_BRACKET_TOL = 1e-12


def _bracket_done(lo: float, hi: float) -> bool:
    # 1e-12 on the interval relative to its scale: multipliers span
    # many orders of magnitude (tiny for huge budgets, huge for tiny
    # ones), so an absolute stop would cut convergence short on one end
    # and never trigger on the other; the iteration cap and the
    # midpoint-exhaustion guard bound the work regardless
    return hi - lo <= _BRACKET_TOL * hi


@dataclass(frozen=True)
class BudgetAllocation:
    """Solved per-level budgets plus solver diagnostics.

    ``multiplier`` is the Lagrange multiplier at the optimum (the shared
    marginal for the fixed-budget program, its reciprocal scaling for
    the target-mse program); ``objective_value`` is the weighted total
    mse at ``eps`` when the stats were available to compute it.
    """

    eps: tuple[float, ...]
    eps_total_used: float
    objective_value: Optional[float]
    program: str
    weights: tuple[float, ...]
    multiplier: Optional[float]

    def to_json_dict(self) -> dict:
        return {
            "eps": list(self.eps),
            "eps_total": self.eps_total_used,
            "objective": self.objective_value,
            "multiplier": self.multiplier,
            "program": self.program,
            "weights": list(self.weights),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


class _Level:
    """One level's deduplicated counts with weight attached."""

    __slots__ = ("vals", "mults", "k", "w")

    def __init__(self, counts: np.ndarray, w: float):
        vals, mults = np.unique(np.asarray(counts, dtype=float), return_counts=True)
        self.vals = vals
        self.mults = mults.astype(float)
        self.k = float(mults.sum())
        self.w = w

    def marginal(self, eps: float) -> float:
        return self.w * mse_deps_sum(self.vals, eps, self.mults)

    def marginal_slope(self, eps: float) -> float:
        return self.w * mse_deps2_sum(self.vals, eps, self.mults)

    def mse(self, eps: float) -> float:
        return mse_sum(self.vals, eps, self.mults)


def level_marginal(
    stats: LevelStats, w: Sequence[float] | LevelWeights, level: int, eps: float
) -> float:
    """Marginal value of budget at one level: the derivative of the
    weighted level mse with respect to that level's eps. Negative,
    strictly increasing in eps."""
    w = as_weights(w)
    if not 1 <= level <= stats.depth:
        raise DomainError(f"level {level} out of range 1..{stats.depth}")
    if w[level - 1] <= 0:
        raise DomainError(f"level {level} has nonpositive weight")
    return _Level(stats.counts[level - 1], w[level - 1]).marginal(eps)


def _solve_level_eps(level: _Level, lam: float) -> float:
    """Root of D_l(e) = -lam, unique by strict monotonicity."""
    base = level.w * level.k
    lo = (2.0 * base / lam) ** (1.0 / 3.0)
    hi = (4.0 * base / lam) ** (1.0 / 3.0)
    # widen a hair so float rounding cannot strand the root outside
    lo = max(lo * (1.0 - 1e-9), EPS_MIN)
    hi = hi * (1.0 + 1e-9)

    def f(e: float) -> float:
        return level.marginal(e) + lam

    flo, fhi = f(lo), f(hi)
    expand = 0
    while flo > 0 and expand < 8:
        lo = max(lo * 0.5, EPS_MIN)
        flo = f(lo)
        expand += 1
    while fhi < 0 and expand < 16:
        hi *= 2.0
        fhi = f(hi)
        expand += 1
    if flo > 0 or fhi < 0:
        raise ConvergenceFailure(
            f"marginal root not bracketed: f({lo:g})={flo:g}, f({hi:g})={fhi:g}"
        )

    e = 0.5 * (lo + hi)
    for _ in range(_MAX_ITER):
        fe = f(e)
        if fe <= 0.0:
            lo = e
        else:
            hi = e
        if abs(fe) <= 1e-10 * lam or _bracket_done(lo, hi):
            break
        step = e - fe / level.marginal_slope(e)
        e = step if lo < step < hi else 0.5 * (lo + hi)
    return e


def _build_levels(
    stats: LevelStats, weights: LevelWeights
) -> tuple[list[Optional[_Level]], list[int]]:
    if len(weights) != stats.depth:
        raise DomainError(
            f"stats has {stats.depth} levels but {len(weights)} weights given"
        )
    levels: list[Optional[_Level]] = []
    active: list[int] = []
    for i in range(stats.depth):
        if weights[i] > 0:
            levels.append(_Level(stats.counts[i], weights[i]))
            active.append(i)
        else:
            levels.append(None)
    if not active:
        raise NoPositiveWeight("all level weights are zero")
    return levels, active


def _eps_vector(levels: list[Optional[_Level]], lam: float) -> list[float]:
    return [
        _solve_level_eps(lv, lam) if lv is not None else 0.0 for lv in levels
    ]


def _kkt_check(
    levels: list[Optional[_Level]], eps: list[float], lam: float, context: str
) -> None:
    worst = max(
        abs(lv.marginal(e) + lam)
        for lv, e in zip(levels, eps)
        if lv is not None
    )
    if worst > 1e-8 * lam:
        raise ConvergenceFailure(
            f"{context}: KKT residual {worst:g} exceeds 1e-8 * lambda ({lam:g})"
        )


def allocate_fixed_budget(
    stats: LevelStats,
    w: Sequence[float] | LevelWeights,
    eps_total: float,
) -> BudgetAllocation:
    """Minimize the weighted total mse subject to sum(eps) <= eps_total.

    Returns the unique optimum: positive-weight levels share a common
    marginal -lambda and their budgets sum exactly to eps_total.
    """
    if not (eps_total > 0 and math.isfinite(eps_total)):
        raise DomainError(f"eps_total must be positive, got {eps_total!r}")
    weights = as_weights(w)
    levels, active = _build_levels(stats, weights)

    if len(active) == 1:
        # the whole budget goes to the only level that matters; exact
        only = active[0]
        eps = [0.0] * stats.depth
        eps[only] = eps_total
        return BudgetAllocation(
            eps=tuple(eps),
            eps_total_used=eps_total,
            objective_value=weighted_total_mse(stats, weights, eps),
            program=PROGRAM_FIXED_BUDGET,
            weights=tuple(weights.w),
            multiplier=-levels[only].marginal(eps_total),
        )

    # closed-form multiplier bracket from the marginal bounds:
    # sum of lower eps bounds >= eps_total at lam_lo, upper <= at lam_hi
    c_lo = sum((2.0 * levels[i].w * levels[i].k) ** (1.0 / 3.0) for i in active)
    c_hi = sum((4.0 * levels[i].w * levels[i].k) ** (1.0 / 3.0) for i in active)
    lam_lo = (c_lo / eps_total) ** 3 * (1.0 - 1e-9)
    lam_hi = (c_hi / eps_total) ** 3 * (1.0 + 1e-9)

    def budget_used(lam: float) -> float:
        return sum(_solve_level_eps(levels[i], lam) for i in active)

    for _ in range(_MAX_ITER):
        mid = 0.5 * (lam_lo + lam_hi)
        if mid == lam_lo or mid == lam_hi:
            break
        if budget_used(mid) >= eps_total:
            lam_lo = mid
        else:
            lam_hi = mid
        if _bracket_done(lam_lo, lam_hi):
            break

    lam = 0.5 * (lam_lo + lam_hi)
    eps = _eps_vector(levels, lam)
    used = sum(eps)
    if abs(used - eps_total) > 1e-9 * eps_total:
        raise ConvergenceFailure(
            f"fixed-budget: sum(eps)={used!r} misses eps_total={eps_total!r}"
        )
    _kkt_check(levels, eps, lam, "fixed-budget")

    return BudgetAllocation(
        eps=tuple(eps),
        eps_total_used=used,
        objective_value=weighted_total_mse(stats, weights, eps),
        program=PROGRAM_FIXED_BUDGET,
        weights=tuple(weights.w),
        multiplier=lam,
    )


def allocate_target_mse(
    stats: LevelStats,
    w: Sequence[float] | LevelWeights,
    tau: float,
) -> BudgetAllocation:
    """Minimize sum(eps) subject to weighted total mse <= tau.

    Stationarity gives a common marginal -1/mu across positive-weight
    levels, so the same inner solve applies with lam = 1/mu; the outer
    bisection drives the objective onto tau (always feasible: the
    objective falls to zero as budgets grow).
    """
    if not (tau > 0 and math.isfinite(tau)):
        raise DomainError(f"tau must be positive, got {tau!r}")
    weights = as_weights(w)
    levels, active = _build_levels(stats, weights)

    def objective(lam: float) -> float:
        return sum(
            levels[i].w * levels[i].mse(_solve_level_eps(levels[i], lam))
            for i in active
        )

    lam_lo = lam_hi = 1.0
    for _ in range(_MAX_ITER):
        if objective(lam_lo) <= tau:
            break
        lam_lo /= 16.0
    else:
        raise ConvergenceFailure(f"target-mse: no lower multiplier for tau={tau!r}")
    for _ in range(_MAX_ITER):
        if objective(lam_hi) >= tau:
            break
        lam_hi *= 16.0
    else:
        raise ConvergenceFailure(f"target-mse: no upper multiplier for tau={tau!r}")

    for _ in range(_MAX_ITER):
        mid = 0.5 * (lam_lo + lam_hi)
        if mid == lam_lo or mid == lam_hi:
            break
        val = objective(mid)
        if val <= tau:
            lam_lo = mid
        else:
            lam_hi = mid
        if abs(val - tau) <= 1e-12 * tau:
            lam_lo = lam_hi = mid
            break

    lam = 0.5 * (lam_lo + lam_hi)
    eps = _eps_vector(levels, lam)
    achieved = weighted_total_mse(stats, weights, eps)
    if abs(achieved - tau) > 1e-9 * tau:
        raise ConvergenceFailure(
            f"target-mse: objective {achieved!r} misses tau={tau!r}"
        )
    _kkt_check(levels, eps, lam, "target-mse")

    return BudgetAllocation(
        eps=tuple(eps),
        eps_total_used=sum(eps),
        objective_value=achieved,
        program=PROGRAM_TARGET_MSE,
        weights=tuple(weights.w),
        multiplier=1.0 / lam,
    )


def uniform_allocation(depth: int, eps_total: float) -> BudgetAllocation:
    """The even-split baseline: every level gets eps_total / depth."""
    if depth < 1:
        raise DomainError(f"depth must be >= 1, got {depth}")
    if not (eps_total > 0 and math.isfinite(eps_total)):
        raise DomainError(f"eps_total must be positive, got {eps_total!r}")
    share = eps_total / depth
    return BudgetAllocation(
        eps=(share,) * depth,
        eps_total_used=eps_total,
        objective_value=None,
        program=PROGRAM_UNIFORM,
        weights=(1.0,) * depth,
        multiplier=None,
    )
