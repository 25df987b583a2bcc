"""Privatized release of a hierarchy and its post-processing.

Release adds per-node Laplace noise at the level's budget, clamps at
zero, and optionally enforces parent/child consistency by Euclidean
projection of each sibling group onto the scaled simplex
``{v >= 0, sum(v) = parent}``, applied top-down so each projection
targets the parent's already-adjusted value.

Noise comes from the counter-based streams in :mod:`hierdp.rng`, so a
release is a pure function of (hierarchy, allocation, seed) no matter
how the work is chunked. Levels allocated eps = 0 are omitted from the
release entirely: emitting their true counts would cost unbounded
privacy, and emitting nothing is the only budget-true option.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .allocator import BudgetAllocation
from .errors import AllocationMismatch, DomainError, UnreleasedLevel
from .hierarchy import Hierarchy, serialize_hierarchy
from .rng import CounterStream, centered_uniforms, node_keys, standard_laplace


def laplace_sample(scale: float, stream: CounterStream) -> float:
    """Draw one Laplace(scale) value from a counter stream by inverse
    CDF: u uniform on (-1/2, 1/2) maps through -scale*sign(u)*ln(1-2|u|).
    """
    if not (scale > 0 and math.isfinite(scale)):
        raise DomainError(f"scale must be positive, got {scale!r}")
    return scale * float(standard_laplace(stream.next_uniform()))


@dataclass(frozen=True)
class PrivatizedHierarchy:
    """Noisy counts over the shape of a source hierarchy.

    ``values`` holds one nonnegative noisy count per released node;
    nodes of levels allocated eps = 0 are absent. The source tree is
    kept for structure only and never serialized with true counts.
    """

    source: Hierarchy
    values: dict[str, float]
    allocation: BudgetAllocation
    seed: int
    consistency_applied: bool

    def released_levels(self) -> list[int]:
        return [
            lv
            for lv in range(1, self.source.depth + 1)
            if self.allocation.eps[lv - 1] > 0
        ]

    def level_values(self, level: int) -> np.ndarray:
        return np.array(
            [self.values[i] for i in self.source.level_ids(level)], dtype=float
        )

    def to_csv(self) -> str:
        return serialize_hierarchy(self.source, counts=self.values)

    def sidecar_json(self) -> str:
        return json.dumps(
            {
                "allocation": self.allocation.to_json_dict(),
                "seed": self.seed,
                "consistency_applied": self.consistency_applied,
            },
            sort_keys=True,
        )


def release_no_hier(
    h: Hierarchy, alloc: BudgetAllocation, seed: int
) -> PrivatizedHierarchy:
    """Independent clamped-Laplace release of every level with budget.

    Each node at level l gets ``max(0, count + Lap(1/eps_l))`` from its
    own stream at replicate 0; byte-identical for a fixed seed.
    """
    if len(alloc.eps) != h.depth:
        raise AllocationMismatch(
            f"allocation has {len(alloc.eps)} levels, hierarchy has {h.depth}"
        )
    values: dict[str, float] = {}
    for lv in range(1, h.depth + 1):
        eps = alloc.eps[lv - 1]
        if eps <= 0:
            continue
        ids = h.level_ids(lv)
        noise = standard_laplace(
            centered_uniforms(seed, node_keys(ids), 0)
        ) / eps
        noisy = np.maximum(0.0, h.level_counts(lv) + noise)
        values.update(zip(ids, noisy.tolist()))
    return PrivatizedHierarchy(h, values, alloc, seed, consistency_applied=False)


def project_children(
    noisy_children: np.ndarray, target_total: float
) -> np.ndarray:
    """Euclidean projection onto ``{v >= 0, sum(v) = target_total}``.

    Shift-and-clamp with the threshold found by sorting: the unique
    theta with ``sum(max(y - theta, 0)) = T``. Accepts inputs of either
    sign (pre- or post-clamp).
    """
    if not (target_total >= 0 and math.isfinite(target_total)):
        raise DomainError(f"target_total must be >= 0, got {target_total!r}")
    y = np.asarray(noisy_children, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise DomainError("noisy_children must be a nonempty 1-d vector")
    if target_total == 0.0:
        return np.zeros_like(y)

    u = np.sort(y)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, y.size + 1)
    # targets below float resolution of the entries can round the k=1
    # test false; the support is then the single largest entry
    rho = max(int(np.count_nonzero(u * k > css - target_total)), 1)
    theta = (css[rho - 1] - target_total) / rho
    v = np.maximum(y - theta, 0.0)
    total = v.sum()
    if total > 0.0 and total != target_total:
        v *= target_total / total
    elif total == 0.0:
        # y - theta rounded the whole mass away (tiny target): the true
        # projection parks it all on the largest coordinate
        v[int(np.argmax(y))] = target_total
    return v


def project_rows(noisy: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Row-wise :func:`project_children`: one sibling group per row,
    one target per row. Used to push whole replicate batches through
    the consistency pass at once."""
    y = np.asarray(noisy, dtype=float)
    t = np.asarray(targets, dtype=float)
    n = y.shape[1]
    u = -np.sort(-y, axis=1)
    css = np.cumsum(u, axis=1)
    k = np.arange(1, n + 1)
    rho = np.count_nonzero(u * k > css - t[:, None], axis=1)
    safe_rho = np.maximum(rho, 1)
    theta = (np.take_along_axis(css, safe_rho[:, None] - 1, axis=1)[:, 0] - t) / safe_rho
    v = np.maximum(y - theta[:, None], 0.0)
    totals = v.sum(axis=1)
    scale = np.divide(t, totals, out=np.ones_like(t), where=totals > 0)
    v *= scale[:, None]
    v[t == 0.0] = 0.0
    rounded_away = (totals == 0.0) & (t > 0.0)
    if rounded_away.any():
        rows = np.nonzero(rounded_away)[0]
        v[rows, np.argmax(y[rows], axis=1)] = t[rows]
    return v


def enforce_consistency(p: PrivatizedHierarchy) -> PrivatizedHierarchy:
    """Top-down consistency pass.

    The root keeps its released value; walking down the tree, each
    sibling group is replaced by its projection onto the simplex scaled
    to the parent's adjusted value, so every level sums exactly to the
    root. Projecting an already-consistent tree is a no-op.
    """
    h = p.source
    if any(p.allocation.eps[lv - 1] <= 0 for lv in range(1, h.depth + 1)):
        raise UnreleasedLevel(
            "consistency requires a released value at every level"
        )
    adjusted = dict(p.values)
    for lv in range(1, h.depth):
        for pid in h.level_ids(lv):
            kids = h.children_of(pid)
            projected = project_children(
                np.array([adjusted[k] for k in kids]), adjusted[pid]
            )
            adjusted.update(zip(kids, projected.tolist()))
    return replace(p, values=adjusted, consistency_applied=True)
