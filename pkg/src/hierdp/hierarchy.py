"""Hierarchical count data: ingestion, validation, and synthesis.

A hierarchy is a complete-depth rooted tree: one root at level 1, every
non-root hangs off a node at the previous level, and all leaves sit at
the bottom level. Counts are stored as nonnegative reals because
privatized pipelines produce reals; integrality is never required.
Instances are immutable after construction and safe to share across
workers.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import (
    DuplicateId,
    InvalidSpec,
    LevelMismatch,
    MissingRoot,
    NegativeCount,
    OrphanNode,
)

CSV_HEADER = ["node_id", "parent_id", "level", "count"]


@dataclass(frozen=True)
class HierNode:
    """One region: an opaque id, its parent link, level (1-based), count."""

    id: str
    parent_id: Optional[str]
    level: int
    count: float


class Hierarchy:
    """Validated, immutable tree of :class:`HierNode`.

    Construction enforces the structural invariants and precomputes the
    per-level orderings (stable by node id) used everywhere else, so
    downstream results are reproducible across runs and platforms.
    """

    def __init__(self, nodes: Iterable[HierNode]):
        nodes = list(nodes)
        if not nodes:
            raise MissingRoot("hierarchy has no nodes")

        by_id: dict[str, HierNode] = {}
        for n in nodes:
            if n.id in by_id:
                raise DuplicateId(f"duplicate node id {n.id!r}")
            if n.count < 0 or not np.isfinite(n.count):
                raise NegativeCount(
                    f"node {n.id!r} has invalid count {n.count!r}"
                )
            by_id[n.id] = n

        roots = [n for n in nodes if n.parent_id is None]
        if not roots:
            raise MissingRoot("no root row (empty parent_id) found")
        if len(roots) > 1:
            ids = ", ".join(sorted(r.id for r in roots))
            raise DuplicateId(f"multiple roots: {ids}")
        root = roots[0]
        if root.level != 1:
            raise LevelMismatch(
                f"root {root.id!r} must be at level 1, got {root.level}"
            )

        children: dict[str, list[str]] = {n.id: [] for n in nodes}
        for n in nodes:
            if n.parent_id is None:
                continue
            parent = by_id.get(n.parent_id)
            if parent is None:
                raise OrphanNode(
                    f"node {n.id!r} references missing parent {n.parent_id!r}"
                )
            if n.level != parent.level + 1:
                raise LevelMismatch(
                    f"node {n.id!r} at level {n.level} under parent "
                    f"{parent.id!r} at level {parent.level}"
                )
            children[parent.id].append(n.id)

        depth = max(n.level for n in nodes)
        for n in nodes:
            if not children[n.id] and n.level != depth:
                raise LevelMismatch(
                    f"leaf {n.id!r} at level {n.level} but tree depth is "
                    f"{depth}; all leaves must sit at the bottom level"
                )

        self._by_id = by_id
        self._children = {k: tuple(sorted(v)) for k, v in children.items()}
        self._root_id = root.id
        self._depth = depth
        self._level_ids: tuple[tuple[str, ...], ...] = tuple(
            tuple(sorted(n.id for n in nodes if n.level == lv))
            for lv in range(1, depth + 1)
        )

    # accessors

    @property
    def depth(self) -> int:
        return self._depth

    @property
    def root(self) -> HierNode:
        return self._by_id[self._root_id]

    def node(self, node_id: str) -> HierNode:
        return self._by_id[node_id]

    def children_of(self, node_id: str) -> tuple[str, ...]:
        return self._children[node_id]

    def level_ids(self, level: int) -> tuple[str, ...]:
        """Node ids at ``level`` (1-based), sorted by id."""
        return self._level_ids[level - 1]

    def level_counts(self, level: int) -> np.ndarray:
        return np.array(
            [self._by_id[i].count for i in self.level_ids(level)], dtype=float
        )

    def __len__(self) -> int:
        return len(self._by_id)

    def __iter__(self):
        for lv in range(1, self._depth + 1):
            for nid in self.level_ids(lv):
                yield self._by_id[nid]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Hierarchy):
            return NotImplemented
        return list(self) == list(other)


@dataclass(frozen=True, eq=False)
class LevelStats:
    """Per-level count vectors, the sufficient input of the allocator."""

    counts: tuple[np.ndarray, ...]

    def __post_init__(self):
        if not self.counts:
            raise InvalidSpec("LevelStats needs at least one level")
        for lv, arr in enumerate(self.counts, start=1):
            if len(arr) == 0:
                raise InvalidSpec(f"level {lv} has no counts")

    @property
    def depth(self) -> int:
        return len(self.counts)

    def level_totals(self) -> list[float]:
        return [float(np.sum(c)) for c in self.counts]


@dataclass(frozen=True)
class ConsistencyEntry:
    node_id: str
    residual: float
    flagged: bool


@dataclass(frozen=True)
class ConsistencyReport:
    """Per-parent residuals ``count - sum(children)``; one entry per
    internal node, flagged when ``|residual| > tol``."""

    entries: tuple[ConsistencyEntry, ...]
    tol: float

    @property
    def consistent(self) -> bool:
        return not any(e.flagged for e in self.entries)

    @property
    def max_abs_residual(self) -> float:
        if not self.entries:
            return 0.0
        return max(abs(e.residual) for e in self.entries)


def parse_hierarchy(csv_text: str) -> Hierarchy:
    """Build a hierarchy from CSV text.

    Expected header: ``node_id,parent_id,level,count``. The root row has
    an empty parent_id. Every validation error names the offending row.
    """
    reader = csv.reader(io.StringIO(csv_text))
    try:
        header = next(reader)
    except StopIteration:
        raise MissingRoot("empty CSV input") from None
    if [h.strip() for h in header] != CSV_HEADER:
        raise InvalidSpec(
            f"bad header {header!r}; expected {','.join(CSV_HEADER)}"
        )

    nodes = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise InvalidSpec(f"row {lineno}: expected 4 fields, got {len(row)}")
        nid, pid, level_s, count_s = (c.strip() for c in row)
        if not nid:
            raise InvalidSpec(f"row {lineno}: empty node_id")
        try:
            level = int(level_s)
        except ValueError:
            raise LevelMismatch(
                f"row {lineno} ({nid!r}): level {level_s!r} is not an integer"
            ) from None
        if level < 1:
            raise LevelMismatch(f"row {lineno} ({nid!r}): level must be >= 1")
        try:
            count = float(count_s)
        except ValueError:
            raise NegativeCount(
                f"row {lineno} ({nid!r}): count {count_s!r} is not a number"
            ) from None
        if count < 0 or not np.isfinite(count):
            raise NegativeCount(
                f"row {lineno} ({nid!r}): count must be a nonnegative real, "
                f"got {count_s}"
            )
        nodes.append(HierNode(nid, pid or None, level, count))

    return Hierarchy(nodes)


def serialize_hierarchy(h: Hierarchy, counts: Optional[dict[str, float]] = None) -> str:
    """Write a hierarchy back to CSV, rows in level order then id order.

    ``counts`` optionally substitutes per-node values (used to emit
    privatized trees through the same schema).
    """
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for node in h:
        if counts is not None and node.id not in counts:
            continue
        value = node.count if counts is None else counts[node.id]
        writer.writerow(
            [node.id, node.parent_id or "", node.level, repr(float(value))]
        )
    return out.getvalue()


def check_consistency(h: Hierarchy, tol: float = 0.0) -> ConsistencyReport:
    """Report ``count - sum(children)`` for every internal node."""
    entries = []
    for node in h:
        kids = h.children_of(node.id)
        if not kids:
            continue
        residual = node.count - sum(h.node(k).count for k in kids)
        entries.append(
            ConsistencyEntry(node.id, residual, abs(residual) > tol)
        )
    return ConsistencyReport(tuple(entries), tol)


def level_stats(h: Hierarchy) -> LevelStats:
    """Per-level counts in node-id order."""
    return LevelStats(
        tuple(h.level_counts(lv) for lv in range(1, h.depth + 1))
    )


@dataclass(frozen=True)
class SynthSpec:
    """Generator spec for synthetic census-like hierarchies.

    Defaults give a "one state, 128 tracts, ~21k blocks" shape with
    heavy-tailed integer leaf counts from a rounded log-normal. These
    are synthetic stand-ins, not real census figures.
    """

    seed: int
    levels: int = 3
    fanouts: tuple[int, ...] = (128, 164)
    leaf_mu: float = 3.0
    leaf_sigma: float = 1.2

    def __post_init__(self):
        if self.levels < 1:
            raise InvalidSpec("levels must be >= 1")
        if len(self.fanouts) != self.levels - 1:
            raise InvalidSpec(
                f"need {self.levels - 1} fanouts for {self.levels} levels, "
                f"got {len(self.fanouts)}"
            )
        if any(f < 1 for f in self.fanouts):
            raise InvalidSpec("fanouts must be >= 1")
        if self.leaf_sigma < 0:
            raise InvalidSpec("leaf_sigma must be >= 0")


def synth_hierarchy(spec: SynthSpec) -> Hierarchy:
    """Deterministic synthetic hierarchy: leaf counts drawn from the
    configured log-normal (rounded to integers), internal counts summed
    bottom-up so the tree is consistent by construction."""
    rng = np.random.default_rng(spec.seed)

    # ids per level, zero-padded so lexicographic order is genealogic
    ids: list[list[str]] = [["r"]]
    parents: dict[str, str] = {}
    for lv in range(2, spec.levels + 1):
        fan = spec.fanouts[lv - 2]
        width = len(str(fan))
        new_ids = []
        for pid in ids[-1]:
            for j in range(1, fan + 1):
                cid = f"{pid}-{j:0{width}d}"
                parents[cid] = pid
                new_ids.append(cid)
        ids.append(new_ids)

    leaf_ids = ids[-1]
    leaves = np.rint(
        rng.lognormal(mean=spec.leaf_mu, sigma=spec.leaf_sigma, size=len(leaf_ids))
    )
    counts = {nid: float(c) for nid, c in zip(leaf_ids, leaves)}
    for lv in range(spec.levels - 1, 0, -1):
        for pid in ids[lv - 1]:
            counts[pid] = 0.0
        for cid in ids[lv]:
            counts[parents[cid]] += counts[cid]

    nodes = [
        HierNode(nid, parents.get(nid), lv + 1, counts[nid])
        for lv, level_ids in enumerate(ids)
        for nid in level_ids
    ]
    return Hierarchy(nodes)
