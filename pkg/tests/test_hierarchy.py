import numpy as np
import pytest

from hierdp.errors import (
    DuplicateId,
    InvalidSpec,
    LevelMismatch,
    MissingRoot,
    NegativeCount,
    OrphanNode,
)
from hierdp.hierarchy import (
    Hierarchy,
    HierNode,
    SynthSpec,
    check_consistency,
    level_stats,
    parse_hierarchy,
    serialize_hierarchy,
    synth_hierarchy,
)


class TestParse:
    def test_single_root(self):
        h = parse_hierarchy("node_id,parent_id,level,count\nA,,1,7\n")
        assert h.depth == 1
        assert h.root.count == 7.0
        assert len(h) == 1

    def test_va_example(self, va_hierarchy):
        h = va_hierarchy
        assert h.depth == 3
        assert len(h) == 8
        assert h.root.id == "VA"
        assert h.node("VA-100").count == 300.0
        assert h.children_of("VA-200") == ("VA-200-1", "VA-200-2")

    def test_missing_root(self):
        text = "node_id,parent_id,level,count\nB,A,2,1\n"
        with pytest.raises((MissingRoot, OrphanNode)):
            parse_hierarchy(text)

    def test_duplicate_id_names_offender(self):
        text = "node_id,parent_id,level,count\nA,,1,1\nB,A,2,1\nB,A,2,2\n"
        with pytest.raises(DuplicateId, match="'B'"):
            parse_hierarchy(text)

    def test_orphan_names_offender(self):
        text = "node_id,parent_id,level,count\nA,,1,1\nB,missing,2,1\n"
        with pytest.raises(OrphanNode, match="'missing'"):
            parse_hierarchy(text)

    def test_parent_at_same_level_rejected(self):
        text = "node_id,parent_id,level,count\nA,,1,1\nB,A,1,1\n"
        with pytest.raises(LevelMismatch, match="'B'"):
            parse_hierarchy(text)

    def test_ragged_tree_rejected(self):
        # C is a leaf at level 2 while the tree reaches level 3
        text = (
            "node_id,parent_id,level,count\n"
            "A,,1,3\nB,A,2,2\nC,A,2,1\nD,B,3,2\n"
        )
        with pytest.raises(LevelMismatch, match="'C'"):
            parse_hierarchy(text)

    def test_negative_count_names_row(self):
        text = "node_id,parent_id,level,count\nA,,1,-4\n"
        with pytest.raises(NegativeCount, match="row 2"):
            parse_hierarchy(text)

    def test_non_numeric_count(self):
        text = "node_id,parent_id,level,count\nA,,1,abc\n"
        with pytest.raises(NegativeCount, match="'abc'"):
            parse_hierarchy(text)

    def test_two_roots_rejected(self):
        text = "node_id,parent_id,level,count\nA,,1,1\nB,,1,1\n"
        with pytest.raises(DuplicateId):
            parse_hierarchy(text)

    def test_bad_header(self):
        with pytest.raises(InvalidSpec):
            parse_hierarchy("id,parent,lvl,n\nA,,1,1\n")

    def test_roundtrip(self, va_hierarchy):
        assert parse_hierarchy(serialize_hierarchy(va_hierarchy)) == va_hierarchy

    def test_roundtrip_real_counts(self):
        h = Hierarchy(
            [
                HierNode("a", None, 1, 1.75),
                HierNode("a-1", "a", 2, 0.25),
                HierNode("a-2", "a", 2, 1.5),
            ]
        )
        assert parse_hierarchy(serialize_hierarchy(h)) == h


class TestConsistency:
    def test_va_all_zero(self, va_hierarchy):
        report = check_consistency(va_hierarchy, tol=0.0)
        assert report.consistent
        assert report.max_abs_residual == 0.0
        assert len(report.entries) == 3  # VA and the two tracts

    def test_flagged_residual(self):
        text = (
            "node_id,parent_id,level,count\n"
            "T,,1,300\nT-1,T,2,120\nT-2,T,2,80\n"
        )
        report = check_consistency(parse_hierarchy(text), tol=0.0)
        assert not report.consistent
        (entry,) = report.entries
        assert entry.node_id == "T"
        assert entry.residual == pytest.approx(100.0)
        assert entry.flagged

    def test_single_node_empty_report(self):
        h = parse_hierarchy("node_id,parent_id,level,count\nA,,1,5\n")
        assert check_consistency(h).entries == ()

    def test_tolerance_unflags(self):
        text = (
            "node_id,parent_id,level,count\n"
            "T,,1,200.5\nT-1,T,2,120\nT-2,T,2,80\n"
        )
        report = check_consistency(parse_hierarchy(text), tol=1.0)
        assert report.consistent


class TestLevelStats:
    def test_va(self, va_hierarchy):
        stats = level_stats(va_hierarchy)
        assert [list(c) for c in stats.counts] == [
            [450.0],
            [300.0, 150.0],
            [120.0, 80.0, 100.0, 90.0, 60.0],
        ]

    def test_single_node(self):
        h = parse_hierarchy("node_id,parent_id,level,count\nA,,1,7\n")
        assert [list(c) for c in level_stats(h).counts] == [[7.0]]

    def test_two_level(self):
        text = "node_id,parent_id,level,count\nA,,1,10\nA-1,A,2,4\nA-2,A,2,6\n"
        stats = level_stats(parse_hierarchy(text))
        assert [list(c) for c in stats.counts] == [[10.0], [4.0, 6.0]]

    def test_level_totals_equal_for_consistent_tree(self, va_hierarchy):
        totals = level_stats(va_hierarchy).level_totals()
        assert totals == [450.0, 450.0, 450.0]


class TestSynth:
    def test_single_level(self):
        h = synth_hierarchy(SynthSpec(seed=3, levels=1, fanouts=()))
        assert h.depth == 1 and len(h) == 1
        assert h.root.count >= 0

    def test_deterministic(self):
        spec = SynthSpec(seed=11, levels=3, fanouts=(4, 5))
        assert synth_hierarchy(spec) == synth_hierarchy(spec)

    def test_different_seeds_differ(self):
        a = synth_hierarchy(SynthSpec(seed=1, levels=2, fanouts=(10,)))
        b = synth_hierarchy(SynthSpec(seed=2, levels=2, fanouts=(10,)))
        assert a != b

    def test_consistent_by_construction(self):
        h = synth_hierarchy(SynthSpec(seed=5, levels=4, fanouts=(3, 4, 2)))
        assert check_consistency(h, tol=0.0).consistent

    def test_default_shape(self):
        h = synth_hierarchy(SynthSpec(seed=0))
        assert h.depth == 3
        assert len(h.level_ids(1)) == 1
        assert len(h.level_ids(2)) == 128
        assert len(h.level_ids(3)) == 128 * 164  # about 21k leaves

    def test_integer_leaves(self):
        h = synth_hierarchy(SynthSpec(seed=9, levels=2, fanouts=(50,)))
        leaves = h.level_counts(2)
        assert np.array_equal(leaves, np.rint(leaves))

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"levels": 0, "fanouts": ()},
            {"levels": 2, "fanouts": ()},
            {"levels": 2, "fanouts": (0,)},
            {"levels": 3, "fanouts": (2,)},
            {"levels": 2, "fanouts": (3,), "leaf_sigma": -1.0},
        ],
    )
    def test_invalid_specs(self, kwargs):
        with pytest.raises(InvalidSpec):
            SynthSpec(seed=0, **kwargs)
