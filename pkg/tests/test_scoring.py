import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adqc.design import LabelMapping
from adqc.errors import ValidationError
from adqc.model import Item, RatingRecord, load_framework
from adqc.scoring import (
    MISSING,
    GroundTruth,
    ResponseMatrix,
    build_matrices,
    consensus,
    ground_truth_from_records,
    load_ground_truth,
    load_matrix,
    recode,
    write_ground_truth,
    write_matrix,
)

levels = st.integers(1, 5)


class TestConsensus:
    def test_majority(self):
        assert consensus([4, 4, 2]) == (4, "majority")

    def test_median_when_all_differ(self):
        assert consensus([1, 3, 5]) == (3, "median")

    def test_unanimous(self):
        assert consensus([2, 2, 2]) == (2, "majority")

    def test_even_panel_lower_middle(self):
        assert consensus([1, 2, 4, 5]) == (2, "median")

    def test_modal_tie_is_ambiguous(self):
        with pytest.raises(ValidationError, match="ambiguous"):
            consensus([2, 2, 4, 4])

    @pytest.mark.parametrize("bad", [[], [3], [0, 3, 3], [3, 6]])
    def test_rejects(self, bad):
        with pytest.raises(ValidationError):
            consensus(bad)

    @given(st.lists(levels, min_size=3, max_size=3))
    def test_permutation_invariant(self, triple):
        results = {consensus(list(p)) for p in itertools.permutations(triple)}
        assert len(results) == 1

    def test_all_triples_return_input_or_median(self):
        for triple in itertools.product(range(1, 6), repeat=3):
            value, rule = consensus(triple)
            assert value in triple
            if rule == "median":
                assert value == sorted(triple)[1]


class TestRecode:
    def test_examples(self):
        assert recode(3, 3) == 2
        assert recode(4, 3) == 1
        assert recode(1, 5) == 0

    def test_full_table(self):
        for raw, gt in itertools.product(range(1, 6), repeat=2):
            expected = {0: 2, 1: 1}.get(abs(raw - gt), 0)
            assert recode(raw, gt) == expected

    @given(levels, levels)
    def test_symmetric(self, a, b):
        assert recode(a, b) == recode(b, a)
        assert recode(a, a) == 2

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            recode(0, 3)


def _rec(rid, video, label, dim, rating):
    return RatingRecord(rid, video, label, dim, rating)


class TestGroundTruth:
    def test_labels_resolved_through_mapping(self):
        mapping = [LabelMapping("v01", {"A": "gpt", "B": "human"})]
        records = [_rec(e, "v01", "A", "accurate", r) for e, r in (("E1", 4), ("E2", 4), ("E3", 1))]
        gt = ground_truth_from_records(records, mapping)
        item = Item("v01", "gpt", "accurate")
        assert gt[item] == 4 and gt.provenance[item] == "majority"

    def test_csv_round_trip(self, tmp_path):
        gt = GroundTruth({Item("v01", "human", "equal"): 3}, {Item("v01", "human", "equal"): "median"})
        write_ground_truth(gt, tmp_path / "gt.csv")
        assert (tmp_path / "gt.csv").read_text().splitlines()[0] == "video_id,source,dimension,rating,rule"
        assert load_ground_truth(tmp_path / "gt.csv") == gt


class TestMatrices:
    def _gt(self):
        entries = {Item(v, s, d): 3 for v in ("v01", "v02") for s in ("human", "gpt") for d in ("accurate", "timing")}
        return GroundTruth(entries)

    def test_shape_and_credit(self):
        recs = [_rec("H1", "v01", "human", "accurate", 3), _rec("H1", "v01", "gpt", "accurate", 5)]
        recs += [_rec("H2", "v01", "human", "accurate", 4)]
        mats = build_matrices(recs, self._gt(), ["accurate", "timing"])
        m = mats["accurate"]
        assert m.shape == (2, 4)
        assert m.persons == ("H1", "H2")
        col = {it: j for j, it in enumerate(m.items)}
        assert m.data[0, col[Item("v01", "human", "accurate")]] == 2
        assert m.data[0, col[Item("v01", "gpt", "accurate")]] == 0
        assert m.data[1, col[Item("v01", "human", "accurate")]] == 1

    def test_skipped_cell_is_missing(self):
        recs = [_rec("H1", "v01", "human", "timing", 3)]
        m = build_matrices(recs, self._gt(), ["timing"])["timing"]
        assert (m.data == MISSING).sum() == 3
        assert not m.observed[0, 1:].any()

    def test_missing_ground_truth_named(self):
        recs = [_rec("H1", "v09", "human", "timing", 3)]
        with pytest.raises(ValidationError, match="v09:human:timing"):
            build_matrices(recs, self._gt(), ["timing"])

    def test_experts_excluded(self):
        recs = [_rec("E1", "v01", "human", "timing", 3), _rec("H1", "v01", "human", "timing", 3)]
        m = build_matrices(recs, self._gt(), ["timing"], exclude=["E1"])["timing"]
        assert m.persons == ("H1",)

    def test_demo_matrices_are_12_by_40(self, demo_dir):
        from adqc.design import load_label_mappings
        from adqc.model import load_ratings

        mappings = load_label_mappings(demo_dir / "label_mappings.csv")
        gt = ground_truth_from_records(load_ratings(demo_dir / "experts.csv"), mappings)
        mats = build_matrices(load_ratings(demo_dir / "ratings.csv"), gt, load_framework(), mappings)
        assert len(mats) == 7
        assert all(m.shape == (12, 40) for m in mats.values())

    def test_matrix_csv_round_trip(self, tmp_path):
        data = np.array([[2, -1], [0, 1]])
        m = ResponseMatrix(("a", "b"), (Item("v01", "human", "equal"), Item("v01", "gpt", "equal")), data)
        write_matrix(m, tmp_path / "m.csv")
        assert (tmp_path / "m.csv").read_text().splitlines()[1] == "a,2,"
        back = load_matrix(tmp_path / "m.csv", "equal")
        assert back.items == m.items
        np.testing.assert_array_equal(back.data, data)

    def test_credit_above_m_rejected(self):
        with pytest.raises(ValidationError):
            ResponseMatrix(("a",), ("i",), np.array([[3]]))

    def test_data_read_only(self):
        m = ResponseMatrix(("a",), ("i",), np.array([[1]]))
        with pytest.raises(ValueError):
            m.data[0, 0] = 2
