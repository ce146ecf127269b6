from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from ecgc.attributes import AttributeStats, attribute_matrix
from ecgc.data import Dataset, EcgRecord
from ecgc.errors import BatchTooLarge, EmptyPositive, WrongStrategy
from ecgc.pairing import BatchBuilder, StrategySpec, anchor_mask, build_batch, canonical_strategy, group_key
from ecgc.transforms import AugmentationSpec, SegmentationSpec


def rec(rid, age=40, sex="male", rhythm="SR", conds=(), n=40, value=0.0):
    sig = np.full((12, n), value, dtype=np.float32) + np.arange(n, dtype=np.float32) / n
    return EcgRecord(rid, sig, age, sex, rhythm, frozenset(conds))


def check_invariants(batch):
    m = batch.positive_mask
    n = m.shape[0]
    assert batch.views.shape[0] == n == 2 * len(batch.anchor_ids)
    assert_array_equal(m, m.T)
    assert not m.diagonal().any()
    assert m.any(axis=1).all()
    for b in range(n // 2):
        assert m[2 * b, 2 * b + 1]


class TestGroupKey:
    def test_demographics(self):
        assert group_key(rec("a", age=34), "Demographics") == ("30s", "male")
        assert group_key(rec("a", age=29, sex="female"), "Demographics") != group_key(rec("b", age=30, sex="female"), "Demographics")

    def test_rhythm_sorted_conditions(self):
        a = rec("a", rhythm="SB", conds=("TWC", "LVH"))
        b = rec("b", rhythm="SB", conds=("LVH", "TWC"))
        assert group_key(a, "Rhythm") == group_key(b, "Rhythm")
        assert group_key(a, "Rhythm") != group_key(rec("c", rhythm="SB"), "Rhythm")
        assert group_key(a, "Rhythm", rhythm_only=True) == group_key(rec("c", rhythm="SB"), "Rhythm", rhythm_only=True)

    def test_wrong_strategy(self):
        with pytest.raises(WrongStrategy):
            group_key(rec("a"), "Augment")

    def test_aliases(self):
        assert canonical_strategy(4) == "Rhythm"
        assert canonical_strategy("attributes") == "Attributes"
        with pytest.raises(WrongStrategy):
            canonical_strategy("Nope")


class TestMasks:
    def test_demographics_example(self):
        ds = Dataset((rec("1", age=65, sex="female"), rec("2", age=61, sex="female"), rec("3", age=20), rec("4", age=85)))
        batch = BatchBuilder(ds, StrategySpec("Demographics"), 4).build(anchors=[0, 1, 2, 3])
        expected = np.zeros((8, 8), bool)
        expected[0:4, 0:4] = True
        expected[4:6, 4:6] = True
        expected[6:8, 6:8] = True
        np.fill_diagonal(expected, False)
        assert_array_equal(batch.positive_mask, expected)
        check_invariants(batch)

    def test_augment_block_diagonal(self, small_dataset):
        batch = build_batch(small_dataset, StrategySpec("Augment"), 8, seed=3)
        assert_array_equal(batch.positive_mask, anchor_mask(np.zeros((8, 8), bool)))
        check_invariants(batch)

    def test_rhythm_label_oracle(self, small_dataset):
        ds = Dataset(small_dataset.records[:20])
        batch = build_batch(ds, StrategySpec("Rhythm"), 20, seed=1)
        by_id = ds.by_id()
        for p in range(40):
            for q in range(40):
                a, b = by_id[batch.anchor_ids[p // 2]], by_id[batch.anchor_ids[q // 2]]
                same = a.rhythm_label == b.rhythm_label and a.condition_labels == b.condition_labels
                assert batch.positive_mask[p, q] == (same and p != q)

    @settings(max_examples=25, deadline=None)
    @given(kind=st.sampled_from(["TemporalLead", "Augment", "Demographics", "Rhythm", "Attributes"]), seed=st.integers(0, 2**32), b=st.integers(2, 12))
    def test_invariants_property(self, small_dataset, kind, seed, b):
        batch = build_batch(small_dataset, StrategySpec(kind), b, seed=seed)
        check_invariants(batch)
        if kind in ("Demographics", "Rhythm"):
            m = batch.positive_mask | np.eye(2 * b, dtype=bool)
            assert_array_equal((m.astype(int) @ m.astype(int) > 0), m)  # transitive closure adds nothing

    def test_strategy2_no_cross_anchor(self, small_dataset):
        m = build_batch(small_dataset, StrategySpec("Augment"), 10, seed=0).positive_mask
        for p, q in zip(*np.nonzero(m)):
            assert p // 2 == q // 2


class TestViews:
    def test_temporal_time_adjacent_halves(self, small_dataset):
        spec = StrategySpec("TemporalLead", segmentation=SegmentationSpec(2, 5000))
        batch = build_batch(small_dataset, spec, 4, seed=0)
        assert batch.views.shape == (8, 12, 1250)
        by_id = small_dataset.by_id()
        for b, rid in enumerate(batch.anchor_ids):
            x = by_id[rid].signal
            joined = np.concatenate([batch.views[2 * b], batch.views[2 * b + 1]], axis=1)
            assert any(np.array_equal(joined, x[:, k * 2500 : (k + 1) * 2500]) for k in range(2))

    def test_temporal_lead_tiled(self, small_dataset):
        batch = build_batch(small_dataset, StrategySpec("TemporalLead", temporal_lead_mode="lead"), 4, seed=0)
        x = small_dataset.by_id()[batch.anchor_ids[0]].signal
        v1, v2 = batch.views[0], batch.views[1]
        assert (v1 == v1[0]).all() and (v2 == v2[0]).all()
        i = [k for k in range(12) if np.array_equal(x[k], v1[0])]
        j = [k for k in range(12) if np.array_equal(x[k], v2[0])]
        assert i and j and set(i).isdisjoint(j)

    def test_group_views_raw(self, small_dataset):
        batch = build_batch(small_dataset, StrategySpec("Rhythm"), 4, seed=0)
        x = small_dataset.by_id()[batch.anchor_ids[0]].signal
        assert_array_equal(batch.views[0], x)
        assert_array_equal(batch.views[1], x)

    def test_attribute_fallback(self, small_dataset):
        stats = AttributeStats.fit(attribute_matrix(small_dataset))
        spec = StrategySpec("Attributes", h=1e-9, augment=AugmentationSpec())
        batch = BatchBuilder(small_dataset, spec, 6, stats=stats).build()
        assert batch.fallback_anchors == tuple(range(6))
        assert_array_equal(batch.positive_mask, anchor_mask(np.zeros((6, 6), bool)))
        with pytest.raises(EmptyPositive):
            BatchBuilder(small_dataset, StrategySpec("Attributes", h=1e-9, fallback=False), 6, stats=stats).build()


class TestEpochs:
    def test_deterministic(self, small_dataset):
        a = build_batch(small_dataset, StrategySpec("Augment"), 8, seed=5, epoch=2, index=1)
        b = build_batch(small_dataset, StrategySpec("Augment"), 8, seed=5, epoch=2, index=1)
        assert a.anchor_ids == b.anchor_ids
        assert a.views.tobytes() == b.views.tobytes()

    def test_epoch_covers_each_anchor_once(self, small_dataset):
        builder = BatchBuilder(small_dataset, StrategySpec("Rhythm"), 16, seed=2)
        ids = [rid for k in range(len(builder)) for rid in builder.build(0, k).anchor_ids]
        assert sorted(ids) == sorted(small_dataset.record_ids)
        assert [len(builder.build(0, k).anchor_ids) for k in range(len(builder))] == [16, 16, 8]

    def test_too_large(self, small_dataset):
        with pytest.raises(BatchTooLarge):
            build_batch(small_dataset, StrategySpec("Augment"), 41)
        with pytest.raises(BatchTooLarge):
            build_batch(small_dataset, StrategySpec("Augment"), 1)
