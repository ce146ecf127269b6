from __future__ import annotations

import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from ecgc import synth
from ecgc.attributes import (
    AttributeStats,
    attribute_distance,
    attribute_matrix,
    default_cutoff,
    detect_r_peaks,
    extract_attributes,
    neighbors_within,
    standardize,
)
from ecgc.data import Dataset, EcgRecord, with_attributes
from ecgc.errors import DegenerateStats, DimensionMismatch, MissingAttributes, NoPeaksDetected

vec = st.lists(st.floats(-1e3, 1e3), min_size=11, max_size=11).map(np.array)


def sr_record(rate: float, seed: int = 0, **overrides) -> EcgRecord:
    rng = np.random.default_rng(seed)
    params = synth.BeatParams("SR", rate, **overrides)
    r_times = synth.draw_r_times(params, rng, 10.0)
    sig = synth.render(params, r_times, 5000, 500).astype(np.float32)
    attrs = synth.ground_truth_attributes(params, r_times, 10.0, 500)
    return EcgRecord(f"sr{rate}", sig, 40, "male", "SR", attributes=attrs)


class TestStandardize:
    def test_mean_maps_to_zero(self, rng):
        m = rng.normal(size=(30, 11))
        stats = AttributeStats.fit(m)
        assert_allclose(standardize(stats.mean, stats), 0.0)
        assert_allclose(standardize(stats.mean + stats.std, stats), 1.0)

    def test_constant_dimension_dropped(self, rng, caplog):
        m = rng.normal(size=(10, 11))
        m[:, 4] = 3.0
        with caplog.at_level(logging.WARNING):
            stats = AttributeStats.fit(m)
        assert "qt_corrected" in caplog.text
        assert standardize(m[0], stats).shape == (10,)

    def test_all_constant(self):
        with pytest.raises(DegenerateStats):
            AttributeStats.fit(np.ones((5, 11)))

    def test_width_mismatch(self, rng):
        stats = AttributeStats.fit(rng.normal(size=(5, 11)))
        with pytest.raises(DimensionMismatch):
            standardize(np.zeros(10), stats)

    def test_csv_round_trip(self, tmp_path, rng):
        stats = AttributeStats.fit(rng.normal(size=(7, 11)))
        stats.save(tmp_path / "s.csv")
        back = AttributeStats.load(tmp_path / "s.csv")
        assert back.mean.tobytes() == stats.mean.tobytes()
        assert back.std.tobytes() == stats.std.tobytes()
        assert (tmp_path / "s.csv").read_text().splitlines()[0] == "dimension,mean,std"


class TestDistance:
    def test_examples(self):
        assert attribute_distance(np.zeros(11), np.zeros(11)) == 0.0
        a = np.zeros(11)
        a[:2] = (3.0, 4.0)
        assert attribute_distance(a, np.zeros(11)) == 5.0

    def test_scalar_oracle(self, rng):
        for _ in range(100):
            a, b = rng.normal(size=11) * 50, rng.normal(size=11) * 50
            oracle = math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))
            assert abs(attribute_distance(a, b) - oracle) <= 1e-12 * max(1.0, oracle)

    def test_mismatch(self):
        with pytest.raises(DimensionMismatch):
            attribute_distance(np.zeros(3), np.zeros(4))

    @settings(max_examples=100, deadline=None)
    @given(a=vec, b=vec, c=vec)
    def test_metric_axioms(self, a, b, c):
        dab = attribute_distance(a, b)
        assert dab == attribute_distance(b, a)
        assert dab >= 0
        assert attribute_distance(a, a) == 0
        assert attribute_distance(a, c) <= dab + attribute_distance(b, c) + 1e-9 * (1 + dab)


class TestNeighbors:
    def test_brute_force_oracle(self, dataset50):
        stats = AttributeStats.fit(attribute_matrix(dataset50))
        z = {r.record_id: standardize(r.attributes, stats) for r in dataset50}
        for anchor in dataset50.record_ids:
            oracle = {j for j in z if j != anchor and math.sqrt(sum((p - q) ** 2 for p, q in zip(z[anchor], z[j]))) <= 1.0}
            assert neighbors_within(anchor, dataset50, stats, 1.0) == oracle

    def test_extremes(self, dataset50):
        stats = AttributeStats.fit(attribute_matrix(dataset50))
        rid = dataset50.record_ids[0]
        assert neighbors_within(rid, dataset50, stats, 0.0) == set()
        assert neighbors_within(rid, dataset50, stats, math.inf) == set(dataset50.record_ids) - {rid}

    def test_symmetric(self, dataset50):
        stats = AttributeStats.fit(attribute_matrix(dataset50))
        h = default_cutoff(dataset50, stats)
        nb = {r: neighbors_within(r, dataset50, stats, h) for r in dataset50.record_ids}
        for i, js in nb.items():
            for j in js:
                assert i in nb[j]

    def test_missing(self, dataset50):
        ds = with_attributes(Dataset(tuple(r for r in dataset50)), {})
        bare = Dataset((EcgRecord("bare", np.zeros((12, 10)), 40, "male", "SR"),) + ds.records[:3])
        stats = AttributeStats.fit(attribute_matrix(ds))
        with pytest.raises(MissingAttributes) as exc:
            neighbors_within(ds.record_ids[0], bare, stats, 1.0)
        assert "bare" in str(exc.value)

    def test_default_cutoff_is_fifth_percentile(self, dataset50):
        stats = AttributeStats.fit(attribute_matrix(dataset50))
        z = standardize(attribute_matrix(dataset50), stats)
        d = [np.linalg.norm(z[i] - z[j]) for i in range(len(z)) for j in range(i + 1, len(z))]
        assert default_cutoff(dataset50, stats) == pytest.approx(np.percentile(d, 5), rel=1e-12)


class TestExtraction:
    def test_flat_signal(self):
        with pytest.raises(NoPeaksDetected):
            extract_attributes(EcgRecord("flat", np.zeros((12, 5000)), 40, "male", "SR"))

    def test_short_signal(self):
        with pytest.raises(NoPeaksDetected):
            extract_attributes(EcgRecord("short", np.ones((12, 500)), 40, "male", "SR"))

    def test_75_bpm(self):
        est = extract_attributes(sr_record(75.0))
        assert 73 <= est[0] <= 77

    def test_twelve_beats(self):
        rec = sr_record(70.0, seed=3)
        assert rec.attributes[7] == 12
        assert extract_attributes(rec)[7] == 12

    @pytest.mark.parametrize("rate", [40, 60, 90, 120, 150, 180, 220])
    def test_rate_sweep(self, rate):
        rec = sr_record(float(rate), seed=rate)
        est = extract_attributes(rec)
        assert abs(est[0] - rec.attributes[0]) <= 3
        assert est[7] == rec.attributes[7]

    def test_axes_and_durations_close(self):
        rec = sr_record(72.0, seed=1, r_axis=30.0, t_axis=50.0, qrs_width_s=0.1)
        est = extract_attributes(rec)
        assert abs(est[5] - 30.0) < 5
        assert abs(est[6] - 50.0) < 10
        assert abs(est[2] - 100.0) < 25

    def test_invariants_hold(self, small_dataset):
        for rec in small_dataset.records[:12]:
            est = extract_attributes(rec)
            assert np.all(np.isfinite(est))
            assert np.all(est[[0, 1, 2, 3, 4, 7]] >= 0)

    def test_peaks_at_r(self):
        rec = sr_record(80.0, seed=2)
        peaks = detect_r_peaks(rec.signal[1], 500)
        params_r = np.flatnonzero((rec.signal[1][1:-1] > rec.signal[1][:-2]) & (rec.signal[1][1:-1] >= rec.signal[1][2:]) & (rec.signal[1][1:-1] > 0.5)) + 1
        assert peaks.shape == params_r.shape
        assert np.abs(peaks - params_r).max() <= 1  # refinement runs on the band-passed trace
