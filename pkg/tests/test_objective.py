from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from ecgc.data import Dataset, SyntheticSpec, generate_synthetic, normalized
from ecgc.errors import LabelOutOfRange, MaskAsymmetry, NoPositive, SingleClass, ZeroVector
from ecgc.nn import Encoder, EncoderConfig, Tensor
from ecgc.objective import (
    LossConfig,
    MetricsReport,
    TrainConfig,
    auroc,
    contrastive_from_similarity,
    contrastive_loss,
    cosine_sim,
    cross_entropy,
    macro_auroc,
    per_anchor_loss,
    probe_on_embeddings,
    train_baseline,
    train_pretext,
    train_probe,
)
from ecgc.objective.training import REPORT_COLUMNS
from ecgc.pairing import StrategySpec
from ecgc.transforms import SegmentationSpec

TINY = EncoderConfig(n_blocks=2, base_channels=4, embed_dim=8, stem_kernel=8, stem_stride=8)
DESK = EncoderConfig(n_blocks=4, base_channels=8, embed_dim=64, stem_kernel=8, stem_stride=8)


def naive_loss(z: np.ndarray, mask: np.ndarray, tau: float) -> float:
    """Direct per-row summation: no vectorization, no stabilization."""
    n = len(z)
    total = 0.0
    for i in range(n):
        num = den = 0.0
        for j in range(n):
            if j == i:
                continue
            s = math.exp(cosine_sim(z[i], z[j]) / tau)
            den += s
            if mask[i][j]:
                num += s
        total += -math.log(num / den)
    return total / n


def naive_ce(logits: np.ndarray, labels) -> float:
    out = 0.0
    for row, y in zip(logits, labels):
        out += -(row[y] - math.log(sum(math.exp(v) for v in row)))
    return out / len(labels)


def pair_mask(b: int, rel=None) -> np.ndarray:
    rel = np.eye(b, dtype=bool) if rel is None else rel
    return np.kron(rel, np.ones((2, 2), bool)) & ~np.eye(2 * b, dtype=bool)


def random_relation(rng, b):
    g = rng.integers(0, 3, b)
    return g[:, None] == g[None, :]


class TestCosine:
    def test_examples(self):
        assert cosine_sim([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
        assert cosine_sim([1, 0], [0, 5]) == 0.0
        assert cosine_sim([1, 2, 3], [4, 5, 6]) == pytest.approx(32 / (math.sqrt(14) * math.sqrt(77)), abs=1e-12)
        assert cosine_sim([1, 2, 3], [4, 5, 6]) == pytest.approx(0.974631, abs=1e-6)

    def test_zero(self):
        with pytest.raises(ZeroVector):
            cosine_sim([0, 0], [1, 1])
        with pytest.raises(ZeroVector):
            contrastive_loss(np.zeros((2, 3)), pair_mask(1))


class TestContrastive:
    def test_uniform_is_ln2_per_anchor(self):
        # rows 0 and 2 each have one positive and one negative
        mask = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], bool)
        for tau in (0.07, 1.0):
            rows = per_anchor_loss(np.full((3, 3), 0.5), mask, LossConfig(tau))
            assert_allclose(rows[[0, 2]], math.log(2), atol=1e-12)
            assert rows[1] == pytest.approx(0.0, abs=1e-12)
            total = contrastive_from_similarity(Tensor(np.full((3, 3), 0.5)), mask, LossConfig(tau)).item()
            assert total == pytest.approx(2 * math.log(2) / 3, abs=1e-12)

    def test_uniform_pairs(self):
        # identical embeddings, 2 anchors: one positive among three others
        assert contrastive_loss(np.ones((4, 5)), pair_mask(2), LossConfig(0.07)).item() == pytest.approx(math.log(3), abs=1e-6)

    def test_separable(self):
        # rows 0 and 2: positive at similarity 1, negative at similarity -1
        sim = np.array([[1.0, 1.0, -1.0], [1.0, 1.0, 1.0], [-1.0, 1.0, 1.0]])
        mask = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], bool)
        rows = per_anchor_loss(sim, mask, LossConfig(1.0))
        assert_allclose(rows[[0, 2]], math.log1p(math.exp(-2)), atol=1e-12)
        assert rows[0] == pytest.approx(0.126928, abs=1e-6)
        z = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]])
        loss = contrastive_loss(z, pair_mask(2), LossConfig(1.0)).item()
        assert loss == pytest.approx(math.log1p(2 * math.exp(-2)), abs=1e-9)

    def test_naive_oracle(self, rng):
        for _ in range(10):
            b = int(rng.integers(4, 9))
            z = rng.standard_normal((2 * b, 6))
            mask = pair_mask(b, random_relation(rng, b))
            tau = float(rng.uniform(0.05, 1.0))
            assert contrastive_loss(z, mask, LossConfig(tau)).item() == pytest.approx(naive_loss(z, mask, tau), abs=1e-6)

    def test_stabilization_invariance(self, rng):
        z = rng.standard_normal((12, 5))
        mask = pair_mask(6)
        a = contrastive_loss(z, mask, LossConfig(0.5, stabilize=True)).item()
        b = contrastive_loss(z, mask, LossConfig(0.5, stabilize=False)).item()
        assert a == pytest.approx(b, abs=1e-5)

    def test_stabilized_survives_tiny_temperature(self, rng):
        z = rng.standard_normal((8, 4))
        assert np.isfinite(contrastive_loss(z, pair_mask(4), LossConfig(1e-3)).item())

    def test_temperature_monotone(self):
        z = np.array([[1.0, 0.1], [1.0, -0.1], [-1.0, 0.1], [-1.0, -0.1]])
        losses = [contrastive_loss(z, pair_mask(2), LossConfig(t)).item() for t in (1.0, 0.1, 0.01)]
        assert losses[0] > losses[1] > losses[2]
        assert losses[2] < 1e-6

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), b=st.integers(2, 6), tau=st.floats(0.05, 2.0))
    def test_non_negative(self, seed, b, tau):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((2 * b, 3))
        assert contrastive_loss(z, pair_mask(b, random_relation(rng, b)), LossConfig(tau)).item() >= 0.0

    def test_mean_log_matches_sum_out_with_one_positive(self, rng):
        z = rng.standard_normal((8, 4))
        a = contrastive_loss(z, pair_mask(4), LossConfig(0.3, "sum_out")).item()
        b = contrastive_loss(z, pair_mask(4), LossConfig(0.3, "mean_log")).item()
        assert a == pytest.approx(b, abs=1e-12)

    def test_mask_errors(self):
        z = np.eye(4)
        bad = pair_mask(2)
        bad[0, 2] = True
        with pytest.raises(MaskAsymmetry):
            contrastive_loss(z, bad)
        diag = pair_mask(2) | np.eye(4, dtype=bool)
        with pytest.raises(MaskAsymmetry):
            contrastive_loss(z, diag)
        with pytest.raises(NoPositive) as exc:
            contrastive_loss(z, np.zeros((4, 4), bool))
        assert exc.value.args[0] == 0 or "0" in str(exc.value)


class TestCrossEntropy:
    def test_uniform(self):
        assert cross_entropy(np.zeros((3, 4)), [0, 1, 3]).item() == pytest.approx(math.log(4), abs=1e-12)

    def test_oracle(self, rng):
        logits = rng.standard_normal((5, 4)) * 3
        labels = rng.integers(0, 4, 5)
        assert cross_entropy(logits, labels).item() == pytest.approx(naive_ce(logits, labels), abs=1e-9)

    def test_large_logits_stable(self):
        assert cross_entropy(np.array([[1000.0, 0.0, 0.0, 0.0]]), [0]).item() == pytest.approx(0.0, abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(m1=st.floats(0.0, 30.0), dm=st.floats(0.01, 10.0))
    def test_margin_monotone(self, m1, dm):
        loss = lambda m: cross_entropy(np.array([[m, 0.0, 0.0, 0.0]]), [0]).item()  # noqa: E731
        assert loss(m1 + dm) <= loss(m1)

    def test_bad_labels(self):
        with pytest.raises(LabelOutOfRange):
            cross_entropy(np.zeros((2, 4)), [0, 4])
        with pytest.raises(LabelOutOfRange):
            cross_entropy(np.zeros((2, 4)), [0])


def pair_count_auroc(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


class TestAuroc:
    def test_examples(self):
        assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert auroc([0.5] * 6, [0, 1] * 3) == 0.5
        assert auroc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0

    def test_pair_count_oracle(self, rng):
        for _ in range(50):
            n = 200
            scores = rng.integers(0, 20, n) / 4.0  # many ties
            labels = rng.integers(0, 2, n)
            assert auroc(scores, labels) == pair_count_auroc(scores, labels)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_increasing_transform(self, seed):
        rng = np.random.default_rng(seed)
        s = rng.standard_normal(50)
        y = np.r_[1, 0, rng.integers(0, 2, 48)]
        assert auroc(np.exp(3 * s) + 1, y) == auroc(s, y)

    def test_single_class(self):
        with pytest.raises(SingleClass):
            auroc([0.1, 0.2], [1, 1])

    def test_macro(self):
        probs = np.eye(4)[[0, 1, 2, 3, 0]]
        assert macro_auroc(probs, [0, 1, 2, 3, 0]) == 1.0


class TestProbe:
    def test_one_hot_embeddings(self, rng):
        y = np.tile(np.arange(4), 20)
        z = np.eye(4)[y] + 0.0
        rep = probe_on_embeddings(z, y, z, y, TrainConfig("probe"))
        assert rep.auroc_macro == 1.0
        assert len(rep.loss_curve) == 10

    def test_chance_level(self):
        enc = Encoder(TINY)
        scores = []
        for seed in range(3):
            rng = np.random.default_rng(seed)
            x = rng.standard_normal((240, 12, 400)).astype(np.float32)
            y = np.tile(np.arange(4), 60)
            rng.shuffle(y)
            z = enc.embed(x)
            scores.append(probe_on_embeddings(z[:120], y[:120], z[120:], y[120:], TrainConfig("probe", seed=seed)).auroc_macro)
        assert 0.4 <= np.mean(scores) <= 0.6

    def test_encoder_frozen(self, small_dataset):
        enc = Encoder(TINY)
        before = {k: v.tobytes() for k, v in enc.state_dict().items()}
        train = Dataset(small_dataset.records[:24])
        test = Dataset(small_dataset.records[24:])
        train_probe(enc, train, test, TrainConfig("probe", epochs=3))
        assert {k: v.tobytes() for k, v in enc.state_dict().items()} == before
        assert all(p.grad is None for p in enc.parameters())


@pytest.fixture(scope="module")
def data64():
    return normalized(generate_synthetic(SyntheticSpec(n_records=64, seed=11)))


class TestTraining:
    def test_pretext_plumbing(self, data64, tmp_path):
        from ecgc.nn import load_checkpoint

        cfg = TrainConfig("pretrain", epochs=2, lr=1e-3, batch_size=16)
        enc, rep = train_pretext(data64, StrategySpec("Rhythm"), TINY, cfg, checkpoint_path=tmp_path / "e.ckpt")
        assert [e for e, _ in rep.loss_curve] == [1, 2]
        back = load_checkpoint(tmp_path / "e.ckpt")
        assert all(np.array_equal(back.params[k].data, v.data) for k, v in enc.params.items())

    def test_pretext_deterministic(self, data64):
        cfg = TrainConfig("pretrain", epochs=2, lr=1e-3, batch_size=16, seed=4)
        spec = StrategySpec("TemporalLead")
        _, a = train_pretext(data64, spec, TINY, cfg)
        _, b = train_pretext(data64, spec, TINY, cfg)
        assert a.loss_curve == b.loss_curve

    def test_augment_loss_decreases(self):
        ds = normalized(generate_synthetic(SyntheticSpec(n_records=200, seed=5)))
        cfg = TrainConfig("pretrain", epochs=20, lr=1e-3, batch_size=64)
        _, rep = train_pretext(ds, StrategySpec("Augment"), TINY, cfg)
        assert rep.loss_curve[-1][1] < rep.loss_curve[0][1]

    def test_baseline_sanity(self):
        ds = normalized(generate_synthetic(SyntheticSpec(n_records=400, seed=2)))
        train, test = Dataset(ds.records[:300]), Dataset(ds.records[300:])
        # the desk encoder separates AFIB from SR within 30 epochs only at lr 1e-3
        _, rep = train_baseline(train, test, DESK, TrainConfig("baseline", epochs=30, lr=1e-3))
        assert rep.auroc_macro > 0.9

    def test_baseline_deterministic_and_missing_class(self, data64):
        train, test = Dataset(data64.records[:40]), Dataset(data64.records[40:])
        cfg = TrainConfig("baseline", epochs=2, batch_size=16, seed=1)
        _, a = train_baseline(train, test, TINY, cfg)
        _, b = train_baseline(train, test, TINY, cfg)
        assert a.rows() == b.rows()
        one_class = Dataset([r for r in test.records if r.label == test.records[0].label])
        with pytest.raises(SingleClass):
            train_baseline(train, one_class, TINY, cfg)

    def test_report_round_trip(self, tmp_path):
        rep = MetricsReport("probe", [0.9, 0.8, 0.7, 0.6], 0.75, 0.5, [(1, 1.25), (2, 0.5)], [(1, 0.7), (2, 0.8)])
        back = MetricsReport.read_csv(rep.write_csv(tmp_path / "m.csv"), "probe")
        assert back == MetricsReport("probe", rep.auroc_per_class, 0.75, 0.5, rep.loss_curve, rep.val_curve)
        assert back.best_val_epoch == 2
        header = (tmp_path / "m.csv").read_text().splitlines()[0]
        assert tuple(header.split(",")) == REPORT_COLUMNS
