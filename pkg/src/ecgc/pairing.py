"""Batches of paired views with an explicit positive mask, for all five strategies.

Views of anchor ``b`` sit at rows ``2b`` and ``2b + 1``. ``positive_mask`` is
symmetric with a false diagonal, and the two views of one anchor are always
positives of each other.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ecgc import attributes as attrs
from ecgc.data import Dataset, EcgRecord, age_bucket
from ecgc.errors import BatchTooLarge, EmptyPositive, WrongStrategy
from ecgc.transforms import AugmentationSpec, SegmentationSpec, draw_view_pair, temporal_segments

logger = logging.getLogger(__name__)

STRATEGIES = ("TemporalLead", "Augment", "Demographics", "Rhythm", "Attributes")
_ALIASES = {str(i + 1): name for i, name in enumerate(STRATEGIES)}
_ALIASES.update({name.lower(): name for name in STRATEGIES})


def canonical_strategy(kind) -> str:
    key = str(kind).strip()
    name = _ALIASES.get(key.lower(), _ALIASES.get(key))
    if name is None:
        raise WrongStrategy(f"unknown strategy {kind!r}; expected one of {', '.join(STRATEGIES)} or 1-5")
    return name


@dataclass(frozen=True)
class StrategySpec:
    kind: str = "Augment"
    temporal_lead_mode: str = "time"
    segmentation: SegmentationSpec = field(default_factory=SegmentationSpec)
    augment: AugmentationSpec = field(default_factory=AugmentationSpec)
    h: float | None = None
    rhythm_only: bool = False
    raw_distance: bool = False
    fallback: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_strategy(self.kind))
        if self.temporal_lead_mode not in ("time", "lead"):
            raise WrongStrategy(f"temporal_lead_mode must be 'time' or 'lead', got {self.temporal_lead_mode!r}")
        if self.h is not None and not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "temporal_lead_mode": self.temporal_lead_mode,
            "v_segments": self.segmentation.v_segments,
            "h": self.h,
            "rhythm_only": self.rhythm_only,
            "raw_distance": self.raw_distance,
            "fallback": self.fallback,
        }


def group_key(record: EcgRecord, kind: str, rhythm_only: bool = False) -> tuple:
    kind = canonical_strategy(kind)
    if kind == "Demographics":
        return (age_bucket(record.age_years), record.sex)
    if kind == "Rhythm":
        if rhythm_only:
            return (record.rhythm_label,)
        return (record.rhythm_label, tuple(sorted(record.condition_labels)))
    raise WrongStrategy(f"group keys exist only for Demographics and Rhythm, not {kind}")


@dataclass(frozen=True)
class PairBatch:
    views: np.ndarray
    positive_mask: np.ndarray
    anchor_ids: tuple[str, ...]
    fallback_anchors: tuple[int, ...] = ()

    @property
    def n_views(self) -> int:
        return self.views.shape[0]


def anchor_mask(same: np.ndarray) -> np.ndarray:
    """Expand an anchor-level relation [B, B] to the view mask [2B, 2B]."""
    b = same.shape[0]
    rel = np.asarray(same, dtype=bool) | np.eye(b, dtype=bool)
    mask = np.repeat(np.repeat(rel, 2, axis=0), 2, axis=1)
    np.fill_diagonal(mask, False)
    return mask


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch, 0]).permutation(n)


def batches_per_epoch(n: int, batch_size: int) -> int:
    """Full batches plus a trailing partial batch when it holds >= 2 anchors."""
    full, rest = divmod(n, batch_size)
    return full + (1 if rest >= 2 else 0)


class BatchBuilder:
    """Precomputes per-dataset pairing structure and builds batches on demand.

    Batch ``k`` of epoch ``e`` depends only on (dataset, spec, B, seed, e, k).
    """

    def __init__(self, dataset: Dataset, spec: StrategySpec, batch_size: int, seed: int = 0, stats=None):
        if batch_size < 2:
            raise BatchTooLarge(f"batch size must be >= 2, got {batch_size}")
        if batch_size > len(dataset):
            raise BatchTooLarge(f"batch size {batch_size} exceeds dataset size {len(dataset)}")
        self.dataset = dataset
        self.spec = spec
        self.batch_size = batch_size
        self.seed = int(seed)
        self.keys = None
        self.neighbors = None
        self.h = spec.h
        self.stats = stats
        if spec.kind in ("Demographics", "Rhythm"):
            keys = [group_key(r, spec.kind, spec.rhythm_only) for r in dataset.records]
            index = {k: i for i, k in enumerate(dict.fromkeys(keys))}
            self.keys = np.array([index[k] for k in keys], dtype=np.int64)
        elif spec.kind == "Attributes":
            if self.stats is None:
                self.stats = (
                    attrs.AttributeStats.identity()
                    if spec.raw_distance
                    else attrs.AttributeStats.fit(attrs.attribute_matrix(dataset))
                )
            if self.h is None:
                self.h = attrs.default_cutoff(dataset, self.stats)
                logger.info("attribute cutoff h = %.4f (5th percentile of pairwise distances)", self.h)
            self.neighbors = attrs.neighbor_matrix(dataset, self.stats, self.h)
            lonely = int((~self.neighbors.any(axis=1)).sum())
            if lonely:
                logger.info("%d of %d anchors have no attribute neighbor at h=%.4f", lonely, len(dataset), self.h)

    def __len__(self) -> int:
        return batches_per_epoch(len(self.dataset), self.batch_size)

    def anchors(self, epoch: int, index: int) -> np.ndarray:
        order = epoch_order(len(self.dataset), self.seed, epoch)
        chosen = order[index * self.batch_size : (index + 1) * self.batch_size]
        if len(chosen) < 2:
            raise BatchTooLarge(f"batch {index} of epoch {epoch} has fewer than 2 anchors")
        return chosen

    def relation(self, idx: np.ndarray) -> np.ndarray:
        """Anchor-level positive relation (excluding self) for dataset indices idx."""
        if self.keys is not None:
            k = self.keys[idx]
            rel = k[:, None] == k[None, :]
        elif self.neighbors is not None:
            rel = self.neighbors[np.ix_(idx, idx)].copy()
        else:
            rel = np.zeros((len(idx), len(idx)), dtype=bool)
        np.fill_diagonal(rel, False)
        return rel

    def build(self, epoch: int = 0, index: int = 0, anchors=None) -> PairBatch:
        idx = np.asarray(anchors if anchors is not None else self.anchors(epoch, index), dtype=np.int64)
        rng = np.random.default_rng([self.seed, epoch, index, 1])
        rel = self.relation(idx)
        records = [self.dataset.records[i] for i in idx]
        spec = self.spec
        fallback: list[int] = []
        views = []
        for b, rec in enumerate(records):
            x = rec.signal
            if spec.kind == "TemporalLead":
                pair = self._temporal_lead(x, rng)
            elif spec.kind == "Augment":
                pair = draw_view_pair(x, spec.augment, rng)
            elif spec.kind == "Attributes" and not rel[b].any():
                if not spec.fallback:
                    raise EmptyPositive(f"anchor {rec.record_id} has no attribute neighbor in the batch")
                fallback.append(b)
                pair = draw_view_pair(x, spec.augment, rng)
            else:
                pair = (x, x)
            views.extend(pair)
        if spec.kind in ("Demographics", "Rhythm"):
            shared = int(rel.any(axis=1).sum())
            logger.debug("batch %d/%d: %d of %d anchors share a group", epoch, index, shared, len(idx))
        return PairBatch(
            views=np.stack(views).astype(np.float32, copy=False),
            positive_mask=anchor_mask(rel),
            anchor_ids=tuple(r.record_id for r in records),
            fallback_anchors=tuple(fallback),
        )

    def _temporal_lead(self, x: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        seg = self.spec.segmentation
        if self.spec.temporal_lead_mode == "time":
            # both views come from one window of length S/V: its two adjacent halves
            window = temporal_segments(x, seg)[int(rng.integers(seg.v_segments))]
            half = window.shape[-1] // 2
            return window[:, :half], window[:, half : 2 * half]
        a, b = rng.choice(x.shape[0], size=2, replace=False)
        # single leads are tiled to every row so one encoder serves all strategies
        return np.repeat(x[a : a + 1], x.shape[0], axis=0), np.repeat(x[b : b + 1], x.shape[0], axis=0)

    def epoch(self, epoch: int):
        for k in range(len(self)):
            yield self.build(epoch, k)


def build_batch(dataset: Dataset, spec: StrategySpec, batch_size: int, seed: int = 0, epoch: int = 0, index: int = 0) -> PairBatch:
    """One batch of anchors drawn without replacement from the epoch's shuffled order."""
    return BatchBuilder(dataset, spec, batch_size, seed).build(epoch, index)
