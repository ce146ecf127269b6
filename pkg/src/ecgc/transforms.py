"""View constructors: temporal segments, single leads, stochastic augmentations.

Every augmentation keeps the input shape. Randomness always comes from an
explicit seed so a (signal, spec, draw_seed) triple fixes the output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from ecgc.errors import IndexOutOfRange, InsufficientAugmentations, LengthMismatch, UnknownAugmentation

AUGMENTATIONS = ("jitter", "scale", "flip", "rotate", "time_warp", "size_warp")
SIZE_WARP_FRACTION = 0.8
_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class SegmentationSpec:
    v_segments: int = 2
    total_samples: int = 5000

    def __post_init__(self):
        if self.v_segments < 1 or self.total_samples < 1:
            raise LengthMismatch("v_segments and total_samples must be positive")
        if self.total_samples % self.v_segments:
            raise LengthMismatch(f"{self.total_samples} samples do not split into {self.v_segments} equal segments")

    @property
    def window(self) -> int:
        return self.total_samples // self.v_segments


@dataclass(frozen=True)
class AugmentationSpec:
    enabled: tuple[str, ...] = AUGMENTATIONS
    jitter_std: float = 0.05
    scale_range: tuple[float, float] = (0.8, 1.2)
    warp_knots: int = 4
    warp_strength: float = 0.2
    seed: int = 0

    def __post_init__(self):
        enabled = tuple(dict.fromkeys(self.enabled))
        unknown = [k for k in enabled if k not in AUGMENTATIONS]
        if unknown:
            raise UnknownAugmentation(f"unknown augmentation(s): {', '.join(unknown)}")
        object.__setattr__(self, "enabled", enabled)
        lo, hi = (float(v) for v in self.scale_range)
        if not (0 < lo <= hi):
            raise ValueError(f"scale_range must satisfy 0 < low <= high, got {self.scale_range}")
        object.__setattr__(self, "scale_range", (lo, hi))
        if self.jitter_std < 0 or self.warp_strength < 0:
            raise ValueError("jitter_std and warp_strength must be nonnegative")
        if self.warp_knots < 1:
            raise ValueError("warp_knots must be positive")


def temporal_segments(x: np.ndarray, spec: SegmentationSpec) -> list[np.ndarray]:
    """Split x [C, S] into V contiguous, equal, non-overlapping windows."""
    x = np.asarray(x)
    if x.shape[-1] != spec.total_samples:
        raise LengthMismatch(f"signal has {x.shape[-1]} samples, spec expects {spec.total_samples}")
    w = spec.window
    return [x[..., k * w : (k + 1) * w] for k in range(spec.v_segments)]


def sample_lead(x: np.ndarray, lead_index: int) -> np.ndarray:
    x = np.asarray(x)
    if not 0 <= lead_index < x.shape[0]:
        raise IndexOutOfRange(f"lead index {lead_index} outside [0, {x.shape[0]})")
    return x[lead_index]


def _resample(x: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Linear interpolation of every row of x at fractional sample positions in [0, n-1]."""
    n = x.shape[-1]
    lo = np.clip(np.floor(positions).astype(np.int64), 0, max(n - 2, 0))
    frac = positions - lo
    hi = np.minimum(lo + 1, n - 1)
    return x[..., lo] * (1.0 - frac) + x[..., hi] * frac


def warp_positions(n: int, knots: int, strength: float, rng: np.random.Generator) -> np.ndarray:
    """Monotone map from output index to source position with 0->0 and n-1->n-1.

    ``knots`` interior knots sit evenly spaced and each moves by at most
    ``strength`` times half the knot spacing, so knot order is preserved and
    the shape-preserving cubic through them stays increasing.
    """
    if n < 2:
        return np.zeros(n)
    xs = np.linspace(0.0, n - 1.0, knots + 2)
    spacing = xs[1] - xs[0]
    shift = rng.uniform(-1.0, 1.0, knots) * min(strength, 0.99) * spacing / 2
    ys = xs.copy()
    ys[1:-1] += shift
    pos = PchipInterpolator(xs, ys)(np.arange(n, dtype=np.float64))
    pos[0], pos[-1] = 0.0, n - 1.0
    return np.clip(pos, 0.0, n - 1.0)


def apply_augmentation(x: np.ndarray, kind: str, spec: AugmentationSpec, draw_seed: int) -> np.ndarray:
    """Apply one augmentation; the output has the shape and dtype of x."""
    if kind not in AUGMENTATIONS or kind not in spec.enabled:
        raise UnknownAugmentation(f"augmentation {kind!r} is not enabled (enabled: {', '.join(spec.enabled)})")
    x = np.asarray(x)
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    rng = np.random.default_rng([spec.seed & _SEED_MASK, int(draw_seed) & _SEED_MASK])
    xf = x.astype(np.float64)
    n = x.shape[-1]
    if kind == "jitter":
        out = xf + rng.normal(0.0, spec.jitter_std, x.shape) if spec.jitter_std > 0 else xf
    elif kind == "scale":
        out = xf * rng.uniform(*spec.scale_range)
    elif kind == "flip":
        out = -xf
    elif kind == "rotate":
        rows = x.shape[0] if x.ndim > 1 else 1
        out = np.roll(xf, int(rng.integers(1, rows)), axis=0) if rows > 1 else xf
    elif kind == "time_warp":
        out = _resample(xf, warp_positions(n, spec.warp_knots, spec.warp_strength, rng))
    else:  # size_warp
        crop = math.ceil(SIZE_WARP_FRACTION * n)
        offset = int(rng.integers(0, n - crop + 1))
        out = _resample(xf, offset + np.linspace(0.0, crop - 1.0, n))
    return np.asarray(out, dtype=dtype)


def draw_view_pair(x: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Two views of x under two distinct, randomly chosen augmentations."""
    if len(spec.enabled) < 2:
        raise InsufficientAugmentations(f"need at least 2 enabled augmentations, have {len(spec.enabled)}")
    first, second = rng.choice(len(spec.enabled), size=2, replace=False)
    seeds = rng.integers(0, 1 << 63, size=2)
    return (
        apply_augmentation(x, spec.enabled[first], spec, int(seeds[0])),
        apply_augmentation(x, spec.enabled[second], spec, int(seeds[1])),
    )
