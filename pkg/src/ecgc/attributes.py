"""Wave-attribute vectors: standardization, distances, neighbor sets, extraction.

Attribute order is fixed (it is also the manifest column order)::

    ventricular_rate (bpm), atrial_rate (bpm), qrs_duration (ms),
    qt_interval (ms), qt_corrected (ms), r_axis (deg), t_axis (deg),
    qrs_count, q_onset, q_offset, t_offset

The last three are sample indices in a 1.2 s median-beat frame whose R peak
sits at index ``MEDIAN_BEAT_R_INDEX`` (at 500 Hz).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

from ecgc import kernels
from ecgc.data import Dataset, EcgRecord, N_ATTRIBUTES
from ecgc.errors import DegenerateStats, DimensionMismatch, MissingAttributes, NoPeaksDetected

logger = logging.getLogger(__name__)

ATTRIBUTE_NAMES = (
    "ventricular_rate",
    "atrial_rate",
    "qrs_duration",
    "qt_interval",
    "qt_corrected",
    "r_axis",
    "t_axis",
    "qrs_count",
    "q_onset",
    "q_offset",
    "t_offset",
)
assert len(ATTRIBUTE_NAMES) == N_ATTRIBUTES

MEDIAN_BEAT_R_INDEX = 300
_NONNEGATIVE = (0, 1, 2, 3, 4, 7)


def validate_attributes(values) -> np.ndarray:
    a = np.asarray(values, dtype=np.float64)
    if a.shape != (N_ATTRIBUTES,):
        raise DimensionMismatch(f"expected {N_ATTRIBUTES} attributes, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("attributes must be finite")
    if np.any(a[list(_NONNEGATIVE)] < 0):
        raise ValueError("rates, durations and counts must be nonnegative")
    return a


# -- statistics & standardization -------------------------------------------
@dataclass(frozen=True)
class AttributeStats:
    mean: np.ndarray
    std: np.ndarray

    @property
    def keep(self) -> np.ndarray:
        """Mask of dimensions with nonzero spread (used in distances)."""
        return self.std > 0

    @classmethod
    def fit(cls, matrix: np.ndarray) -> "AttributeStats":
        m = np.asarray(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] == 0:
            raise DegenerateStats("need at least one attribute vector")
        stats = cls(m.mean(axis=0), m.std(axis=0))
        dropped = [ATTRIBUTE_NAMES[i] if m.shape[1] == N_ATTRIBUTES else str(i) for i in np.flatnonzero(~stats.keep)]
        if dropped:
            logger.warning("dropping constant attribute dimension(s): %s", ", ".join(dropped))
        if not stats.keep.any():
            raise DegenerateStats("every attribute dimension is constant")
        return stats

    @classmethod
    def identity(cls, dim: int = N_ATTRIBUTES) -> "AttributeStats":
        """Stats that leave vectors unchanged (literal raw-attribute distance)."""
        return cls(np.zeros(dim), np.ones(dim))

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dimension", "mean", "std"])
            for i, (mu, sd) in enumerate(zip(self.mean, self.std)):
                name = ATTRIBUTE_NAMES[i] if len(self.mean) == N_ATTRIBUTES else str(i)
                w.writerow([name, repr(float(mu)), repr(float(sd))])

    @classmethod
    def load(cls, path) -> "AttributeStats":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(np.array([float(r["mean"]) for r in rows]), np.array([float(r["std"]) for r in rows]))


def standardize(a, stats: AttributeStats) -> np.ndarray:
    """(a - mean) / std over the kept dimensions. Works on [11] or [N, 11]."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] != stats.mean.shape[0]:
        raise DimensionMismatch(f"attribute width {a.shape[-1]} vs stats width {stats.mean.shape[0]}")
    keep = stats.keep
    if not keep.any():
        raise DegenerateStats("no attribute dimension has positive std")
    return (a[..., keep] - stats.mean[keep]) / stats.std[keep]


def attribute_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    d = a - b
    return float(np.sqrt(np.dot(d, d)))


def pairwise_distances(z: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix between the rows of z [N, d]."""
    z = np.asarray(z, dtype=np.float64)
    diff = z[:, None, :] - z[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def attribute_matrix(dataset: Dataset) -> np.ndarray:
    missing = [r.record_id for r in dataset.records if r.attributes is None]
    if missing:
        raise MissingAttributes(missing)
    if not dataset.records:
        return np.zeros((0, N_ATTRIBUTES))
    return np.stack([r.attributes for r in dataset.records])


def neighbor_matrix(dataset: Dataset, stats: AttributeStats, h: float) -> np.ndarray:
    """Boolean [N, N]: True where j != i and the standardized distance is <= h."""
    z = standardize(attribute_matrix(dataset), stats)
    adj = pairwise_distances(z) <= h
    np.fill_diagonal(adj, False)
    return adj


def neighbors_within(anchor: str, dataset: Dataset, stats: AttributeStats, h: float) -> set[str]:
    """Ids of records whose standardized attributes lie within ``h`` of ``anchor``."""
    matrix = attribute_matrix(dataset)
    ids = dataset.record_ids
    try:
        i = ids.index(anchor)
    except ValueError:
        raise KeyError(anchor) from None
    z = standardize(matrix, stats)
    d = np.sqrt(((z - z[i]) ** 2).sum(axis=1))
    return {ids[j] for j in np.flatnonzero(d <= h) if j != i}


def default_cutoff(dataset: Dataset, stats: AttributeStats, percentile: float = 5.0) -> float:
    """``percentile``-th percentile of pairwise standardized distances."""
    z = standardize(attribute_matrix(dataset), stats)
    if len(z) < 2:
        raise DegenerateStats("need at least two records to pick a cutoff")
    d = pairwise_distances(z)[np.triu_indices(len(z), k=1)]
    return float(np.percentile(d, percentile))


# -- extraction ---------------------------------------------------------------
LEAD_I, LEAD_II, LEAD_AVF = 0, 1, 5


def _bandpass(x: np.ndarray, fs: int, lo: float = 5.0, hi: float = 15.0) -> np.ndarray:
    sos = sps.butter(2, [lo, hi], btype="bandpass", fs=fs, output="sos")
    return sps.sosfiltfilt(sos, x)


def qrs_energy(x: np.ndarray, fs: int) -> tuple[np.ndarray, np.ndarray]:
    """Band-passed signal and its moving-window-integrated squared slope."""
    filtered = _bandpass(np.asarray(x, dtype=np.float64), fs)
    # five-point derivative, zero phase
    deriv = np.convolve(filtered, np.array([1.0, 2.0, 0.0, -2.0, -1.0]) * (fs / 8.0), mode="same")
    width = max(1, int(round(0.15 * fs)))
    mwi = np.convolve(deriv * deriv, np.ones(width) / width, mode="same")
    return filtered, mwi


def detect_r_peaks(x: np.ndarray, fs: int) -> np.ndarray:
    """R-peak sample indices on one lead.

    Band-pass (5-15 Hz), differentiate, square, integrate over 150 ms, then
    the adaptive dual-threshold decision rule picks beats, and each pick is
    moved to the largest band-passed deflection within 75 ms.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size < 3 or not np.any(x != x[0]):
        raise NoPeaksDetected("flat signal")
    filtered, mwi = qrs_energy(x, fs)
    train = mwi[: min(len(mwi), 2 * fs)]
    spk, npk = 0.25 * float(train.max()), 0.5 * float(train.mean())
    if spk <= 0:
        raise NoPeaksDetected("no QRS energy")
    picks = kernels.threshold_peaks(mwi, int(0.2 * fs), spk, npk)
    if len(picks) == 0:
        raise NoPeaksDetected("no beat cleared the detection threshold")
    # T-wave discrimination: a pick within 360 ms of the previous beat with
    # under half its integrated energy is a T wave, not a QRS
    beats = [int(picks[0])]
    for q in picks[1:]:
        if q - beats[-1] < int(0.36 * fs) and mwi[q] < 0.5 * mwi[beats[-1]]:
            continue
        beats.append(int(q))
    picks = beats
    half = int(round(0.075 * fs))
    mag = np.abs(filtered)
    refined = []
    for p in picks:
        lo, hi = max(0, p - half), min(len(x), p + half + 1)
        refined.append(lo + int(np.argmax(mag[lo:hi])))
    refined = np.unique(np.asarray(refined, dtype=np.int64))
    keep = [refined[0]]
    for r in refined[1:]:
        if r - keep[-1] >= int(0.2 * fs):
            keep.append(r)
        elif mag[r] > mag[keep[-1]]:
            keep[-1] = r
    return np.asarray(keep, dtype=np.int64)


def median_beat(x: np.ndarray, peaks: np.ndarray, fs: int) -> np.ndarray:
    """Sample-wise median of 1.2 s windows centred on each R peak (edge padded)."""
    pre = int(round(MEDIAN_BEAT_R_INDEX * fs / 500))
    post = int(round(1.2 * fs)) - pre
    padded = np.pad(np.asarray(x, dtype=np.float64), (pre, post), mode="edge")
    windows = np.stack([padded[p : p + pre + post] for p in peaks])
    return np.median(windows, axis=0)


def _first_below(seq: np.ndarray, thr: float) -> int:
    idx = np.flatnonzero(seq < thr)
    return int(idx[0]) if idx.size else len(seq)


def _dominant_frequency(x: np.ndarray, fs: int, lo: float, hi: float) -> float:
    freqs, power = sps.periodogram(x - x.mean(), fs=fs)
    band = (freqs >= lo) & (freqs <= hi)
    if not band.any():
        return 0.0
    return float(freqs[band][np.argmax(power[band])])


def extract_attributes(record: EcgRecord) -> np.ndarray:
    """Estimate the 11 wave attributes of ``record`` from its signal."""
    fs = record.sampling_rate_hz
    sig = np.asarray(record.signal, dtype=np.float64)
    if sig.shape[1] < 2 * fs:
        raise NoPeaksDetected(f"{record.record_id}: need at least 2 s of signal")
    lead2 = sig[LEAD_II]
    peaks = detect_r_peaks(lead2, fs)
    n = len(peaks)
    span = (peaks[-1] - peaks[0]) / fs if n >= 2 else 0.0
    vrate = 60.0 * (n - 1) / span if span > 0 else 0.0
    rr = 60.0 / vrate if vrate > 0 else sig.shape[1] / fs

    r0 = int(round(MEDIAN_BEAT_R_INDEX * fs / 500))
    beats = {lead: median_beat(sig[lead], peaks, fs) for lead in (LEAD_I, LEAD_II, LEAD_AVF)}
    mb = beats[LEAD_II]
    baseline = float(np.median(mb))
    dev = np.abs(mb - baseline)
    r_amp = dev[r0] if dev[r0] > 0 else float(dev.max()) or 1.0

    # QRS boundaries: outermost samples within 70 ms of R whose deflection is
    # still >= 5 % of R (Q and S cross zero, so a first-crossing walk stops short)
    search = int(round(0.07 * fs))
    above = np.flatnonzero(dev[max(0, r0 - search) : r0 + search + 1] >= 0.05 * r_amp)
    q_on = max(0, r0 - search) + int(above[0])
    q_off = max(0, r0 - search) + int(above[-1]) + 1

    # T wave: largest deflection after the QRS, end where it decays under 5 %
    t_lo = q_off + int(round(0.04 * fs))
    t_hi = min(len(mb), r0 + int(round(max(0.2, 0.85 * rr) * fs)))
    if t_hi > t_lo + 1:
        t_peak = t_lo + int(np.argmax(dev[t_lo:t_hi]))
        t_amp = dev[t_peak]
        t_end = t_peak + _first_below(dev[t_peak:t_hi], 0.05 * t_amp)
    else:
        t_peak = t_end = min(len(mb) - 1, t_lo)
    qt = (t_end - q_on) / fs
    qtc = qt / math.sqrt(rr) if rr > 0 else qt

    def _axis(lo: int, hi: int) -> float:
        lead_i = beats[LEAD_I][lo:hi] - np.median(beats[LEAD_I])
        lead_f = beats[LEAD_AVF][lo:hi] - np.median(beats[LEAD_AVF])
        return math.degrees(math.atan2(float(lead_f.sum()), float(lead_i.sum())))

    r_axis = _axis(q_on, q_off + 1)
    t_half = max(1, (t_end - t_peak))
    t_axis = _axis(max(q_off + 1, t_peak - t_half), t_end + 1)

    # atrial activity: a P wave in the PR window means atrial rate == ventricular
    p_lo = max(0, r0 - int(round(0.25 * fs)))
    p_hi = max(p_lo + 1, q_on - int(round(0.02 * fs)))
    p_amp = float(dev[p_lo:p_hi].max()) if p_hi > p_lo else 0.0
    if p_amp >= 0.06 * r_amp:
        arate = vrate
    else:
        residual = lead2.copy()
        template = mb - baseline
        for p in peaks:
            lo, hi = p - r0, p - r0 + len(template)
            a, b = max(lo, 0), min(hi, len(residual))
            residual[a:b] -= template[a - lo : b - lo]
        arate = 60.0 * _dominant_frequency(residual, fs, 3.5, 10.0)

    scale = 500.0 / fs
    values = np.array(
        [
            vrate,
            arate,
            1000.0 * (q_off - q_on) / fs,
            1000.0 * qt,
            1000.0 * qtc,
            r_axis,
            t_axis,
            float(n),
            q_on * scale,
            q_off * scale,
            t_end * scale,
        ]
    )
    return validate_attributes(values)


def extract_all(dataset: Dataset, on_error: str = "raise") -> dict[str, np.ndarray]:
    """Attribute vectors by record id. ``on_error="skip"`` leaves failures out."""
    out = {}
    for rec in dataset.records:
        try:
            out[rec.record_id] = extract_attributes(rec)
        except NoPeaksDetected:
            if on_error == "raise":
                raise
            logger.warning("%s: no peaks detected; attributes left blank", rec.record_id)
    return out


def attribute_stats_path(directory) -> Path:
    return Path(directory) / "attribute_stats.csv"
