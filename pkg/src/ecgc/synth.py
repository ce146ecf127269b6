"""Parametric 12-lead ECG generator used for desk-scale experiments.

Each beat is a sum of Gaussian bumps (P, Q, R, S, T) placed relative to its
R-peak time. Limb leads project the QRS/T/P vectors onto the hexaxial
reference angles; precordial leads use fixed gains. Rhythm classes differ in
rate and regularity:

========  ============  ==========================================
class     rate (bpm)    rhythm
========  ============  ==========================================
SR        60-100        regular, P waves present
SB        40-55         regular, P waves present
GSVT      150-220       regular, P waves present
AFIB      70-150        irregular RR (lognormal), no P, f-waves
========  ============  ==========================================

Ground-truth wave attributes come straight from the generating parameters.
The three index attributes (q_onset, q_offset, t_offset) are expressed in a
median-beat frame where the R peak sits at ``MEDIAN_BEAT_R_INDEX``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ecgc.data import AGE_BUCKETS, EcgRecord, N_LEADS

MEDIAN_BEAT_R_INDEX = 300
EDGE_GUARD_S = 0.08

RATE_RANGES = {"SR": (60.0, 100.0), "SB": (40.0, 55.0), "GSVT": (150.0, 220.0), "AFIB": (70.0, 150.0)}
RHYTHM_CODES = {"SR": ("SR",), "SB": ("SB",), "GSVT": ("SVT", "AT", "SAAWR", "ST", "AVNRT", "AVRT"), "AFIB": ("AFIB", "AF")}
CONDITION_POOL = ("TWC", "STDD", "LVH", "RBBB")

# frontal-plane angle (degrees) of limb leads I, II, III, aVR, aVL, aVF
_LIMB_ANGLES = (0.0, 60.0, 120.0, -150.0, -30.0, 90.0)
_PRECORDIAL_QRS = (-0.6, -0.3, 0.2, 0.8, 1.0, 0.8)
_PRECORDIAL_T = (0.1, 0.4, 0.6, 0.7, 0.6, 0.5)
_PRECORDIAL_P = (0.4, 0.5, 0.5, 0.5, 0.5, 0.5)
_P_AXIS = 60.0
_AFIB_RR_SIGMA = 0.25
_FWAVE_AMP = 0.1


@dataclass(frozen=True)
class BeatParams:
    """Everything that determines a record's waveform apart from beat timing."""

    rhythm_class: str
    heart_rate: float
    qrs_width_s: float = 0.09
    pr_s: float = 0.16
    qtc_s: float = 0.41
    r_axis: float = 45.0
    t_axis: float = 40.0
    fwave_hz: float | None = None

    @property
    def has_p(self) -> bool:
        return self.rhythm_class != "AFIB"

    @property
    def rr_s(self) -> float:
        return 60.0 / self.heart_rate


def lead_gains(params: BeatParams) -> np.ndarray:
    """[12, 3] gains for the (P, QRS, T) components."""
    gains = np.zeros((N_LEADS, 3))
    for i, theta in enumerate(_LIMB_ANGLES):
        gains[i] = (
            math.cos(math.radians(_P_AXIS - theta)),
            math.cos(math.radians(params.r_axis - theta)),
            math.cos(math.radians(params.t_axis - theta)),
        )
    for j in range(6):
        gains[6 + j] = (_PRECORDIAL_P[j], _PRECORDIAL_QRS[j], _PRECORDIAL_T[j])
    return gains


def _bump(t: np.ndarray, center: float, sigma: float, amp: float) -> np.ndarray:
    return amp * np.exp(-0.5 * ((t - center) / sigma) ** 2)


def render(params: BeatParams, r_times: np.ndarray, n_samples: int, fs: int) -> np.ndarray:
    """Noise-free [12, n_samples] signal for beats centred at ``r_times`` (seconds)."""
    t = np.arange(n_samples) / fs
    comp = np.zeros((3, n_samples))
    w = params.qrs_width_s
    r_times = np.asarray(r_times, dtype=np.float64)
    intervals = np.diff(r_times)
    for k, tr in enumerate(r_times):
        # QT and T width follow the preceding RR interval
        rr = intervals[k - 1] if k > 0 else (intervals[0] if len(intervals) else params.rr_s)
        lo = np.searchsorted(t, tr - 1.0)
        hi = np.searchsorted(t, tr + 1.0)
        if hi <= lo:
            continue
        tt = t[lo:hi]
        qt = params.qtc_s * math.sqrt(rr)
        sigma_t = 0.04 * math.sqrt(rr)
        t_center = tr - w / 2 + qt - 2.5 * sigma_t
        if params.has_p:
            comp[0, lo:hi] += _bump(tt, tr - params.pr_s, 0.02, 0.12)
        comp[1, lo:hi] += (
            _bump(tt, tr - 0.35 * w, w / 10, -0.12) + _bump(tt, tr, w / 8, 1.0) + _bump(tt, tr + 0.35 * w, w / 10, -0.25)
        )
        comp[2, lo:hi] += _bump(tt, t_center, sigma_t, 0.3)
    gains = lead_gains(params)
    sig = gains @ comp
    if params.fwave_hz:
        sig += np.outer(gains[:, 0], _FWAVE_AMP * np.sin(2 * math.pi * params.fwave_hz * t))
    return sig


def draw_params(rhythm_class: str, rng: np.random.Generator) -> BeatParams:
    lo, hi = RATE_RANGES[rhythm_class]
    return BeatParams(
        rhythm_class=rhythm_class,
        heart_rate=float(rng.uniform(lo, hi)),
        qrs_width_s=float(rng.uniform(0.08, 0.11)),
        pr_s=float(rng.uniform(0.12, 0.20)),
        qtc_s=float(rng.uniform(0.38, 0.44)),
        r_axis=float(rng.uniform(0.0, 90.0)),
        t_axis=float(rng.uniform(10.0, 70.0)),
        fwave_hz=float(rng.uniform(5.0, 7.0)) if rhythm_class == "AFIB" else None,
    )


def draw_r_times(params: BeatParams, rng: np.random.Generator, duration_s: float) -> np.ndarray:
    """R-peak times covering [-2 s, duration + 2 s], none within the edge guard."""
    rr0 = params.rr_s
    # at fast regular rates two full-width guards can cover a whole RR phase
    guard = min(EDGE_GUARD_S, 0.2 * rr0)
    n = int(math.ceil((duration_s + 4.0) / (0.5 * rr0))) + 4
    for _ in range(200):
        if params.rhythm_class == "AFIB":
            rr = rr0 * np.exp(rng.normal(-0.5 * _AFIB_RR_SIGMA**2, _AFIB_RR_SIGMA, n))
            rr = np.clip(rr, 0.3, 2.0)
        else:
            rr = rr0 * (1.0 + rng.normal(0.0, 0.003, n))
        times = -2.0 + rng.uniform(0.0, rr0) + np.concatenate([[0.0], np.cumsum(rr)])
        times = times[times <= duration_s + 2.0]
        near = (np.abs(times) < guard) | (np.abs(times - duration_s) < guard)
        if not near.any():
            return times
    raise RuntimeError("could not place beats away from the record edges")


def ground_truth_attributes(params: BeatParams, r_times: np.ndarray, duration_s: float, fs: int) -> np.ndarray:
    inside = r_times[(r_times >= 0) & (r_times < duration_s)]
    n = len(inside)
    vrate = 60.0 * (n - 1) / (inside[-1] - inside[0]) if n >= 2 else params.heart_rate
    arate = 60.0 * params.fwave_hz if params.fwave_hz else vrate
    rr = 60.0 / vrate
    qt = params.qtc_s * math.sqrt(rr)
    half = int(round(params.qrs_width_s / 2 * fs))
    q_on = MEDIAN_BEAT_R_INDEX - half
    return np.array(
        [
            vrate,
            arate,
            params.qrs_width_s * 1000.0,
            qt * 1000.0,
            params.qtc_s * 1000.0,
            params.r_axis,
            params.t_axis,
            float(n),
            float(q_on),
            float(MEDIAN_BEAT_R_INDEX + half),
            float(q_on + int(round(qt * fs))),
        ]
    )


def draw_demographics(rng: np.random.Generator) -> tuple[int, str]:
    bucket = int(rng.integers(len(AGE_BUCKETS)))
    if bucket == 0:
        age = int(rng.integers(18, 30))
    elif bucket == len(AGE_BUCKETS) - 1:
        age = int(rng.integers(80, 96))
    else:
        age = int(rng.integers(10 * (bucket + 2), 10 * (bucket + 3)))
    sex = ("male", "female")[int(rng.integers(2))]
    return age, sex


def synthesize_record(record_id: str, rhythm_class: str, rng: np.random.Generator, spec) -> EcgRecord:
    fs = spec.sampling_rate
    n_samples = int(round(spec.duration_s * fs))
    params = draw_params(rhythm_class, rng)
    r_times = draw_r_times(params, rng, spec.duration_s)
    signal = render(params, r_times, n_samples, fs)
    if spec.noise_std > 0:
        signal = signal + rng.normal(0.0, spec.noise_std, signal.shape)
    codes = RHYTHM_CODES[rhythm_class]
    rhythm = codes[int(rng.integers(len(codes)))]
    conditions = frozenset([CONDITION_POOL[int(rng.integers(len(CONDITION_POOL)))]]) if rng.random() < 0.2 else frozenset()
    age, sex = draw_demographics(rng)
    return EcgRecord(
        record_id=record_id,
        signal=signal.astype(np.float32),
        age_years=age,
        sex=sex,
        rhythm_label=rhythm,
        condition_labels=conditions,
        attributes=ground_truth_attributes(params, r_times, spec.duration_s, fs),
        sampling_rate_hz=fs,
    )
