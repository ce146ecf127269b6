"""ECG records, Chapman-style manifest ingestion, splitting and synthesis.

On-disk layout: one CSV manifest plus one little-endian binary file per record::

    b"ECGS" | version u16 | n_leads u16 | n_samples u32 | sampling_rate u32
    payload: n_leads * n_samples float32, row-major (lead by lead)

Manifest columns: ``record_id, signal_path, age, sex, rhythm_code,
condition_codes`` (semicolon separated) and ``attr_1`` .. ``attr_11``
(blank allowed). ``signal_path`` is resolved relative to the manifest.
"""

from __future__ import annotations

import csv
import logging
import math
import struct
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ecgc.errors import EmptyDataset, InvalidProportions, MalformedRow, MissingFile, UnknownRhythmCode

logger = logging.getLogger(__name__)

N_LEADS = 12
SAMPLING_RATE = 500
N_SAMPLES = 5000
LEAD_NAMES = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")

CLASSES = ("AFIB", "GSVT", "SB", "SR")
CLASS_INDEX = {name: i for i, name in enumerate(CLASSES)}

# 11 source rhythm codes -> 4 merged classes. SA (sinus irregularity) is the
# eleventh code of the source vocabulary and groups with sinus rhythm.
RHYTHM_MERGE = {
    "AFIB": "AFIB",
    "AF": "AFIB",
    "SVT": "GSVT",
    "AT": "GSVT",
    "SAAWR": "GSVT",
    "ST": "GSVT",
    "AVNRT": "GSVT",
    "AVRT": "GSVT",
    "SB": "SB",
    "SR": "SR",
    "SA": "SR",
}

AGE_BUCKETS = ("18-29", "30s", "40s", "50s", "60s", "70s", "80+")
SEXES = ("male", "female")
_SEX_ALIASES = {"male": "male", "m": "male", "female": "female", "f": "female"}

N_ATTRIBUTES = 11
MANIFEST_COLUMNS = (
    "record_id",
    "signal_path",
    "age",
    "sex",
    "rhythm_code",
    "condition_codes",
    *(f"attr_{i}" for i in range(1, N_ATTRIBUTES + 1)),
)

SIGNAL_MAGIC = b"ECGS"
SIGNAL_VERSION = 1
_HEADER = struct.Struct("<4sHHII")


def merge_rhythm(code: str) -> str:
    """Map a source rhythm code to its merged class."""
    try:
        return RHYTHM_MERGE[code]
    except KeyError:
        raise UnknownRhythmCode(code) from None


def age_bucket(age: int) -> str:
    if age < 18:
        raise ValueError(f"age {age} is below the youngest bucket (18)")
    if age < 30:
        return "18-29"
    if age >= 80:
        return "80+"
    return f"{(age // 10) * 10}s"


@dataclass(frozen=True, eq=False)
class EcgRecord:
    record_id: str
    signal: np.ndarray
    age_years: int
    sex: str
    rhythm_label: str
    condition_labels: frozenset = frozenset()
    attributes: np.ndarray | None = None
    sampling_rate_hz: int = SAMPLING_RATE

    def __post_init__(self):
        sig = np.asarray(self.signal)
        if sig.ndim != 2 or sig.shape[0] != N_LEADS:
            raise ValueError(f"{self.record_id}: signal must be [12, n], got {sig.shape}")
        if not np.all(np.isfinite(sig)):
            raise ValueError(f"{self.record_id}: signal contains non-finite values")
        if self.sampling_rate_hz <= 0:
            raise ValueError(f"{self.record_id}: sampling rate must be positive")
        if self.sex not in SEXES:
            raise ValueError(f"{self.record_id}: sex must be one of {SEXES}, got {self.sex!r}")
        merge_rhythm(self.rhythm_label)
        sig.setflags(write=False)
        object.__setattr__(self, "signal", sig)
        object.__setattr__(self, "condition_labels", frozenset(self.condition_labels))
        if self.attributes is not None:
            attrs = np.asarray(self.attributes, dtype=np.float64)
            if attrs.shape != (N_ATTRIBUTES,):
                raise ValueError(f"{self.record_id}: attributes must have {N_ATTRIBUTES} values")
            attrs.setflags(write=False)
            object.__setattr__(self, "attributes", attrs)

    @property
    def merged_class(self) -> str:
        return RHYTHM_MERGE[self.rhythm_label]

    @property
    def label(self) -> int:
        return CLASS_INDEX[self.merged_class]

    @property
    def duration_s(self) -> float:
        return self.signal.shape[1] / self.sampling_rate_hz


@dataclass(frozen=True)
class Dataset:
    records: tuple[EcgRecord, ...] = ()
    rejected: tuple[tuple[int, str], ...] = ()
    n_underage: int = 0

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        ids = [r.record_id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted(k for k, v in Counter(ids).items() if v > 1)
            raise ValueError(f"duplicate record ids: {dupes[:5]}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def class_counts(self) -> dict[str, int]:
        counts = Counter(r.merged_class for r in self.records)
        return {c: counts.get(c, 0) for c in CLASSES}

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    @property
    def record_ids(self) -> list[str]:
        return [r.record_id for r in self.records]

    def signals(self) -> np.ndarray:
        """Stacked signals [N, 12, L] as float32."""
        if not self.records:
            return np.zeros((0, N_LEADS, 0), dtype=np.float32)
        return np.stack([r.signal for r in self.records]).astype(np.float32, copy=False)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(tuple(self.records[i] for i in indices))

    def by_id(self) -> dict[str, EcgRecord]:
        return {r.record_id: r for r in self.records}


# -- signal files ------------------------------------------------------------
def write_signal(path, signal: np.ndarray, sampling_rate: int = SAMPLING_RATE) -> None:
    sig = np.ascontiguousarray(signal, dtype="<f4")
    n_leads, n_samples = sig.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SIGNAL_MAGIC, SIGNAL_VERSION, n_leads, n_samples, sampling_rate))
        fh.write(sig.tobytes())


def read_signal(path) -> tuple[np.ndarray, int]:
    """Return (signal [n_leads, n_samples] float32, sampling_rate)."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, n_leads, n_samples, rate = _HEADER.unpack_from(blob)
    if magic != SIGNAL_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != SIGNAL_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 4 * n_leads * n_samples
    if len(blob) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(blob)}")
    sig = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(n_leads, n_samples)
    return sig.astype(np.float32), rate


def zscore_leads(signal: np.ndarray) -> np.ndarray:
    """Per-lead standardization; flat leads are only centered."""
    sig = np.asarray(signal, dtype=np.float64)
    mu = sig.mean(axis=1, keepdims=True)
    sd = sig.std(axis=1, keepdims=True)
    sd[sd == 0] = 1.0
    return ((sig - mu) / sd).astype(np.float32)


# -- manifest ----------------------------------------------------------------
def _parse_row(row: dict, line: int, base: Path) -> dict:
    missing = [c for c in MANIFEST_COLUMNS[:5] if not (row.get(c) or "").strip()]
    if missing:
        raise MalformedRow(line, f"empty required field(s): {', '.join(missing)}")
    record_id = row["record_id"].strip()
    try:
        age = int(row["age"].strip())
    except ValueError:
        raise MalformedRow(line, f"age {row['age']!r} is not an integer") from None
    if age < 0:
        raise MalformedRow(line, f"negative age {age}")
    sex = _SEX_ALIASES.get(row["sex"].strip().lower())
    if sex is None:
        raise MalformedRow(line, f"sex {row['sex']!r} not in {SEXES}")
    rhythm = row["rhythm_code"].strip()
    if rhythm not in RHYTHM_MERGE:
        raise UnknownRhythmCode(rhythm, line)
    conditions = frozenset(c.strip() for c in (row.get("condition_codes") or "").split(";") if c.strip())
    raw_attrs = [(row.get(f"attr_{i}") or "").strip() for i in range(1, N_ATTRIBUTES + 1)]
    attrs = None
    if any(raw_attrs):
        if not all(raw_attrs):
            raise MalformedRow(line, "attribute columns must be all blank or all filled")
        try:
            attrs = np.array([float(v) for v in raw_attrs])
        except ValueError:
            raise MalformedRow(line, "non-numeric attribute value") from None
        if not np.all(np.isfinite(attrs)):
            raise MalformedRow(line, "non-finite attribute value")
    sig_path = Path(row["signal_path"].strip())
    if not sig_path.is_absolute():
        sig_path = base / sig_path
    return dict(record_id=record_id, path=sig_path, age=age, sex=sex, rhythm=rhythm, conditions=conditions, attrs=attrs, line=line)


def load_dataset(
    manifest_path,
    normalize: bool = True,
    strict: bool = True,
    max_workers: int | None = None,
) -> Dataset:
    """Read a manifest and its signal files.

    Every row is validated before any error is raised so the report covers the
    whole file. With ``strict`` (default) the first bad row raises
    :class:`MalformedRow` carrying the full per-row report; otherwise bad rows
    are listed in ``Dataset.rejected``. Records under 18 are skipped and
    counted in ``Dataset.n_underage``.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise MissingFile(str(manifest_path))
    base = manifest_path.parent
    parsed: list[dict] = []
    report: list[tuple[int, str]] = []
    n_underage = 0
    with open(manifest_path, newline="") as fh:
        reader = csv.DictReader(fh)
        absent = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if absent:
            raise MalformedRow(1, f"missing column(s): {', '.join(absent)}")
        seen: set[str] = set()
        for line, row in enumerate(reader, start=2):
            try:
                item = _parse_row(row, line, base)
            except MalformedRow as exc:
                report.append((exc.line, exc.reason))
                continue
            if item["record_id"] in seen:
                report.append((line, f"duplicate record_id {item['record_id']!r}"))
                continue
            seen.add(item["record_id"])
            if item["age"] < 18:
                n_underage += 1
                continue
            parsed.append(item)
    if n_underage:
        logger.warning("%s: skipped %d record(s) under 18", manifest_path, n_underage)

    def _load(item):
        if not item["path"].is_file():
            raise MissingFile(f"{item['path']} (manifest line {item['line']})")
        sig, rate = read_signal(item["path"])
        return sig, rate

    workers = max_workers or 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            loaded = list(pool.map(_load, parsed))
    else:
        loaded = [_load(item) for item in parsed]

    records = []
    for item, (sig, rate) in zip(parsed, loaded):
        if sig.shape[0] != N_LEADS:
            report.append((item["line"], f"signal has {sig.shape[0]} leads, expected {N_LEADS}"))
            continue
        if not np.all(np.isfinite(sig)):
            report.append((item["line"], "signal contains non-finite samples"))
            continue
        records.append(
            EcgRecord(
                record_id=item["record_id"],
                signal=zscore_leads(sig) if normalize else sig,
                age_years=item["age"],
                sex=item["sex"],
                rhythm_label=item["rhythm"],
                condition_labels=item["conditions"],
                attributes=item["attrs"],
                sampling_rate_hz=rate,
            )
        )
    report.sort()
    if report and strict:
        line, reason = report[0]
        raise MalformedRow(line, reason, report)
    return Dataset(tuple(records), rejected=tuple(report), n_underage=n_underage)


def _fmt_attr(v: float) -> str:
    return repr(float(v))


def write_dataset(dataset: Dataset, out_dir, manifest_name: str = "manifest.csv", signal_dir: str = "signals") -> Path:
    """Write manifest + one signal file per record; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / signal_dir).mkdir(parents=True, exist_ok=True)
    manifest = out_dir / manifest_name
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for rec in dataset.records:
            rel = f"{signal_dir}/{rec.record_id}.ecgs"
            write_signal(out_dir / rel, rec.signal, rec.sampling_rate_hz)
            attrs = [""] * N_ATTRIBUTES if rec.attributes is None else [_fmt_attr(v) for v in rec.attributes]
            writer.writerow(
                [rec.record_id, rel, rec.age_years, rec.sex, rec.rhythm_label, ";".join(sorted(rec.condition_labels)), *attrs]
            )
    return manifest


# -- splitting ---------------------------------------------------------------
@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0
    stratify: bool = False

    def __post_init__(self):
        r = tuple(float(x) for x in self.ratios)
        if len(r) != 3 or any(x < 0 for x in r) or abs(sum(r) - 1.0) > 1e-9:
            raise InvalidProportions(f"split ratios must be 3 nonnegative values summing to 1, got {self.ratios}")
        object.__setattr__(self, "ratios", r)


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    # the epsilon absorbs products such as 0.29 * 100 = 28.999999999999996
    a = math.floor(ratios[0] * n + 1e-9)
    b = math.floor(ratios[1] * n + 1e-9)
    return a, b, n - a - b


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Random train/validation/test partition; members keep dataset order."""
    n = len(dataset)
    if n == 0:
        raise EmptyDataset("cannot split an empty dataset")
    rng = np.random.default_rng(spec.seed)
    if spec.stratify:
        parts: list[list[int]] = [[], [], []]
        labels = dataset.labels
        for cls in range(len(CLASSES)):
            idx = np.flatnonzero(labels == cls)
            perm = idx[rng.permutation(len(idx))]
            a, b, _ = split_sizes(len(idx), spec.ratios)
            parts[0].extend(perm[:a])
            parts[1].extend(perm[a : a + b])
            parts[2].extend(perm[a + b :])
        groups = [np.sort(np.asarray(p, dtype=np.int64)) for p in parts]
    else:
        perm = rng.permutation(n)
        a, b, _ = split_sizes(n, spec.ratios)
        groups = [np.sort(perm[:a]), np.sort(perm[a : a + b]), np.sort(perm[a + b :])]
    return tuple(dataset.subset(g) for g in groups)  # type: ignore[return-value]


# -- synthesis ---------------------------------------------------------------
@dataclass(frozen=True)
class SyntheticSpec:
    n_records: int = 400
    class_proportions: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    noise_std: float = 0.01
    seed: int = 0
    duration_s: float = 10.0
    sampling_rate: int = SAMPLING_RATE

    def __post_init__(self):
        p = tuple(float(x) for x in self.class_proportions)
        if len(p) != len(CLASSES) or any(x < 0 for x in p) or abs(sum(p) - 1.0) > 1e-9:
            raise InvalidProportions(f"class proportions must be 4 nonnegative values summing to 1, got {self.class_proportions}")
        if self.n_records < 1:
            raise InvalidProportions("n_records must be positive")
        nonzero = sum(1 for x in p if x > 0)
        if self.n_records < nonzero:
            raise InvalidProportions(f"n_records={self.n_records} cannot cover {nonzero} nonzero classes")
        if self.noise_std < 0:
            raise InvalidProportions("noise_std must be nonnegative")
        object.__setattr__(self, "class_proportions", p)


def class_allocation(n: int, proportions: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment; every nonzero class gets at least one."""
    raw = np.asarray(proportions, dtype=np.float64) * n
    counts = np.floor(raw).astype(int)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - counts.sum()]:
        counts[i] += 1
    for i, p in enumerate(proportions):
        if p > 0 and counts[i] == 0:
            donor = int(np.argmax(counts))
            counts[donor] -= 1
            counts[i] += 1
    return counts.tolist()


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Labelled synthetic 12-lead dataset with ground-truth wave attributes.

    See :mod:`ecgc.synth` for the beat model.
    """
    from ecgc import synth

    counts = class_allocation(spec.n_records, spec.class_proportions)
    labels = [cls for cls, k in zip(CLASSES, counts) for _ in range(k)]
    order = np.random.default_rng([spec.seed, 0]).permutation(len(labels))
    records = []
    for i, pos in enumerate(order):
        rng = np.random.default_rng([spec.seed, 1, i])
        records.append(synth.synthesize_record(f"syn{i:05d}", labels[pos], rng, spec))
    return Dataset(tuple(records))


def with_attributes(dataset: Dataset, attributes: dict[str, np.ndarray]) -> Dataset:
    """Copy of ``dataset`` with attribute vectors replaced by id."""
    return Dataset(
        tuple(replace(r, attributes=attributes.get(r.record_id, r.attributes)) for r in dataset.records),
        rejected=dataset.rejected,
        n_underage=dataset.n_underage,
    )


def normalized(dataset: Dataset) -> Dataset:
    """Copy of ``dataset`` with every signal z-scored per lead (as ``load_dataset`` does)."""
    return Dataset(
        tuple(replace(r, signal=zscore_leads(r.signal)) for r in dataset.records),
        dataset.rejected,
        dataset.n_underage,
    )
