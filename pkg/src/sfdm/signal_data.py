"""Accelerometer recordings, windowing, subject splits and a synthetic corpus."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CSV_COLUMNS = ("subject", "timestamp", "x", "y", "z", "label")


class DataError(ValueError):
    """Base class for malformed input data."""


class MissingColumnsError(DataError):
    pass


class TimestampOrderError(DataError):
    pass


class EmptyRecordingError(DataError):
    pass


class MalformedRowError(DataError):
    pass


class SplitError(ValueError):
    """Inconsistent subject split configuration."""


@dataclass
class RawRecording:
    subject_id: str
    sample_rate: float
    timestamps: np.ndarray
    xyz: np.ndarray  # [N, 3]
    labels: np.ndarray  # [N] int

    def __post_init__(self):
        n = len(self.timestamps)
        if self.xyz.shape != (n, 3) or self.labels.shape != (n,):
            raise DataError("timestamps, xyz and labels disagree in length")
        if n > 1 and np.any(np.diff(self.timestamps) < 0):
            raise TimestampOrderError(f"timestamps of subject {self.subject_id} decrease")

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass(frozen=True)
class Window:
    values: np.ndarray
    label: int | None = None
    subject_id: str = ""
    split: str | None = None  # provenance tag: "train", "val" or "test"

    def __len__(self) -> int:
        return len(self.values)


def euclid_norm(x, y, z) -> np.ndarray:
    x, y, z = (np.asarray(a, dtype=np.float64) for a in (x, y, z))
    return np.sqrt(x * x + y * y + z * z)


def majority_label(labels: Sequence[int]) -> int:
    """Most frequent label; ties go to the smallest id."""
    if len(labels) == 0:
        raise ValueError("majority_label of an empty sequence")
    counts = Counter(int(v) for v in labels)
    top = max(counts.values())
    return min(k for k, v in counts.items() if v == top)


def segment_windows(recording: RawRecording, window: int, stride: int | None = None) -> list[Window]:
    """Cut the norm series into fixed-length windows; ``stride`` defaults to ``window``."""
    stride = window if not stride else stride
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be positive")
    series = euclid_norm(*recording.xyz.T).astype(np.float32)
    n = len(series)
    if n < window:
        return []
    count = (n - window) // stride + 1
    out = []
    for i in range(count):
        lo = i * stride
        out.append(
            Window(
                values=series[lo : lo + window].copy(),
                label=majority_label(recording.labels[lo : lo + window]),
                subject_id=recording.subject_id,
            )
        )
    return out


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def load_csv_recording(path) -> RawRecording:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyRecordingError(f"{path}: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise MissingColumnsError(f"{path}: missing columns {', '.join(missing)}")
        idx = [header.index(c) for c in CSV_COLUMNS]
        subjects, ts, xyz, labels = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                subj, t, x, y, z, lab = (row[i].strip() for i in idx)
                vals = (float(t), float(x), float(y), float(z))
                label = int(lab)
            except (IndexError, ValueError):
                raise MalformedRowError(f"{path}:{lineno}: unparsable row {row!r}") from None
            if not all(math.isfinite(v) for v in vals) or label < 0:
                raise MalformedRowError(f"{path}:{lineno}: non-finite value or negative label")
            if ts and vals[0] < ts[-1]:
                raise TimestampOrderError(f"{path}:{lineno}: timestamp {vals[0]} precedes {ts[-1]}")
            subjects.append(subj)
            ts.append(vals[0])
            xyz.append(vals[1:])
            labels.append(label)
    if not ts:
        raise EmptyRecordingError(f"{path}: no data rows")
    if len(set(subjects)) != 1:
        raise MalformedRowError(f"{path}: one subject per file expected, found {sorted(set(subjects))}")
    timestamps = np.asarray(ts)
    dt = np.diff(timestamps)
    dt = dt[dt > 0]
    rate = float(1.0 / np.median(dt)) if dt.size else 0.0
    return RawRecording(subjects[0], rate, timestamps, np.asarray(xyz, dtype=np.float64), np.asarray(labels, dtype=np.int64))


def write_csv_recording(recording: RawRecording, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for t, (x, y, z), lab in zip(recording.timestamps, recording.xyz, recording.labels):
            w.writerow([recording.subject_id, f"{t:.6f}", f"{x:.9g}", f"{y:.9g}", f"{z:.9g}", int(lab)])
    tmp.replace(path)


def load_csv_dir(directory) -> list[RawRecording]:
    files = sorted(Path(directory).glob("*.csv"))
    if not files:
        raise EmptyRecordingError(f"{directory}: no .csv recordings")
    return [load_csv_recording(f) for f in files]


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


@dataclass
class SplitSpec:
    train_subjects: Sequence[str]
    val_subjects: Sequence[str]
    test_subjects: Sequence[str]
    labeled_fraction: float = 1.0

    def __post_init__(self):
        sets = [set(self.train_subjects), set(self.val_subjects), set(self.test_subjects)]
        for i in range(3):
            for j in range(i + 1, 3):
                both = sets[i] & sets[j]
                if both:
                    raise SplitError(f"subjects {sorted(both)} appear in more than one split")
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise SplitError(f"labeled_fraction must lie in (0, 1], got {self.labeled_fraction}")


@dataclass
class Splits:
    train: list[Window]
    labeled: list[Window]
    val: list[Window]
    test: list[Window]
    spec: SplitSpec = field(repr=False, default=None)


def stratified_quota(counts: dict[int, int], fraction: float) -> dict[int, int]:
    """Largest-remainder apportionment of ``round(fraction * total)`` across classes."""
    total = sum(counts.values())
    want = min(total, max(1, int(round(fraction * total)))) if total else 0
    exact = {c: fraction * n for c, n in counts.items()}
    quota = {c: min(counts[c], int(math.floor(e))) for c, e in exact.items()}
    order = sorted(counts, key=lambda c: (-(exact[c] - math.floor(exact[c])), c))
    i = 0
    while sum(quota.values()) < want and order:
        c = order[i % len(order)]
        if quota[c] < counts[c]:
            quota[c] += 1
        i += 1
    return quota


def labeled_subset(windows: Sequence[Window], fraction: float, rng: np.random.Generator) -> list[Window]:
    """Seeded class-stratified subset of the labeled windows, in original order."""
    if fraction >= 1.0:
        return [w for w in windows if w.label is not None]
    by_class: dict[int, list[int]] = {}
    for i, w in enumerate(windows):
        if w.label is not None:
            by_class.setdefault(int(w.label), []).append(i)
    quota = stratified_quota({c: len(v) for c, v in by_class.items()}, fraction)
    chosen = []
    for c in sorted(by_class):
        idx = by_class[c]
        perm = rng.permutation(len(idx))[: quota[c]]
        chosen.extend(idx[j] for j in perm)
    return [windows[i] for i in sorted(chosen)]


def subject_split(windows: Iterable[Window], spec: SplitSpec, rng: np.random.Generator) -> Splits:
    """Partition by subject, tag provenance, then draw the labeled training subset."""
    where = {}
    for tag, subjects in (("train", spec.train_subjects), ("val", spec.val_subjects), ("test", spec.test_subjects)):
        for s in subjects:
            where[s] = tag
    parts: dict[str, list[Window]] = {"train": [], "val": [], "test": []}
    for w in windows:
        tag = where.get(w.subject_id)
        if tag is None:
            raise SplitError(f"subject {w.subject_id!r} is not assigned to any split")
        parts[tag].append(replace(w, split=tag))
    labeled = labeled_subset(parts["train"], spec.labeled_fraction, rng)
    return Splits(parts["train"], labeled, parts["val"], parts["test"], spec)


def stack(windows: Sequence[Window]) -> tuple[np.ndarray, np.ndarray]:
    """``([N, W] float32 values, [N] int labels with -1 for unlabeled)``."""
    if not windows:
        raise DataError("no windows to stack")
    x = np.stack([w.values for w in windows]).astype(np.float32)
    y = np.array([-1 if w.label is None else int(w.label) for w in windows], dtype=np.int64)
    return x, y


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------


@dataclass
class SyntheticCorpusSpec:
    n_classes: int = 3
    windows_per_class_per_subject: int = 10
    n_subjects: int = 4
    window: int = 200
    sample_rate: float = 50.0
    freqs: Sequence[float] = (0.5, 1.0, 1.5)
    amps: Sequence[float] = (1.0, 2.0, 3.0)
    offsets: Sequence[float] = (9.8, 9.8, 9.8)
    noise: Sequence[float] = (0.5, 0.5, 0.5)
    seed: int = 7

    def __post_init__(self):
        for name in ("freqs", "amps", "offsets", "noise"):
            vals = tuple(float(v) for v in getattr(self, name))
            if len(vals) != self.n_classes:
                raise ValueError(f"{name} needs {self.n_classes} entries, got {len(vals)}")
            setattr(self, name, vals)
        pairs = set(zip(self.freqs, self.amps))
        if len(pairs) != self.n_classes:
            raise ValueError("classes need distinct (frequency, amplitude) pairs")


def subject_ids(n: int) -> list[str]:
    return [f"S{i + 1:02d}" for i in range(n)]


def make_synthetic_corpus(spec: SyntheticCorpusSpec) -> list[RawRecording]:
    """One recording per subject: consecutive class segments of noisy sinusoids.

    Each sample's tri-axial vector points along a fixed per-subject direction,
    so its Euclidean norm is the class waveform wherever that is positive.
    """
    seg = spec.windows_per_class_per_subject * spec.window
    t = np.arange(seg) / spec.sample_rate
    recs = []
    for s, sid in enumerate(subject_ids(spec.n_subjects)):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, s]))
        phase = rng.uniform(0.0, 2 * np.pi)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        parts, labels = [], []
        for c in range(spec.n_classes):
            wave = spec.offsets[c] + spec.amps[c] * np.sin(2 * np.pi * spec.freqs[c] * t + phase)
            wave = wave + rng.normal(0.0, spec.noise[c], size=seg)
            parts.append(wave)
            labels.append(np.full(seg, c, dtype=np.int64))
        signal = np.concatenate(parts)
        stamps = np.arange(signal.size) / spec.sample_rate
        recs.append(RawRecording(sid, spec.sample_rate, stamps, signal[:, None] * direction[None, :], np.concatenate(labels)))
    return recs
