"""Deterministic synthetic paired PPG/ECG generation plus dataset assembly.

ECG is a per-beat sum of five Gaussian deflections (P, Q, R, S, T) on a
periodic beat grid; PPG is a raised-cosine systolic pulse train delayed by
the pulse-transit time and low-pass smoothed. Everything is keyed off one
seed so equal parameters give bitwise-equal records.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError, ParameterError
from .preprocessing import RawRecord, align_pairs, preprocess_record
from .seeding import substream

FS = 128.0

# (P, Q, R, S, T): amplitude, Gaussian sigma in seconds, offset from the beat
# center in seconds
DEFAULT_AMPS = (0.12, -0.18, 1.0, -0.25, 0.35)
DEFAULT_WIDTHS = (0.045, 0.016, 0.022, 0.018, 0.070)
DEFAULT_OFFSETS = (-0.17, -0.045, 0.0, 0.04, 0.22)

R_INDEX = 2

PPG_PULSE_HALF_WIDTH_S = 0.22
PPG_SMOOTH_TAPS = 9


@dataclass(frozen=True)
class SynthParams:
    """Generator settings for one synthetic subject."""

    heart_rate_bpm: float = 72.0
    amps: tuple = DEFAULT_AMPS
    widths: tuple = DEFAULT_WIDTHS
    offsets: tuple = DEFAULT_OFFSETS
    ppg_delay_s: float = 0.2
    noise_std: float = 0.05
    seed: int = 0
    class_id: int | None = None

    def __post_init__(self):
        if not 30.0 <= self.heart_rate_bpm <= 200.0:
            raise ParameterError(f"heart rate {self.heart_rate_bpm} outside [30, 200] bpm")
        if self.noise_std < 0:
            raise ParameterError(f"noise_std must be non-negative, got {self.noise_std}")
        if len(self.amps) != 5 or len(self.widths) != 5 or len(self.offsets) != 5:
            raise ParameterError("need exactly 5 deflection components (P, Q, R, S, T)")
        if any(w <= 0 for w in self.widths):
            raise ParameterError("deflection widths must be positive")


def synth_pair(params: SynthParams, duration_s: float, subject_id: str | None = None,
               label: str | None = None):
    """Generate one aligned (ppg, ecg) RawRecord pair at 128 Hz."""
    if duration_s < 4.0:
        raise ParameterError(f"duration must be at least 4 s, got {duration_s}")
    n = int(round(duration_s * FS))
    t = np.arange(n) / FS
    period = 60.0 / params.heart_rate_bpm
    phase = float(substream(params.seed, "phase").uniform(0.0, 1.0))
    first = -2
    last = int(np.ceil(duration_s / period)) + 2
    beat_times = (np.arange(first, last) + 0.5 + phase) * period

    ecg = np.zeros(n)
    for amp, width, offset in zip(params.amps, params.widths, params.offsets):
        centers = beat_times + offset
        d = t[None, :] - centers[:, None]
        ecg += amp * np.exp(-0.5 * (d / width) ** 2).sum(axis=0)

    ppg = np.zeros(n)
    w = PPG_PULSE_HALF_WIDTH_S
    centers = beat_times + params.ppg_delay_s
    d = t[None, :] - centers[:, None]
    pulse = 0.5 * (1.0 + np.cos(np.pi * d / w))
    pulse[np.abs(d) > w] = 0.0
    ppg += pulse.sum(axis=0)
    kernel = np.hanning(PPG_SMOOTH_TAPS)
    kernel /= kernel.sum()
    ppg = np.convolve(ppg, kernel, mode="same")

    if params.noise_std > 0:
        ecg = ecg + substream(params.seed, "noise-ecg").normal(0.0, params.noise_std, n)
        ppg = ppg + substream(params.seed, "noise-ppg").normal(0.0, params.noise_std, n)

    sid = subject_id if subject_id is not None else f"synth-{params.seed}"
    return (
        RawRecord(samples=ppg, sample_rate_hz=FS, channel="ppg", subject_id=sid, label=label),
        RawRecord(samples=ecg, sample_rate_hz=FS, channel="ecg", subject_id=sid, label=label),
    )


def make_classes(base: SynthParams, n_classes: int) -> list[SynthParams]:
    """Morphology-separable per-class parameter sets.

    Class k scales the R amplitude by (1 + 0.3k), shifts the heart rate by
    +10k bpm, and scales the pulse-transit delay by (1 + 0.1k).
    """
    if n_classes not in (2, 4):
        raise ParameterError(f"supported class counts are 2 and 4, got {n_classes}")
    out = []
    for k in range(n_classes):
        amps = list(base.amps)
        amps[R_INDEX] = base.amps[R_INDEX] * (1.0 + 0.3 * k)
        out.append(
            replace(
                base,
                amps=tuple(amps),
                heart_rate_bpm=base.heart_rate_bpm + 10.0 * k,
                ppg_delay_s=base.ppg_delay_s * (1.0 + 0.1 * k),
                class_id=k,
            )
        )
    return out


# ---------------------------------------------------------------------------
# dataset assembly


@dataclass
class Dataset:
    """Aligned, windowed, split-tagged (ppg, ecg) pairs."""

    pairs: list = field(default_factory=list)  # (ppg SignalWindow, ecg SignalWindow)
    splits: list = field(default_factory=list)  # one tag per pair
    manifest: list = field(default_factory=list)  # dict rows for persistence

    def __len__(self):
        return len(self.pairs)

    def subset(self, split):
        """(ppg array, ecg array, labels) for one split tag."""
        ppg, ecg, labels = [], [], []
        for (p, e), tag in zip(self.pairs, self.splits):
            if tag == split:
                ppg.append(p.values)
                ecg.append(e.values)
                labels.append(p.label)
        if not ppg:
            return (
                np.zeros((0, 512), dtype=np.float32),
                np.zeros((0, 512), dtype=np.float32),
                [],
            )
        return np.stack(ppg), np.stack(ecg), labels

    def split_counts(self):
        counts = {}
        for tag in self.splits:
            counts[tag] = counts.get(tag, 0) + 1
        return counts


def split_subjects(subject_ids, fractions, seed):
    """Subject-wise split: floor for val/test, remainder to train."""
    subject_ids = sorted(set(subject_ids))
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise InputError(f"split fractions must be non-negative and sum to 1, got {fractions}")
    n = len(subject_ids)
    n_val = int(n * fr[1])
    n_test = int(n * fr[2])
    n_train = n - n_val - n_test
    if n_train <= 0 or (fr[1] > 0 and n_val == 0) or (fr[2] > 0 and n_test == 0):
        raise InputError(f"{n} subjects are too few for split fractions {fractions}")
    order = list(substream(seed, "split").permutation(n))
    shuffled = [subject_ids[i] for i in order]
    assignment = {}
    for sid in shuffled[:n_train]:
        assignment[sid] = "train"
    for sid in shuffled[n_train : n_train + n_val]:
        assignment[sid] = "val"
    for sid in shuffled[n_train + n_val :]:
        assignment[sid] = "test"
    return assignment


def assemble(recordings, fractions=(0.8, 0.1, 0.1), seed=0) -> Dataset:
    """Preprocess, align and split whole recordings.

    recordings: iterable of dicts with at least 'ppg' and 'ecg' RawRecords per
    subject. All windows of one subject land in the same split.
    """
    recordings = list(recordings)
    if not recordings:
        raise InputError("no recordings to assemble")
    per_subject = {}
    for channels in recordings:
        if "ppg" not in channels or "ecg" not in channels:
            raise InputError("each recording needs both a 'ppg' and an 'ecg' channel")
        sid = channels["ppg"].subject_id
        ppg_windows = preprocess_record(channels["ppg"])
        ecg_windows = preprocess_record(channels["ecg"])
        pairs, _ = align_pairs(ppg_windows, ecg_windows)
        per_subject.setdefault(sid, []).extend(pairs)
    assignment = split_subjects(per_subject.keys(), fractions, seed)
    ds = Dataset()
    for sid in sorted(per_subject):
        for ppg_w, ecg_w in sorted(per_subject[sid], key=lambda pr: pr[0].start):
            tag = assignment[sid]
            ds.pairs.append((ppg_w, ecg_w))
            ds.splits.append(tag)
            ds.manifest.append(
                {
                    "subject": sid,
                    "start": ppg_w.start,
                    "label": ppg_w.label if ppg_w.label is not None else "",
                    "split": tag,
                }
            )
    return ds


def generate_recordings(
    n_subjects,
    duration_s,
    base: SynthParams = SynthParams(),
    n_classes: int = 0,
    label_names=None,
    seed: int = 0,
):
    """Per-subject synthetic recordings.

    Unlabeled mode samples each subject's heart rate from [60, 100] bpm; the
    labeled mode cycles subjects through the per-class parameter sets, keeping
    each class's morphology fixed so classes stay separable.
    """
    if n_subjects < 1:
        raise InputError("need at least one subject")
    subj_rng = substream(seed, "subjects")
    class_sets = make_classes(base, n_classes) if n_classes else None
    if class_sets is not None and label_names is None:
        label_names = [str(k) for k in range(n_classes)]
    if class_sets is not None and len(label_names) != n_classes:
        raise InputError(f"need {n_classes} label names, got {label_names}")
    recordings = []
    for i in range(n_subjects):
        sid = f"s{i:03d}"
        subject_seed = int(subj_rng.integers(0, 2**31 - 1))
        if class_sets is None:
            hr = float(subj_rng.uniform(60.0, 100.0))
            params = replace(base, heart_rate_bpm=hr, seed=subject_seed)
            label = None
        else:
            params = replace(class_sets[i % n_classes], seed=subject_seed)
            label = label_names[i % n_classes]
        ppg, ecg = synth_pair(params, duration_s, subject_id=sid, label=label)
        recordings.append({"ppg": ppg, "ecg": ecg})
    return recordings


def make_dataset(
    n_subjects,
    duration_s,
    base: SynthParams = SynthParams(),
    n_classes: int = 0,
    label_names=None,
    fractions=(0.8, 0.1, 0.1),
    seed: int = 0,
) -> Dataset:
    """Generate synthetic subjects end to end and assemble them into a Dataset."""
    recordings = generate_recordings(
        n_subjects, duration_s, base=base, n_classes=n_classes, label_names=label_names, seed=seed
    )
    return assemble(recordings, fractions=fractions, seed=seed)


def write_manifest(path, dataset: Dataset):
    with open(path, "w") as fh:
        fh.write("subject,start,label,split\n")
        for row in dataset.manifest:
            fh.write(f"{row['subject']},{row['start']},{row['label']},{row['split']}\n")
