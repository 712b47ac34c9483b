"""Raw-signal conditioning: resampling, band-pass denoising, normalization,
windowing, and paired-window alignment.

Every recording is brought to 128 Hz, filtered, scaled to [-1, 1] and cut
into 512-sample windows (4 s) that start every 256 samples (2 s overlap).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal as sp_signal

from .errors import InputError, SequencingError

logger = logging.getLogger(__name__)

TARGET_HZ = 128.0
WINDOW_SAMPLES = 512
HOP_SAMPLES = 256

CHANNELS = ("ppg", "ecg")

# conventional clinical passbands; override via the band argument
PPG_BAND = (0.5, 8.0)
ECG_BAND = (0.5, 40.0)
FILTER_ORDER = 2


@dataclass(frozen=True)
class RawRecord:
    """One recorded channel at a known sample rate."""

    samples: np.ndarray
    sample_rate_hz: float
    channel: str
    subject_id: str = ""
    label: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if self.sample_rate_hz <= 0:
            raise InputError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if self.samples.ndim != 1 or self.samples.size < 2:
            raise InputError("a record needs at least 2 samples in a flat array")
        if self.channel not in CHANNELS:
            raise InputError(f"unknown channel {self.channel!r}, expected one of {CHANNELS}")

    @property
    def duration_s(self):
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class SignalWindow:
    """One normalized 512-sample segment with provenance."""

    values: np.ndarray
    channel: str
    subject_id: str
    start: int
    label: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float32))
        if self.values.shape != (WINDOW_SAMPLES,):
            raise InputError(f"window must hold {WINDOW_SAMPLES} samples, got {self.values.shape}")
        if self.values.min() < -1.0 - 1e-6 or self.values.max() > 1.0 + 1e-6:
            raise InputError("window values must lie in [-1, 1]")

    @property
    def key(self):
        return (self.subject_id, self.start)


def resample(rec: RawRecord, target_hz: float = TARGET_HZ) -> RawRecord:
    """Linear interpolation onto a uniform grid; duration defined as n/rate."""
    if rec.sample_rate_hz == target_hz:
        return rec
    n_out = int(round(rec.samples.size * target_hz / rec.sample_rate_hz))
    t_out = np.arange(n_out) / target_hz
    t_in = np.arange(rec.samples.size) / rec.sample_rate_hz
    out = np.interp(t_out, t_in, rec.samples)
    return replace(rec, samples=out, sample_rate_hz=float(target_hz))


def band_for(channel: str):
    return PPG_BAND if channel == "ppg" else ECG_BAND


def denoise(rec: RawRecord, band=None, order: int = FILTER_ORDER) -> RawRecord:
    """Zero-phase Butterworth band-pass (forward-backward, second-order sections)."""
    if rec.sample_rate_hz != TARGET_HZ:
        raise SequencingError(
            f"denoise expects {TARGET_HZ:g} Hz input, got {rec.sample_rate_hz:g}; resample first"
        )
    lo, hi = band if band is not None else band_for(rec.channel)
    sos = sp_signal.butter(order, [lo, hi], btype="bandpass", fs=rec.sample_rate_hz, output="sos")
    try:
        out = sp_signal.sosfiltfilt(sos, rec.samples)
    except ValueError as exc:
        raise InputError(f"record too short to filter: {exc}") from None
    return replace(rec, samples=out)


def normalize(values) -> np.ndarray:
    """Min-max map onto [-1, 1]; a constant signal maps to all zeros."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise InputError("cannot normalize an empty array")
    lo = v.min()
    hi = v.max()
    if hi == lo:
        return np.zeros_like(v)
    return -1.0 + 2.0 * (v - lo) / (hi - lo)


def segment(rec: RawRecord) -> list[SignalWindow]:
    """Cut into 512-sample windows every 256 samples, re-normalizing each one.

    A trailing remainder shorter than one window is dropped; a record shorter
    than one window yields an empty list and a diagnostic warning.
    """
    if rec.sample_rate_hz != TARGET_HZ:
        raise SequencingError(
            f"segment expects {TARGET_HZ:g} Hz input, got {rec.sample_rate_hz:g}; resample first"
        )
    n = rec.samples.size
    if n < WINDOW_SAMPLES:
        logger.warning(
            "record %s/%s has %d samples, shorter than one %d-sample window; no windows emitted",
            rec.subject_id,
            rec.channel,
            n,
            WINDOW_SAMPLES,
        )
        return []
    windows = []
    for start in range(0, n - WINDOW_SAMPLES + 1, HOP_SAMPLES):
        chunk = normalize(rec.samples[start : start + WINDOW_SAMPLES])
        windows.append(
            SignalWindow(
                values=chunk.astype(np.float32),
                channel=rec.channel,
                subject_id=rec.subject_id,
                start=start,
                label=rec.label,
            )
        )
    return windows


def preprocess_record(rec: RawRecord, band=None) -> list[SignalWindow]:
    """Full conditioning chain: resample -> denoise -> normalize -> segment."""
    rec = resample(rec)
    rec = denoise(rec, band=band)
    rec = replace(rec, samples=normalize(rec.samples))
    return segment(rec)


def align_pairs(ppg_windows, ecg_windows):
    """Match windows by (subject, start offset); returns (pairs, discard count)."""
    ecg_by_key = {w.key: w for w in ecg_windows}
    pairs = []
    matched_keys = set()
    for w in sorted(ppg_windows, key=lambda w: w.key):
        mate = ecg_by_key.get(w.key)
        if mate is not None:
            pairs.append((w, mate))
            matched_keys.add(w.key)
    discarded = (len(list(ppg_windows)) - len(pairs)) + (len(ecg_by_key) - len(matched_keys))
    if discarded:
        logger.info("align_pairs: matched %d pairs, discarded %d unmatched windows", len(pairs), discarded)
    return pairs, discarded


# ---------------------------------------------------------------------------
# CSV recording format: optional '# hz=<rate>' comment line, then a header row
# with columns drawn from {t, ppg, ecg}. One file per recording.


def read_signal_csv(path, hz=None, subject_id=None) -> dict[str, RawRecord]:
    """Read one recording; returns {channel: RawRecord} for the channels present."""
    meta_hz = None
    rows = []
    header = None
    with open(path, newline="") as fh:
        for line in fh:
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                body = stripped.lstrip("#").strip()
                if body.startswith("hz="):
                    meta_hz = float(body[3:])
                continue
            if header is None:
                header = [c.strip().lower() for c in next(csv.reader([stripped]))]
                continue
            rows.append(next(csv.reader([stripped])))
    if header is None:
        raise InputError(f"{path}: no header row found")
    rate = hz if hz is not None else meta_hz
    if rate is None:
        raise InputError(f"{path}: sample rate unknown; add a '# hz=<rate>' line or pass --hz")
    channels = [c for c in header if c in CHANNELS]
    if not channels:
        raise InputError(f"{path}: no 'ppg' or 'ecg' column in header {header}")
    if subject_id is None:
        subject_id = _stem(path)
    cols = {c: header.index(c) for c in channels}
    out = {}
    for ch, idx in cols.items():
        vals = np.array([float(r[idx]) for r in rows], dtype=np.float64)
        out[ch] = RawRecord(samples=vals, sample_rate_hz=float(rate), channel=ch, subject_id=subject_id)
    return out


def write_signal_csv(path, records: dict[str, RawRecord]):
    """Write one recording with all given channels on a shared time grid."""
    if not records:
        raise InputError("nothing to write")
    rates = {rec.sample_rate_hz for rec in records.values()}
    lengths = {rec.samples.size for rec in records.values()}
    if len(rates) != 1 or len(lengths) != 1:
        raise InputError("all channels in one file must share rate and length")
    rate = rates.pop()
    n = lengths.pop()
    channels = [c for c in CHANNELS if c in records]
    with open(path, "w", newline="") as fh:
        fh.write(f"# hz={rate:g}\n")
        writer = csv.writer(fh)
        writer.writerow(["t"] + channels)
        t = np.arange(n) / rate
        data = [records[c].samples for c in channels]
        for i in range(n):
            writer.writerow([f"{t[i]:.6f}"] + [f"{col[i]:.8g}" for col in data])


def _stem(path):
    name = str(path).replace("\\", "/").rsplit("/", 1)[-1]
    return name.rsplit(".", 1)[0]


@dataclass
class WindowSet:
    """Windows of one preprocessed recording set, grouped per channel."""

    ppg: list[SignalWindow] = field(default_factory=list)
    ecg: list[SignalWindow] = field(default_factory=list)

    def paired(self):
        return align_pairs(self.ppg, self.ecg)


def windows_to_array(windows) -> np.ndarray:
    """Stack window values into an (n, 512) float32 matrix."""
    if not windows:
        return np.zeros((0, WINDOW_SAMPLES), dtype=np.float32)
    return np.stack([w.values for w in windows]).astype(np.float32)
