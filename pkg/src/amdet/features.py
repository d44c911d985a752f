"""Raw EEG to normalized temporal-spectral-spatial feature tensors.

The pipeline: cut each trial into fixed-length samples made of short frames,
band-limit every frame with an ideal FFT filter, compute differential entropy
and mean power per (band, channel, frame), optionally subtract per-band
baseline entropy, and z-score each sample over all of its elements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

DE_VARIANCE_FLOOR = 1e-12
ZSCORE_STD_FLOOR = 1e-8


@dataclass(frozen=True)
class BandSpec:
    """Half-open frequency interval [lo_hz, hi_hz)."""

    name: str
    lo_hz: float
    hi_hz: float

    def __post_init__(self):
        if not (0 <= self.lo_hz < self.hi_hz):
            raise DataError(f"band {self.name!r}: need 0 <= lo < hi, "
                            f"got [{self.lo_hz}, {self.hi_hz})")


# Band sets used throughout the experiments. The wideband caps differ because
# recordings are assumed low-pass filtered near 50 Hz (128 Hz rate) or 75 Hz
# (200 Hz rate) respectively.
DEAP_BANDS = (
    BandSpec("theta", 4.0, 8.0),
    BandSpec("alpha", 8.0, 14.0),
    BandSpec("beta", 14.0, 31.0),
    BandSpec("gamma1", 31.0, 50.0),
)
SEED_BANDS = DEAP_BANDS + (BandSpec("gamma2", 50.0, 75.0),)


@dataclass(frozen=True)
class Trial:
    start: int
    end: int
    label: int
    baseline_start: int | None = None
    baseline_end: int | None = None

    @property
    def has_baseline(self) -> bool:
        return self.baseline_start is not None and self.baseline_end is not None


@dataclass
class RawRecording:
    """Multichannel time series plus trial markers.

    data is channels x samples; trial indices are sample offsets into it.
    """

    sample_rate_hz: float
    channels: list[str]
    data: np.ndarray
    trials: list[Trial]

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.sample_rate_hz <= 0:
            raise DataError("sample_rate_hz must be positive")
        if self.data.ndim != 2:
            raise DataError(f"data must be 2-D, got shape {self.data.shape}")
        if len(self.channels) != self.data.shape[0] or not self.channels:
            raise DataError(
                f"{len(self.channels)} channel names for {self.data.shape[0]} rows")
        if len(set(self.channels)) != len(self.channels):
            raise DataError("channel names must be unique")
        n = self.data.shape[1]
        for i, t in enumerate(self.trials):
            spans = [("trial", t.start, t.end)]
            if t.has_baseline:
                spans.append(("baseline", t.baseline_start, t.baseline_end))
            for what, s, e in spans:
                if not (0 <= s < e <= n):
                    raise DataError(
                        f"trial {i}: {what} range [{s}, {e}) outside data "
                        f"of length {n}")


@dataclass
class Segment:
    """One raw sample: frames x channels x points, plus its trial context."""

    frames: np.ndarray          # (F, C, frame_len)
    label: int
    meta: dict = field(default_factory=dict)


@dataclass
class SampleTensor:
    """One training sample of shape (F, 2f, C): DE rows then PSD rows."""

    values: np.ndarray
    label: int
    meta: dict = field(default_factory=dict)


def _frame_counts(sample_rate_hz: float, sample_seconds: float,
                  frame_seconds: float) -> tuple[int, int]:
    """(frames per sample, points per frame); rejects non-integral splits."""
    n_frames = sample_seconds / frame_seconds
    if abs(n_frames - round(n_frames)) > 1e-9:
        raise DataError(
            f"sample_seconds={sample_seconds} is not an integer multiple of "
            f"frame_seconds={frame_seconds}")
    frame_len = frame_seconds * sample_rate_hz
    if abs(frame_len - round(frame_len)) > 1e-9:
        raise DataError(
            f"frame_seconds={frame_seconds} is not a whole number of samples "
            f"at {sample_rate_hz} Hz")
    return int(round(n_frames)), int(round(frame_len))


def segment(rec: RawRecording, sample_seconds: float = 3.0,
            frame_seconds: float = 0.5) -> list[Segment]:
    """Cut every trial into non-overlapping samples of consecutive frames.

    A trailing remainder shorter than one sample is discarded; a trial shorter
    than one sample is an error.
    """
    n_frames, frame_len = _frame_counts(rec.sample_rate_hz, sample_seconds,
                                        frame_seconds)
    sample_len = n_frames * frame_len
    out: list[Segment] = []
    for ti, trial in enumerate(rec.trials):
        length = trial.end - trial.start
        if length < sample_len:
            raise DataError(
                f"trial {ti} has {length} samples, shorter than one "
                f"{sample_len}-sample window")
        n_samples = length // sample_len
        for si in range(n_samples):
            lo = trial.start + si * sample_len
            block = rec.data[:, lo:lo + sample_len]
            frames = block.reshape(len(rec.channels), n_frames, frame_len)
            frames = np.ascontiguousarray(frames.transpose(1, 0, 2))
            out.append(Segment(frames, trial.label,
                               meta={"trial": ti, "segment": si}))
    return out


def baseline_frames(rec: RawRecording, trial: Trial,
                    frame_seconds: float = 0.5) -> np.ndarray:
    """Whole frames covering a trial's baseline span, (F_b, C, frame_len)."""
    if not trial.has_baseline:
        raise DataError("trial has no baseline range")
    _, frame_len = _frame_counts(rec.sample_rate_hz, frame_seconds,
                                 frame_seconds)
    length = trial.baseline_end - trial.baseline_start
    n = length // frame_len
    if n < 1:
        raise DataError(
            f"baseline of {length} samples is shorter than one frame "
            f"({frame_len} samples)")
    block = rec.data[:, trial.baseline_start:trial.baseline_start + n * frame_len]
    frames = block.reshape(len(rec.channels), n, frame_len)
    return np.ascontiguousarray(frames.transpose(1, 0, 2))


def band_component(frame: np.ndarray, band: BandSpec,
                   sample_rate_hz: float) -> np.ndarray:
    """Time-domain content of ``frame`` inside [lo, hi), one row per channel.

    Ideal filter: real FFT, zero every bin outside the band (DC stays only
    when lo == 0), inverse FFT. Vectorized over leading axes.
    """
    frame = np.asarray(frame, dtype=np.float64)
    n = frame.shape[-1]
    if n < 8:
        raise DataError(f"frame of {n} points is too short to band-filter")
    if band.hi_hz > sample_rate_hz / 2 + 1e-9:
        raise DataError(
            f"band {band.name!r} upper edge {band.hi_hz} Hz exceeds Nyquist "
            f"{sample_rate_hz / 2} Hz")
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate_hz)
    keep = (freqs >= band.lo_hz) & (freqs < band.hi_hz)
    if band.lo_hz > 0:
        keep[0] = False
    spectrum = np.fft.rfft(frame, axis=-1)
    spectrum[..., ~keep] = 0.0
    return np.fft.irfft(spectrum, n=n, axis=-1)


def psd(x: np.ndarray) -> float:
    """Mean squared amplitude of a signal segment."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise DataError("psd of an empty vector")
    return float(np.mean(x * x))


def de(x: np.ndarray) -> float:
    """Differential entropy under a Gaussian fit: 0.5 * ln(2*pi*e*var).

    Population variance, floored so constant signals stay finite.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise DataError("de of an empty vector")
    var = max(float(np.var(x)), DE_VARIANCE_FLOOR)
    return 0.5 * math.log(2.0 * math.pi * math.e * var)


def _band_features(frames: np.ndarray, bands: tuple[BandSpec, ...] | list[BandSpec],
                   sample_rate_hz: float) -> tuple[np.ndarray, np.ndarray]:
    """Per (frame, band, channel) DE and PSD for raw frames (F, C, L)."""
    n_frames, n_channels, _ = frames.shape
    n_bands = len(bands)
    de_vals = np.empty((n_frames, n_bands, n_channels))
    psd_vals = np.empty((n_frames, n_bands, n_channels))
    for bi, band in enumerate(bands):
        comp = band_component(frames, band, sample_rate_hz)
        var = np.maximum(comp.var(axis=-1), DE_VARIANCE_FLOOR)
        de_vals[:, bi, :] = 0.5 * np.log(2.0 * math.pi * math.e * var)
        psd_vals[:, bi, :] = np.mean(comp * comp, axis=-1)
    return de_vals, psd_vals


def build_tensor(seg: Segment, bands: tuple[BandSpec, ...] | list[BandSpec],
                 sample_rate_hz: float) -> SampleTensor:
    """Unnormalized feature tensor (F, 2f, C): DE rows for each band, then PSD."""
    de_vals, psd_vals = _band_features(seg.frames, bands, sample_rate_hz)
    values = np.concatenate([de_vals, psd_vals], axis=1)
    if not np.all(np.isfinite(values)):
        raise DataError("non-finite feature values")
    return SampleTensor(values, seg.label, dict(seg.meta))


def baseline_subtract(tensor: SampleTensor, baseline: np.ndarray,
                      bands: tuple[BandSpec, ...] | list[BandSpec],
                      sample_rate_hz: float,
                      include_psd: bool = False) -> SampleTensor:
    """Subtract the baseline's mean per-(band, channel) DE from the DE rows.

    ``baseline`` is raw frames (F_b, C, frame_len). PSD rows are left alone
    unless include_psd is set.
    """
    n_bands = len(bands)
    if baseline.ndim != 3 or baseline.shape[0] < 1:
        raise DataError("baseline must be (frames, channels, points) with >= 1 frame")
    if baseline.shape[1] != tensor.values.shape[2]:
        raise DataError(
            f"baseline has {baseline.shape[1]} channels, tensor has "
            f"{tensor.values.shape[2]}")
    de_vals, psd_vals = _band_features(baseline, bands, sample_rate_hz)
    values = tensor.values.copy()
    values[:, :n_bands, :] -= de_vals.mean(axis=0)
    if include_psd:
        values[:, n_bands:, :] -= psd_vals.mean(axis=0)
    return SampleTensor(values, tensor.label, dict(tensor.meta))


def zscore(tensor: SampleTensor) -> SampleTensor:
    """Normalize one sample to zero mean / unit std over all elements."""
    v = tensor.values
    if v.size <= 1:
        raise DataError("zscore needs more than one element")
    std = max(float(v.std()), ZSCORE_STD_FLOOR)
    return SampleTensor((v - v.mean()) / std, tensor.label, dict(tensor.meta))


def binarize_labels(rec: RawRecording, threshold: float = 5.0) -> RawRecording:
    """Map rating-style trial labels onto two classes: 1 if above threshold.

    Mirrors the usual handling of 1-9 self-assessment ratings.
    """
    trials = [Trial(t.start, t.end, int(t.label > threshold),
                    t.baseline_start, t.baseline_end) for t in rec.trials]
    return RawRecording(rec.sample_rate_hz, list(rec.channels), rec.data,
                        trials)


def extract_features(rec: RawRecording,
                     bands: tuple[BandSpec, ...] | list[BandSpec],
                     sample_seconds: float = 3.0,
                     frame_seconds: float = 0.5,
                     subtract_baseline: bool = True,
                     baseline_psd: bool = False,
                     normalize: bool = True) -> list[SampleTensor]:
    """Full preprocessing for one recording.

    Baseline subtraction applies only to trials that carry a baseline range
    (and only when subtract_baseline is set).
    """
    for band in bands:
        if band.hi_hz > rec.sample_rate_hz / 2 + 1e-9:
            raise DataError(
                f"band {band.name!r} exceeds Nyquist for "
                f"{rec.sample_rate_hz} Hz recording")
    segments = segment(rec, sample_seconds, frame_seconds)
    base_cache: dict[int, np.ndarray] = {}
    out = []
    for seg in segments:
        tensor = build_tensor(seg, bands, rec.sample_rate_hz)
        trial = rec.trials[seg.meta["trial"]]
        if subtract_baseline and trial.has_baseline:
            ti = seg.meta["trial"]
            if ti not in base_cache:
                base_cache[ti] = baseline_frames(rec, trial, frame_seconds)
            tensor = baseline_subtract(tensor, base_cache[ti], bands,
                                       rec.sample_rate_hz,
                                       include_psd=baseline_psd)
        if normalize:
            tensor = zscore(tensor)
        out.append(tensor)
    return out
