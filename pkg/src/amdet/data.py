"""Synthetic recordings with planted class signatures, and file formats.

Recording files ("EEGR v1") are a JSON manifest next to a flat channel-major
f32le binary. Feature files ("FEAT v1") are a JSON manifest next to a flat
sample-major f32le binary. Both readers validate the manifest against the
payload before any data is used.

The generator plants class-conditional sinusoids on chosen channels inside
chosen frequency bands, on top of pink-noise background. The amplitude rides
a jittered train of raised-cosine bursts, so every few-second stretch of a
trial carries signal somewhere while many individual frames stay silent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import DataError
from .features import BandSpec, RawRecording, SampleTensor, Trial


# ------------------------------------------------------------- synthesis


@dataclass(frozen=True)
class PlantedSignal:
    """A sinusoid planted for one class: where, which band, how strong."""

    class_index: int
    channels: tuple[int, ...]
    lo_hz: float
    hi_hz: float
    amplitude: float

    def __post_init__(self):
        if not (0 <= self.lo_hz < self.hi_hz):
            raise DataError("planted band needs 0 <= lo < hi")
        if self.amplitude < 0:
            raise DataError("planted amplitude must be >= 0")
        if not self.channels:
            raise DataError("planted signal needs at least one channel")


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 3
    channels: int = 16
    sample_rate_hz: float = 128.0
    trial_seconds: float = 9.0
    trials_per_class: int = 30
    planted: tuple[PlantedSignal, ...] = ()
    noise_scale: float = 1.0
    baseline_seconds: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2 or self.channels < 1:
            raise DataError("need n_classes >= 2 and channels >= 1")
        if self.sample_rate_hz <= 0 or self.trial_seconds <= 0:
            raise DataError("sample rate and trial length must be positive")
        if self.trials_per_class < 1:
            raise DataError("trials_per_class must be >= 1")
        if self.noise_scale <= 0:
            raise DataError("noise_scale must be positive")
        nyquist = self.sample_rate_hz / 2
        for sig in self.planted:
            if sig.class_index >= self.n_classes:
                raise DataError(f"planted class {sig.class_index} out of range")
            if max(sig.channels) >= self.channels or min(sig.channels) < 0:
                raise DataError(f"planted channels {sig.channels} out of range")
            if sig.hi_hz > nyquist:
                raise DataError(
                    f"planted band [{sig.lo_hz}, {sig.hi_hz}) exceeds "
                    f"Nyquist {nyquist} Hz")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        try:
            planted = tuple(
                PlantedSignal(class_index=s["class_index"],
                              channels=tuple(s["channels"]),
                              lo_hz=s["lo_hz"], hi_hz=s["hi_hz"],
                              amplitude=s["amplitude"])
                for s in d.pop("planted", ()))
            return cls(planted=planted, **d)
        except (KeyError, TypeError) as e:
            raise DataError(f"bad synth spec: {e!r}") from e


def default_synth_spec(**overrides) -> SynthSpec:
    """Three classes told apart by which band is active on channels 0-2."""
    base = dict(
        n_classes=3, channels=16, sample_rate_hz=128.0, trial_seconds=9.0,
        trials_per_class=30, noise_scale=1.0, seed=0,
        planted=(
            PlantedSignal(0, (0, 1, 2), 8.0, 14.0, 2.0),    # alpha
            PlantedSignal(1, (0, 1, 2), 14.0, 31.0, 2.0),   # beta
            PlantedSignal(2, (0, 1, 2), 4.0, 8.0, 2.0),     # theta
        ),
    )
    base.update(overrides)
    return SynthSpec(**base)


def _pink_noise(rng: np.random.Generator, n_channels: int,
                n_samples: int, sample_rate_hz: float) -> np.ndarray:
    """1/f-amplitude-shaped noise, unit std per channel."""
    white = rng.standard_normal((n_channels, n_samples))
    spectrum = np.fft.rfft(white, axis=-1)
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / sample_rate_hz)
    shaping = np.zeros_like(freqs)
    shaping[1:] = 1.0 / np.sqrt(freqs[1:])
    x = np.fft.irfft(spectrum * shaping, n=n_samples, axis=-1)
    std = x.std(axis=-1, keepdims=True)
    std[std == 0] = 1.0
    return x / std


def _envelope(rng: np.random.Generator, n: int, fs: float) -> np.ndarray:
    """Jittered train of raised-cosine bursts over an n-point trial.

    Bursts repeat every ~1.5 s with random offsets and widths, so any
    few-second window overlaps signal somewhere, while plenty of individual
    half-second frames stay near-silent.
    """
    env = np.zeros(n)
    pitch = max(int(1.5 * fs), 8)
    start = int(rng.uniform(0.0, 0.6) * pitch)
    for center in range(start, n + pitch, pitch):
        center += int(rng.uniform(-0.2, 0.2) * pitch)
        width = max(int(rng.uniform(0.8, 1.4) * fs), 8)
        lo = max(center - width // 2, 0)
        hi = min(center + width // 2, n)
        if hi <= lo:
            continue
        t = np.arange(hi - lo)
        env[lo:hi] = np.maximum(
            env[lo:hi], 0.5 * (1.0 - np.cos(2.0 * np.pi * t / (hi - lo))))
    return env


def synth_generate(spec: SynthSpec) -> RawRecording:
    """Deterministic synthetic recording; one PRNG stream per trial."""
    fs = spec.sample_rate_hz
    trial_len = int(round(spec.trial_seconds * fs))
    base_len = int(round(spec.baseline_seconds * fs))
    n_trials = spec.n_classes * spec.trials_per_class
    total = n_trials * (base_len + trial_len)
    data = np.empty((spec.channels, total))
    trials: list[Trial] = []
    cursor = 0
    for ti in range(n_trials):
        label = ti % spec.n_classes
        rng = np.random.default_rng(np.random.SeedSequence(
            entropy=spec.seed, spawn_key=(ti,)))
        span = base_len + trial_len
        noise = _pink_noise(rng, spec.channels, span, fs) * spec.noise_scale
        block = noise
        t = np.arange(trial_len) / fs
        for sig in spec.planted:
            if sig.class_index != label or sig.amplitude == 0:
                continue
            width = sig.hi_hz - sig.lo_hz
            freq = rng.uniform(sig.lo_hz + 0.1 * width, sig.hi_hz - 0.1 * width)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            env = _envelope(rng, trial_len, fs)
            wave = sig.amplitude * env * np.sin(2.0 * np.pi * freq * t + phase)
            for ch in sig.channels:
                block[ch, base_len:] += wave
        data[:, cursor:cursor + span] = block
        if base_len > 0:
            trials.append(Trial(start=cursor + base_len, end=cursor + span,
                                label=label, baseline_start=cursor,
                                baseline_end=cursor + base_len))
        else:
            trials.append(Trial(start=cursor, end=cursor + span, label=label))
        cursor += span
    channels = [f"ch{i:02d}" for i in range(spec.channels)]
    return RawRecording(fs, channels, data, trials)


# ----------------------------------------------------------- EEGR format


def _base_path(path: str | Path) -> Path:
    p = Path(path)
    if p.suffix in (".json", ".f32"):
        p = p.with_suffix("")
    return p


def _sibling(base: Path, ext: str) -> Path:
    # append rather than with_suffix: base names may contain dots
    return base.parent / (base.name + ext)


def write_recording(path: str | Path, rec: RawRecording) -> None:
    base = _base_path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": 1,
        "sample_rate_hz": rec.sample_rate_hz,
        "channels": list(rec.channels),
        "dtype": "f32le",
        "trials": [
            {k: v for k, v in (
                ("start", t.start), ("end", t.end), ("label", t.label),
                ("baseline_start", t.baseline_start),
                ("baseline_end", t.baseline_end)) if v is not None}
            for t in rec.trials
        ],
    }
    _sibling(base, ".json").write_text(json.dumps(manifest, indent=1))
    payload = np.ascontiguousarray(rec.data, dtype="<f4")
    _sibling(base, ".f32").write_bytes(payload.tobytes())


def _require(manifest: dict, key: str, path: Path):
    if key not in manifest:
        raise DataError(f"{path}: manifest missing field {key!r}")
    return manifest[key]


def read_recording(path: str | Path) -> RawRecording:
    base = _base_path(path)
    manifest_path = _sibling(base, ".json")
    payload_path = _sibling(base, ".f32")
    if not manifest_path.exists():
        raise DataError(f"recording manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{manifest_path}: invalid JSON: {e}") from e
    if _require(manifest, "version", manifest_path) != 1:
        raise DataError(
            f"{manifest_path}: unsupported version {manifest['version']!r}")
    if _require(manifest, "dtype", manifest_path) != "f32le":
        raise DataError(f"{manifest_path}: unsupported dtype "
                        f"{manifest['dtype']!r}")
    channels = _require(manifest, "channels", manifest_path)
    rate = _require(manifest, "sample_rate_hz", manifest_path)
    raw = payload_path.read_bytes()
    if len(raw) % (4 * len(channels)) != 0:
        raise DataError(
            f"{payload_path}: payload length {len(raw)} bytes is not a "
            f"multiple of 4 x {len(channels)} channels")
    n = len(raw) // (4 * len(channels))
    data = np.frombuffer(raw, dtype="<f4").reshape(len(channels), n)
    if not np.all(np.isfinite(data)):
        raise DataError(f"{payload_path}: payload contains non-finite values")
    try:
        trials = [Trial(start=t["start"], end=t["end"], label=t["label"],
                        baseline_start=t.get("baseline_start"),
                        baseline_end=t.get("baseline_end"))
                  for t in _require(manifest, "trials", manifest_path)]
        return RawRecording(rate, channels, data.astype(np.float64), trials)
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{manifest_path}: malformed manifest: {e!r}") from e


# ----------------------------------------------------------- FEAT format


@dataclass
class FeatureSet:
    """All samples of a feature file: values (N, F, 2f, C) plus labels/meta."""

    values: np.ndarray
    labels: np.ndarray
    metas: list[dict]
    bands: list[BandSpec]
    channels: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.channels:
            self.channels = [f"ch{i:02d}" for i in range(self.values.shape[-1])]

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def samples(self) -> list[SampleTensor]:
        return [SampleTensor(self.values[i], int(self.labels[i]),
                             dict(self.metas[i]))
                for i in range(self.n_samples)]


def write_features(path: str | Path, samples: list[SampleTensor],
                   bands: list[BandSpec] | tuple[BandSpec, ...],
                   channels: list[str] | None = None) -> None:
    if not samples:
        raise DataError("cannot write an empty feature file")
    shape = samples[0].values.shape
    for i, s in enumerate(samples):
        if s.values.shape != shape:
            raise DataError(f"sample {i} shape {s.values.shape} != {shape}")
    base = _base_path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    stride = int(np.prod(shape)) * 4
    manifest = {
        "version": 1,
        "shape": list(shape),
        "bands": [{"name": b.name, "lo_hz": b.lo_hz, "hi_hz": b.hi_hz}
                  for b in bands],
        "samples": [{"offset": i * stride, "label": int(s.label),
                     "meta": s.meta} for i, s in enumerate(samples)],
    }
    if channels is not None:
        if len(channels) != shape[-1]:
            raise DataError(f"{len(channels)} channel names for {shape[-1]} "
                            "channels")
        manifest["channels"] = list(channels)
    _sibling(base, ".json").write_text(json.dumps(manifest, indent=1))
    payload = np.stack([s.values for s in samples]).astype("<f4")
    _sibling(base, ".f32").write_bytes(payload.tobytes())


def read_features(path: str | Path) -> FeatureSet:
    base = _base_path(path)
    manifest_path = _sibling(base, ".json")
    payload_path = _sibling(base, ".f32")
    if not manifest_path.exists():
        raise DataError(f"feature manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{manifest_path}: invalid JSON: {e}") from e
    if _require(manifest, "version", manifest_path) != 1:
        raise DataError(
            f"{manifest_path}: unsupported version {manifest['version']!r}")
    shape = tuple(_require(manifest, "shape", manifest_path))
    entries = _require(manifest, "samples", manifest_path)
    stride = int(np.prod(shape)) * 4
    raw = payload_path.read_bytes()
    expected = stride * len(entries)
    if len(raw) != expected:
        raise DataError(
            f"{payload_path}: payload length mismatch, expected {expected} "
            f"bytes for {len(entries)} samples, got {len(raw)}")
    values = np.empty((len(entries),) + shape)
    labels = np.empty(len(entries), dtype=np.int64)
    metas = []
    try:
        for i, entry in enumerate(entries):
            off = entry["offset"]
            if off != i * stride:
                raise DataError(
                    f"{manifest_path}: sample {i} offset {off} != expected "
                    f"{i * stride}")
            values[i] = np.frombuffer(raw[off:off + stride],
                                      dtype="<f4").reshape(shape)
            labels[i] = int(entry["label"])
            metas.append(dict(entry.get("meta", {})))
        bands = [BandSpec(b["name"], b["lo_hz"], b["hi_hz"])
                 for b in manifest.get("bands", [])]
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{manifest_path}: malformed manifest: {e!r}") from e
    if not np.all(np.isfinite(values)):
        raise DataError(f"{payload_path}: payload contains non-finite values")
    return FeatureSet(values, labels, metas, bands,
                      list(manifest.get("channels", [])))
