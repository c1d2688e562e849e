"""Synthetic pilot EEG and the acquisition filter chain.

The generator stands in for a human pilot: every channel carries bursty
1/f background activity, each mental task adds band-limited power on its
own electrode subset, blinks leak into frontal channels and the EOG
channel, and mains interference sits at 50 Hz.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import signal as sp_signal

SAMPLE_RATE_HZ = 500

EEG_CHANNELS = (
    "Fp1", "Fp2",
    "AF7", "AF3", "AFz", "AF4", "AF8",
    "F7", "F5", "F3", "F1", "Fz", "F2", "F4", "F6", "F8",
    "FT9", "FT7", "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6", "FT8", "FT10",
    "T7", "C5", "C3", "C1", "Cz", "C2", "C4", "C6", "T8",
    "TP9", "TP7", "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", "TP8", "TP10",
    "P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8",
    "PO7", "PO3", "POz", "PO4", "PO8",
    "O1", "Oz", "O2",
)
CHANNEL_NAMES = EEG_CHANNELS + ("EOG",)
EOG_INDEX = len(EEG_CHANNELS)

BLINK_DURATION_S = 0.4


class ConfigurationError(ValueError):
    """Raised for an invalid generator configuration or recording plan."""


class ParameterError(ValueError):
    """Raised for filter parameters that cannot be realised at the sample rate."""


@dataclass(frozen=True)
class BandSignature:
    low_hz: float
    high_hz: float
    electrodes: tuple[str, ...]
    power_gain: float

    def __post_init__(self):
        if not 0 < self.low_hz < self.high_hz < SAMPLE_RATE_HZ / 2:
            raise ConfigurationError(f"band ({self.low_hz}, {self.high_hz}) Hz outside (0, 250)")
        if self.power_gain < 0:
            raise ConfigurationError("power_gain must be >= 0")
        unknown = set(self.electrodes) - set(EEG_CHANNELS)
        if unknown:
            raise ConfigurationError(f"unknown electrodes {sorted(unknown)}")


def _default_blink_weights() -> dict[str, float]:
    weights = {"Fp1": 1.0, "Fp2": 1.0}
    weights.update({ch: 0.6 for ch in ("AF7", "AF3", "AFz", "AF4", "AF8")})
    weights.update({ch: 0.3 for ch in ("F7", "F5", "F3", "F1", "Fz", "F2", "F4", "F6", "F8")})
    weights["EOG"] = 1.0
    return weights


@dataclass(frozen=True)
class SignatureConfig:
    """Class-conditional spectral signatures plus artifact knobs.

    ``power_gain`` is additive: a task with gain ``g`` multiplies the
    expected band power of its electrodes by ``1 + g`` while the task is
    active.
    """

    signatures: Mapping[str, tuple[BandSignature, ...]]
    background_1f_exponent: float = 1.0
    background_rms_uv: float = 10.0
    burst_depth: float = 0.35
    extra_noise_uv: float = 0.0
    line_noise_amp_uv: float = 5.0
    blink_rate_hz: float = 0.25
    blink_amp_uv: float = 80.0
    eog_noise_uv: float = 5.0
    blink_frontal_weights: Mapping[str, float] = field(default_factory=_default_blink_weights)
    seed: int = 0

    def __post_init__(self):
        if not self.signatures:
            raise ConfigurationError("at least one task signature is required")
        for name in ("background_rms_uv", "line_noise_amp_uv", "blink_rate_hz",
                     "blink_amp_uv", "eog_noise_uv", "extra_noise_uv", "burst_depth"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        unknown = set(self.blink_frontal_weights) - set(CHANNEL_NAMES)
        if unknown:
            raise ConfigurationError(f"unknown blink channels {sorted(unknown)}")

    @property
    def tasks(self) -> tuple[str, ...]:
        return tuple(self.signatures)

    def restricted(self, tasks: Sequence[str]) -> "SignatureConfig":
        missing = [t for t in tasks if t not in self.signatures]
        if missing:
            raise ConfigurationError(f"unknown task labels {missing}")
        return dataclasses.replace(self, signatures={t: self.signatures[t] for t in tasks})

    def shifted(self, gain_scale: float = 1.0, extra_noise_uv: float = 0.0) -> "SignatureConfig":
        """Return a copy with attenuated task gains and added white noise."""
        sigs = {
            task: tuple(dataclasses.replace(s, power_gain=s.power_gain * gain_scale) for s in bands)
            for task, bands in self.signatures.items()
        }
        return dataclasses.replace(
            self, signatures=sigs, extra_noise_uv=self.extra_noise_uv + extra_noise_uv
        )


TASK_NAMES = ("RH", "LH", "lips", "stomach", "feet", "humming", "numbers", "relax")
DEFAULT_TASKS = ("RH", "feet", "relax", "humming")


def default_signature_config(gain: float = 2.0, seed: int = 0, **kwargs) -> SignatureConfig:
    """Eight tasks, each with a distinct band and electrode subset."""
    table = {
        "RH": (8.0, 12.0, ("C3", "CP3", "FC3", "C5", "C1")),
        "LH": (8.0, 12.0, ("C4", "CP4", "FC4", "C6", "C2")),
        "lips": (20.0, 28.0, ("T7", "FT7", "TP7", "T8", "FT8")),
        "stomach": (14.0, 20.0, ("FC1", "FCz", "FC2", "C1", "C2")),
        "feet": (16.0, 24.0, ("Cz", "CPz", "FCz", "CP1", "CP2")),
        "humming": (4.0, 8.0, ("F5", "F3", "F6", "F4", "FT8")),
        "numbers": (30.0, 40.0, ("P3", "P5", "CP5", "F3", "AF3")),
        "relax": (9.0, 13.0, ("O1", "Oz", "O2", "PO3", "PO4", "POz")),
    }
    sigs = {task: (BandSignature(lo, hi, elec, gain),) for task, (lo, hi, elec) in table.items()}
    return SignatureConfig(signatures=sigs, seed=seed, **kwargs)


@dataclass
class RawRecording:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE_HZ
    channel_names: tuple[str, ...] = CHANNEL_NAMES
    intervals: list[tuple[int, int, str]] = field(default_factory=list)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] != len(self.channel_names):
            raise ValueError(f"samples shape {self.samples.shape} does not match channel list")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        prev_end = 0
        for start, end, _ in self.intervals:
            if start < prev_end or end <= start or end > self.n_samples:
                raise ValueError(f"interval ({start}, {end}) overlaps, is empty or out of range")
            prev_end = end

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    @property
    def eeg(self) -> np.ndarray:
        return self.samples[:EOG_INDEX]

    @property
    def eog(self) -> np.ndarray:
        return self.samples[EOG_INDEX]

    def label_at(self, sample: int) -> str | None:
        for start, end, label in self.intervals:
            if start <= sample < end:
                return label
        return None

    def with_samples(self, samples: np.ndarray) -> "RawRecording":
        return RawRecording(samples, self.sample_rate_hz, self.channel_names, list(self.intervals))


def _raised_cosine(n: int) -> np.ndarray:
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


class PilotSource:
    """Block-synthesised EEG source whose active task is chosen per sample.

    Blocks are generated lazily from ``(seed, stream, block)`` keyed
    generators, so any sample range renders identically no matter in which
    order or chunking it is requested.
    """

    def __init__(self, config: SignatureConfig, seed: int | None = None,
                 sample_rate_hz: int = SAMPLE_RATE_HZ, block_s: float = 20.0):
        self.config = config
        self.seed = config.seed if seed is None else int(seed)
        self.fs = sample_rate_hz
        self.block_len = int(round(block_s * sample_rate_hz))
        self.tasks = config.tasks
        self._cache: dict[int, dict] = {}
        self._index = {ch: i for i, ch in enumerate(CHANNEL_NAMES)}
        freqs = np.fft.rfftfreq(self.block_len, 1.0 / self.fs)
        amp = np.zeros_like(freqs)
        amp[1:-1] = freqs[1:-1] ** (-config.background_1f_exponent / 2.0)
        # irfft variance of complex-normal bins with std amp: (4 / L^2) * sum(amp^2)
        unit = np.sqrt(4.0 * np.sum(amp ** 2)) / self.block_len
        self._freqs = freqs
        self._amp = amp / unit
        env_amp = np.where((freqs > 0) & (freqs <= 2.0), 1.0, 0.0)
        self._env_amp = env_amp * self.block_len / np.sqrt(4.0 * np.sum(env_amp ** 2))
        self._blink_weights = np.zeros(len(CHANNEL_NAMES))
        for ch, w in config.blink_frontal_weights.items():
            self._blink_weights[self._index[ch]] = w

    def _coloured(self, rng: np.random.Generator, n_rows: int, amp: np.ndarray) -> np.ndarray:
        spec = rng.standard_normal((n_rows, amp.size)) + 1j * rng.standard_normal((n_rows, amp.size))
        return np.fft.irfft(spec * amp, n=self.block_len, axis=1)

    def _block(self, b: int) -> dict:
        if b in self._cache:
            return self._cache[b]
        cfg = self.config
        n_eeg = len(EEG_CHANNELS)
        rng = np.random.default_rng([self.seed, 1, b])
        background = cfg.background_rms_uv * self._coloured(rng, n_eeg, self._amp)
        if cfg.burst_depth > 0:
            z = self._coloured(rng, n_eeg, self._env_amp)
            background *= np.exp(cfg.burst_depth * z - cfg.burst_depth ** 2)
        if cfg.extra_noise_uv > 0:
            background += cfg.extra_noise_uv * rng.standard_normal(background.shape)
        eog = cfg.eog_noise_uv * self._coloured(rng, 1, self._amp)[0]

        sigs = []
        for t, task in enumerate(self.tasks):
            rows = []
            for s, band in enumerate(cfg.signatures[task]):
                mask = (self._freqs >= band.low_hz) & (self._freqs <= band.high_hz)
                srng = np.random.default_rng([self.seed, 2, t, s, b])
                comp = self._coloured(srng, len(band.electrodes), self._amp * mask)
                idx = [self._index[ch] for ch in band.electrodes]
                rows.append((idx, cfg.background_rms_uv * np.sqrt(band.power_gain) * comp))
            sigs.append(rows)

        brng = np.random.default_rng([self.seed, 3, b])
        n_blinks = brng.poisson(cfg.blink_rate_hz * self.block_len / self.fs)
        onsets = np.sort(brng.integers(0, self.block_len, n_blinks)) + b * self.block_len

        block = {"background": background, "eog": eog, "sigs": sigs, "onsets": onsets}
        if len(self._cache) > 3:
            self._cache.pop(min(self._cache))
        self._cache[b] = block
        return block

    def blink_waveform(self, start: int, n: int) -> np.ndarray:
        """Shared blink time course (unit weight) for samples [start, start+n)."""
        width = int(round(BLINK_DURATION_S * self.fs))
        pulse = self.config.blink_amp_uv * _raised_cosine(width)
        out = np.zeros(n)
        if self.config.blink_rate_hz == 0 or self.config.blink_amp_uv == 0:
            return out
        first = max((start - width) // self.block_len, 0)
        last = (start + n - 1) // self.block_len
        for b in range(first, last + 1):
            for onset in self._block(b)["onsets"]:
                lo, hi = max(onset, start), min(onset + width, start + n)
                if lo < hi:
                    out[lo - start:hi - start] += pulse[lo - onset:hi - onset]
        return out

    def render(self, start: int, labels: np.ndarray) -> np.ndarray:
        """Render samples ``[start, start + len(labels))``.

        ``labels`` holds task indices into ``self.tasks``; -1 means no task.
        """
        labels = np.asarray(labels, dtype=int)
        n = labels.size
        out = np.zeros((len(CHANNEL_NAMES), n))
        pos = 0
        while pos < n:
            absolute = start + pos
            b, offset = divmod(absolute, self.block_len)
            take = min(self.block_len - offset, n - pos)
            block = self._block(b)
            sl = slice(offset, offset + take)
            out[:EOG_INDEX, pos:pos + take] = block["background"][:, sl]
            out[EOG_INDEX, pos:pos + take] = block["eog"][sl]
            seg_labels = labels[pos:pos + take]
            for t, rows in enumerate(block["sigs"]):
                active = seg_labels == t
                if not active.any():
                    continue
                for idx, comp in rows:
                    out[idx, pos:pos + take] += comp[:, sl] * active
            pos += take
        out += np.outer(self._blink_weights, self.blink_waveform(start, n))
        if self.config.line_noise_amp_uv > 0:
            t = (start + np.arange(n)) / self.fs
            out += self.config.line_noise_amp_uv * np.sin(2 * np.pi * 50.0 * t)
        return out


def generate_recording(plan: Sequence[tuple[str, float]], config: SignatureConfig,
                       seed: int | None = None, sample_rate_hz: int = SAMPLE_RATE_HZ) -> RawRecording:
    """Render a recording following ``plan``, a list of (task_label, duration_s)."""
    task_index = {t: i for i, t in enumerate(config.tasks)}
    intervals = []
    labels = []
    cursor = 0
    for label, duration in plan:
        if label not in task_index:
            raise ConfigurationError(f"task label {label!r} not in configuration")
        if duration <= 0:
            raise ConfigurationError("plan durations must be positive")
        n = int(round(duration * sample_rate_hz))
        intervals.append((cursor, cursor + n, label))
        labels.append(np.full(n, task_index[label]))
        cursor += n
    pilot = PilotSource(config, seed, sample_rate_hz)
    samples = pilot.render(0, np.concatenate(labels) if labels else np.zeros(0, int))
    return RawRecording(samples, sample_rate_hz, CHANNEL_NAMES, intervals)


@dataclass(frozen=True)
class FilterSpec:
    """Second-order IIR section: Butterworth highpass or Q-parameterised notch."""

    kind: str
    freq_hz: float
    quality: float = 30.0

    def coefficients(self, sample_rate_hz: float) -> tuple[np.ndarray, np.ndarray]:
        nyquist = sample_rate_hz / 2.0
        if not 0 < self.freq_hz < nyquist:
            raise ParameterError(f"{self.kind} frequency {self.freq_hz} Hz must lie in (0, {nyquist})")
        if self.kind == "highpass":
            return sp_signal.butter(2, self.freq_hz, btype="highpass", fs=sample_rate_hz)
        if self.kind == "notch":
            if self.quality <= 0:
                raise ParameterError("notch quality must be positive")
            return sp_signal.iirnotch(self.freq_hz, self.quality, fs=sample_rate_hz)
        raise ParameterError(f"unknown filter kind {self.kind!r}")


ACQUISITION_CHAIN = (FilterSpec("highpass", 0.1), FilterSpec("notch", 50.0, 30.0))


class StreamingFilter:
    """Per-channel filter state carried across successive chunks."""

    def __init__(self, spec: FilterSpec, n_channels: int, sample_rate_hz: float = SAMPLE_RATE_HZ):
        self.spec = spec
        self.b, self.a = spec.coefficients(sample_rate_hz)
        self.zi = np.zeros((n_channels, max(len(self.a), len(self.b)) - 1))

    def process(self, chunk: np.ndarray) -> np.ndarray:
        out, self.zi = sp_signal.lfilter(self.b, self.a, chunk, axis=-1, zi=self.zi)
        return out


class FilterChain:
    def __init__(self, specs: Sequence[FilterSpec] = ACQUISITION_CHAIN,
                 n_channels: int = len(CHANNEL_NAMES), sample_rate_hz: float = SAMPLE_RATE_HZ):
        self.stages = [StreamingFilter(s, n_channels, sample_rate_hz) for s in specs]

    def process(self, chunk: np.ndarray) -> np.ndarray:
        for stage in self.stages:
            chunk = stage.process(chunk)
        return chunk


def apply_filter(recording: RawRecording, spec: FilterSpec) -> RawRecording:
    stage = StreamingFilter(spec, recording.samples.shape[0], recording.sample_rate_hz)
    return recording.with_samples(stage.process(recording.samples))


def apply_chain(recording: RawRecording, specs: Sequence[FilterSpec] = ACQUISITION_CHAIN) -> RawRecording:
    for spec in specs:
        recording = apply_filter(recording, spec)
    return recording
