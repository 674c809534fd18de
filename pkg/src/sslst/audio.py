"""Waveform I/O, log-mel filterbanks and SpecAugment without time warping."""
from __future__ import annotations

import math
import struct
import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
WINDOW = 400
HOP = 160
N_FFT = 512
LOG_FLOOR = 1e-10
FEATURE_KINDS = ("log-mel", "cpc-context", "vq-embedding", "mlm-context")
CACHE_MAGIC = b"SSLF1"


class WavError(ValueError):
    pass


class SampleRateError(WavError):
    pass


class ChannelCountError(WavError):
    pass


class EncodingError(WavError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ChannelCountError("waveform must be mono (1-D)")
        if self.sample_rate_hz != SAMPLE_RATE:
            raise SampleRateError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate_hz}")
        if self.samples.size < 1:
            raise ValueError("waveform needs at least one sample")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def seconds(self) -> float:
        return self.samples.size / SAMPLE_RATE


@dataclass
class FeatureSequence:
    frames: np.ndarray
    hop_ms: float = 10.0
    kind: str = "log-mel"

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError(f"frames must be a non-empty T x D matrix, got {self.frames.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape


def load_wav(path) -> Waveform:
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise EncodingError(f"{path}: unsupported WAV encoding ({exc})") from exc
    except EOFError as exc:
        raise EncodingError(f"{path}: truncated WAV file") from exc
    if channels != 1:
        raise ChannelCountError(f"{path}: expected mono, found {channels} channels")
    if width != 2:
        raise EncodingError(f"{path}: expected 16-bit PCM, found {8 * width}-bit samples")
    if rate != SAMPLE_RATE:
        raise SampleRateError(f"{path}: expected {SAMPLE_RATE} Hz, found {rate} Hz")
    pcm = np.frombuffer(raw, dtype="<i2")
    if pcm.size == 0:
        raise EncodingError(f"{path}: no samples")
    return Waveform(pcm.astype(np.float64) / 32768.0)


def write_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(SAMPLE_RATE)
        fh.writeframes(pcm.tobytes())


def num_frames(n_samples: int, window: int = WINDOW, hop: int = HOP) -> int:
    return (n_samples - window) // hop + 1


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(n_mels: int = 80, n_fft: int = N_FFT, sr: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float = 8000.0) -> np.ndarray:
    """Triangular filters equally spaced on the HTK mel scale, shape ``(n_fft//2+1, n_mels)``."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb.T


def logmel(w: Waveform, n_mels: int = 80, window_ms: float = 25, hop_ms: float = 10) -> FeatureSequence:
    """Hann-windowed 512-point power spectrum through ``n_mels`` filters, natural log floored at 1e-10."""
    window = int(round(SAMPLE_RATE * window_ms / 1000))
    hop = int(round(SAMPLE_RATE * hop_ms / 1000))
    x = w.samples
    if x.size < window:
        raise ValueError(f"waveform of {x.size} samples is shorter than one {window}-sample window")
    T = num_frames(x.size, window, hop)
    frames = np.lib.stride_tricks.sliding_window_view(x, window)[::hop][:T]
    spec = np.fft.rfft(frames * np.hanning(window + 1)[:-1], n=N_FFT, axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    energies = power @ mel_filterbank(n_mels)
    return FeatureSequence(np.log(np.maximum(energies, LOG_FLOOR)), hop_ms, "log-mel")


@dataclass(frozen=True)
class AugmentPolicy:
    """SpecAugment LD policy minus time warping; frequency width scales with feature size."""

    time_masks: int = 2
    time_width: int = 100
    freq_masks: int = 2
    freq_width: int = 27
    reference_dim: int = 80

    def scaled_freq_width(self, dim: int) -> int:
        return int(math.floor(self.freq_width * dim / self.reference_dim + 0.5))

    @classmethod
    def disabled(cls) -> "AugmentPolicy":
        return cls(time_masks=0, freq_masks=0)


def sample_masks(T: int, D: int, policy: AugmentPolicy, rng: np.random.Generator):
    """Draw mask rectangles as ``(time_spans, freq_spans)`` of ``(start, width)``.

    Draw order: all time widths, all time starts, all frequency widths, all
    frequency starts.  Widths are uniform on ``[0, max]``; starts uniform on
    ``[0, extent - width]``.
    """
    t_max = min(policy.time_width, T)
    f_max = min(policy.scaled_freq_width(D), D)
    t_widths = rng.integers(0, t_max + 1, size=policy.time_masks)
    t_starts = [int(rng.integers(0, T - w + 1)) for w in t_widths]
    f_widths = rng.integers(0, f_max + 1, size=policy.freq_masks)
    f_starts = [int(rng.integers(0, D - w + 1)) for w in f_widths]
    return ([(s, int(w)) for s, w in zip(t_starts, t_widths)],
            [(s, int(w)) for s, w in zip(f_starts, f_widths)])


def apply_masks(frames: np.ndarray, time_spans, freq_spans, value: float = 0.0) -> np.ndarray:
    out = frames.copy()
    for s, w in time_spans:
        out[s:s + w, :] = value
    for s, w in freq_spans:
        out[:, s:s + w] = value
    return out


def specaugment(f: FeatureSequence, policy: AugmentPolicy, rng: np.random.Generator) -> FeatureSequence:
    T, D = f.frames.shape
    time_spans, freq_spans = sample_masks(T, D, policy, rng)
    return FeatureSequence(apply_masks(f.frames, time_spans, freq_spans), f.hop_ms, f.kind)


def standardize(frames: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance scaling over the whole utterance matrix."""
    std = frames.std()
    return (frames - frames.mean()) / (std if std > 0 else 1.0)


def write_feature_cache(path, f: FeatureSequence) -> None:
    """Little-endian float32 payload after a ``SSLF1`` magic and ``(D, T)`` uint32 header."""
    T, D = f.frames.shape
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC + struct.pack("<II", D, T))
        fh.write(np.ascontiguousarray(f.frames, dtype="<f4").tobytes())


def read_feature_cache(path, kind: str = "log-mel", hop_ms: float = 10.0) -> FeatureSequence:
    data = Path(path).read_bytes()
    if data[:5] != CACHE_MAGIC:
        raise ValueError(f"{path}: not a feature cache (bad magic)")
    D, T = struct.unpack("<II", data[5:13])
    payload = data[13:]
    if len(payload) != 4 * D * T:
        raise ValueError(f"{path}: expected {4 * D * T} payload bytes, found {len(payload)}")
    frames = np.frombuffer(payload, dtype="<f4").reshape(T, D).astype(np.float64)
    return FeatureSequence(frames, hop_ms, kind)
