"""Log-mel filter bank feature extraction from PCM audio.

Defaults follow the usual 80-dim / 25 ms window / 10 ms hop recipe. Choices
the literature leaves open are pinned here for reproducibility: HTK mel scale,
Hamming window, power spectrum, natural log with a floor clamp. Pre-emphasis
and mean/variance normalization are available but off by default.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    n_mels: int = 80
    window_ms: float = 25.0
    hop_ms: float = 10.0
    log_floor: float = 1e-10
    pre_emphasis: float = 0.0
    normalize: bool = False

    def __post_init__(self):
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if not self.window_ms >= self.hop_ms > 0:
            raise ValueError("need window_ms >= hop_ms > 0")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    @property
    def window_len(self) -> int:
        return int(round(self.sample_rate * self.window_ms / 1000.0))

    @property
    def hop_len(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))


def hz_to_mel(f):
    """HTK mel scale: 2595 * log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def frame_signal(samples, cfg: FeatureConfig) -> np.ndarray:
    """Slice a waveform into Hamming-windowed frames.

    Returns (n_frames, window_len) with
    n_frames = 1 + floor((N - window_len) / hop_len).
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a mono 1-D signal")
    win, hop = cfg.window_len, cfg.hop_len
    if x.size < win:
        raise ValueError(f"signal of {x.size} samples is shorter than one {win}-sample window")
    if cfg.pre_emphasis:
        x = np.concatenate([x[:1], x[1:] - cfg.pre_emphasis * x[:-1]])
    n_frames = 1 + (x.size - win) // hop
    window = np.hamming(win)
    frames = np.empty((n_frames, win))
    for i in range(n_frames):
        frames[i] = x[i * hop : i * hop + win] * window
    return frames


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """Triangular filters (n_mels, n_fft_bins) spanning 0..Nyquist on the mel scale."""
    n_fft = cfg.window_len
    n_bins = n_fft // 2 + 1
    freqs = np.arange(n_bins) * cfg.sample_rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(cfg.sample_rate / 2.0), cfg.n_mels + 2))
    fbank = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (freqs - lo) / max(center - lo, 1e-12)
        falling = (hi - freqs) / max(hi - center, 1e-12)
        fbank[m] = np.maximum(0.0, np.minimum(rising, falling))
    return fbank


def filter_centers_hz(cfg: FeatureConfig) -> np.ndarray:
    """Center frequency of each triangular filter."""
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(cfg.sample_rate / 2.0), cfg.n_mels + 2))
    return edges[1:-1]


def log_mel(samples, cfg: FeatureConfig) -> np.ndarray:
    """(n_frames, n_mels) log filter bank energies.

    Per frame: power spectrum by DFT of the windowed frame, mel filterbank,
    then natural log of the energy clamped to cfg.log_floor.
    """
    frames = frame_signal(samples, cfg)
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    energies = power @ mel_filterbank(cfg).T
    feats = np.log(np.maximum(energies, cfg.log_floor))
    if cfg.normalize:
        mu = feats.mean(axis=0, keepdims=True)
        sd = feats.std(axis=0, keepdims=True)
        feats = (feats - mu) / np.maximum(sd, 1e-8)
    return feats


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read 16-bit PCM mono WAV; returns (samples in [-1, 1), sample_rate)."""
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio, got {wf.getnchannels()} channels")
        if wf.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
        raw = wf.readframes(wf.getnframes())
        rate = wf.getframerate()
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return samples, rate


def write_wav(path, samples, sample_rate: int) -> None:
    """Write float samples in [-1, 1) as 16-bit PCM mono (test fixtures)."""
    pcm = np.clip(np.asarray(samples) * 32768.0, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())


def features_from_wav(path, cfg: FeatureConfig) -> np.ndarray:
    samples, rate = read_wav(path)
    if rate != cfg.sample_rate:
        raise ValueError(f"{path}: sample rate {rate} != configured {cfg.sample_rate}")
    return log_mel(samples, cfg)
