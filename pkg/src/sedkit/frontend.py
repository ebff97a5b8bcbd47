"""16 kHz WAV loading, 80-bin log-mel filterbank features and SpecAugment."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, FormatError, ParseError

SAMPLE_RATE = 16000


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def seconds(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FbankConfig:
    sample_rate: int = SAMPLE_RATE
    num_mel_bins: int = 80
    frame_length_ms: float = 25.0
    frame_shift_ms: float = 10.0
    fft_size: int = 512
    preemphasis: float = 0.97
    low_freq: float = 20.0
    high_freq: float = 7600.0
    energy_floor: float = 1e-10

    @property
    def window_length(self) -> int:
        return int(round(self.sample_rate * self.frame_length_ms / 1000.0))

    @property
    def hop_length(self) -> int:
        return int(round(self.sample_rate * self.frame_shift_ms / 1000.0))

    def num_frames(self, num_samples: int) -> int:
        return 1 + (num_samples - self.window_length) // self.hop_length


@dataclass
class AugmentPolicy:
    num_freq_masks: int = 2
    max_freq_width: int = 10
    num_time_masks: int = 2
    max_time_width: int = 50
    enabled: bool = True
    fill: str = "mean"  # or "zero"

    def __post_init__(self):
        if min(self.num_freq_masks, self.max_freq_width, self.num_time_masks, self.max_time_width) < 0:
            raise ConfigError("SpecAugment counts and widths must be non-negative")
        if self.fill not in ("mean", "zero"):
            raise ConfigError(f"unknown mask fill {self.fill!r}")


# -- WAV I/O ------------------------------------------------------------------

def load_wav(path: str | Path, sample_rate: int = SAMPLE_RATE) -> Waveform:
    """Read 16-bit PCM mono WAV, scaling integer samples by 1/32768."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as fh:
            channels, width, rate, nframes = fh.getnchannels(), fh.getsampwidth(), fh.getframerate(), fh.getnframes()
            if channels != 1:
                raise FormatError(f"{path}: channels={channels} (expected mono)")
            if width != 2:
                raise FormatError(f"{path}: sample_width={8 * width} bits (expected 16-bit PCM)")
            if rate != sample_rate:
                raise FormatError(f"{path}: sample_rate={rate} (expected {sample_rate})")
            raw = fh.readframes(nframes)
    except (wave.Error, EOFError) as exc:
        if "unknown format" in str(exc):
            raise FormatError(f"{path}: {exc} (expected PCM)") from exc
        raise ParseError(f"{path}: {exc}") from exc
    if len(raw) != 2 * nframes:
        raise ParseError(f"{path}: truncated data chunk ({len(raw) // 2} of {nframes} samples)")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    return Waveform(samples, rate)


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """Write float samples in [-1, 1] as 16-bit PCM mono."""
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(pcm.tobytes())


# -- filterbank ---------------------------------------------------------------

def mel_scale(freq):
    return 1127.0 * np.log1p(np.asarray(freq, dtype=np.float64) / 700.0)


@lru_cache(maxsize=8)
def mel_filterbank(cfg: FbankConfig = FbankConfig()) -> np.ndarray:
    """Triangular filters, shape (num_mel_bins, fft_size // 2 + 1), equally spaced on the mel scale."""
    n_bins = cfg.fft_size // 2 + 1
    bin_freqs = np.arange(n_bins) * cfg.sample_rate / cfg.fft_size
    mel = mel_scale(bin_freqs)
    lo, hi = mel_scale(cfg.low_freq), mel_scale(cfg.high_freq)
    edges = np.linspace(lo, hi, cfg.num_mel_bins + 2)
    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (mel - left) / (center - left)
    down = (right - mel) / (right - center)
    weights = np.maximum(0.0, np.minimum(up, down))
    weights[:, (bin_freqs < cfg.low_freq) | (bin_freqs > cfg.high_freq)] = 0.0
    return weights


def compute_fbank(w: Waveform, cfg: FbankConfig = FbankConfig()) -> np.ndarray:
    """Log-mel energies, shape (T, num_mel_bins), float32.

    Per frame: pre-emphasis, Hamming window, |FFT|^2, mel filters, natural log
    with an energy floor.
    """
    if w.sample_rate != cfg.sample_rate:
        raise ConfigError(f"waveform sample_rate={w.sample_rate}, features expect {cfg.sample_rate}")
    x = np.asarray(w.samples, dtype=np.float64)
    win, hop = cfg.window_length, cfg.hop_length
    if len(x) < win:
        raise ContractError(f"clip too short: {len(x)} samples < one {win}-sample window")
    T = cfg.num_frames(len(x))
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:T].copy()
    frames[:, 1:] -= cfg.preemphasis * frames[:, :-1].copy()
    frames[:, 0] -= cfg.preemphasis * frames[:, 0]
    frames *= np.hamming(win)
    power = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1)) ** 2
    energies = power @ mel_filterbank(cfg).T
    return np.log(np.maximum(energies, cfg.energy_floor)).astype(np.float32)


# -- SpecAugment --------------------------------------------------------------

def spec_augment(
    feats: np.ndarray,
    policy: AugmentPolicy,
    rng: np.random.Generator,
    return_mask: bool = False,
):
    """Mask random frequency bands and time spans.

    Each mask draws a width uniformly from [0, max_width] (clamped to the
    extent) and a start uniformly over the valid positions; masked cells take
    the utterance mean (or zero). A disabled policy returns the input object.
    """
    mask = np.zeros(feats.shape, dtype=bool)
    if not policy.enabled:
        return (feats, mask) if return_mask else feats
    T, F = feats.shape
    for _ in range(policy.num_freq_masks):
        width = int(rng.integers(0, min(policy.max_freq_width, F) + 1))
        start = int(rng.integers(0, F - width + 1))
        mask[:, start : start + width] = True
    for _ in range(policy.num_time_masks):
        width = int(rng.integers(0, min(policy.max_time_width, T) + 1))
        start = int(rng.integers(0, T - width + 1))
        mask[start : start + width, :] = True
    if not mask.any():
        return (feats, mask) if return_mask else feats
    out = feats.copy()
    out[mask] = feats.mean() if policy.fill == "mean" else 0.0
    return (out, mask) if return_mask else out
