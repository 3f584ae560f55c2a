"""Shared signal frontend: STFT analysis/synthesis, power compression, SNR.

All audio in this package is mono 16 kHz float in [-1, 1]. Spectrograms are
T x F complex matrices with F = 257 (512-point DFT, 32 ms periodic Hann
window, 16 ms hop). Frames are centered: the waveform is reflect-padded by
half a window on both sides, so frame t is centered on sample t * hop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile

SAMPLE_RATE = 16000


@dataclass(frozen=True)
class StftConfig:
    sample_rate_hz: int = SAMPLE_RATE
    win_len_samples: int = 512
    hop_samples: int = 256
    dft_len: int = 512

    def __post_init__(self):
        if self.win_len_samples != self.dft_len:
            raise ValueError("window length must equal DFT length")
        if self.hop_samples * 2 != self.win_len_samples:
            raise ValueError("hop must be half the window (50% overlap)")

    @property
    def num_bins(self) -> int:
        return self.dft_len // 2 + 1

    def num_frames(self, num_samples: int) -> int:
        return 1 + num_samples // self.hop_samples

    def window(self) -> np.ndarray:
        """Periodic Hann window of the configured length."""
        n = self.win_len_samples
        return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


def pad_centered(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Reflect-pad by half a window on both sides (the framing convention)."""
    half = cfg.win_len_samples // 2
    return np.pad(x, half, mode="reflect")


def frame_starts(num_samples: int, cfg: StftConfig) -> np.ndarray:
    """Start index of each frame within the padded signal."""
    return np.arange(cfg.num_frames(num_samples)) * cfg.hop_samples


def stft(x: np.ndarray, cfg: StftConfig | None = None) -> np.ndarray:
    """Short-time Fourier transform.

    Args:
        x: 1-D waveform, at least one window long.
        cfg: analysis configuration (defaults to the 512/256 setup).

    Returns:
        Complex spectrogram of shape (T, F) with T = 1 + len(x) // hop.
    """
    cfg = cfg or StftConfig()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected 1-D waveform, got shape {x.shape}")
    if len(x) < cfg.win_len_samples:
        raise ValueError(
            f"signal of {len(x)} samples is shorter than one window "
            f"({cfg.win_len_samples} samples)"
        )
    padded = pad_centered(x, cfg)
    frames = sliding_window_view(padded, cfg.win_len_samples)[:: cfg.hop_samples]
    frames = frames[: cfg.num_frames(len(x))]
    return np.fft.rfft(frames * cfg.window(), n=cfg.dft_len, axis=1)


def istft(spec: np.ndarray, cfg: StftConfig | None = None,
          length: int | None = None) -> np.ndarray:
    """Inverse STFT by weighted overlap-add with the periodic Hann window.

    Exact inverse of :func:`stft` for any signal whose frame count matches:
    synthesis frames are window-weighted, overlap-added, and normalized by
    the accumulated squared window.

    Args:
        spec: (T, F) complex spectrogram produced with ``cfg``.
        cfg: the analysis configuration.
        length: output length in samples; defaults to (T - 1) * hop.

    Returns:
        Reconstructed waveform of ``length`` samples.
    """
    cfg = cfg or StftConfig()
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[1] != cfg.num_bins:
        raise ValueError(
            f"expected (T, {cfg.num_bins}) spectrogram, got shape {spec.shape}"
        )
    n_frames = spec.shape[0]
    if length is None:
        length = (n_frames - 1) * cfg.hop_samples
    if cfg.num_frames(length) != n_frames:
        raise ValueError(
            f"length {length} implies {cfg.num_frames(length)} frames, "
            f"spectrogram has {n_frames}"
        )
    win = cfg.window()
    frames = np.fft.irfft(spec, n=cfg.dft_len, axis=1) * win

    half = cfg.win_len_samples // 2
    total = (n_frames - 1) * cfg.hop_samples + cfg.win_len_samples
    out = np.zeros(total)
    norm = np.zeros(total)
    wsq = win * win
    for t in range(n_frames):
        start = t * cfg.hop_samples
        out[start:start + cfg.win_len_samples] += frames[t]
        norm[start:start + cfg.win_len_samples] += wsq
    out = out[half:half + length]
    norm = norm[half:half + length]
    return out / np.maximum(norm, 1e-12)


@dataclass
class CompressedSpectrum:
    """Power-compressed real/imag parts: magnitude |S|**gamma, phase kept."""

    real_c: np.ndarray
    imag_c: np.ndarray
    gamma: float = 1.0 / 3.0


def compress(spec: np.ndarray, gamma: float = 1.0 / 3.0) -> CompressedSpectrum:
    """Compress magnitudes to |S|**gamma while preserving phase.

    Zero-magnitude bins map to (0, 0). This is the exact form used for
    targets and reporting; the epsilon-guarded variant for gradients lives
    on the torch side.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    spec = np.asarray(spec)
    mag = np.abs(spec)
    scale = np.zeros_like(mag)
    np.divide(mag ** gamma, mag, out=scale, where=mag > 0)
    return CompressedSpectrum(scale * spec.real, scale * spec.imag, gamma)


def snr_db(x: np.ndarray, s: np.ndarray) -> float:
    """SNR of ``x`` against reference ``s``: 10 log10(P_s / P_(x-s)).

    Power is the mean squared amplitude over the full utterance (no
    activity gating). Returns +inf when the residual is exactly zero.
    """
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if x.shape != s.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {s.shape}")
    p_sig = np.mean(s * s)
    if p_sig == 0.0:
        raise ValueError("reference signal is all-zero")
    resid = x - s
    p_res = np.mean(resid * resid)
    if p_res == 0.0:
        return float("inf")
    return 10.0 * np.log10(p_sig / p_res)


def rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(np.asarray(x, dtype=np.float64)))))


def read_wav(path) -> np.ndarray:
    """Read a 16-bit PCM mono 16 kHz WAV file as float64 in [-1, 1].

    Any other sample rate, channel count, or sample format is refused.
    """
    rate, data = wavfile.read(path)
    if rate != SAMPLE_RATE:
        raise ValueError(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE}")
    if data.ndim != 1:
        raise ValueError(f"{path}: {data.shape[1]} channels, expected mono")
    if data.dtype != np.int16:
        raise ValueError(f"{path}: sample format {data.dtype}, expected 16-bit PCM")
    return data.astype(np.float64) / 32768.0


def write_wav(path, x: np.ndarray) -> None:
    """Write a float waveform as 16-bit PCM mono 16 kHz, clipping to [-1, 1]."""
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    wavfile.write(path, SAMPLE_RATE, (x * 32767.0).round().astype(np.int16))
