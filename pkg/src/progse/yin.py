"""Frame-wise fundamental-frequency extraction (YIN difference-function
core with parabolic interpolation).

Used to build training labels from clean speech, so a deterministic
threshold rule stands in for full probabilistic pYIN decoding. Frames are
centered on the same sample positions as the STFT frontend, one estimate
per spectrogram frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frontend import SAMPLE_RATE, StftConfig

F0_MIN_HZ = 62.5
F0_MAX_HZ = 500.0
CMNDF_THRESHOLD = 0.2
FRAME_LEN = 1024


@dataclass
class PitchTrack:
    """Per-frame pitch: f0 in Hz (0 where unvoiced) and voicing flags."""

    f0_hz: np.ndarray
    voiced: np.ndarray
    hop_samples: int = 256

    def __len__(self) -> int:
        return len(self.f0_hz)


def _difference_function(frames: np.ndarray, max_lag: int) -> np.ndarray:
    """Batched YIN difference function d_t(tau) for tau in [0, max_lag).

    d(tau) = sum_j (x[j] - x[j+tau])^2 over the available window, expanded
    into cumulative energies plus an FFT autocorrelation.
    """
    n_frames, w = frames.shape
    fft_len = 1
    while fft_len < 2 * w:
        fft_len *= 2
    spec = np.fft.rfft(frames, n=fft_len, axis=1)
    acorr = np.fft.irfft(spec * np.conj(spec), n=fft_len, axis=1)[:, :max_lag]

    csum = np.concatenate(
        [np.zeros((n_frames, 1)), np.cumsum(frames * frames, axis=1)], axis=1
    )
    taus = np.arange(max_lag)
    head = csum[:, w - taus] - csum[:, [0]]   # sum x[j]^2, j < w - tau
    tail = csum[:, [w]] - csum[:, taus]       # sum x[j]^2, j >= tau
    return head + tail - 2.0 * acorr


def _cmndf(diff: np.ndarray) -> np.ndarray:
    """Cumulative-mean-normalized difference function, d'(0) = 1."""
    taus = np.arange(1, diff.shape[1])
    running = np.cumsum(diff[:, 1:], axis=1)
    out = np.ones_like(diff)
    np.divide(diff[:, 1:] * taus, running, out=out[:, 1:], where=running > 0)
    return out


def _parabolic_refine(curve: np.ndarray, idx: int) -> float:
    """Sub-sample minimum position of a parabola through three points."""
    if idx <= 0 or idx >= len(curve) - 1:
        return float(idx)
    y0, y1, y2 = curve[idx - 1], curve[idx], curve[idx + 1]
    denom = y0 - 2.0 * y1 + y2
    if abs(denom) < 1e-12:
        return float(idx)
    delta = 0.5 * (y0 - y2) / denom
    return idx + float(np.clip(delta, -1.0, 1.0))


def extract_f0(x: np.ndarray, cfg: StftConfig | None = None,
               f_min: float = F0_MIN_HZ, f_max: float = F0_MAX_HZ,
               threshold: float = CMNDF_THRESHOLD) -> PitchTrack:
    """Estimate per-frame f0 of (near-)clean speech.

    A frame is voiced when its normalized difference function dips below
    ``threshold`` somewhere in the search range; the dip position is
    refined parabolically and clamped into [f_min, f_max]. Silence and
    aperiodic frames come out unvoiced.
    """
    cfg = cfg or StftConfig()
    x = np.asarray(x, dtype=np.float64)
    half = FRAME_LEN // 2
    padded = np.pad(x, half)
    starts = np.arange(cfg.num_frames(len(x))) * cfg.hop_samples
    frames = np.stack([padded[s:s + FRAME_LEN] for s in starts])

    tau_min = int(SAMPLE_RATE / f_max)
    tau_max = int(np.ceil(SAMPLE_RATE / f_min))
    max_lag = tau_max + 2
    cmndf = _cmndf(_difference_function(frames, max_lag))

    n = len(starts)
    f0 = np.zeros(n)
    voiced = np.zeros(n, dtype=bool)
    for t in range(n):
        row = cmndf[t]
        below = np.nonzero(row[tau_min:tau_max + 1] < threshold)[0]
        if len(below) == 0:
            continue
        tau = tau_min + below[0]
        while tau + 1 <= tau_max and row[tau + 1] < row[tau]:
            tau += 1
        tau_ref = _parabolic_refine(row, tau)
        f0[t] = float(np.clip(SAMPLE_RATE / tau_ref, f_min, f_max))
        voiced[t] = True
    return PitchTrack(f0, voiced, cfg.hop_samples)
