"""Pitch estimation from an intermediate enhancement output, and comb
filtering of the noisy input to isolate harmonic structure.

The estimator maps a log-magnitude spectrogram through five stride-2
convolution stages (frequency downsampling), a stack of bidirectional
LSTMs over time, and a sigmoid head, producing a T x (N+1) posterior over
log-spaced pitch bins plus an unvoiced class. The decoded per-frame period
tau drives a 3-tap symmetric comb filter with unit gain at harmonics of
1/tau; unvoiced frames pass through untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .frontend import SAMPLE_RATE, StftConfig, frame_starts, pad_centered
from .model import init_lstm_
from .synthesis import N_PITCH_BINS, bin_center_hz
from .torch_dsp import log_magnitude

VOICED_WEIGHTS = (0.25, 0.5, 0.25)
UNVOICED_WEIGHTS = (0.0, 1.0, 0.0)


@dataclass(frozen=True)
class PitchEstimatorConfig:
    conv_channels: tuple = (16, 32, 64, 128, 256)
    rnn_hidden: tuple = (512, 256, 128)
    n_bins: int = N_PITCH_BINS

    @property
    def out_dim(self) -> int:
        return self.n_bins + 1


TOY_ESTIMATOR = PitchEstimatorConfig(conv_channels=(4, 8, 8, 16, 16),
                                     rnn_hidden=(48, 32))


class PitchEstimator(nn.Module):
    """Frame-wise pitch posterior from a complex spectrogram."""

    def __init__(self, cfg: PitchEstimatorConfig = PitchEstimatorConfig(),
                 n_freqs: int = 257):
        super().__init__()
        self.cfg = cfg
        stages = []
        c_prev = 1
        f_dim = n_freqs
        for c in cfg.conv_channels:
            stages.append(nn.Sequential(
                nn.Conv2d(c_prev, c, (3, 3), stride=(1, 2), padding=(1, 1)),
                nn.BatchNorm2d(c),
                nn.PReLU(),
            ))
            c_prev = c
            f_dim = (f_dim - 1) // 2 + 1
        self.conv_stages = nn.ModuleList(stages)

        self.rnns = nn.ModuleList()
        width = c_prev * f_dim
        for h in cfg.rnn_hidden:
            rnn = nn.LSTM(width, h, batch_first=True, bidirectional=True)
            init_lstm_(rnn)
            self.rnns.append(rnn)
            width = 2 * h
        self.head = nn.Linear(width, cfg.out_dim)

    def forward(self, spec: torch.Tensor) -> torch.Tensor:
        """(B, T, F) or (T, F) complex -> (B, T, N+1) or (T, N+1) in (0, 1)."""
        squeeze = spec.dim() == 2
        if squeeze:
            spec = spec.unsqueeze(0)
        x = log_magnitude(spec).unsqueeze(1)
        for stage in self.conv_stages:
            x = stage(x)
        x = x.permute(0, 2, 1, 3).flatten(2)
        for rnn in self.rnns:
            x, _ = rnn(x)
        post = torch.sigmoid(self.head(x))
        return post.squeeze(0) if squeeze else post


@dataclass
class CombFilterSpec:
    """Per-frame comb period in samples (0 marks unvoiced frames) with the
    shared symmetric tap weights."""

    tau: np.ndarray
    f0_hz: np.ndarray
    weights: tuple = VOICED_WEIGHTS

    def __len__(self) -> int:
        return len(self.tau)


def decode_pitch(posterior, n_bins: int = N_PITCH_BINS,
                 sample_rate: int = SAMPLE_RATE) -> CombFilterSpec:
    """Hard-decision decode of a pitch posterior (or label matrix).

    The argmax bin picks either the unvoiced class (tau = 0) or a bin
    center frequency, whose rounded period in samples becomes tau.
    """
    post = np.asarray(posterior.detach().cpu() if torch.is_tensor(posterior)
                      else posterior)
    if post.ndim != 2 or post.shape[1] != n_bins + 1:
        raise ValueError(f"expected (T, {n_bins + 1}) posterior, got {post.shape}")
    bins = post.argmax(axis=1)
    voiced = bins < n_bins
    f0 = np.where(voiced, bin_center_hz(np.minimum(bins, n_bins - 1), n_bins), 0.0)
    tau = np.where(voiced, np.round(sample_rate / np.maximum(f0, 1.0)), 0.0)
    return CombFilterSpec(tau.astype(int), f0)


def apply_pitch_filter(x: np.ndarray, spec: CombFilterSpec,
                       cfg: StftConfig | None = None) -> np.ndarray:
    """Comb-filter a waveform frame by frame and return the filtered
    spectrogram.

    Each analysis frame is replaced by its three-tap combination
    w0 * x[n] + w1 * (x[n - tau] + x[n + tau]) before windowing and DFT,
    reading past/future samples across frame boundaries and zeros beyond
    the signal. Unvoiced frames are passed through bit-exactly, so an
    all-unvoiced track reproduces the plain STFT.
    """
    cfg = cfg or StftConfig()
    x = np.asarray(x, dtype=np.float64)
    starts = frame_starts(len(x), cfg)
    if len(spec) != len(starts):
        raise ValueError(f"{len(spec)} filter frames for {len(starts)} STFT frames")
    padded = pad_centered(x, cfg)
    margin = int(max(1, spec.tau.max() if len(spec.tau) else 1))
    ext = np.pad(padded, margin)

    w_prev, w_center, w_next = spec.weights
    win = cfg.window()
    frames = np.empty((len(starts), cfg.win_len_samples))
    idx = np.arange(cfg.win_len_samples)
    for t, start in enumerate(starts):
        tau = int(spec.tau[t])
        base = padded[start:start + cfg.win_len_samples]
        if tau == 0:
            frames[t] = base
            continue
        center = ext[margin + start + idx]
        frames[t] = (w_center * center
                     + w_prev * ext[margin + start + idx + tau]
                     + w_next * ext[margin + start + idx - tau])
    return np.fft.rfft(frames * win, n=cfg.dft_len, axis=1)


def comb_response(weights, tau: int, omega: np.ndarray) -> np.ndarray:
    """Analytic magnitude response |w0 + 2 w1 cos(omega tau)| of the
    symmetric 3-tap comb at normalized radian frequencies ``omega``."""
    w_prev, w_center, w_next = weights
    if abs(w_prev - w_next) > 1e-12:
        raise ValueError("comb weights must be symmetric")
    return np.abs(w_center + 2.0 * w_next * np.cos(omega * tau))


def comb_impulse_response(weights, tau: int) -> np.ndarray:
    """Non-causal 3-tap impulse response on support [-tau, tau]."""
    w_prev, w_center, w_next = weights
    h = np.zeros(2 * tau + 1)
    h[0], h[tau], h[2 * tau] = w_prev, w_center, w_next
    return h
