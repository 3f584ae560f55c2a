"""Torch counterparts of the numpy frontend, used inside model forward
passes and losses where differentiability matters.

The framing convention (periodic Hann, 50% overlap, reflect-centered) is
identical to :mod:`progse.frontend`; a consistency test pins the two
implementations against each other.
"""

from __future__ import annotations

import torch

from .frontend import StftConfig

_WINDOWS: dict = {}


def _window(cfg: StftConfig, dtype: torch.dtype) -> torch.Tensor:
    key = (cfg.win_len_samples, dtype)
    if key not in _WINDOWS:
        _WINDOWS[key] = torch.hann_window(cfg.win_len_samples, periodic=True,
                                          dtype=dtype)
    return _WINDOWS[key]


def stft(x: torch.Tensor, cfg: StftConfig | None = None) -> torch.Tensor:
    """(B, L) or (L,) waveform -> (B, T, F) or (T, F) complex spectrogram."""
    cfg = cfg or StftConfig()
    squeeze = x.dim() == 1
    if squeeze:
        x = x.unsqueeze(0)
    spec = torch.stft(
        x, n_fft=cfg.dft_len, hop_length=cfg.hop_samples,
        win_length=cfg.win_len_samples, window=_window(cfg, x.dtype),
        center=True, pad_mode="reflect", normalized=False,
        onesided=True, return_complex=True,
    ).transpose(1, 2)
    return spec.squeeze(0) if squeeze else spec


def istft(spec: torch.Tensor, length: int,
          cfg: StftConfig | None = None) -> torch.Tensor:
    """Differentiable inverse of :func:`stft`; trims/pads to ``length``."""
    cfg = cfg or StftConfig()
    squeeze = spec.dim() == 2
    if squeeze:
        spec = spec.unsqueeze(0)
    wave = torch.istft(
        spec.transpose(1, 2), n_fft=cfg.dft_len, hop_length=cfg.hop_samples,
        win_length=cfg.win_len_samples,
        window=_window(cfg, spec.real.dtype), center=True, length=length,
    )
    return wave.squeeze(0) if squeeze else wave


def compress_ri(spec: torch.Tensor, gamma: float = 1.0 / 3.0,
                eps: float = 1e-12):
    """Gradient-safe power compression of a complex spectrogram.

    Returns (real_c, imag_c) with magnitude (|S|^2 + eps)^(gamma/2) and the
    phase of ``spec``; the epsilon keeps the gamma < 1 gradient bounded at
    zero magnitude.
    """
    mag = torch.sqrt(spec.real ** 2 + spec.imag ** 2 + eps)
    scale = mag ** (gamma - 1.0)
    return scale * spec.real, scale * spec.imag


def uncompress_ri(real_c: torch.Tensor, imag_c: torch.Tensor,
                  gamma: float = 1.0 / 3.0, eps: float = 1e-12) -> torch.Tensor:
    """Invert :func:`compress_ri`: compressed real/imag -> complex spectrum."""
    mag_c = torch.sqrt(real_c ** 2 + imag_c ** 2 + eps)
    scale = mag_c ** (1.0 / gamma - 1.0)
    return torch.complex(scale * real_c, scale * imag_c)


def log_magnitude(spec: torch.Tensor, eps: float = 1e-7) -> torch.Tensor:
    return torch.log(torch.abs(spec) + eps)
