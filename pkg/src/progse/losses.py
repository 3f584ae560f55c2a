"""Training objectives: compressed-spectrum losses, the temporal
log-residual loss, the progressive sum over the target ladder, and the
pitch-posterior cross entropy.

Reductions are plain sums (Frobenius norms over T x F, sample sums over
time); any per-batch averaging is the training loop's business.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import torch

from .frontend import StftConfig
from .torch_dsp import istft


@dataclass(frozen=True)
class LossWeights:
    mag_weight: float = 0.7
    ri_weight: float = 0.3
    temp_weight: float = 1.0
    gamma: float = 1.0 / 3.0
    log_eps: float = 1e-8
    comp_eps: float = 1e-12

    def __post_init__(self):
        if min(self.mag_weight, self.ri_weight, self.gamma) <= 0:
            raise ValueError("loss weights must be positive")


def loss_freq(s_hat: torch.Tensor, s: torch.Tensor,
              w: LossWeights = LossWeights()) -> torch.Tensor:
    """Weighted compressed-magnitude plus compressed-RI squared error.

    Magnitudes are compressed as (|S|^2 + eps)^(gamma/2), which keeps the
    gradient finite at zero-energy bins.
    """
    if s_hat.shape != s.shape:
        raise ValueError(f"shape mismatch: {tuple(s_hat.shape)} vs {tuple(s.shape)}")
    mag_h = torch.sqrt(s_hat.real ** 2 + s_hat.imag ** 2 + w.comp_eps)
    mag_t = torch.sqrt(s.real ** 2 + s.imag ** 2 + w.comp_eps)
    cmag_h, cmag_t = mag_h ** w.gamma, mag_t ** w.gamma
    l_mag = torch.sum((cmag_t - cmag_h) ** 2)
    scale_h, scale_t = cmag_h / mag_h, cmag_t / mag_t
    l_ri = torch.sum((scale_t * s.real - scale_h * s_hat.real) ** 2) + \
        torch.sum((scale_t * s.imag - scale_h * s_hat.imag) ** 2)
    return w.mag_weight * l_mag + w.ri_weight * l_ri


def loss_temp(s_hat: torch.Tensor, s: torch.Tensor,
              eps: float = 1e-8) -> torch.Tensor:
    """Log-domain residual-to-signal energy, summed over samples:
    0.5 * sum(log10((s - s_hat)^2 + eps) - log10(s^2 + eps))."""
    if s_hat.shape != s.shape:
        raise ValueError(f"shape mismatch: {tuple(s_hat.shape)} vs {tuple(s.shape)}")
    ln10 = math.log(10.0)
    resid = (s - s_hat) ** 2 + eps
    ref = s ** 2 + eps
    return 0.5 * torch.sum(torch.log(resid) - torch.log(ref)) / ln10


def loss_ovrl(s_hat_spec: torch.Tensor, s_spec: torch.Tensor,
              s_hat_wave: torch.Tensor, s_wave: torch.Tensor,
              w: LossWeights = LossWeights()) -> torch.Tensor:
    """Spectral loss plus weighted temporal loss on the matching waveforms."""
    return loss_freq(s_hat_spec, s_spec, w) + \
        w.temp_weight * loss_temp(s_hat_wave, s_wave, w.log_eps)


class TargetLadder(NamedTuple):
    """Progressive targets as aligned spectrogram and waveform lists."""

    specs: list
    waves: list


def loss_pl(outputs: list, ladder: TargetLadder,
            w: LossWeights = LossWeights(),
            cfg: StftConfig | None = None) -> torch.Tensor:
    """Sum of the overall loss across every rung of the ladder.

    ``outputs`` are the K+1 complex spectrogram estimates; their waveform
    legs are synthesized here through the differentiable inverse STFT.
    """
    if len(outputs) != len(ladder.specs) or len(outputs) != len(ladder.waves):
        raise ValueError(
            f"{len(outputs)} outputs vs {len(ladder.specs)} spec / "
            f"{len(ladder.waves)} wave targets"
        )
    cfg = cfg or StftConfig()
    total = None
    for est, spec, wave in zip(outputs, ladder.specs, ladder.waves):
        est_wave = istft(est, length=wave.shape[-1], cfg=cfg)
        term = loss_ovrl(est, spec, est_wave, wave, w)
        total = term if total is None else total + term
    return total


def loss_pitch_bce(p_hat: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    """Summed binary cross entropy (natural log) over the pitch matrix."""
    if p_hat.shape != p.shape:
        raise ValueError(f"shape mismatch: {tuple(p_hat.shape)} vs {tuple(p.shape)}")
    q = torch.clamp(p_hat, 1e-7, 1.0 - 1e-7)
    return -torch.sum(p * torch.log(q) + (1.0 - p) * torch.log(1.0 - q))


# the harmonic-compensation stage reuses the overall objective on the
# compensated output
loss_hc = loss_ovrl
