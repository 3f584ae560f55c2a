"""Harmonic compensation: fuse the coarse clean estimate with the
comb-filtered input.

The two magnitudes are added, scaled by a learned bounded spectral mask,
and reassembled with the coarse estimate's phase. The mask network sees
log-compressed magnitudes of both branches through one spectro-temporal
block (same design as the main network's blocks) and a deconvolution head
with a sigmoid, so the output magnitude never exceeds the summed input
magnitudes.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .model import GlobalLayerNorm, GridBlock, ModelConfig, SimpleBlock


class MaskModule(nn.Module):
    """Bounded spectral magnitude mask over (coarse, filtered) pairs."""

    def __init__(self, cfg: ModelConfig = ModelConfig(), n_freqs: int = 257):
        super().__init__()
        pad = (cfg.enc_kernel[0] // 2, cfg.enc_kernel[1] // 2)
        self.encoder = nn.Sequential(
            nn.Conv2d(2, cfg.embed_dim, cfg.enc_kernel, stride=cfg.enc_stride,
                      padding=pad),
            GlobalLayerNorm(cfg.embed_dim),
        )
        if cfg.block_type == "grid":
            self.block = GridBlock(cfg.embed_dim, cfg.rnn_hidden, n_freqs,
                                   heads=cfg.attn_heads, qk_dim=cfg.attn_qk_dim,
                                   kernel=cfg.unfold_kernel,
                                   stride=cfg.unfold_stride)
        else:
            self.block = SimpleBlock(cfg.embed_dim, cfg.rnn_hidden, n_freqs)
        self.head = nn.ConvTranspose2d(cfg.embed_dim, 1, (3, 3), padding=(1, 1))

    def forward(self, coarse_mag: torch.Tensor,
                filtered_mag: torch.Tensor) -> torch.Tensor:
        """(B, T, F) magnitude pair -> (B, T, F) mask in (0, 1)."""
        feats = torch.stack([torch.log1p(coarse_mag),
                             torch.log1p(filtered_mag)], dim=1)
        h = self.block(self.encoder(feats))
        return torch.sigmoid(self.head(h)).squeeze(1)


def compensate(coarse: torch.Tensor, filtered: torch.Tensor,
               mask_module: MaskModule) -> torch.Tensor:
    """Combine coarse estimate and filtered input into the final spectrum.

    Output magnitude is mask * (|coarse| + |filtered|); output phase is the
    phase of ``coarse``, exactly.
    """
    if coarse.shape != filtered.shape:
        raise ValueError(
            f"shape mismatch: {tuple(coarse.shape)} vs {tuple(filtered.shape)}"
        )
    squeeze = coarse.dim() == 2
    if squeeze:
        coarse = coarse.unsqueeze(0)
        filtered = filtered.unsqueeze(0)
    coarse_mag = torch.abs(coarse)
    filtered_mag = torch.abs(filtered)
    mask = mask_module(coarse_mag, filtered_mag)
    mag = mask * (coarse_mag + filtered_mag)
    unit = coarse / torch.clamp(coarse_mag, min=1e-12)
    out = mag * unit
    return out.squeeze(0) if squeeze else out
