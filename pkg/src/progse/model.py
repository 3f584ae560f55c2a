"""The progressive enhancement network.

A complex spectrogram is mapped to real features by a learned phase
encoder, embedded by a 2-D convolution with global layer normalization,
and refined by a chain of K+1 spectro-temporal blocks. A deconvolution
decoder taps the stream after every block, so the network emits K+1
estimates whose training targets step up in SNR until the last one, which
aims at the clean signal. Decoders emit power-compressed real/imag pairs
that are expanded back to complex spectra.

The default block is a dual-path design in the TF-GridNet style
(bidirectional recurrence along frequency, then along time, then
frame-level multi-head self-attention); a cheaper recurrent block can be
swapped in for quick experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .torch_dsp import uncompress_ri


@dataclass(frozen=True)
class ModelConfig:
    num_snr_steps: int = 4          # K: number of intermediate outputs
    pe_channels: int = 4
    embed_dim: int = 32
    rnn_hidden: int = 100
    attn_heads: int = 4
    attn_qk_dim: int = 512          # approximate total query/key width
    unfold_kernel: int = 4
    unfold_stride: int = 1
    enc_kernel: tuple = (3, 3)
    enc_stride: tuple = (1, 1)
    gamma: float = 1.0 / 3.0
    use_phase_encoder: bool = True      # off: plain real/imag input conv
    intermediate_outputs: bool = True   # off: only the final decoder
    block_type: str = "grid"            # "grid" or "simple"

    def __post_init__(self):
        if self.num_snr_steps < 1:
            raise ValueError("need at least one intermediate output stage")
        if self.embed_dim % self.attn_heads:
            raise ValueError("embed_dim must be divisible by attn_heads")

    @property
    def num_blocks(self) -> int:
        return self.num_snr_steps + 1


TOY_MODEL = ModelConfig(num_snr_steps=2, embed_dim=8, rnn_hidden=16,
                        attn_heads=2, attn_qk_dim=64)


def init_lstm_(lstm: nn.LSTM) -> None:
    """Orthogonal recurrent kernels, Xavier input kernels, zero biases."""
    for name, p in lstm.named_parameters():
        if "weight_hh" in name:
            for chunk in p.chunk(4, dim=0):
                nn.init.orthogonal_(chunk)
        elif "weight_ih" in name:
            nn.init.xavier_uniform_(p)
        elif "bias" in name:
            nn.init.zeros_(p)


class PhaseEncoder(nn.Module):
    """Complex-weighted convolution mapping a complex spectrogram to real
    feature channels via a magnitude-compressing nonlinearity."""

    def __init__(self, out_channels: int = 4):
        super().__init__()
        self.conv_real = nn.Conv2d(1, out_channels, (3, 1), padding=(1, 0))
        self.conv_imag = nn.Conv2d(1, out_channels, (3, 1), padding=(1, 0))

    def forward(self, spec: torch.Tensor) -> torch.Tensor:
        xr = spec.real.unsqueeze(1)
        xi = spec.imag.unsqueeze(1)
        yr = self.conv_real(xr) - self.conv_imag(xi)
        yi = self.conv_real(xi) + self.conv_imag(xr)
        return (yr * yr + yi * yi + 1e-8) ** 0.25


class GlobalLayerNorm(nn.Module):
    """Normalize over channel, time, and frequency jointly (per sample)."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(1, channels, 1, 1))
        self.bias = nn.Parameter(torch.zeros(1, channels, 1, 1))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(dim=(1, 2, 3), keepdim=True)
        var = x.var(dim=(1, 2, 3), unbiased=False, keepdim=True)
        return (x - mu) / torch.sqrt(var + self.eps) * self.weight + self.bias


class ChannelLayerNorm(nn.Module):
    """Per T-F unit normalization over the channel dimension."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(1, channels, 1, 1))
        self.bias = nn.Parameter(torch.zeros(1, channels, 1, 1))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, unbiased=False, keepdim=True)
        return (x - mu) / torch.sqrt(var + self.eps) * self.weight + self.bias


class FrameLayerNorm(nn.Module):
    """Per-frame normalization over channels and frequency together."""

    def __init__(self, channels: int, n_freqs: int, eps: float = 1e-5):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(1, channels, 1, n_freqs))
        self.bias = nn.Parameter(torch.zeros(1, channels, 1, n_freqs))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(dim=(1, 3), keepdim=True)
        var = x.var(dim=(1, 3), unbiased=False, keepdim=True)
        return (x - mu) / torch.sqrt(var + self.eps) * self.weight + self.bias


class _UnfoldedBiLSTM(nn.Module):
    """Norm -> unfold -> bidirectional LSTM -> transposed-conv projection,
    applied along the last axis of a (batch, C, steps) layout."""

    def __init__(self, channels: int, hidden: int, kernel: int, stride: int):
        super().__init__()
        self.kernel, self.stride = kernel, stride
        self.rnn = nn.LSTM(channels * kernel, hidden, batch_first=True,
                           bidirectional=True)
        self.proj = nn.ConvTranspose1d(2 * hidden, channels, kernel,
                                       stride=stride)
        init_lstm_(self.rnn)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        steps = x.shape[-1]
        padded = max(math.ceil((steps - self.kernel) / self.stride), 0) \
            * self.stride + self.kernel
        x = F.pad(x, (0, padded - steps))
        x = F.unfold(x[..., None], (self.kernel, 1), stride=(self.stride, 1))
        x, _ = self.rnn(x.transpose(1, 2))
        x = self.proj(x.transpose(1, 2))
        return x[..., :steps]


class GridBlock(nn.Module):
    """Dual-path block: frequency recurrence, time recurrence, then
    full-sequence multi-head self-attention over frames, each residual."""

    def __init__(self, channels: int, hidden: int, n_freqs: int,
                 heads: int = 4, qk_dim: int = 512, kernel: int = 4,
                 stride: int = 1, eps: float = 1e-5):
        super().__init__()
        self.heads = heads
        self.intra_norm = ChannelLayerNorm(channels, eps)
        self.intra = _UnfoldedBiLSTM(channels, hidden, kernel, stride)
        self.inter_norm = ChannelLayerNorm(channels, eps)
        self.inter = _UnfoldedBiLSTM(channels, hidden, kernel, stride)

        e_dim = max(1, math.ceil(qk_dim / n_freqs))
        v_dim = channels // heads
        self.q_convs = nn.ModuleList()
        self.k_convs = nn.ModuleList()
        self.v_convs = nn.ModuleList()
        for _ in range(heads):
            self.q_convs.append(self._head(channels, e_dim, n_freqs, eps))
            self.k_convs.append(self._head(channels, e_dim, n_freqs, eps))
            self.v_convs.append(self._head(channels, v_dim, n_freqs, eps))
        self.attn_proj = self._head(channels, channels, n_freqs, eps)

    @staticmethod
    def _head(c_in: int, c_out: int, n_freqs: int, eps: float) -> nn.Module:
        return nn.Sequential(nn.Conv2d(c_in, c_out, 1), nn.PReLU(),
                             FrameLayerNorm(c_out, n_freqs, eps))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, t, f = x.shape

        h = self.intra_norm(x)
        h = h.transpose(1, 2).reshape(b * t, c, f)
        h = self.intra(h).reshape(b, t, c, f).transpose(1, 2)
        x = x + h

        h = self.inter_norm(x)
        h = h.permute(0, 3, 1, 2).reshape(b * f, c, t)
        h = self.inter(h).reshape(b, f, c, t).permute(0, 2, 3, 1)
        x = x + h

        heads = []
        for q_conv, k_conv, v_conv in zip(self.q_convs, self.k_convs,
                                          self.v_convs):
            q = q_conv(x).transpose(1, 2).flatten(2)   # (B, T, E*F)
            k = k_conv(x).transpose(1, 2).flatten(2)
            v = v_conv(x).transpose(1, 2)              # (B, T, V, F)
            v_shape = v.shape
            v = v.flatten(2)
            attn = torch.softmax(q @ k.transpose(1, 2) / q.shape[-1] ** 0.5,
                                 dim=2)
            heads.append((attn @ v).reshape(v_shape).transpose(1, 2))
        h = self.attn_proj(torch.cat(heads, dim=1))
        return x + h


class SimpleBlock(nn.Module):
    """Lightweight stand-in block: a single time-direction bidirectional
    LSTM over per-frame channel vectors, shared across frequencies."""

    def __init__(self, channels: int, hidden: int, n_freqs: int, eps: float = 1e-5):
        super().__init__()
        self.norm = ChannelLayerNorm(channels, eps)
        self.rnn = nn.LSTM(channels, hidden, batch_first=True,
                           bidirectional=True)
        self.proj = nn.Linear(2 * hidden, channels)
        init_lstm_(self.rnn)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, t, f = x.shape
        h = self.norm(x).permute(0, 3, 2, 1).reshape(b * f, t, c)
        h, _ = self.rnn(h)
        h = self.proj(h).reshape(b, f, t, c).permute(0, 3, 2, 1)
        return x + h


class ProgressiveModel(nn.Module):
    """Multi-output enhancement network over (B, T, F) complex input."""

    def __init__(self, cfg: ModelConfig = ModelConfig(), n_freqs: int = 257):
        super().__init__()
        self.cfg = cfg
        self.n_freqs = n_freqs
        if cfg.use_phase_encoder:
            self.phase_encoder = PhaseEncoder(cfg.pe_channels)
            enc_in = cfg.pe_channels
        else:
            self.phase_encoder = None
            enc_in = 2
        pad = (cfg.enc_kernel[0] // 2, cfg.enc_kernel[1] // 2)
        self.encoder = nn.Sequential(
            nn.Conv2d(enc_in, cfg.embed_dim, cfg.enc_kernel,
                      stride=cfg.enc_stride, padding=pad),
            GlobalLayerNorm(cfg.embed_dim),
        )
        self.blocks = nn.ModuleList(
            [self._make_block() for _ in range(cfg.num_blocks)]
        )
        n_dec = cfg.num_blocks if cfg.intermediate_outputs else 1
        self.decoders = nn.ModuleList([
            nn.ConvTranspose2d(cfg.embed_dim, 2, (3, 3), padding=(1, 1))
            for _ in range(n_dec)
        ])

    def _make_block(self) -> nn.Module:
        cfg = self.cfg
        if cfg.block_type == "grid":
            return GridBlock(cfg.embed_dim, cfg.rnn_hidden, self.n_freqs,
                             heads=cfg.attn_heads, qk_dim=cfg.attn_qk_dim,
                             kernel=cfg.unfold_kernel, stride=cfg.unfold_stride)
        if cfg.block_type == "simple":
            return SimpleBlock(cfg.embed_dim, cfg.rnn_hidden, self.n_freqs)
        raise ValueError(f"unknown block type {self.cfg.block_type!r}")

    # the forward pass is split into stages so training code can draw
    # no-grad boundaries around frozen parts
    def encode(self, spec: torch.Tensor) -> torch.Tensor:
        if spec.dim() == 2:
            spec = spec.unsqueeze(0)
        if spec.shape[-1] != self.n_freqs:
            raise ValueError(
                f"expected {self.n_freqs} frequency bins, got {spec.shape[-1]}"
            )
        if self.phase_encoder is not None:
            feats = self.phase_encoder(spec)
        else:
            feats = torch.stack([spec.real, spec.imag], dim=1)
        return self.encoder(feats)

    def run_blocks(self, h: torch.Tensor, start: int, stop: int) -> torch.Tensor:
        for i in range(start, stop):
            h = self.blocks[i](h)
        return h

    def decode(self, block_idx: int, h: torch.Tensor) -> torch.Tensor:
        """Read the stream after ``block_idx`` into a complex estimate."""
        if self.cfg.intermediate_outputs:
            dec = self.decoders[block_idx]
        else:
            if block_idx != self.cfg.num_blocks - 1:
                raise ValueError("intermediate decoders are disabled")
            dec = self.decoders[0]
        out = dec(h)
        return uncompress_ri(out[:, 0], out[:, 1], self.cfg.gamma)

    def forward(self, spec: torch.Tensor) -> list:
        """All decoder outputs in order; the last is the clean estimate."""
        squeeze = spec.dim() == 2
        h = self.encode(spec)
        outs = []
        for i in range(self.cfg.num_blocks):
            h = self.blocks[i](h)
            if self.cfg.intermediate_outputs or i == self.cfg.num_blocks - 1:
                outs.append(self.decode(i, h))
        if squeeze:
            outs = [o.squeeze(0) for o in outs]
        return outs

    def parameter_groups(self) -> dict:
        """Named groups used for stage-wise freezing and checkpoints."""
        groups = {"encoder": self.encoder}
        if self.phase_encoder is not None:
            groups["phase_encoder"] = self.phase_encoder
        for i, blk in enumerate(self.blocks):
            groups[f"se_block[{i}]"] = blk
        offset = 1 if self.cfg.intermediate_outputs else self.cfg.num_blocks
        for j, dec in enumerate(self.decoders):
            groups[f"decoder[{j + offset}]"] = dec
        return groups
