"""Whole-network container: progressive model, pitch estimator, and mask
module, with named parameter groups for stage-wise freezing, a custom
checkpoint format, and the complete file-to-file enhancement pass.

Checkpoint layout: an ASCII magic line, one JSON header line (config echo,
stage id, step count, tensor manifest, optional RNG state), then the raw
tensor bytes in manifest order, little-endian.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import torch_dsp
from .compensation import MaskModule, compensate
from .frontend import StftConfig
from .model import ModelConfig, ProgressiveModel
from .pitch_filter import (CombFilterSpec, PitchEstimator,
                           PitchEstimatorConfig, apply_pitch_filter,
                           decode_pitch)

CKPT_MAGIC = b"PROGSE-CKPT-1\n"
_DTYPES = {"<f4": torch.float32, "<i8": torch.int64}


@dataclass(frozen=True)
class SystemConfig:
    model: ModelConfig = ModelConfig()
    pitch: PitchEstimatorConfig = PitchEstimatorConfig()
    n_freqs: int = 257

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "SystemConfig":
        model = dict(d["model"])
        for key in ("enc_kernel", "enc_stride"):
            model[key] = tuple(model[key])
        pitch = dict(d["pitch"])
        for key in ("conv_channels", "rnn_hidden"):
            pitch[key] = tuple(pitch[key])
        return SystemConfig(ModelConfig(**model), PitchEstimatorConfig(**pitch),
                            int(d["n_freqs"]))


class System(nn.Module):
    """Every learnable piece of the pipeline under one module."""

    def __init__(self, cfg: SystemConfig = SystemConfig()):
        super().__init__()
        self.cfg = cfg
        self.model = ProgressiveModel(cfg.model, cfg.n_freqs)
        self.pitch_estimator = PitchEstimator(cfg.pitch, cfg.n_freqs)
        self.mask_module = MaskModule(cfg.model, cfg.n_freqs)

    def parameter_groups(self) -> dict:
        groups = dict(self.model.parameter_groups())
        groups["pitch_estimator"] = self.pitch_estimator
        groups["mask_module"] = self.mask_module
        return groups


# ---------------------------------------------------------------------------
# checkpoints

def _tensor_bytes(t: torch.Tensor) -> bytes:
    arr = t.detach().cpu().numpy()
    code = "<i8" if arr.dtype == np.int64 else "<f4"
    return np.ascontiguousarray(arr.astype(code)).tobytes()


def save_checkpoint(path, system: System, stage: str, step: int,
                    epoch: int = 0, extra: dict | None = None,
                    rng_state: dict | None = None) -> None:
    """Atomically write the system (and optional extra tensors) to disk."""
    manifest = []
    blobs = []
    for gname, module in system.parameter_groups().items():
        entries = []
        for tname, tensor in module.state_dict().items():
            dtype = "<i8" if tensor.dtype == torch.int64 else "<f4"
            entries.append({"name": tname, "shape": list(tensor.shape),
                            "dtype": dtype})
            blobs.append(_tensor_bytes(tensor))
        manifest.append({"group": gname, "tensors": entries})
    extra_manifest = []
    for name, tensor in (extra or {}).items():
        dtype = "<i8" if tensor.dtype == torch.int64 else "<f4"
        extra_manifest.append({"name": name, "shape": list(tensor.shape),
                               "dtype": dtype})
        blobs.append(_tensor_bytes(tensor))

    header = {
        "stage": stage, "step": step, "epoch": epoch,
        "config": system.cfg.to_dict(),
        "groups": manifest, "extra": extra_manifest,
        "rng": rng_state,
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(json.dumps(header).encode() + b"\n")
        for blob in blobs:
            f.write(blob)
    os.replace(tmp, path)


def _read_tensor(f, entry) -> torch.Tensor:
    dtype = entry["dtype"]
    count = int(np.prod(entry["shape"])) if entry["shape"] else 1
    nbytes = count * np.dtype(dtype).itemsize
    arr = np.frombuffer(f.read(nbytes), dtype=dtype).reshape(entry["shape"])
    return torch.from_numpy(arr.astype(np.int64 if dtype == "<i8"
                                        else np.float32))


def load_checkpoint(path):
    """Rebuild a :class:`System` from a checkpoint.

    Returns (system, info) where info carries stage, step, epoch, rng
    state, and any extra tensors saved alongside the parameters.
    """
    with open(path, "rb") as f:
        if f.readline() != CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        header = json.loads(f.readline().decode())
        system = System(SystemConfig.from_dict(header["config"]))
        groups = system.parameter_groups()
        for gentry in header["groups"]:
            module = groups[gentry["group"]]
            state = {e["name"]: _read_tensor(f, e) for e in gentry["tensors"]}
            module.load_state_dict(state)
        extra = {e["name"]: _read_tensor(f, e) for e in header["extra"]}
    info = {"stage": header["stage"], "step": header["step"],
            "epoch": header["epoch"], "rng": header["rng"], "extra": extra}
    return system, info


# ---------------------------------------------------------------------------
# inference

@dataclass
class EnhanceResult:
    enhanced: np.ndarray
    intermediates: list
    comb: CombFilterSpec | None
    posterior: np.ndarray | None


def enhance(system: System, x: np.ndarray, cfg: StftConfig | None = None,
            use_compensation: bool = True) -> EnhanceResult:
    """Run the full pipeline on one waveform.

    With compensation enabled, pitch is decoded from the next-to-last
    progressive output and used to comb-filter the input before the mask
    module fuses it with the coarse estimate. Without it (or when the
    model has no intermediate outputs to estimate pitch from and none are
    needed), the coarse estimate is returned directly.
    """
    cfg = cfg or StftConfig()
    system.eval()
    with torch.no_grad():
        spec = torch_dsp.stft(torch.from_numpy(np.asarray(x)).float(), cfg)
        outs = system.model(spec)
        waves = [torch_dsp.istft(o, len(x), cfg).numpy() for o in outs]
        if not use_compensation:
            return EnhanceResult(waves[-1], waves, None, None)
        pitch_source = outs[-2] if len(outs) > 1 else outs[-1]
        posterior = system.pitch_estimator(pitch_source)
        comb = decode_pitch(posterior.numpy(), system.cfg.pitch.n_bins)
        filtered = apply_pitch_filter(np.asarray(x, dtype=np.float64), comb, cfg)
        final = compensate(outs[-1],
                           torch.from_numpy(filtered).to(torch.complex64),
                           system.mask_module)
        enhanced = torch_dsp.istft(final, len(x), cfg).numpy()
    return EnhanceResult(enhanced, waves, comb, posterior.numpy())
