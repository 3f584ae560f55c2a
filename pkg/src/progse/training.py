"""Three-stage training orchestration.

Stage "pl" trains the progressive model on the SNR ladder; stage "pitch"
trains only the pitch estimator on features from the frozen model; stage
"hc" trains only the mask module and the last spectro-temporal block
against the compensated output. Freezing is enforced twice over: frozen
parameters never enter the optimizer, and gradients are blocked at the
frozen/learnable boundary.

The learning rate follows the warmup rule
min(1/sqrt(step), step / sqrt(warmup^3)) / sqrt(scale), peaking at
``warmup`` steps. All batch randomness flows from one numpy generator
whose state is checkpointed, so save -> load -> step reproduces an
uninterrupted run bit for bit (single-threaded).
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import torch_dsp
from .compensation import compensate
from .frontend import StftConfig, read_wav
from .losses import LossWeights, TargetLadder, loss_hc, loss_pitch_bce, loss_pl
from .pitch_filter import apply_pitch_filter, decode_pitch
from .synthesis import load_index, read_label_matrix
from .system import System, load_checkpoint, save_checkpoint

STAGES = ("pl", "pitch", "hc")


def set_deterministic(seed: int) -> None:
    """Seed every RNG in play and pin torch to one thread."""
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.set_num_threads(1)


def lr_at_step(step: int, warmup_steps: int = 10000,
               scale: float = 100.0) -> float:
    """Warmup learning rate at 1-based ``step``."""
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    return min(1.0 / math.sqrt(step),
               step / math.sqrt(warmup_steps ** 3)) / math.sqrt(scale)


@dataclass(frozen=True)
class StageConfig:
    stage: str
    epochs: int = 1
    steps_per_epoch: int = 1250
    batch_size: int = 8
    crop_s: float = 8.0
    warmup_steps: int = 10000
    lr_scale: float = 100.0
    grad_clip: float = 5.0
    adam_betas: tuple = (0.9, 0.98)
    adam_eps: float = 1e-9
    pitch_source: str = "intermediate"  # intermediate | noisy | coarse

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.pitch_source not in ("intermediate", "noisy", "coarse"):
            raise ValueError(f"unknown pitch source {self.pitch_source!r}")


def check_stage_prerequisite(prev_stage: str | None, stage: str) -> None:
    """The pitch stage needs progressive weights; hc needs both."""
    need = {"pl": None, "pitch": "pl", "hc": "pitch"}[stage]
    if need is None:
        return
    order = {s: i for i, s in enumerate(STAGES)}
    if prev_stage is None or order.get(prev_stage, -1) < order[need]:
        raise ValueError(
            f"stage {stage!r} requires a checkpoint from stage {need!r} "
            f"or later, got {prev_stage!r}"
        )


def stage_learnable_groups(stage: str, system: System) -> set:
    groups = system.parameter_groups()
    if stage == "pl":
        return {g for g in groups if g not in ("pitch_estimator", "mask_module")}
    if stage == "pitch":
        return {"pitch_estimator"}
    last = f"se_block[{system.cfg.model.num_blocks - 1}]"
    return {"mask_module", last}


def trainable_mask(learnable: set, groups: dict) -> dict:
    """Boolean map over parameter groups; unknown names are an error."""
    unknown = set(learnable) - set(groups)
    if unknown:
        raise KeyError(f"unknown parameter groups: {sorted(unknown)}")
    return {name: name in learnable for name in groups}


# ---------------------------------------------------------------------------
# data access

@dataclass
class Utterance:
    """One training item: mixture, ladder targets (clean last), labels."""

    mix: np.ndarray
    targets: list
    labels: np.ndarray
    snr_db: float = 0.0
    uid: str = ""


class DiskDataset:
    """Lazy, cached view of a synthesized dataset directory."""

    def __init__(self, data_dir, split: str | None = None):
        self.root = Path(data_dir)
        self.records = [r for r in load_index(self.root)
                        if split is None or r["split"] == split]
        if not self.records:
            raise ValueError(f"no records for split {split!r} in {data_dir}")
        self._cache: dict = {}

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i: int) -> Utterance:
        rec = self.records[i]
        uid = rec["id"]
        if uid not in self._cache:
            mix = read_wav(self.root / "mix" / f"{uid}.wav").astype(np.float32)
            targets = [
                read_wav(self.root / f"target_{k}" / f"{uid}.wav").astype(np.float32)
                for k in range(1, rec["k_steps"] + 1)
            ]
            targets.append(
                read_wav(self.root / "clean" / f"{uid}.wav").astype(np.float32))
            labels = read_label_matrix(
                self.root / "pitch" / f"{uid}.labels").matrix
            self._cache[uid] = Utterance(mix, targets, labels,
                                         rec["snr_db"], uid)
        return self._cache[uid]


# ---------------------------------------------------------------------------
# trainer

class Trainer:
    """Single-stage training loop with freeze enforcement and resume."""

    def __init__(self, system: System, cfg: StageConfig, dataset,
                 seed: int = 0, loss_weights: LossWeights | None = None,
                 stft_cfg: StftConfig | None = None, log_path=None):
        self.system = system
        self.cfg = cfg
        self.dataset = dataset
        self.seed = seed
        self.weights = loss_weights or LossWeights()
        self.stft = stft_cfg or StftConfig()
        self.log_path = Path(log_path) if log_path else None
        self.step = 0
        self.epoch = 0
        self.rng = np.random.default_rng(seed)

        groups = system.parameter_groups()
        self.learnable = stage_learnable_groups(cfg.stage, system)
        self.mask = trainable_mask(self.learnable, groups)
        self._params = []
        for name, module in groups.items():
            on = self.mask[name]
            for p in module.parameters():
                p.requires_grad_(on)
            if on:
                self._params.extend(module.parameters())
            module.train(on)
        self.optimizer = torch.optim.Adam(
            self._params, lr=lr_at_step(1, cfg.warmup_steps, cfg.lr_scale),
            betas=cfg.adam_betas, eps=cfg.adam_eps)

    # -- batching ----------------------------------------------------------
    def _crop(self, utt: Utterance):
        hop = self.stft.hop_samples
        want = int(round(self.cfg.crop_s * self.stft.sample_rate_hz))
        want = max(self.stft.win_len_samples, (want // hop) * hop)
        length = min(want, (len(utt.mix) // hop) * hop)
        max_off = (len(utt.mix) - length) // hop
        off = int(self.rng.integers(0, max_off + 1)) * hop
        frames = 1 + length // hop
        f_off = off // hop
        return (utt.mix[off:off + length],
                [t[off:off + length] for t in utt.targets],
                utt.labels[f_off:f_off + frames])

    def sample_batch(self):
        idx = self.rng.integers(0, len(self.dataset), size=self.cfg.batch_size)
        mixes, targets, labels = [], None, []
        for i in idx:
            m, t, l = self._crop(self.dataset[int(i)])
            mixes.append(m)
            labels.append(l)
            if targets is None:
                targets = [[] for _ in t]
            for k, w in enumerate(t):
                targets[k].append(w)
        mix = torch.from_numpy(np.stack(mixes))
        target_waves = [torch.from_numpy(np.stack(t)) for t in targets]
        label_mat = torch.from_numpy(np.stack(labels))
        return mix, target_waves, label_mat

    # -- stage losses ------------------------------------------------------
    def _step_pl(self, mix, target_waves, _labels):
        spec = torch_dsp.stft(mix, self.stft)
        outputs = self.system.model(spec)
        waves = target_waves[-len(outputs):]
        specs = [torch_dsp.stft(w, self.stft) for w in waves]
        loss = loss_pl(outputs, TargetLadder(specs, waves), self.weights,
                       self.stft)
        return loss, {"loss_pl": float(loss)}

    def _pitch_input(self, mix_spec):
        src = self.cfg.pitch_source
        if src == "noisy":
            return mix_spec
        with torch.no_grad():
            outs = self.system.model(mix_spec)
        if src == "coarse" or len(outs) == 1:
            if src == "intermediate" and len(outs) == 1:
                raise ValueError(
                    "model has no intermediate outputs to estimate pitch from")
            return outs[-1].detach()
        return outs[-2].detach()

    def _step_pitch(self, mix, _target_waves, labels):
        spec = torch_dsp.stft(mix, self.stft)
        feats = self._pitch_input(spec)
        posterior = self.system.pitch_estimator(feats)
        loss = loss_pitch_bce(posterior, labels)
        return loss, {"loss_pitch": float(loss)}

    def _step_hc(self, mix, target_waves, labels):
        spec = torch_dsp.stft(mix, self.stft)
        model = self.system.model
        with torch.no_grad():
            h = model.encode(spec)
            h = model.run_blocks(h, 0, model.cfg.num_blocks - 1)
        h = model.run_blocks(h.detach(), model.cfg.num_blocks - 1,
                             model.cfg.num_blocks)
        coarse = model.decode(model.cfg.num_blocks - 1, h)

        filtered = []
        for b in range(mix.shape[0]):
            comb = decode_pitch(labels[b].numpy(),
                                self.system.cfg.pitch.n_bins)
            filtered.append(apply_pitch_filter(
                mix[b].numpy().astype(np.float64), comb, self.stft))
        filtered = torch.from_numpy(np.stack(filtered)).to(torch.complex64)

        final = compensate(coarse, filtered, self.system.mask_module)
        clean = target_waves[-1]
        clean_spec = torch_dsp.stft(clean, self.stft)
        est_wave = torch_dsp.istft(final, clean.shape[-1], self.stft)
        loss = loss_hc(final, clean_spec, est_wave, clean, self.weights)
        return loss, {"loss_hc": float(loss)}

    # -- loop --------------------------------------------------------------
    def train_step(self) -> dict:
        mix, target_waves, labels = self.sample_batch()
        step_fn = {"pl": self._step_pl, "pitch": self._step_pitch,
                   "hc": self._step_hc}[self.cfg.stage]
        loss, parts = step_fn(mix, target_waves, labels)
        loss = loss / self.cfg.batch_size

        self.step += 1
        lr = lr_at_step(self.step, self.cfg.warmup_steps, self.cfg.lr_scale)
        for g in self.optimizer.param_groups:
            g["lr"] = lr
        self.optimizer.zero_grad()
        loss.backward()
        if self.cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self._params, self.cfg.grad_clip)
        self.optimizer.step()

        record = {"stage": self.cfg.stage, "step": self.step, "lr": lr,
                  "loss": float(loss), **parts}
        if self.log_path is not None:
            with open(self.log_path, "a") as f:
                f.write(json.dumps(record) + "\n")
        return record

    def run(self, checkpoint_dir=None) -> dict:
        """Train cfg.epochs x cfg.steps_per_epoch steps; checkpoint each
        epoch when a directory is given. Returns the last step record."""
        record = {}
        ckdir = Path(checkpoint_dir) if checkpoint_dir else None
        if ckdir:
            ckdir.mkdir(parents=True, exist_ok=True)
        while self.epoch < self.cfg.epochs:
            for _ in range(self.cfg.steps_per_epoch):
                record = self.train_step()
            self.epoch += 1
            if ckdir:
                self.save(ckdir / f"{self.cfg.stage}_e{self.epoch:03d}.ckpt")
                self.save(ckdir / f"{self.cfg.stage}_latest.ckpt")
        return record

    # -- persistence -------------------------------------------------------
    def _rng_state(self) -> dict:
        return {"numpy": self.rng.bit_generator.state,
                "torch": torch.get_rng_state().numpy().tobytes().hex()}

    def save(self, path) -> None:
        extra = {}
        for i, p in enumerate(self._params):
            st = self.optimizer.state.get(p)
            if st:
                extra[f"adam.{i}.step"] = st["step"].detach().clone()
                extra[f"adam.{i}.exp_avg"] = st["exp_avg"]
                extra[f"adam.{i}.exp_avg_sq"] = st["exp_avg_sq"]
        save_checkpoint(path, self.system, self.cfg.stage, self.step,
                        self.epoch, extra=extra, rng_state=self._rng_state())

    @classmethod
    def resume(cls, path, cfg: StageConfig, dataset, **kwargs) -> "Trainer":
        """Rebuild a trainer mid-stage from one of its own checkpoints."""
        system, info = load_checkpoint(path)
        if info["stage"] != cfg.stage:
            raise ValueError(
                f"checkpoint is from stage {info['stage']!r}, not {cfg.stage!r}")
        tr = cls(system, cfg, dataset, **kwargs)
        tr.step = info["step"]
        tr.epoch = info["epoch"]
        if info["rng"]:
            tr.rng.bit_generator.state = info["rng"]["numpy"]
            torch.set_rng_state(torch.from_numpy(np.frombuffer(
                bytes.fromhex(info["rng"]["torch"]), dtype=np.uint8).copy()))
        for i, p in enumerate(tr._params):
            key = f"adam.{i}.step"
            if key in info["extra"]:
                tr.optimizer.state[p] = {
                    "step": info["extra"][key],
                    "exp_avg": info["extra"][f"adam.{i}.exp_avg"],
                    "exp_avg_sq": info["extra"][f"adam.{i}.exp_avg_sq"],
                }
        return tr
