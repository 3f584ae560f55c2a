"""Noisy/clean pair construction: SNR-calibrated mixing, the progressive
intermediate-target ladder, early-reflection training targets, pitch label
matrices, and the on-disk dataset layout.

All randomness (noise crop offsets, generator draws) flows from explicit
integer seeds so a dataset synthesized twice is byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from . import signals
from .frontend import SAMPLE_RATE, StftConfig, rms, snr_db, stft, write_wav, read_wav
from .yin import F0_MAX_HZ, F0_MIN_HZ, PitchTrack, extract_f0

EARLY_REFLECTION_SAMPLES = 800  # first 50 ms at 16 kHz
N_PITCH_BINS = 225
LABEL_MAGIC = b"PLM1"


# ---------------------------------------------------------------------------
# mixing

def crop_noise(noise: np.ndarray, length: int, seed: int) -> np.ndarray:
    """Crop ``length`` samples from ``noise`` at a seeded uniform offset."""
    if len(noise) < length:
        raise ValueError(f"noise ({len(noise)}) shorter than target ({length})")
    offset = int(np.random.default_rng(seed).integers(0, len(noise) - length + 1))
    return noise[offset:offset + length]


def mix_gain(clean: np.ndarray, noise_crop: np.ndarray, target_db: float) -> float:
    """Noise gain g so that clean + g * noise sits at ``target_db`` SNR."""
    r_s, r_n = rms(clean), rms(noise_crop)
    if r_s == 0.0:
        raise ValueError("clean signal is silent")
    if r_n == 0.0:
        raise ValueError("noise signal is silent")
    return (r_s / r_n) * 10.0 ** (-target_db / 20.0)


def mix_at_snr(clean: np.ndarray, noise: np.ndarray, target_db: float,
               seed: int) -> np.ndarray:
    """Mix clean speech with a seeded noise crop at an exact SNR."""
    n_crop = crop_noise(noise, len(clean), seed)
    return clean + mix_gain(clean, n_crop, target_db) * n_crop


def early_reflection_target(s_dry: np.ndarray, rir: np.ndarray):
    """Convolve with a room impulse response, keeping two views.

    Returns ``(reverberant, target)``: the full convolution and the
    convolution with only the first 50 ms of the response (the part kept in
    the training target), both truncated to the dry length.
    """
    rir = np.asarray(rir, dtype=np.float64)
    if len(rir) == 0:
        raise ValueError("empty impulse response")
    n = len(s_dry)
    reverberant = fftconvolve(s_dry, rir)[:n]
    target = fftconvolve(s_dry, rir[:EARLY_REFLECTION_SAMPLES])[:n]
    return reverberant, target


@dataclass
class ProgressiveTargetSet:
    """Intermediate targets at input_snr + k * delta for k = 1..K, then clean.

    Every rung reuses the same noise crop as the input mixture, so the
    ladder differs only in noise gain.
    """

    waveforms: list
    spectrograms: list
    k_steps: int
    delta_snr_db: float


def make_progressive_targets(s_target: np.ndarray, noise: np.ndarray,
                             input_snr_db: float, k_steps: int,
                             delta_db: float, seed: int,
                             cfg: StftConfig | None = None) -> ProgressiveTargetSet:
    """Build the ladder of intermediate targets for one mixture.

    ``seed`` must match the seed used to mix the input so the rungs share
    its noise crop.
    """
    cfg = cfg or StftConfig()
    n_crop = crop_noise(noise, len(s_target), seed)
    waves = []
    for k in range(1, k_steps + 1):
        g = mix_gain(s_target, n_crop, input_snr_db + k * delta_db)
        waves.append(s_target + g * n_crop)
    waves.append(np.asarray(s_target, dtype=np.float64))
    specs = [stft(w, cfg) for w in waves]
    return ProgressiveTargetSet(waves, specs, k_steps, delta_db)


# ---------------------------------------------------------------------------
# pitch labels

def f0_to_bin(f0_hz, n_bins: int = N_PITCH_BINS, f_min: float = F0_MIN_HZ,
              f_max: float = F0_MAX_HZ):
    """Map f0 to its log-spaced bin index, clamped to [0, n_bins - 1]."""
    f0 = np.clip(np.asarray(f0_hz, dtype=np.float64), f_min, f_max)
    b = np.round((n_bins - 1) * np.log2(f0 / f_min) / np.log2(f_max / f_min))
    return b.astype(int)


def bin_center_hz(b, n_bins: int = N_PITCH_BINS, f_min: float = F0_MIN_HZ,
                  f_max: float = F0_MAX_HZ):
    """Center frequency of pitch bin ``b`` (inverse of :func:`f0_to_bin`)."""
    b = np.asarray(b, dtype=np.float64)
    return f_min * (f_max / f_min) ** (b / (n_bins - 1))


@dataclass
class PitchLabelMatrix:
    """T x (N+1) soft targets: a Gaussian bump around the f0 bin for voiced
    frames, a one-hot on the extra last column for unvoiced frames."""

    matrix: np.ndarray
    n_bins: int = N_PITCH_BINS

    @property
    def num_frames(self) -> int:
        return self.matrix.shape[0]


def f0_to_label_matrix(track: PitchTrack, n_bins: int = N_PITCH_BINS,
                       f_min: float = F0_MIN_HZ,
                       f_max: float = F0_MAX_HZ) -> PitchLabelMatrix:
    """Expand a pitch track into the soft label matrix.

    Voiced frames get a unit-peak Gaussian (sigma = 1 bin, truncated at
    +-3 bins) centered on the f0 bin; unvoiced frames get a 1 in the extra
    final column.
    """
    n = len(track)
    mat = np.zeros((n, n_bins + 1), dtype=np.float32)
    offsets = np.arange(-3, 4)
    bump = np.exp(-0.5 * offsets.astype(np.float64) ** 2)
    for t in range(n):
        if not track.voiced[t]:
            mat[t, n_bins] = 1.0
            continue
        b = int(f0_to_bin(track.f0_hz[t], n_bins, f_min, f_max))
        cols = b + offsets
        ok = (cols >= 0) & (cols < n_bins)
        mat[t, cols[ok]] = bump[ok]
    return PitchLabelMatrix(mat, n_bins)


def write_label_matrix(path, labels: PitchLabelMatrix) -> None:
    """Write labels as a 16-byte header (magic, version, T, N+1 as
    little-endian 32-bit integers) followed by row-major float32 data."""
    t, cols = labels.matrix.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIII", LABEL_MAGIC, 1, t, cols))
        f.write(np.ascontiguousarray(labels.matrix, dtype="<f4").tobytes())


def read_label_matrix(path) -> PitchLabelMatrix:
    with open(path, "rb") as f:
        magic, version, t, cols = struct.unpack("<4sIII", f.read(16))
        if magic != LABEL_MAGIC or version != 1:
            raise ValueError(f"{path}: not a pitch label file")
        data = np.frombuffer(f.read(4 * t * cols), dtype="<f4")
    return PitchLabelMatrix(data.reshape(t, cols).copy(), cols - 1)


# ---------------------------------------------------------------------------
# dataset synthesis

TRAIN_SNR_RANGE = (-15.0, 0.0)
TEST_SNR_RANGE = (-15.0, 15.0)


@dataclass
class MixtureSpec:
    """One line of a synthesis manifest."""

    clean_path: str
    noise_path: str
    snr_db: float
    seed: int
    split: str = "train"
    rir_path: str | None = None

    def __post_init__(self):
        lo, hi = TRAIN_SNR_RANGE if self.split == "train" else TEST_SNR_RANGE
        if not lo <= self.snr_db <= hi:
            raise ValueError(
                f"{self.split} SNR {self.snr_db} dB outside [{lo}, {hi}]"
            )


def read_manifest(path) -> list[MixtureSpec]:
    specs = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            specs.append(MixtureSpec(
                clean_path=rec["clean_path"], noise_path=rec["noise_path"],
                snr_db=float(rec["snr_db"]), seed=int(rec["seed"]),
                split=rec.get("split", "train"), rir_path=rec.get("rir_path"),
            ))
    return specs


def write_manifest(path, specs: list[MixtureSpec]) -> None:
    with open(path, "w") as f:
        for s in specs:
            rec = {"clean_path": s.clean_path, "noise_path": s.noise_path,
                   "snr_db": s.snr_db, "seed": s.seed, "split": s.split}
            if s.rir_path is not None:
                rec["rir_path"] = s.rir_path
            f.write(json.dumps(rec) + "\n")


def synthesize_dataset(manifest_path, out_dir, k_steps: int = 4,
                       delta_db: float = 5.0,
                       cfg: StftConfig | None = None) -> dict:
    """Render a manifest into mixtures, ladder targets, and pitch labels.

    Layout under ``out_dir``: mix/, target_1/..target_K/, clean/ (wav each),
    pitch/ (.labels), and index.jsonl with one record per utterance.
    Per-item failures are collected and reported; remaining items proceed.

    Returns {"index": [...records...], "errors": [...messages...]}.
    """
    cfg = cfg or StftConfig()
    out = Path(out_dir)
    dirs = {"mix": out / "mix", "clean": out / "clean", "pitch": out / "pitch"}
    for k in range(1, k_steps + 1):
        dirs[f"target_{k}"] = out / f"target_{k}"
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)

    specs = read_manifest(manifest_path)
    index, errors = [], []
    for i, spec in enumerate(specs):
        uid = f"{spec.split}_{i:05d}"
        try:
            rec = _synthesize_one(uid, spec, dirs, k_steps, delta_db, cfg)
        except Exception as exc:  # per-item isolation
            errors.append(f"{uid}: {exc}")
            continue
        index.append(rec)

    with open(out / "index.jsonl", "w") as f:
        for rec in index:
            f.write(json.dumps(rec) + "\n")
    return {"index": index, "errors": errors}


def _synthesize_one(uid: str, spec: MixtureSpec, dirs: dict, k_steps: int,
                    delta_db: float, cfg: StftConfig) -> dict:
    clean = read_wav(spec.clean_path)
    noise = read_wav(spec.noise_path)
    if spec.rir_path is not None:
        rir = np.load(spec.rir_path) if str(spec.rir_path).endswith(".npy") \
            else read_wav(spec.rir_path)
        reverberant, target = early_reflection_target(clean, rir)
    else:
        reverberant, target = clean, clean

    n_crop = crop_noise(noise, len(target), spec.seed)
    mixture = reverberant + mix_gain(reverberant, n_crop, spec.snr_db) * n_crop

    # rungs are anchored on the measured SNR of the mixture against the
    # training target, so rung k sits exactly at input + k * delta
    input_snr = snr_db(mixture, target)
    ladder = []
    for k in range(1, k_steps + 1):
        g = mix_gain(target, n_crop, input_snr + k * delta_db)
        ladder.append(target + g * n_crop)

    labels = f0_to_label_matrix(extract_f0(target, cfg))

    write_wav(dirs["mix"] / f"{uid}.wav", mixture)
    write_wav(dirs["clean"] / f"{uid}.wav", target)
    for k, w in enumerate(ladder, start=1):
        write_wav(dirs[f"target_{k}"] / f"{uid}.wav", w)
    write_label_matrix(dirs["pitch"] / f"{uid}.labels", labels)

    return {"id": uid, "snr_db": spec.snr_db, "seed": spec.seed,
            "split": spec.split, "num_samples": len(target),
            "k_steps": k_steps, "delta_db": delta_db}


def load_index(out_dir) -> list[dict]:
    with open(Path(out_dir) / "index.jsonl") as f:
        return [json.loads(line) for line in f if line.strip()]


# ---------------------------------------------------------------------------
# toy corpus

def build_toy_corpus(root, n_train: int = 160, n_test: int = 40,
                     duration_s: float = 2.0, seed: int = 0,
                     train_snr_range=(-10.0, 0.0),
                     test_snr_grid=(-10.0, -5.0, 0.0),
                     with_rir: bool = False) -> Path:
    """Write a self-contained corpus of vowel-like sources plus noise and a
    matching manifest; returns the manifest path.

    Test mixtures cycle through ``test_snr_grid`` so each grid level forms
    an evaluable subset.
    """
    root = Path(root)
    src_dir, noise_dir = root / "sources", root / "noises"
    src_dir.mkdir(parents=True, exist_ok=True)
    noise_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    specs = []
    for i in range(n_train + n_test):
        split = "train" if i < n_train else "test"
        voice_seed = int(rng.integers(0, 2 ** 31))
        noise_seed = int(rng.integers(0, 2 ** 31))
        mix_seed = int(rng.integers(0, 2 ** 31))
        voice = signals.harmonic_voice(duration_s, seed=voice_seed)
        if noise_seed % 2 == 0:
            noise = signals.white_noise(duration_s + 0.5, seed=noise_seed)
        else:
            noise = signals.pink_noise(duration_s + 0.5, seed=noise_seed)
        s_path = src_dir / f"voice_{i:05d}.wav"
        n_path = noise_dir / f"noise_{i:05d}.wav"
        write_wav(s_path, voice)
        write_wav(n_path, noise)
        if split == "train":
            snr = float(rng.uniform(*train_snr_range))
        else:
            snr = float(test_snr_grid[(i - n_train) % len(test_snr_grid)])
        spec = MixtureSpec(str(s_path), str(n_path), snr, mix_seed, split)
        if with_rir:
            rir = signals.exponential_rir(
                t60_s=float(rng.uniform(0.2, 0.6)),
                seed=int(rng.integers(0, 2 ** 31)))
            rir_path = root / "rirs" / f"rir_{i:05d}.npy"
            rir_path.parent.mkdir(exist_ok=True)
            np.save(rir_path, rir)
            spec.rir_path = str(rir_path)
        specs.append(spec)

    manifest = root / "manifest.jsonl"
    write_manifest(manifest, specs)
    return manifest
