"""Deterministic synthetic test signals: tones, sawtooths, vowel-like
voices, shaped noise, and exponential-decay room impulse responses.

Every generator takes an explicit duration and (where random) a seed, so
corpora built from them are reproducible sample-for-sample.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import butter, lfilter

from .frontend import SAMPLE_RATE, rms


def _num_samples(duration_s: float) -> int:
    return int(round(duration_s * SAMPLE_RATE))


def tone(freq_hz: float, duration_s: float, amplitude: float = 0.5) -> np.ndarray:
    t = np.arange(_num_samples(duration_s)) / SAMPLE_RATE
    return amplitude * np.sin(2.0 * np.pi * freq_hz * t)


def sawtooth(freq_hz: float, duration_s: float, amplitude: float = 0.5) -> np.ndarray:
    """Bandlimited sawtooth built from harmonics below Nyquist."""
    n = _num_samples(duration_s)
    t = np.arange(n) / SAMPLE_RATE
    x = np.zeros(n)
    k = 1
    while k * freq_hz < SAMPLE_RATE / 2:
        x += np.sin(2.0 * np.pi * k * freq_hz * t) / k
        k += 1
    peak = np.max(np.abs(x))
    return amplitude * x / peak if peak > 0 else x


def white_noise(duration_s: float, seed: int, level: float = 0.1) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return level * rng.standard_normal(_num_samples(duration_s))


def pink_noise(duration_s: float, seed: int, level: float = 0.1) -> np.ndarray:
    """Approximately 1/f-shaped Gaussian noise (spectral shaping via rFFT)."""
    rng = np.random.default_rng(seed)
    n = _num_samples(duration_s)
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, d=1.0 / SAMPLE_RATE)
    spec /= np.sqrt(np.maximum(freqs, 20.0))
    x = np.fft.irfft(spec, n=n)
    return level * x / rms(x)


def harmonic_voice(duration_s: float, seed: int, f0_base_hz: float | None = None,
                   level: float = 0.1) -> np.ndarray:
    """Vowel-like source: slowly wandering pitch, 1/k harmonic rolloff, two
    formant-style resonances, and a smooth on/off envelope.

    Fully voiced (no silent stretches), which keeps frame-level pitch labels
    well defined for the whole clip.
    """
    rng = np.random.default_rng(seed)
    n = _num_samples(duration_s)
    t = np.arange(n) / SAMPLE_RATE
    if f0_base_hz is None:
        f0_base_hz = float(rng.uniform(90.0, 280.0))
    vib_rate = rng.uniform(2.0, 5.0)
    vib_depth = rng.uniform(0.01, 0.04)
    f0 = f0_base_hz * (1.0 + vib_depth * np.sin(2.0 * np.pi * vib_rate * t))
    phase = 2.0 * np.pi * np.cumsum(f0) / SAMPLE_RATE

    x = np.zeros(n)
    n_harm = int(SAMPLE_RATE / 2 / (f0_base_hz * (1 + vib_depth))) - 1
    for k in range(1, max(2, min(n_harm, 40))):
        x += np.sin(k * phase) / k

    # two resonant bands standing in for formants
    centers = rng.uniform([350.0, 1100.0], [900.0, 2200.0])
    out = np.zeros(n)
    for c, w in zip(centers, (0.65, 0.35)):
        b, a = butter(2, [0.75 * c / (SAMPLE_RATE / 2), 1.25 * c / (SAMPLE_RATE / 2)],
                      btype="band")
        out += w * lfilter(b, a, x)
    out += 0.15 * x

    ramp = min(int(0.04 * SAMPLE_RATE), n // 4)
    env = np.ones(n)
    env[:ramp] = 0.5 * (1 - np.cos(np.pi * np.arange(ramp) / ramp))
    env[-ramp:] = env[:ramp][::-1]
    out *= env
    return level * out / rms(out)


def exponential_rir(t60_s: float, seed: int, duration_s: float = 0.4) -> np.ndarray:
    """Synthetic room impulse response: unit direct path followed by
    exponentially decaying white-noise taps calibrated to the given T60.
    """
    if t60_s <= 0:
        raise ValueError("T60 must be positive")
    rng = np.random.default_rng(seed)
    n = _num_samples(duration_s)
    decay = np.exp(-np.log(1000.0) * np.arange(n) / (t60_s * SAMPLE_RATE))
    taps = rng.standard_normal(n) * decay * 0.35
    taps[0] = 1.0
    return taps
