"""Waveform <-> spectrogram conversion and power-law magnitude compression.

STFT: periodic Hann window of 512 samples, hop 128 (75% overlap), 512-point
one-sided transform, no centre padding, so a signal of ``L`` samples gives
``(L - 512) // 128 + 1`` frames of 257 bins.
"""

from __future__ import annotations

import os
import wave
from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 16000
N_FFT = 512
HOP = 128
N_BINS = N_FFT // 2 + 1
WINDOW = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(N_FFT) / N_FFT)
_WSUM_FLOOR = 1e-11


@dataclass
class CompressedMagnitude:
    values: np.ndarray  # T x 257, non-negative
    exponent: float


@dataclass
class MixResult:
    mixture: np.ndarray
    noise_gain: float
    peak_scale: float  # 1.0 unless the mixture was peak-normalized


def frame_count(n_samples: int) -> int:
    return (n_samples - N_FFT) // HOP + 1


def stft(wave_: np.ndarray) -> np.ndarray:
    """Complex ``T x 257`` spectrogram of a 1-D signal."""
    x = np.asarray(wave_, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"stft expects a 1-D waveform, got shape {x.shape}")
    if x.size < N_FFT:
        raise ValueError(f"waveform of {x.size} samples is shorter than one {N_FFT}-sample window")
    frames = np.lib.stride_tricks.sliding_window_view(x, N_FFT)[::HOP]
    return np.fft.rfft(frames * WINDOW, n=N_FFT, axis=-1)


def istft(spec: np.ndarray) -> np.ndarray:
    """Weighted overlap-add inverse; output has ``(T - 1) * 128 + 512`` samples."""
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[1] != N_BINS:
        raise ValueError(f"istft expects a T x {N_BINS} spectrogram, got shape {spec.shape}")
    T = spec.shape[0]
    length = (T - 1) * HOP + N_FFT
    frames = np.fft.irfft(spec, n=N_FFT, axis=-1) * WINDOW
    out = np.zeros(length)
    wsum = np.zeros(length)
    w2 = WINDOW**2
    for t in range(T):
        out[t * HOP : t * HOP + N_FFT] += frames[t]
        wsum[t * HOP : t * HOP + N_FFT] += w2
    safe = wsum > _WSUM_FLOOR
    out[safe] /= wsum[safe]
    out[~safe] = 0.0
    return out


def compress(spec: np.ndarray, exponent: float = 0.5) -> tuple[CompressedMagnitude, np.ndarray]:
    """Split into ``|X|**exponent`` and phase in ``(-pi, pi]`` (zero bins get phase 0)."""
    if not 0.0 < exponent <= 1.0:
        raise ValueError(f"compression exponent must lie in (0, 1], got {exponent}")
    spec = np.asarray(spec)
    mag = np.abs(spec)
    phase = np.angle(spec)
    phase = np.where(phase <= -np.pi, np.pi, phase)
    phase = np.where(mag == 0, 0.0, phase)
    return CompressedMagnitude(mag**exponent, float(exponent)), phase


def reconstruct(mag: CompressedMagnitude, phase: np.ndarray) -> np.ndarray:
    """Inverse of :func:`compress`: ``mag**(1/exponent) * exp(i * phase)``."""
    values = np.asarray(mag.values, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    if values.shape != phase.shape:
        raise ValueError(f"magnitude shape {values.shape} != phase shape {phase.shape}")
    return np.maximum(values, 0.0) ** (1.0 / mag.exponent) * np.exp(1j * phase)


def mix(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> MixResult:
    """Add ``noise`` scaled so the clean-to-noise power ratio is ``snr_db``.

    If the sum would exceed unit peak the whole mixture is scaled down and
    the factor is reported in ``peak_scale``.
    """
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if clean.shape != noise.shape:
        raise ValueError(f"clean and noise lengths differ: {clean.shape} vs {noise.shape}")
    p_clean = np.mean(clean**2)
    p_noise = np.mean(noise**2)
    if p_clean == 0:
        raise ValueError("clean signal has zero energy")
    if p_noise == 0:
        raise ValueError("noise signal has zero energy")
    gain = float(10.0 ** (-snr_db / 20.0) * np.sqrt(p_clean / p_noise))
    mixture = clean + gain * noise
    peak = float(np.max(np.abs(mixture)))
    scale = 1.0 / peak if peak > 1.0 else 1.0
    return MixResult(mixture * scale, gain, scale)


def measured_snr(clean: np.ndarray, noise: np.ndarray) -> float:
    return float(10.0 * np.log10(np.sum(np.square(clean)) / np.sum(np.square(noise))))


def read_wav(path: str | os.PathLike) -> np.ndarray:
    """Read mono 16-bit PCM at 16 kHz into floats in [-1, 1)."""
    try:
        with wave.open(os.fspath(path), "rb") as fh:
            if fh.getnchannels() != 1:
                raise ValueError(f"{path}: expected mono, got {fh.getnchannels()} channels")
            if fh.getsampwidth() != 2:
                raise ValueError(f"{path}: expected 16-bit PCM, got {8 * fh.getsampwidth()}-bit samples")
            if fh.getframerate() != SAMPLE_RATE:
                raise ValueError(f"{path}: expected {SAMPLE_RATE} Hz, got {fh.getframerate()} Hz")
            if fh.getcomptype() != "NONE":
                raise ValueError(f"{path}: compressed WAV ({fh.getcomptype()}) not supported")
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise ValueError(f"{path}: not a PCM WAV file ({exc})") from None
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path: str | os.PathLike, samples: np.ndarray) -> None:
    """Write mono 16-bit PCM at 16 kHz; samples are clipped to [-1, 1]."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(os.fspath(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(SAMPLE_RATE)
        fh.writeframes(pcm.tobytes())
