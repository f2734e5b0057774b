"""Objective metrics (segmental SNR, log-spectral distance), enhancement and spectrogram export."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import signal as sig
from .numerics import Tensor, no_grad

SEGMENT = 512
SEGMENT_HOP = 256
SSNR_FLOOR = -10.0
SSNR_CEIL = 35.0
SILENCE_ENERGY = 1e-8
LSD_EPS = 1e-8
DB_FLOOR = -80.0


def _equal_lengths(reference, estimate) -> tuple[np.ndarray, np.ndarray]:
    ref = np.asarray(reference, dtype=np.float64)
    est = np.asarray(estimate, dtype=np.float64)
    if ref.shape != est.shape or ref.ndim != 1:
        raise ValueError(f"reference and estimate must be equal-length 1-D signals, got {ref.shape} and {est.shape}")
    return ref, est


def ssnr(reference, estimate) -> float:
    """Segmental SNR in dB: per-segment ratios clamped to [-10, 35], silent segments skipped."""
    ref, est = _equal_lengths(reference, estimate)
    if ref.size < SEGMENT:
        raise ValueError(f"signals of {ref.size} samples are shorter than one {SEGMENT}-sample segment")
    seg_ref = np.lib.stride_tricks.sliding_window_view(ref, SEGMENT)[::SEGMENT_HOP]
    seg_err = np.lib.stride_tricks.sliding_window_view(ref - est, SEGMENT)[::SEGMENT_HOP]
    signal_energy = np.sum(seg_ref**2, axis=1)
    error_energy = np.sum(seg_err**2, axis=1)
    voiced = signal_energy >= SILENCE_ENERGY
    if not np.any(voiced):
        raise ValueError("every reference segment is silent; SSNR is undefined")
    with np.errstate(divide="ignore"):
        ratio = 10.0 * np.log10(signal_energy[voiced] / error_energy[voiced])
    return float(np.mean(np.clip(ratio, SSNR_FLOOR, SSNR_CEIL)))


def log_spectral_distance(reference, estimate) -> float:
    """Frame-averaged RMS (over bins) of the dB ratio between STFT magnitudes."""
    ref, est = _equal_lengths(reference, estimate)
    s_ref = np.abs(sig.stft(ref))
    s_est = np.abs(sig.stft(est))
    ratio_db = 20.0 * np.log10((s_ref + LSD_EPS) / (s_est + LSD_EPS))
    return float(np.mean(np.sqrt(np.mean(ratio_db**2, axis=1))))


def spectrogram_db(wave_) -> np.ndarray:
    """``20 log10(|STFT| + 1e-8)`` as a ``T x 257`` matrix."""
    return 20.0 * np.log10(np.abs(sig.stft(wave_)) + 1e-8)


def spectrogram_image(db: np.ndarray) -> np.ndarray:
    """8-bit image: rows are frequency (low bins at the bottom), columns are frames.

    Levels are relative to the file maximum and clipped to [-80, 0] dB; a
    matrix with no dynamic range (silence) maps to all zeros.
    """
    rel = np.clip(db - np.max(db), DB_FLOOR, 0.0)
    if np.max(db) - np.min(db) == 0.0:
        rel = np.full_like(db, DB_FLOOR)
    levels = np.round((rel - DB_FLOOR) / -DB_FLOOR * 255.0).astype(np.uint8)
    return levels.T[::-1]


def write_pgm(path: str | os.PathLike, image: np.ndarray) -> None:
    height, width = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM file")
    width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    return np.frombuffer(parts[4][: width * height], dtype=np.uint8).reshape(height, width)


def export_spectrogram(wave_, out_path: str | os.PathLike) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` (full-precision dB matrix, one frame per row) and ``<stem>.pgm``."""
    out = Path(out_path)
    stem = out.with_suffix("") if out.suffix in (".csv", ".pgm") else out
    csv_path, pgm_path = stem.with_suffix(".csv"), stem.with_suffix(".pgm")
    db = spectrogram_db(wave_)
    try:
        np.savetxt(csv_path, db, fmt="%.17g", delimiter=",")
        write_pgm(pgm_path, spectrogram_image(db))
    except OSError as exc:
        raise OSError(f"cannot write spectrogram to {stem}: {exc.strerror}") from exc
    return csv_path, pgm_path


def enhance_waveform(generator, noisy, exponent: float) -> np.ndarray:
    """Noisy waveform to enhanced waveform through the magnitude generator, reusing the noisy phase.

    The output has ``istft(stft(noisy))`` length, is free of NaNs and is clipped to [-1, 1].
    """
    mag, phase = sig.compress(sig.stft(noisy), exponent)
    with no_grad():
        est = generator(Tensor(mag.values[None, :, :, None].astype(np.float32))).data[0, :, :, 0]
    est = np.nan_to_num(np.maximum(est.astype(np.float64), 0.0), nan=0.0, posinf=0.0)
    wave_ = sig.istft(sig.reconstruct(sig.CompressedMagnitude(est, exponent), phase))
    return np.clip(np.nan_to_num(wave_), -1.0, 1.0)


@dataclass
class MetricReport:
    file_ids: list[str] = field(default_factory=list)
    ssnr_db: list[float] = field(default_factory=list)
    lsd_db: list[float] = field(default_factory=list)

    def add(self, file_id: str, reference, estimate) -> None:
        ref, est = _equal_lengths(reference, estimate)
        self.file_ids.append(file_id)
        self.ssnr_db.append(ssnr(ref, est))
        self.lsd_db.append(log_spectral_distance(ref, est))

    @property
    def mean_ssnr(self) -> float:
        return float(np.mean(self.ssnr_db))

    @property
    def mean_lsd(self) -> float:
        return float(np.mean(self.lsd_db))

    def sorted(self) -> "MetricReport":
        order = sorted(range(len(self.file_ids)), key=self.file_ids.__getitem__)
        return MetricReport(
            [self.file_ids[i] for i in order], [self.ssnr_db[i] for i in order], [self.lsd_db[i] for i in order]
        )

    def write_csv(self, path: str | os.PathLike, label: str = "") -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["file_id", "ssnr_db", "lsd_db"])
            for row in zip(self.file_ids, self.ssnr_db, self.lsd_db):
                writer.writerow([row[0], f"{row[1]:.6f}", f"{row[2]:.6f}"])
            writer.writerow([f"MEAN{'_' + label if label else ''}", f"{self.mean_ssnr:.6f}", f"{self.mean_lsd:.6f}"])


def evaluate_pairs(pairs, generator=None, exponent: float = 0.5) -> dict[str, MetricReport]:
    """Score noisy and (if a generator is given) enhanced audio against clean references.

    ``pairs`` yields ``(file_id, clean_wave, noisy_wave)``. References are
    truncated to the STFT-covered length so every signal compares equal spans.
    """
    noisy_report, enhanced_report = MetricReport(), MetricReport()
    for file_id, clean, noisy in pairs:
        n = (sig.frame_count(len(noisy)) - 1) * sig.HOP + sig.N_FFT
        clean, noisy = np.asarray(clean)[:n], np.asarray(noisy)[:n]
        noisy_report.add(file_id, clean, noisy)
        if generator is not None:
            enhanced_report.add(file_id, clean, enhance_waveform(generator, noisy, exponent))
    out = {"noisy": noisy_report.sorted()}
    if generator is not None:
        out["enhanced"] = enhanced_report.sorted()
    return out
