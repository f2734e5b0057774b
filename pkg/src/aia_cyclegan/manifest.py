"""Corpus manifests and the synthetic tone-in-noise dataset generator."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

from . import signal as sig

SNR_GRID = (0.0, 5.0, 10.0, 15.0)
MANIFEST_FIELDS = ("utt_id", "clean", "noisy", "snr_db")
MISSING = "NONE"


@dataclass
class ManifestEntry:
    utt_id: str
    clean: Path | None
    noisy: Path | None
    snr_db: float | None


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    root: Path

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def paired(self) -> bool:
        return all(e.clean is not None and e.noisy is not None for e in self.entries)

    def split(self, n_holdout: int) -> tuple["Manifest", "Manifest"]:
        """Last ``n_holdout`` entries form the second manifest."""
        if not 0 <= n_holdout < len(self.entries):
            raise ValueError(f"cannot hold out {n_holdout} of {len(self.entries)} entries")
        cut = len(self.entries) - n_holdout
        return Manifest(self.entries[:cut], self.root), Manifest(self.entries[cut:], self.root)


def read_manifest(path: str | os.PathLike, check_files: bool = True) -> Manifest:
    """Load a manifest CSV; relative wav paths resolve against the manifest's directory."""
    path = Path(path)
    root = path.parent
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: manifest lacks columns {sorted(missing)}")
        for row in reader:
            def resolve(value: str) -> Path | None:
                value = value.strip()
                if value == MISSING or not value:
                    return None
                p = Path(value)
                return p if p.is_absolute() else root / p

            clean, noisy = resolve(row["clean"]), resolve(row["noisy"])
            if clean is None and noisy is None:
                raise ValueError(f"{path}: entry {row['utt_id']} names neither a clean nor a noisy file")
            snr = row["snr_db"].strip()
            entries.append(ManifestEntry(row["utt_id"], clean, noisy, None if snr in (MISSING, "") else float(snr)))
    if check_files:
        for e in entries:
            for p in (e.clean, e.noisy):
                if p is not None:
                    sig.read_wav(p)  # raises on missing or malformed files
    return Manifest(entries, root)


def write_manifest(path: str | os.PathLike, manifest: Manifest) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        for e in manifest.entries:
            def rel(p: Path | None) -> str:
                if p is None:
                    return MISSING
                try:
                    return str(Path(p).relative_to(path.parent))
                except ValueError:
                    return str(p)

            snr = MISSING if e.snr_db is None else f"{e.snr_db:g}"
            writer.writerow([e.utt_id, rel(e.clean), rel(e.noisy), snr])


# -- synthetic data -------------------------------------------------------------

def synth_clean(n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """A few harmonic notes with smooth amplitude envelopes separated by silent gaps."""
    out = np.zeros(n_samples)
    t = np.arange(n_samples) / sig.SAMPLE_RATE
    n_notes = int(rng.integers(2, 5))
    bounds = np.sort(rng.choice(np.arange(1, 20), size=2 * n_notes, replace=False)) / 20.0
    for k in range(n_notes):
        start, stop = (int(b * n_samples) for b in bounds[2 * k : 2 * k + 2])
        if stop - start < 64:
            continue
        f0 = rng.uniform(110.0, 380.0)
        n_harm = int(rng.integers(3, 9))
        tone = np.zeros(stop - start)
        seg_t = t[start:stop]
        vibrato = 1.0 + 0.01 * np.sin(2 * np.pi * rng.uniform(3, 7) * seg_t)
        for h in range(1, n_harm + 1):
            if h * f0 >= 0.45 * sig.SAMPLE_RATE:
                break
            amp = rng.uniform(0.3, 1.0) / h
            tone += amp * np.sin(2 * np.pi * h * f0 * np.cumsum(vibrato) / sig.SAMPLE_RATE + rng.uniform(0, 2 * np.pi))
        env = np.sin(np.linspace(0.0, np.pi, stop - start)) ** rng.uniform(0.5, 2.0)
        out[start:stop] += env * tone * rng.uniform(0.5, 1.0)
    if not np.any(out):
        # every note was too short; fall back to one centred note
        out = np.sin(2 * np.pi * 220.0 * t) * np.hanning(n_samples)
    return 0.5 * out / np.max(np.abs(out))


def synth_noise(n_samples: int, rng: np.random.Generator) -> tuple[np.ndarray, str]:
    """White noise, or white noise through a 4th-order Butterworth low-pass at a random cutoff."""
    white = rng.standard_normal(n_samples)
    if rng.random() < 0.5:
        return white, "white"
    cutoff = rng.uniform(800.0, 4000.0)
    b, a = sps.butter(4, cutoff, btype="low", fs=sig.SAMPLE_RATE)
    return sps.lfilter(b, a, white), "lowpass"


def synth_dataset(out_dir: str | os.PathLike, n_utterances: int = 200, duration_s: float = 0.9, seed: int = 0) -> Manifest:
    """Write clean/noisy WAV pairs plus ``manifest.csv`` under ``out_dir``."""
    if n_utterances < 2:
        raise ValueError(f"need at least 2 utterances, got {n_utterances}")
    if duration_s < 0.9:
        raise ValueError(f"duration must be at least 0.9 s (108 frames), got {duration_s}")
    out = Path(out_dir)
    (out / "clean").mkdir(parents=True, exist_ok=True)
    (out / "noisy").mkdir(parents=True, exist_ok=True)
    n_samples = int(round(duration_s * sig.SAMPLE_RATE))
    rng = np.random.default_rng(seed)
    entries = []
    width = max(3, len(str(n_utterances - 1)))
    for i in range(n_utterances):
        utt_id = f"utt{i:0{width}d}"
        clean = synth_clean(n_samples, rng)
        noise, _ = synth_noise(n_samples, rng)
        snr = float(SNR_GRID[int(rng.integers(len(SNR_GRID)))])
        mixed = sig.mix(clean, noise, snr)
        mixture = mixed.mixture
        clean = clean * mixed.peak_scale  # keep the reference aligned with the scaled mixture
        clean_path = out / "clean" / f"{utt_id}.wav"
        noisy_path = out / "noisy" / f"{utt_id}.wav"
        sig.write_wav(clean_path, clean)
        sig.write_wav(noisy_path, mixture)
        entries.append(ManifestEntry(utt_id, clean_path, noisy_path, snr))
    manifest = Manifest(entries, out)
    write_manifest(out / "manifest.csv", manifest)
    return manifest
