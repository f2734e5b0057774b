"""Two-cycle adversarial training: corpus handling, batch sampling, schedule and loop."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import signal as sig
from .losses import (
    LossBreakdown,
    cycle_loss,
    identity_loss,
    multiscale_discriminator_loss,
    multiscale_generator_loss,
    total_generator_loss,
)
from .manifest import Manifest, read_manifest
from .models import Generator, MultiScaleDiscriminator
from .numerics import Adam, Module, Tensor, load_checkpoint, no_grad, save_checkpoint

log = logging.getLogger(__name__)

MODES = ("non_parallel", "parallel")


@dataclass
class TrainingConfig:
    compression_exponent: float = 0.5
    crop_frames: int = 108
    batch: int = 4
    lr_g: float = 2e-4
    lr_d: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    cycle_weight: float = 5.0
    identity_weight: float = 10.0
    id_epochs: int = 20
    decay_start_epoch: int = 50
    total_epochs: int = 100
    mode: str = "non_parallel"
    compressed_input: bool = True
    use_atab: bool = True
    use_afab: bool = True
    use_aha: bool = True
    channels: int = 64
    n_atfa: int = 6
    seed: int = 0
    steps_per_epoch: int = 0  # 0: one pass over the noisy utterances per epoch
    max_steps: int = 0  # 0: no cap
    checkpoint_every: int = 0  # 0: only at the end
    manifest: str = ""
    holdout: int = 0  # trailing manifest entries kept out of training for evaluation
    out_dir: str = "run"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.compression_exponent <= 1.0:
            raise ValueError(f"compression_exponent must lie in (0, 1], got {self.compression_exponent}")
        if self.crop_frames < 1 or self.batch < 1:
            raise ValueError("crop_frames and batch must be at least 1")
        if not self.id_epochs <= self.decay_start_epoch <= self.total_epochs:
            raise ValueError(
                "need id_epochs <= decay_start_epoch <= total_epochs, got "
                f"{self.id_epochs}, {self.decay_start_epoch}, {self.total_epochs}"
            )
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.holdout < 0:
            raise ValueError(f"holdout must be non-negative, got {self.holdout}")
        if self.channels % 8:
            raise ValueError(f"channels must be divisible by 8, got {self.channels}")

    @property
    def feature_exponent(self) -> float:
        """Exponent actually applied to magnitudes (1.0 when compression is switched off)."""
        return self.compression_exponent if self.compressed_input else 1.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "TrainingConfig":
        return cls.from_dict(parse_config_text(Path(path).read_text()))

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"


def parse_config_text(text: str, schema=None) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment.

    Values are typed from the fields of ``schema`` (a dataclass, by default
    :class:`TrainingConfig`).
    """
    types = {f.name: f.type for f in fields(schema or TrainingConfig)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        kind = types[key]
        if kind in ("bool", bool):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"config line {lineno}: {key} expects a boolean, got {value!r}")
            out[key] = value.lower() in ("true", "1", "yes")
        elif kind in ("int", int):
            out[key] = int(value)
        elif kind in ("float", float):
            out[key] = float(value)
        else:
            out[key] = value
    return out


# -- corpus ---------------------------------------------------------------------

@dataclass
class Utterance:
    utt_id: str
    features: np.ndarray  # T x 257 float32 magnitudes (compressed by the corpus exponent)
    source_id: str  # id of the underlying clean utterance


@dataclass
class Corpus:
    noisy: list[Utterance]
    clean: list[Utterance]
    exponent: float
    paired: bool = False
    rejected: list[str] = field(default_factory=list)

    @classmethod
    def from_waveforms(
        cls,
        items: list[tuple[str, np.ndarray | None, np.ndarray | None]],
        exponent: float,
        crop_frames: int = 108,
    ) -> "Corpus":
        """Build from ``(utt_id, clean_wave, noisy_wave)``; either wave may be None."""
        noisy, clean, rejected = [], [], []
        paired = True
        for utt_id, clean_wave, noisy_wave in items:
            for wave_, bucket in ((noisy_wave, noisy), (clean_wave, clean)):
                if wave_ is None:
                    continue
                if len(wave_) < sig.N_FFT or sig.frame_count(len(wave_)) < crop_frames:
                    log.warning("rejecting %s: fewer than %d frames", utt_id, crop_frames)
                    rejected.append(utt_id)
                    continue
                mag, _ = sig.compress(sig.stft(wave_), exponent)
                bucket.append(Utterance(utt_id, mag.values.astype(np.float32), utt_id))
            if clean_wave is None or noisy_wave is None:
                paired = False
        if paired:
            clean_ids = {u.utt_id for u in clean}
            paired = all(u.utt_id in clean_ids for u in noisy)
        return cls(noisy, clean, exponent, paired, sorted(set(rejected)))

    @classmethod
    def from_manifest(cls, manifest, exponent: float, crop_frames: int = 108) -> "Corpus":
        """Load every WAV named by a :class:`Manifest` (or a manifest path)."""
        if not isinstance(manifest, Manifest):
            manifest = read_manifest(manifest)
        items = []
        for e in manifest.entries:
            clean = sig.read_wav(e.clean) if e.clean else None
            noisy = sig.read_wav(e.noisy) if e.noisy else None
            items.append((e.utt_id, clean, noisy))
        return cls.from_waveforms(items, exponent, crop_frames)


@dataclass
class Batch:
    noisy: np.ndarray  # B x crop x 257 x 1
    clean: np.ndarray
    noisy_ids: list[str]
    clean_ids: list[str]
    noisy_offsets: list[int]
    clean_offsets: list[int]


def _crop(utt: Utterance, crop: int, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    offset = int(rng.integers(utt.features.shape[0] - crop + 1))
    return utt.features[offset : offset + crop], offset


def sample_nonparallel_batch(corpus: Corpus, rng: np.random.Generator, batch: int, crop: int) -> Batch:
    """Independent random crops: noisy from one utterance, clean from a different one where possible."""
    if not corpus.noisy or not corpus.clean:
        raise ValueError("non-parallel sampling needs at least one noisy and one clean utterance")
    noisy, clean, nid, cid, noff, coff = [], [], [], [], [], []
    for _ in range(batch):
        n_utt = corpus.noisy[int(rng.integers(len(corpus.noisy)))]
        crop_n, off_n = _crop(n_utt, crop, rng)
        candidates = [u for u in corpus.clean if u.source_id != n_utt.source_id] or corpus.clean
        c_utt = candidates[int(rng.integers(len(candidates)))]
        crop_c, off_c = _crop(c_utt, crop, rng)
        noisy.append(crop_n)
        clean.append(crop_c)
        nid.append(n_utt.utt_id)
        cid.append(c_utt.utt_id)
        noff.append(off_n)
        coff.append(off_c)
    return Batch(np.stack(noisy)[..., None], np.stack(clean)[..., None], nid, cid, noff, coff)


def sample_parallel_batch(corpus: Corpus, rng: np.random.Generator, batch: int, crop: int) -> Batch:
    """Aligned crops: same utterance and same offset on both sides."""
    if not corpus.paired:
        raise ValueError("parallel sampling needs a corpus with paired clean/noisy utterances")
    clean_by_id = {u.utt_id: u for u in corpus.clean}
    noisy, clean, ids, offs = [], [], [], []
    for _ in range(batch):
        n_utt = corpus.noisy[int(rng.integers(len(corpus.noisy)))]
        c_utt = clean_by_id[n_utt.utt_id]
        frames = min(n_utt.features.shape[0], c_utt.features.shape[0])
        offset = int(rng.integers(frames - crop + 1))
        noisy.append(n_utt.features[offset : offset + crop])
        clean.append(c_utt.features[offset : offset + crop])
        ids.append(n_utt.utt_id)
        offs.append(offset)
    return Batch(np.stack(noisy)[..., None], np.stack(clean)[..., None], ids, list(ids), offs, list(offs))


def learning_rate(base: float, epoch: int, cfg: TrainingConfig) -> float:
    """Constant through ``decay_start_epoch``, then linear decay reaching zero at ``total_epochs``."""
    if not 1 <= epoch <= cfg.total_epochs:
        raise ValueError(f"epoch {epoch} outside 1..{cfg.total_epochs}")
    if epoch <= cfg.decay_start_epoch:
        return base
    return base * (cfg.total_epochs - epoch) / (cfg.total_epochs - cfg.decay_start_epoch)


# -- models and optimizers ------------------------------------------------------

class CycleGAN(Module):
    """Both generators and both discriminators."""

    def __init__(self, cfg: TrainingConfig):
        rng = np.random.default_rng(cfg.seed)
        kw = dict(channels=cfg.channels, n_atfa=cfg.n_atfa, use_atab=cfg.use_atab, use_afab=cfg.use_afab, use_aha=cfg.use_aha)
        self.gen_xy = Generator(rng=rng, **kw)
        self.gen_yx = Generator(rng=rng, **kw)
        self.disc_x = MultiScaleDiscriminator(rng)
        self.disc_y = MultiScaleDiscriminator(rng)


class Optimizers:
    def __init__(self, models: CycleGAN, cfg: TrainingConfig):
        betas = (cfg.beta1, cfg.beta2)
        gen_params = list(models.gen_xy.named_parameters("gen_xy.")) + list(models.gen_yx.named_parameters("gen_yx."))
        self.gen = Adam(gen_params, cfg.lr_g, betas)
        self.disc_x = Adam(models.disc_x.named_parameters("disc_x."), cfg.lr_d, betas)
        self.disc_y = Adam(models.disc_y.named_parameters("disc_y."), cfg.lr_d, betas)

    def items(self):
        return (("opt_gen", self.gen), ("opt_disc_x", self.disc_x), ("opt_disc_y", self.disc_y))


class NonFiniteLoss(RuntimeError):
    pass


def _finite(name: str, value: Tensor) -> float:
    v = float(value.item())
    if not math.isfinite(v):
        raise NonFiniteLoss(f"non-finite {name} loss ({v})")
    return v


def train_step(models: CycleGAN, batch: Batch, cfg: TrainingConfig, opts: Optimizers, epoch: int) -> LossBreakdown:
    """Update the clean-domain critic, then the noisy-domain critic, then both generators jointly."""
    noisy = Tensor(batch.noisy)
    clean = Tensor(batch.clean)
    lr_g = learning_rate(cfg.lr_g, epoch, cfg)
    lr_d = learning_rate(cfg.lr_d, epoch, cfg)
    to_clean, to_noisy = models.gen_xy, models.gen_yx
    critic_noisy, critic_clean = models.disc_x, models.disc_y

    models.zero_grad()
    fake_clean = to_clean(noisy)
    fake_noisy = to_noisy(clean)

    loss_critic_clean = multiscale_discriminator_loss(critic_clean(clean), critic_clean(fake_clean.detach()))
    d_y = _finite("rals_d_y", loss_critic_clean)
    loss_critic_clean.backward()
    opts.disc_y.step(lr_d)

    loss_critic_noisy = multiscale_discriminator_loss(critic_noisy(noisy), critic_noisy(fake_noisy.detach()))
    d_x = _finite("rals_d_x", loss_critic_noisy)
    loss_critic_noisy.backward()
    opts.disc_x.step(lr_d)

    # backward must run inside the frozen block: leaves are skipped based on
    # their flag at backward time, so leaving early would leak generator
    # gradients into discriminator biases and slopes
    with critic_noisy.frozen(), critic_clean.frozen():
        adv_xy = multiscale_generator_loss(critic_clean(clean), critic_clean(fake_clean))
        adv_yx = multiscale_generator_loss(critic_noisy(noisy), critic_noisy(fake_noisy))
        cyc = cycle_loss(noisy, to_noisy(fake_clean), clean, to_clean(fake_noisy))
        identity_active = epoch <= cfg.id_epochs
        if identity_active:
            idt = identity_loss(noisy, to_noisy(noisy), clean, to_clean(clean))
        else:
            with no_grad():
                idt = identity_loss(noisy, to_noisy(noisy), clean, to_clean(clean))
        total = total_generator_loss(adv_xy, adv_yx, cyc, idt, cfg.cycle_weight, cfg.identity_weight, identity_active)
        values = {
            "rals_g_xy": _finite("rals_g_xy", adv_xy),
            "rals_g_yx": _finite("rals_g_yx", adv_yx),
            "cycle": _finite("cycle", cyc),
            "identity": _finite("identity", idt),
        }
        total_v = _finite("total_g", total)
        total.backward()
    opts.gen.step(lr_g)
    return LossBreakdown(rals_d_x=d_x, rals_d_y=d_y, total_g=total_v, **values)


# -- training loop --------------------------------------------------------------

LOG_FIELDS = ["step", "epoch", "lr_g", "lr_d"] + LossBreakdown.field_names()


@dataclass
class TrainState:
    models: CycleGAN
    opts: Optimizers
    rng: np.random.Generator
    step: int = 0


def steps_per_epoch(corpus: Corpus, cfg: TrainingConfig) -> int:
    if cfg.steps_per_epoch > 0:
        return cfg.steps_per_epoch
    return max(1, len(corpus.noisy) // cfg.batch)


def total_steps(corpus: Corpus, cfg: TrainingConfig) -> int:
    n = cfg.total_epochs * steps_per_epoch(corpus, cfg)
    return min(n, cfg.max_steps) if cfg.max_steps > 0 else n


def init_state(cfg: TrainingConfig) -> TrainState:
    models = CycleGAN(cfg)
    return TrainState(models, Optimizers(models, cfg), np.random.default_rng(cfg.seed + 1))


def save_state(path: str | os.PathLike, state: TrainState, cfg: TrainingConfig) -> None:
    arrays = dict(state.models.state_arrays())
    meta = {"config": cfg.to_dict(), "step": state.step, "rng": state.rng.bit_generator.state, "adam_t": {}}
    for name, opt in state.opts.items():
        arrays.update(opt.state_arrays(name))
        meta["adam_t"][name] = opt.state.t
    save_checkpoint(path, arrays, meta)


def load_state(path: str | os.PathLike) -> tuple[TrainState, TrainingConfig]:
    arrays, meta = load_checkpoint(path)
    cfg = TrainingConfig.from_dict(meta["config"])
    state = init_state(cfg)
    state.models.load_state_arrays(arrays)
    for name, opt in state.opts.items():
        opt.load_state_arrays(arrays, name, meta["adam_t"][name])
    state.rng.bit_generator.state = meta["rng"]
    state.step = int(meta["step"])
    return state, cfg


def load_generator(path: str | os.PathLike) -> tuple[Generator, TrainingConfig]:
    """Rebuild the noisy-to-clean generator recorded in a checkpoint."""
    state, cfg = load_state(path)
    return state.models.gen_xy, cfg


def sample_batch(corpus: Corpus, rng: np.random.Generator, cfg: TrainingConfig) -> Batch:
    if cfg.mode == "parallel":
        return sample_parallel_batch(corpus, rng, cfg.batch, cfg.crop_frames)
    return sample_nonparallel_batch(corpus, rng, cfg.batch, cfg.crop_frames)


def train(
    corpus: Corpus,
    cfg: TrainingConfig,
    out_dir: str | os.PathLike | None = None,
    state: TrainState | None = None,
    stop_after: int | None = None,
    callback: Callable[[int, LossBreakdown], None] | None = None,
) -> tuple[TrainState, list[dict]]:
    """Run (or resume) training; returns the final state and one log row per step.

    With ``out_dir`` set, rows are appended to ``train_log.csv`` and
    checkpoints go to ``checkpoint_<step>.ckpt`` plus ``final.ckpt``.
    ``stop_after`` ends the run early after that many total steps (used
    for resume checks).
    """
    if abs(corpus.exponent - cfg.feature_exponent) > 1e-12:
        raise ValueError(f"corpus features use exponent={corpus.exponent}, config expects {cfg.feature_exponent}")
    state = state if state is not None else init_state(cfg)
    spe = steps_per_epoch(corpus, cfg)
    n_total = total_steps(corpus, cfg)
    if stop_after is not None:
        n_total = min(n_total, stop_after)
    rows: list[dict] = []
    writer = None
    fh = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "train_log.csv"
        new_file = state.step == 0 or not log_path.exists()
        fh = open(log_path, "w" if new_file else "a", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        if new_file:
            writer.writeheader()
    try:
        while state.step < n_total:
            epoch = state.step // spe + 1
            batch = sample_batch(corpus, state.rng, cfg)
            losses = train_step(state.models, batch, cfg, state.opts, epoch)
            row = {
                "step": state.step,
                "epoch": epoch,
                "lr_g": learning_rate(cfg.lr_g, epoch, cfg),
                "lr_d": learning_rate(cfg.lr_d, epoch, cfg),
                **losses.as_dict(),
            }
            rows.append(row)
            state.step += 1
            if writer is not None:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
                fh.flush()
                if cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                    save_state(Path(out_dir) / f"checkpoint_{state.step}.ckpt", state, cfg)
            if callback is not None:
                callback(state.step, losses)
        if out_dir is not None:
            save_state(Path(out_dir) / "final.ckpt", state, cfg)
    finally:
        if fh is not None:
            fh.close()
    return state, rows
