"""Command-line entry points.

Every command exits with status 0 on success and prints a one-line reason to
stderr with status 1 on failure. ``AIA_CYCLEGAN_THREADS`` caps the BLAS
thread pool (default 1, which keeps results bit-reproducible).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import evalkit, gradsuite
from . import signal as sig
from .manifest import read_manifest, synth_dataset, write_manifest
from .training import Corpus, TrainingConfig, load_generator, parse_config_text, train

THREADS_ENV = "AIA_CYCLEGAN_THREADS"
log = logging.getLogger("aia_cyclegan")


class CommandError(RuntimeError):
    pass


@dataclass
class SynthConfig:
    """Keys accepted in the optional ``synth-data --config`` file."""

    n_utterances: int = 200
    duration_s: float = 0.9
    seed: int = 0


def cmd_synth(args) -> None:
    if not args.out:
        raise CommandError("synth-data needs --out")
    settings = SynthConfig()
    if args.config:
        settings = SynthConfig(**parse_config_text(Path(args.config).read_text(), SynthConfig))
    seed = settings.seed if args.seed is None else args.seed
    m = synth_dataset(args.out, settings.n_utterances, settings.duration_s, seed)
    print(f"wrote {len(m)} utterances and {Path(args.out) / 'manifest.csv'}")


def cmd_train(args) -> None:
    if not args.config:
        raise CommandError("train needs --config")
    cfg = TrainingConfig.from_file(args.config)
    overrides = {}
    if args.manifest:
        overrides["manifest"] = args.manifest
    if args.out:
        overrides["out_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = TrainingConfig.from_dict({**cfg.to_dict(), **overrides})
    if not cfg.manifest:
        raise CommandError("no manifest given (config key 'manifest' or --manifest)")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = read_manifest(cfg.manifest)
    if cfg.holdout:
        manifest, held = manifest.split(cfg.holdout)
        write_manifest(out / "holdout_manifest.csv", held)
    if cfg.mode == "parallel" and not manifest.paired:
        raise CommandError("parallel mode needs every manifest entry to have both clean and noisy files")
    (out / "config.txt").write_text(cfg.to_text())
    corpus = Corpus.from_manifest(manifest, cfg.feature_exponent, cfg.crop_frames)

    def report(step, losses):
        if step % 50 == 0:
            log.info("step %d cycle %.4f total_g %.4f", step, losses.cycle, losses.total_g)

    _, rows = train(corpus, cfg, out, callback=report)
    print(f"trained {len(rows)} steps; checkpoint {out / 'final.ckpt'}")


def _load_model(path):
    if not path:
        raise CommandError("missing --model")
    return load_generator(path)


def cmd_enhance(args) -> None:
    if not args.inp or not args.out:
        raise CommandError("enhance needs --in and --out")
    generator, cfg = _load_model(args.model)
    noisy = sig.read_wav(args.inp)
    sig.write_wav(args.out, evalkit.enhance_waveform(generator, noisy, cfg.feature_exponent))
    print(f"wrote {args.out}")


def cmd_evaluate(args) -> None:
    if not args.manifest:
        raise CommandError("evaluate needs --manifest")
    manifest = read_manifest(args.manifest)
    if not manifest.paired:
        raise CommandError("evaluation needs clean and noisy files for every manifest entry")
    generator, cfg = _load_model(args.model) if args.model else (None, None)
    exponent = cfg.feature_exponent if cfg is not None else 1.0
    pairs = ((e.utt_id, sig.read_wav(e.clean), sig.read_wav(e.noisy)) for e in manifest.entries)
    reports = evalkit.evaluate_pairs(pairs, generator, exponent)
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for name, report in reports.items():
        print(f"{name}: mean SSNR {report.mean_ssnr:.3f} dB, mean LSD {report.mean_lsd:.3f} dB over {len(report.file_ids)} files")
        if out is not None:
            report.write_csv(out / f"{name}_report.csv", name)


def cmd_gradcheck(args) -> None:
    results = gradsuite.run_suite(seed=args.seed or 0)
    failed = []
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:20s} max rel err {r.error:.3e}  {status}")
        if not r.passed:
            failed.append(r.name)
    if failed:
        raise CommandError(f"gradient check failed for: {', '.join(failed)}")


def cmd_export_spec(args) -> None:
    if not args.inp or not args.out:
        raise CommandError("export-spec needs --in and --out")
    csv_path, pgm_path = evalkit.export_spectrogram(sig.read_wav(args.inp), args.out)
    print(f"wrote {csv_path} and {pgm_path}")


COMMANDS = {
    "synth-data": cmd_synth,
    "train": cmd_train,
    "enhance": cmd_enhance,
    "evaluate": cmd_evaluate,
    "grad-check": cmd_gradcheck,
    "export-spec": cmd_export_spec,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aia-cyclegan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--model")
        p.add_argument("--in", dest="inp")
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        p.add_argument("--manifest")
    return parser


def _thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise CommandError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise CommandError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        with threadpool_limits(limits=_thread_count()):
            COMMANDS[args.command](args)
    except (CommandError, ValueError, OSError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
