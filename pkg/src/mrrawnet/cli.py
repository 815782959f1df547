"""Command line: ``train``, ``eval``, ``verify`` and ``info``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
``MRRW_THREADS`` caps the width of parallel embedding extraction.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .audio import WavStore, write_wav
from .config import RunConfig, load_run_config
from .errors import ConfigError, TrainingDiverged
from .evaluator import all_pair_trials, evaluate, parse_duration, parse_trials, write_trials
from .model import assemble, count_params, embed_waveforms, load_checkpoint, read_checkpoint
from .synth import synth_corpus
from .trainer import train_loop
from .verify import run_suites

logger = logging.getLogger("mrrawnet")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
PROBE_SAMPLES = 48000


class UsageError(Exception):
    pass


def _threads() -> int:
    raw = os.environ.get("MRRW_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"MRRW_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"MRRW_THREADS must be a positive integer, got {raw!r}")
    return n


def _load_config(args) -> RunConfig:
    if args.config is None:
        raise UsageError("--config is required")
    cfg = load_run_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None) is not None:
        cfg.out = str(args.out)
    return cfg


def build_corpora(cfg: RunConfig):
    c = cfg.corpus
    corpus = synth_corpus(c.num_speakers, c.utts_per_speaker, cfg.seed,
                          min_duration=c.min_duration, max_duration=c.max_duration)
    return corpus.split(c.train_per_speaker)


def export_heldout(heldout, out_dir: Path) -> Path:
    """Write held-out utterances as WAV files plus an all-pairs trial list."""
    for utt in heldout.utterances:
        path = out_dir / "audio" / f"{utt.key}.wav"
        path.parent.mkdir(parents=True, exist_ok=True)
        write_wav(path, utt.waveform)
    trials = [t.__class__(t.target, f"audio/{t.enroll}.wav", f"audio/{t.test}.wav")
              for t in all_pair_trials(heldout.utterances)]
    trials_path = out_dir / "trials.txt"
    write_trials(trials_path, trials)
    return trials_path


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if cfg.out is None:
        raise UsageError("no output directory: set `out` in the config or pass --out")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.yaml").write_text(cfg.dump())
    train, heldout = build_corpora(cfg)
    model = assemble(cfg.model, seed=cfg.seed)
    total, _ = count_params(model)
    logger.info("training %s (%d parameters) on %d utterances", cfg.model.variant, total, len(train))
    result = train_loop(model, train, cfg.train, seed=cfg.seed, out_dir=out)
    shutil.copyfile(result.checkpoints[-1], out / "model.mrrw")
    trials_path = export_heldout(heldout, out)
    summary = {"train_accuracy": result.train_accuracy, "steps": len(result.metrics),
               "final_loss": result.metrics[-1]["loss"], "parameters": total,
               "checkpoint": "model.mrrw", "trials": trials_path.name}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"train accuracy {result.train_accuracy:.4f} after {len(result.metrics)} steps")
    print(f"checkpoint {out / 'model.mrrw'}; held-out trials {trials_path}")
    return EXIT_OK


def _parse_durations(text: Optional[str]):
    if text is None:
        return [None, 5.0, 2.0, 1.0]
    try:
        return [parse_duration(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"--durations: {exc}") from None


def _load_model(args):
    if args.checkpoint is None:
        raise UsageError("--checkpoint is required")
    path = Path(args.checkpoint)
    if not path.is_file():
        raise UsageError(f"checkpoint not found: {path}")
    if getattr(args, "config", None) is None:
        return load_checkpoint(path)
    # an explicit config must agree with the checkpoint parameter for parameter
    header, state = read_checkpoint(path)
    model = assemble(load_run_config(args.config).model, seed=0)
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"checkpoint does not match config: {exc}") from None
    model.eval()
    return model, header.get("meta", {})


def cmd_eval(args) -> int:
    durations = _parse_durations(args.durations)
    if args.trials is None:
        raise UsageError("--trials is required")
    trials_path = Path(args.trials)
    if not trials_path.is_file():
        raise UsageError(f"trial list not found: {trials_path}")
    threads = _threads()
    model, _ = _load_model(args)
    trials = parse_trials(trials_path)
    if not trials:
        raise UsageError(f"{trials_path} contains no trials")
    store = WavStore(trials_path.parent)
    missing = sorted({k for t in trials for k in (t.enroll, t.test) if k not in store})
    if missing:
        print(f"error: unknown trial key {missing[0]!r} ({len(missing)} missing)", file=sys.stderr)
        return EXIT_FAILURE
    logger.info("scoring %d trials at %d durations with %d thread(s)",
                len(trials), len(durations), threads)
    report = evaluate(model, trials, store, durations)
    out = Path(args.out) if args.out is not None else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_table())
    (out / "report.jsonl").write_text(report.to_jsonl())
    print(report.to_table(), end="")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_suites(args.level)
    for r in results:
        logger.info("suite %s took %.2fs", r.name, r.seconds)
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} suite(s) failed: {', '.join(failed)}")
        return EXIT_FAILURE
    print(f"all {len(results)} suites passed")
    return EXIT_OK


def cmd_info(args) -> int:
    if args.checkpoint is not None:
        model, meta = _load_model(args)
    elif args.config is not None:
        cfg = _load_config(args)
        model, meta = assemble(cfg.model, seed=cfg.seed), {}
    else:
        raise UsageError("info needs --checkpoint or --config")
    model.eval()
    total, breakdown = count_params(model)
    print("parameters:")
    for name, n in breakdown.items():
        print(f"  {name:<12} {n:>12,d}")
    print(f"  {'total':<12} {total:>12,d}")
    print("config:")
    print("  " + yaml.safe_dump(model.config.to_dict(), sort_keys=True).replace("\n", "\n  ").rstrip())
    if meta:
        print(f"meta: {json.dumps(meta, sort_keys=True)}")
    trace: dict = {}
    embed_waveforms(model, np.zeros((1, 1, PROBE_SAMPLES)), trace)
    print(f"shape trace ({PROBE_SAMPLES} samples):")
    for key in ("o1", "o2", "o3", "o4", "o5", "o6", "o7", "o8", "embedding"):
        print(f"  {key:<10} {tuple(trace[key])}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrrawnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a synthetic corpus from a run config")
    p.add_argument("--config", required=True, help="run config (YAML)")
    p.add_argument("--seed", type=int, help="overrides the config's seed")
    p.add_argument("--out", help="output directory (overrides the config's out)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a trial list at several durations")
    p.add_argument("--checkpoint", required=True, help="model checkpoint (.mrrw)")
    p.add_argument("--trials", required=True,
                   help="lines '<1|0> <enroll.wav> <test.wav>', paths relative to the list")
    p.add_argument("--durations", help="comma list, e.g. full,5,2,1 (default)")
    p.add_argument("--config", help="run config the checkpoint must match")
    p.add_argument("--out", help="report directory (default: the checkpoint's)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the built-in invariant suites")
    p.add_argument("level", nargs="?", choices=("fast", "full"), default="fast",
                   help="fast: invariant suites; full: also finite-difference gradients")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("info", help="parameter counts, config and shape trace")
    p.add_argument("--checkpoint", help="summarise a saved model")
    p.add_argument("--config", help="summarise the model a run config would build")
    p.add_argument("--seed", type=int, help="initialisation seed for --config")
    p.set_defaults(func=cmd_info)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the usage message
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(json.dumps(exc.diagnostics, sort_keys=True, default=str), file=sys.stderr)
        return EXIT_FAILURE
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
