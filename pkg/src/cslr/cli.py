"""Command-line entry point: ``cslr <subcommand> ...``.

Global flags may appear before or after the subcommand.  Results go to stdout
as UTF-8 text or JSON lines.  Any failure prints one JSON line
``{"error": <kind>, "message": <text>}`` on stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

import numpy as np

from . import frames as frame_archive
from . import kvconfig
from .corpus import (ManifestError, SynthConfig, build_vocabulary, compute_stats, generate_synthetic,
                     load_manifest)
from .decode import beam_decode
from .model import ModelConfig
from .nn.checkpoint import CheckpointError
from .nn.functional import ShapeError
from .nn.tape import NonFiniteError
from .objective import CTCInfeasibleError
from .trainer import (PRECISIONS, TrainConfig, TrainingError, evaluate, load_model, prepare_video,
                      run_ablation, train)

EXIT_USAGE = 2
EXIT_FAILURE = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _global_flags(parser: argparse.ArgumentParser, suppress: bool):
    # subcommand copies use SUPPRESS so they never clobber a value given before the subcommand
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    g = parser.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=d(None), help="override the config seed")
    g.add_argument("--precision", choices=sorted(PRECISIONS), default=d(None), help="numeric precision")
    g.add_argument("--beam-width", type=int, default=d(None), help="CTC beam width")
    g.add_argument("--no-temporal-branch", action="store_true", default=d(False), help="drop the temporal branch")
    g.add_argument("--no-frequency-branch", action="store_true", default=d(False),
                   help="drop the spectral branch")
    g.add_argument("--no-vae-t", action="store_true", default=d(False), help="disable the temporal auxiliary loss")
    g.add_argument("--no-vae-f", action="store_true", default=d(False), help="disable the spectral auxiliary loss")
    g.add_argument("-v", "--verbose", action="store_true", default=d(False), help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cslr", description="Continuous sign language recognition toolkit.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        return p

    p = command("stats", "print split statistics for a manifest")
    p.add_argument("manifest")
    p.add_argument("--json", action="store_true", help="emit one JSON object instead of a table")

    p = command("gen-synth", "render a synthetic corpus from a key=value config")
    p.add_argument("config")
    p.add_argument("outdir")

    for name, help_text in (("train", "train a model"), ("ablate", "train and score every ablation row")):
        p = command(name, help_text)
        p.add_argument("manifest")
        p.add_argument("model_cfg")
        p.add_argument("train_cfg")
        p.add_argument("outdir")

    p = command("eval", "score a checkpoint on one split")
    p.add_argument("manifest")
    p.add_argument("split", choices=("train", "dev", "test"))
    p.add_argument("checkpoint")
    p.add_argument("--records", action="store_true", help="also emit one JSON line per sentence")

    p = command("decode", "decode one frame archive")
    p.add_argument("frames")
    p.add_argument("checkpoint")
    return parser


# -- subcommands -------------------------------------------------------------

def _model_overrides(args) -> dict:
    out = {}
    if args.no_temporal_branch:
        out["temporal_branch"] = False
    if args.no_frequency_branch:
        out["frequency_branch"] = False
    return out


def _train_overrides(args) -> dict:
    out = {}
    if args.seed is not None:
        out["seed"] = args.seed
    if args.precision is not None:
        out["precision"] = args.precision
    if args.beam_width is not None:
        out["beam_width"] = args.beam_width
    if args.no_vae_t:
        out["vae_t"] = False
    if args.no_vae_f:
        out["vae_f"] = False
    return out


def cmd_stats(args, out):
    entries = load_manifest(args.manifest)
    train_vocab = build_vocabulary([e for e in entries if e.split == "train"]) if entries else None
    stats = compute_stats(entries, train_vocab)
    if args.json:
        out.write(json.dumps(dataclasses.asdict(stats), ensure_ascii=False) + "\n")
    else:
        out.write(stats.format_table() + "\n")


def cmd_gen_synth(args, out):
    overrides = {"seed": args.seed} if args.seed is not None else {}
    cfg = kvconfig.load(SynthConfig, args.config, **overrides)
    manifest, entries = generate_synthetic(cfg, args.outdir)
    out.write(json.dumps({"manifest": manifest, "entries": len(entries)}) + "\n")


def _load_configs(args):
    mcfg = kvconfig.load(ModelConfig, args.model_cfg, **_model_overrides(args))
    tcfg = kvconfig.load(TrainConfig, args.train_cfg, **_train_overrides(args))
    return mcfg, tcfg


def cmd_train(args, out):
    entries = load_manifest(args.manifest)
    mcfg, tcfg = _load_configs(args)
    result = train(entries, mcfg, tcfg, args.outdir,
                   on_epoch=lambda rec: out.write(rec.to_json() + "\n") or out.flush())
    finite = [m.dev_wer for m in result.metrics if np.isfinite(m.dev_wer)]
    out.write(json.dumps({"best_checkpoint": result.best_checkpoint,
                          "last_checkpoint": result.last_checkpoint,
                          "best_dev_wer": min(finite) if finite else None,
                          "skipped": result.skipped}) + "\n")


def cmd_ablate(args, out):
    entries = load_manifest(args.manifest)
    mcfg, tcfg = _load_configs(args)
    for row in run_ablation(entries, mcfg, tcfg, args.outdir):
        out.write(json.dumps(row) + "\n")


def cmd_eval(args, out):
    entries = load_manifest(args.manifest)
    result = evaluate(entries, args.split, args.checkpoint, args.beam_width or 10, args.precision or "f64")
    if args.records:
        for rec in result.records:
            out.write(rec + "\n")
    out.write(result.summary(args.split) + "\n")


def cmd_decode(args, out):
    model, vocab, _ = load_model(args.checkpoint, args.precision or "f64")
    frames = frame_archive.read_frames(args.frames)
    video = prepare_video(frames, model.cfg, model.dtype.type, "eval")
    width = args.beam_width or 10
    res = beam_decode(model.predict_logits(video), width)
    glosses = vocab.decode(res.glosses)
    out.write(json.dumps({"frames": args.frames, "glosses": "/".join(glosses),
                          "log_score": round(res.log_score, 6), "beam_width": width},
                         ensure_ascii=False) + "\n")


COMMANDS = {"stats": cmd_stats, "gen-synth": cmd_gen_synth, "train": cmd_train,
            "ablate": cmd_ablate, "eval": cmd_eval, "decode": cmd_decode}

# exception type -> error kind reported on stderr
ERROR_KINDS = (
    (UsageError, "usage"),
    (ManifestError, "manifest"),
    (kvconfig.ConfigError, "config"),
    (frame_archive.FrameArchiveError, "frames"),
    (CheckpointError, "checkpoint"),
    (CTCInfeasibleError, "infeasible"),
    (ShapeError, "shape"),
    (NonFiniteError, "non-finite"),
    (TrainingError, "training"),
    (OSError, "io"),
    (ValueError, "value"),
)


def _fail(kind: str, message: str, err) -> int:
    err.write(json.dumps({"error": kind, "message": " ".join(str(message).split())},
                         ensure_ascii=False) + "\n")
    return EXIT_USAGE if kind == "usage" else EXIT_FAILURE


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        return _fail("usage", e, err)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=err)
    if args.beam_width is not None and args.beam_width < 1:
        return _fail("usage", f"--beam-width must be >= 1, got {args.beam_width}", err)
    try:
        COMMANDS[args.command](args, out)
    except tuple(t for t, _ in ERROR_KINDS) as e:
        kind = next(k for t, k in ERROR_KINDS if isinstance(e, t))
        return _fail(kind, e, err)
    return 0


if __name__ == "__main__":
    sys.exit(main())
