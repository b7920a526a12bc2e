"""moodseq command line: gen-data, train, eval, stats, predict.

Exit codes: 0 success, 2 configuration error, 3 data / file format error.
Log level comes from the MOODSEQ_LOG environment variable (default WARNING).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import typing
from pathlib import Path

from . import checkpoint as ckpt
from .audio import CovarepFormatError
from .datasets import CorpusError
from .experiment import (RunConfig, evaluate, load_model, open_corpus, predict_subject,
                         read_config_file, run_stats, train_to_dir, write_eval_outputs)
from .layers import ConfigError
from .models import CLI_MODELS, SEVERITY_NAMES
from .synth import GeneratorConfig, generate
from .text import EmbeddingFormatError, TranscriptError

log = logging.getLogger("moodseq")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
DATA_ERRORS = (CorpusError, CovarepFormatError, TranscriptError, EmbeddingFormatError,
               ckpt.CheckpointError, FileNotFoundError, IsADirectoryError)

_DEFAULTS = RunConfig()


def _common(p: argparse.ArgumentParser, *names: str) -> None:
    d = _DEFAULTS
    spec = {
        "corpus": dict(help=f"corpus directory (default: {d.corpus})"),
        "embeddings": dict(help="embedding file (default: the one under <corpus>/embeddings)"),
        "checkpoint": dict(help="checkpoint path (train default: <out>/model.mseq)"),
        "model": dict(choices=list(CLI_MODELS), help=f"model (default: {d.model})"),
        "encoder": dict(choices=["uni", "bi"], help=f"text encoder inside fused models (default: {d.encoder})"),
        "timestep": dict(type=int, choices=[16, 32, 64], help=f"audio frames per window (default: {d.timestep})"),
        "window": dict(type=int, choices=[16, 32, 64, 128], help=f"text tokens per window (default: {d.window})"),
        "stopwords": dict(choices=["keep", "remove"], help=f"stopword handling (default: {d.stopwords})"),
        "seed": dict(type=int, help=f"random seed (default: {d.seed})"),
        "epochs": dict(type=int, help=f"maximum epochs (default: {d.epochs})"),
        "batch": dict(type=int, help=f"batch size (default: {d.batch})"),
        "balance": dict(choices=["on", "off"], help=f"oversample the evaluation set (default: {d.balance})"),
        "out": dict(help=f"output directory (default: {d.out})"),
        "threads": dict(type=int, help=f"worker threads for per-subject file parsing (default: {d.threads})"),
        "partition": dict(choices=["train", "dev", "test"], help=f"partition to evaluate (default: {d.partition})"),
        "subject": dict(help="subject id to score"),
    }
    for name in names:
        p.add_argument(f"--{name}", dest=name, default=None, **spec[name])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moodseq", description="Depression-severity sequence models on COVAREP audio and transcripts.",
        epilog="Every RunConfig key may also be set in a --config file of key=value lines; "
               "flags override the file. Extra keys: " + ", ".join(
                   f"{f.name}={f.default}" for f in dataclasses.fields(RunConfig)
                   if f.name not in ("corpus", "embeddings", "checkpoint", "model", "encoder", "timestep",
                                     "window", "stopwords", "seed", "epochs", "batch", "balance", "out",
                                     "threads", "partition", "subject")))
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic corpus",
                       description="Keys of the --config file are generator settings: " + ", ".join(
                           f"{f.name}" for f in dataclasses.fields(GeneratorConfig) if f.name != "counts"))
    g.add_argument("--config", help="key=value generator config file")
    g.add_argument("--out", default=None, help="output directory (default: corpus)")
    g.add_argument("--seed", type=int, default=None, help="generator seed (default: 7)")
    g.add_argument("--threads", type=int, default=None, help="accepted for symmetry; generation is sequential")

    t = sub.add_parser("train", help="train a model and write checkpoint + history.csv")
    t.add_argument("--config", help="key=value config file")
    _common(t, "corpus", "embeddings", "checkpoint", "model", "encoder", "timestep", "window", "stopwords",
            "seed", "epochs", "batch", "out", "threads")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a partition")
    e.add_argument("--config", help="key=value config file")
    _common(e, "corpus", "checkpoint", "seed", "batch", "balance", "out", "threads", "partition")

    s = sub.add_parser("stats", help="group statistics and t-tests")
    s.add_argument("--config", help="key=value config file")
    _common(s, "corpus", "out", "threads")

    pr = sub.add_parser("predict", help="score one subject with a checkpoint")
    pr.add_argument("--config", help="key=value config file")
    _common(pr, "corpus", "checkpoint", "subject", "seed", "threads")
    return parser


def run_config(args: argparse.Namespace) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig(**values).validate()


_GEN_TYPES = {k: v for k, v in typing.get_type_hints(GeneratorConfig).items() if k != "counts"}


def generator_config(args: argparse.Namespace) -> tuple[GeneratorConfig, Path]:
    values = read_config_file(args.config, _GEN_TYPES | {"out": str}) if args.config else {}
    out = Path(args.out or values.pop("out", "corpus"))
    values.pop("out", None)
    if args.seed is not None:
        values["seed"] = args.seed
    cfg = GeneratorConfig(**values)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg, out


def cmd_gen_data(args) -> int:
    cfg, out = generator_config(args)
    generate(cfg, out)
    print(f"wrote {cfg.n_subjects} subjects to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = run_config(args)
    path = train_to_dir(cfg)
    print(f"checkpoint: {path}")
    print(f"history: {Path(cfg.out) / 'history.csv'}")
    return EXIT_OK


def _require_checkpoint(cfg: RunConfig) -> Path:
    path = Path(cfg.checkpoint) if cfg.checkpoint else Path(cfg.out) / "model.mseq"
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return path


def cmd_eval(args) -> int:
    cfg = run_config(args)
    loaded = load_model(_require_checkpoint(cfg))
    res = evaluate(cfg, loaded)
    paths = write_eval_outputs(res, cfg.out)
    print(paths["report"].read_text(), end="")
    return EXIT_OK


def cmd_stats(args) -> int:
    cfg = run_config(args)
    rep = run_stats(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    text = rep.table() + "\n"
    (out / "stats.txt").write_text(text)
    rep.histograms_to_csv(out / "histograms.csv")
    print(text, end="")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = run_config(args)
    if not cfg.subject:
        raise ConfigError("predict needs --subject")
    loaded = load_model(_require_checkpoint(cfg))
    corpus = open_corpus(dataclasses.replace(cfg, stopwords=loaded.meta.get("stopwords", cfg.stopwords)))
    corpus.subject(cfg.subject)
    pred = predict_subject(loaded, corpus, cfg.subject, cfg.seed)
    print(f"subject {pred.subject_id}: {len(pred.window_preds)} windows")
    print("window predictions: " + " ".join(str(p) for p in pred.window_preds))
    print("tally: " + ", ".join(f"{SEVERITY_NAMES[c]}={n}" for c, n in pred.tally.items()))
    print(f"voted severity: {SEVERITY_NAMES[pred.voted]} ({pred.voted})")
    for name, w in pred.attention.items():
        # weights of the last scored batch, one row per window
        print(f"{name} attention: " + json.dumps([[round(float(v), 4) for v in row] for row in w.reshape(len(w), -1)]))
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "stats": cmd_stats,
            "predict": cmd_predict}


def main(argv=None) -> int:
    level = os.environ.get("MOODSEQ_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, KeyError) as exc:
        # remaining value errors come from inconsistent inputs (empty partitions, bad registries)
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
