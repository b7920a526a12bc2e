"""Timestep or window sweep: mean macro F1 over seeds for each setting.

    python scripts/sweep.py --kind window --corpus /tmp/corpus --seeds 0 1 2
    python scripts/sweep.py --kind timestep --gen temporal_mode=short_span --corpus /tmp/short
"""
import argparse
import dataclasses
import json
import typing

import numpy as np

from moodseq.experiment import RunConfig, coerce, open_corpus
from moodseq.synth import GeneratorConfig

from end_to_end import ensure_corpus, run

SETTINGS = {"timestep": (16, 32, 64), "window": (16, 32, 64, 128)}
MODELS = {"timestep": "bilstm_tcnn", "window": "text_bilstm_attn"}


def sweep(kind, corpus_dir, seeds, epochs=50, model=None, per_subject=None, out="runs/sweep"):
    """Returns {setting: [f1 per seed]}.

    ``per_subject`` maps a setting to the training windows drawn per subject per
    epoch (None = all windows).
    """
    base = RunConfig(corpus=str(corpus_dir), model=model or MODELS[kind], epochs=epochs)
    corpus = open_corpus(base)
    scores = {}
    for value in SETTINGS[kind]:
        cap = per_subject(value) if per_subject else base.windows_per_subject
        for seed in seeds:
            cfg = dataclasses.replace(base, seed=seed, windows_per_subject=cap,
                                      out=f"{out}/{kind}{value}_s{seed}", **{kind: value})
            r = run(cfg, corpus)
            scores.setdefault(value, []).append(r["sequence_f1"])
            print(json.dumps({kind: value, **r}), flush=True)
    return scores


def frame_budget(frames: int):
    """Training windows per subject such that every timestep sees ~``frames`` frames per subject."""
    return lambda ts: max(1, frames // ts)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--kind", choices=list(SETTINGS), required=True)
    ap.add_argument("--corpus", required=True)
    ap.add_argument("--gen", nargs="*", default=[], help="generator overrides key=value")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--frames", type=int, default=None,
                    help="timestep sweep: frames per subject per epoch (default: the RunConfig cap)")
    ap.add_argument("--out", default="runs/sweep")
    args = ap.parse_args()
    types = typing.get_type_hints(GeneratorConfig)
    overrides = dict(kv.split("=", 1) for kv in args.gen)
    gen = GeneratorConfig(**{k: coerce(k, v, types) for k, v in overrides.items()})
    ensure_corpus(args.corpus, gen)
    per = frame_budget(args.frames) if args.frames else None
    scores = sweep(args.kind, args.corpus, args.seeds, args.epochs, per_subject=per, out=args.out)
    for value, f1s in scores.items():
        print(f"{args.kind}={value}: mean F1 {np.mean(f1s):.4f} over {len(f1s)} seeds")


if __name__ == "__main__":
    main()
