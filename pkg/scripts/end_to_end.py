"""Generate (if needed), train and evaluate one model on the synthetic corpus.

    python scripts/end_to_end.py --model bilstm_tcnn --seeds 0 1 2 --corpus /tmp/corpus
"""
import argparse
import dataclasses
import json
import time
from pathlib import Path

from moodseq.experiment import RunConfig, evaluate, load_model, open_corpus, train_to_dir
from moodseq.synth import GeneratorConfig, generate


def ensure_corpus(path, cfg=None) -> Path:
    path = Path(path)
    if not (path / "generator.json").is_file():
        generate(cfg or GeneratorConfig(), path)
    return path


def run(cfg: RunConfig, corpus=None) -> dict:
    t0 = time.time()
    corpus = corpus or open_corpus(cfg)
    ckpt = train_to_dir(cfg, corpus)
    res = evaluate(cfg, load_model(ckpt), corpus)
    return {"model": cfg.model, "seed": cfg.seed, "seconds": round(time.time() - t0, 1),
            "sequence_f1": res.sequence.f1, "patient_f1": res.patient.f1,
            "sequence_binary_f1": res.sequence_binary.f1, "patient_binary_f1": res.patient_binary.f1}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--corpus", default="corpus")
    ap.add_argument("--model", default="bilstm_tcnn")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--timestep", type=int, default=16)
    ap.add_argument("--window", type=int, default=64)
    ap.add_argument("--out", default="runs/e2e")
    args = ap.parse_args()
    ensure_corpus(args.corpus)
    base = RunConfig(corpus=args.corpus, model=args.model, epochs=args.epochs,
                     timestep=args.timestep, window=args.window)
    corpus = open_corpus(base)
    for seed in args.seeds:
        cfg = dataclasses.replace(base, seed=seed, out=f"{args.out}/{args.model}_s{seed}")
        print(json.dumps(run(cfg, corpus)), flush=True)


if __name__ == "__main__":
    main()
