"""Shared builders for tests: every model variant with a small float64 batch."""
import numpy as np

import moodseq.tensor as T
from moodseq.gradcheck import check_model
from moodseq.models import AUDIO_VARIANTS, FUSIONS, TEXT_VARIANTS, build_audio_model, build_fused_model, \
    build_text_model
from moodseq.training import cross_entropy

VARIANTS = ([("audio", v) for v in AUDIO_VARIANTS] + [("text", v) for v in TEXT_VARIANTS]
            + [("fused", f) for f in FUSIONS])


def small_embedding(rows=30, seed=5):
    emb = np.random.default_rng(seed).normal(size=(rows, 100))
    emb[0] = 0
    return emb


def build_case(family, variant, seed, batch=2):
    """(model, inputs, labels) with 16-step inputs."""
    rng = np.random.default_rng([seed, 99])
    y = rng.integers(0, 5, size=batch)
    audio = rng.normal(size=(batch, 16, 73))
    text = rng.integers(0, 30, size=(batch, 16))
    if family == "audio":
        return build_audio_model(variant, 16, seed=seed), audio, y
    if family == "text":
        return build_text_model(variant, 16, small_embedding(), seed=seed), text, y
    return build_fused_model("bi", variant, 16, 16, small_embedding(), seed=seed), {"audio": audio, "text": text}, y


def model_gradient_errors(family, variant, seed):
    with T.precision("float64"):
        model, x, y = build_case(family, variant, seed)
        model.train(True)
        return check_model(model, lambda: cross_entropy(model.classify(x), y), seed=seed, group_depth=2)


# criterion id -> (passed, detail); filled by test_acceptance, printed at session end
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(criterion: str, passed: bool, detail: str = "") -> bool:
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")
    return bool(passed)


def _n(*shape):
    return lambda r: [r.normal(size=s) for s in shape]


# every differentiable op: name -> (fn, input maker)
OPS = {
    "add": (T.add, _n((4, 4), (4, 4))),
    "sub": (T.sub, _n((4, 4), (4, 4))),
    "mul": (T.mul, _n((4, 4), (4, 4))),
    "div": (lambda a, b: a / (b * b + 1.0), _n((4, 4), (4, 4))),
    "broadcast": (lambda a, b: a * b + b, _n((2, 3, 4), (4,))),
    "matmul": (T.matmul, _n((3, 4), (4, 2))),
    "batched_matmul": (T.matmul, _n((2, 3, 4), (4, 2))),
    "pow": (lambda x: x ** 3, _n((3, 4))),
    "neg": (lambda x: -x, _n((3, 4))),
    "tanh": (T.tanh, _n((3, 4))),
    "sigmoid": (T.sigmoid, _n((3, 4))),
    "relu": (T.relu, _n((3, 4))),
    "exp": (T.exp, _n((3, 4))),
    "log": (T.log, lambda r: [r.uniform(0.5, 3.0, size=(3, 4))]),
    "softmax": (lambda x: T.softmax(x, axis=0), _n((3, 4))),
    "log_softmax": (lambda x: T.log_softmax(x, axis=-1), _n((3, 4))),
    "sum": (lambda x: x.sum(axis=1), _n((3, 4))),
    "mean": (lambda x: x.mean(axis=0), _n((3, 4))),
    "max": (lambda x: x.max(axis=1), _n((3, 4))),
    "transpose": (lambda x: x.transpose(1, 0), _n((3, 4))),
    "reshape": (lambda x: x.reshape(12), _n((3, 4))),
    "getitem": (lambda x: x[1:, ::2], _n((3, 4))),
    "gather": (lambda x: x[np.array([0, 0, 2])], _n((3, 4))),
    "flip": (lambda x: T.flip(x, 1), _n((3, 4))),
    "concat": (lambda a, b: T.concat([a, b], axis=0), _n((4, 4), (4, 4))),
    "stack": (lambda a, b: T.stack([a, b], axis=1), _n((4, 4), (4, 4))),
    "unbind": (lambda x: T.unbind(x, axis=1)[2] * 2.0, _n((2, 4, 3))),
    "repeat_axis": (lambda x: T.repeat_axis(x, 1, 3), _n((2, 4))),
    "conv1d_features": (T.conv1d_features, _n((2, 3, 11, 2), (3, 2, 4), (4,))),
    "max_pool_features": (lambda x: T.pool_features(x, 2, "max"), _n((2, 3, 11, 2))),
    "avg_pool_features": (lambda x: T.pool_features(x, 3, "avg"), _n((2, 3, 11, 2))),
    "batch_norm": (lambda x, g, b: T.batch_norm(x, g, b, 1e-5)[0], _n((4, 3, 5), (5,), (5,))),
}


def direct_metrics(preds, labels, k):
    """Macro precision/recall/F1 straight from the prediction lists."""
    preds, labels = list(preds), list(labels)
    p, r, f = [], [], []
    for c in range(k):
        tp = sum(1 for a, b in zip(preds, labels) if a == c and b == c)
        pp = sum(1 for a in preds if a == c)
        ap = sum(1 for b in labels if b == c)
        pc = tp / pp if pp else 0.0
        rc = tp / ap if ap else 0.0
        p.append(pc)
        r.append(rc)
        f.append(2 * pc * rc / (pc + rc) if pc + rc else 0.0)
    acc = sum(a == b for a, b in zip(preds, labels)) / len(preds)
    return acc, sum(p) / k, sum(r) / k, sum(f) / k


def pairwise_auc(scores, indicator):
    pos = [s for s, y in zip(scores, indicator) if y]
    neg = [s for s, y in zip(scores, indicator) if not y]
    total = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return total / (len(pos) * len(neg))


def oracle_windows(n, w):
    """Windows from stride arithmetic: (offset, real tokens) pairs."""
    s = w - (w // 5)
    out, off = [], 0
    while True:
        real = min(w, n - off)
        if real >= 0.2 * w and real > 0:
            out.append((off, real))
        if off + w >= n:
            return out
        off += s
