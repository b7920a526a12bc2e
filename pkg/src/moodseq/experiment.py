"""Run configuration and the train / evaluate / predict / stats workflows shared
by the command line and the experiment scripts."""
from __future__ import annotations

import csv
import dataclasses
import logging
import typing
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .audio import FeatureScaler
from .datasets import DEV, TEST, TRAIN, Corpus, PairedSet, WindowSet
from .evaluation import (EvaluationReport, RocReport, balance_by_oversampling, binary_view,
                         group_statistics, majority_vote, metrics, patient_level, roc_micro_auc)
from .layers import ConfigError
from .models import (CLI_MODELS, SEVERITY_NAMES, AudioModel, FusedModel, SeverityModel, TextModel,
                     model_from_metadata)
from .text import NormalizeConfig, Vocabulary
from .training import EarlyStopConfig, FitConfig, TrainingHistory, fit

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    corpus: str = "corpus"
    embeddings: str | None = None
    checkpoint: str | None = None
    out: str = "runs"
    model: str = "bilstm_tcnn"
    encoder: str = "bi"
    timestep: int = 16
    window: int = 64
    stopwords: str = "remove"
    seed: int = 0
    epochs: int = 100
    batch: int = 32
    lr: float = 0.001
    patience: int = 5
    restore_best: bool = True
    balance: str = "on"
    threads: int = 1
    partition: str = "test"
    subject: str | None = None
    # windows (or audio/text pairs) drawn per subject each training epoch; None = all
    windows_per_subject: int | None = 16
    val_windows_per_subject: int | None = 16
    eval_windows_per_subject: int | None = None
    vuv_column: int = 1
    audio_header: bool = False
    ttest: str = "welch"
    audio_checkpoint: str | None = None
    text_checkpoint: str | None = None
    freeze_extractors: bool = False

    def validate(self) -> "RunConfig":
        choices = {"model": tuple(CLI_MODELS), "encoder": ("uni", "bi"), "timestep": (16, 32, 64),
                   "window": (16, 32, 64, 128), "stopwords": ("keep", "remove"),
                   "balance": ("on", "off"), "ttest": ("welch", "pooled")}
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key}={getattr(self, key)!r} is not one of {list(allowed)}")
        for key in ("epochs", "batch", "threads", "patience"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        for key in ("windows_per_subject", "val_windows_per_subject", "eval_windows_per_subject"):
            v = getattr(self, key)
            if v is not None and v < 1:
                raise ConfigError(f"{key} must be >= 1 or none, got {v}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        return self

    @property
    def family(self) -> str:
        return CLI_MODELS[self.model][0]

    @property
    def variant(self) -> str:
        return CLI_MODELS[self.model][1]

    @property
    def normalize_cfg(self) -> NormalizeConfig:
        return NormalizeConfig(remove_stopwords=self.stopwords == "remove")


_TYPES = typing.get_type_hints(RunConfig)


def coerce(key: str, raw: str, types: dict = _TYPES):
    if key not in types:
        raise ConfigError(f"unknown config key {key!r}")
    hint = types[key]
    raw = raw.strip()
    allowed = set(typing.get_args(hint)) or {hint}
    if type(None) in allowed and raw.lower() in ("none", "null", ""):
        return None
    base = next(t for t in (bool, int, float, str) if t in allowed)
    try:
        if base is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "1", "yes", "on")
        return base(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot read {raw!r} as {base.__name__}") from None


def read_config_file(path, types: dict = _TYPES) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            out[key] = coerce(key, value, types)
        except ConfigError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return out


# -- data preparation ---------------------------------------------------------------

def open_corpus(cfg: RunConfig) -> Corpus:
    corpus = Corpus(cfg.corpus, vuv_column=cfg.vuv_column, audio_header=cfg.audio_header,
                    normalize_cfg=cfg.normalize_cfg)
    return corpus


def preload(corpus: Corpus, subjects, threads: int, audio: bool = True, text: bool = True) -> None:
    """Parse per-subject files, in parallel when threads > 1; results are cached by id."""
    def work(sid):
        if audio:
            corpus.voiced(sid)
        if text:
            corpus.tokens(sid)
    ids = [s.subject_id for s in subjects]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(work, ids))
    else:
        for sid in ids:
            work(sid)


@dataclass
class Prepared:
    """Everything a model needs to consume one corpus partition set."""
    scaler: FeatureScaler | None = None
    vocab: Vocabulary | None = None
    embedding: np.ndarray | None = None
    coverage: float | None = None
    sets: dict = field(default_factory=dict)  # partition -> WindowSet | PairedSet


def prepare(cfg: RunConfig, corpus: Corpus, partitions=(TRAIN, DEV), scaler=None, vocab=None,
            embedding=None) -> Prepared:
    family = cfg.family
    use_audio = family in ("audio", "fused")
    use_text = family in ("text", "fused")
    subs = [s for s in corpus.subjects if s.partition in set(partitions) | ({TRAIN} if scaler is None else set())]
    preload(corpus, subs, cfg.threads, use_audio, use_text)
    prep = Prepared()
    audio = text = None
    if use_audio:
        prep.scaler = scaler or corpus.scaler
        audio = corpus.audio_windows(cfg.timestep, partitions, prep.scaler)
    if use_text:
        prep.vocab = vocab or corpus.vocabulary
        if embedding is None:
            table = corpus.embedding_table(prep.vocab, cfg.embeddings)
            prep.embedding, prep.coverage = table.matrix, table.coverage
        else:
            prep.embedding = embedding
        text = corpus.text_windows(cfg.window, partitions, prep.vocab)
    for i, part in enumerate(partitions):
        cap = {TRAIN: cfg.windows_per_subject, DEV: cfg.val_windows_per_subject}.get(
            part, cfg.eval_windows_per_subject)
        # fixed (seeded) subsets for evaluation partitions, fresh draws per epoch for training
        seed = cfg.seed * 1000 + i
        if family == "fused":
            ds = PairedSet(audio[part], text[part], cap, seed=seed)
        else:
            ds = (audio or text)[part]
            if part != TRAIN and cap is not None:
                ds = ds.with_cap(cap).epoch_view(np.random.default_rng(seed))
            else:
                ds = ds.with_cap(cap if part == TRAIN else None)
        prep.sets[part] = ds
    return prep


def build_model(cfg: RunConfig, embedding: np.ndarray | None) -> SeverityModel:
    family, variant = cfg.family, cfg.variant
    if family == "audio":
        return AudioModel(variant, cfg.timestep, cfg.seed)
    if family == "text":
        return TextModel(variant, cfg.window, embedding, cfg.seed)
    return FusedModel(cfg.encoder, variant, cfg.window, cfg.timestep, embedding, cfg.seed)


# -- checkpoints ----------------------------------------------------------------------

def checkpoint_metadata(model: SeverityModel, prep: Prepared, cfg: RunConfig) -> dict:
    meta = {"model": model.metadata(), "cli_model": cfg.model, "seed": cfg.seed,
            "stopwords": cfg.stopwords, "vuv_column": cfg.vuv_column}
    if prep.scaler is not None:
        meta["scaler"] = prep.scaler.to_dict()
    if prep.vocab is not None:
        meta["vocab"] = prep.vocab.words[:-1]
        meta["vocab_sha256"] = prep.vocab.digest()
        meta["embedding_coverage"] = prep.coverage
    return meta


def save_model(path, model: SeverityModel, prep: Prepared, cfg: RunConfig) -> None:
    ckpt.save(path, model.state_dict(), checkpoint_metadata(model, prep, cfg))


@dataclass
class Loaded:
    model: SeverityModel
    meta: dict
    scaler: FeatureScaler | None
    vocab: Vocabulary | None


def load_model(path) -> Loaded:
    tensors, meta = ckpt.load(path)
    model = model_from_metadata(meta["model"])
    try:
        model.load_state_dict(tensors)
    except (KeyError, ValueError) as exc:
        raise ckpt.CheckpointError(f"{path}: {exc}") from None
    model.train(False)
    scaler = FeatureScaler.from_dict(meta["scaler"]) if "scaler" in meta else None
    vocab = None
    if "vocab" in meta:
        vocab = Vocabulary(meta["vocab"])
        if vocab.digest() != meta.get("vocab_sha256"):
            raise ckpt.CheckpointError(f"{path}: vocabulary hash mismatch")
    return Loaded(model, meta, scaler, vocab)


def init_extractors(model: FusedModel, audio_path=None, text_path=None, freeze: bool = False) -> None:
    """Copy encoder-side weights from unimodal checkpoints; optionally freeze them.

    The unimodal output layer (5 classes) has no counterpart in the 32-wide
    extractor and is left at its fresh initialization."""
    for path, sub in ((audio_path, model.audio), (text_path, model.text)):
        if path is None:
            continue
        tensors, _ = ckpt.load(path)
        own = dict(sub.named_tensors())
        for name, t in own.items():
            if name.startswith("head.out."):
                continue
            if name not in tensors or tensors[name].shape != t.shape:
                raise ckpt.CheckpointError(f"{path}: no compatible tensor for {name}")
            t.data = tensors[name].astype(t.dtype)
            if freeze:
                t.requires_grad = False


# -- training ---------------------------------------------------------------------------

def fit_config(cfg: RunConfig) -> FitConfig:
    return FitConfig(epochs_max=cfg.epochs, batch_size=cfg.batch, lr=cfg.lr,
                     early=EarlyStopConfig(patience=cfg.patience, restore_best=cfg.restore_best))


def train(cfg: RunConfig, corpus: Corpus | None = None) -> tuple[SeverityModel, TrainingHistory, Prepared]:
    cfg.validate()
    corpus = corpus or open_corpus(cfg)
    prep = prepare(cfg, corpus, (TRAIN, DEV))
    model = build_model(cfg, prep.embedding)
    if isinstance(model, FusedModel):
        init_extractors(model, cfg.audio_checkpoint, cfg.text_checkpoint, cfg.freeze_extractors)
    history = fit(model, prep.sets[TRAIN], prep.sets[DEV], fit_config(cfg), seed=cfg.seed)
    return model, history, prep


def train_to_dir(cfg: RunConfig, corpus: Corpus | None = None) -> Path:
    model, history, prep = train(cfg, corpus)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = Path(cfg.checkpoint) if cfg.checkpoint else out / "model.mseq"
    save_model(path, model, prep, cfg)
    history.to_csv(out / "history.csv")
    return path


# -- evaluation -------------------------------------------------------------------------

def predict_set(model: SeverityModel, ds, batch: int = 128) -> np.ndarray:
    out = []
    for lo in range(0, len(ds), batch):
        inputs, _ = ds.take(np.arange(lo, min(lo + batch, len(ds))))
        out.append(model.predict_proba(inputs))
    return np.concatenate(out) if out else np.zeros((0, 5))


@dataclass
class EvalResult:
    sequence: EvaluationReport
    sequence_binary: EvaluationReport
    patient: EvaluationReport
    patient_binary: EvaluationReport
    roc: RocReport | None
    patients: list
    probs: np.ndarray
    labels: np.ndarray


def evaluate_probs(probs: np.ndarray, labels: np.ndarray, subjects: np.ndarray, phq: dict,
                   balance: bool, seed: int) -> EvalResult:
    preds = probs.argmax(axis=1)
    idx = balance_by_oversampling(labels, seed, k=5) if balance else np.arange(len(labels))
    seq = metrics(preds[idx], labels[idx], 5)
    true_bin = binary_view(None, [phq[s] for s in subjects])
    seq_bin = metrics(binary_view(preds)[idx], true_bin[idx], 2)
    try:
        roc = roc_micro_auc(probs[idx], labels[idx])
    except ValueError as exc:
        log.warning("ROC unavailable: %s", exc)
        roc = None
    patients = patient_level(subjects, preds)
    p_true = np.array([phq_label(phq[p.subject_id]) for p in patients])
    p_pred = np.array([p.voted for p in patients])
    pidx = balance_by_oversampling(p_true, seed, k=5) if balance else np.arange(len(patients))
    pat = metrics(p_pred[pidx], p_true[pidx], 5)
    p_bin_true = binary_view(None, [phq[p.subject_id] for p in patients])
    pat_bin = metrics(binary_view(p_pred)[pidx], p_bin_true[pidx], 2)
    return EvalResult(seq, seq_bin, pat, pat_bin, roc, patients, probs, labels)


def phq_label(score: int) -> int:
    from .models import phq_to_label
    return phq_to_label(score).index


def evaluate(cfg: RunConfig, loaded: Loaded, corpus: Corpus | None = None) -> EvalResult:
    corpus = corpus or open_corpus(cfg)
    run = dataclasses.replace(cfg, **_model_fields(loaded.meta))
    embedding = loaded.model.text.embedding.table.data if isinstance(loaded.model, FusedModel) else (
        loaded.model.embedding.table.data if isinstance(loaded.model, TextModel) else None)
    prep = prepare(run, corpus, (cfg.partition,), scaler=loaded.scaler, vocab=loaded.vocab,
                   embedding=embedding)
    ds = prep.sets[cfg.partition]
    probs = predict_set(loaded.model, ds)
    phq = {s.subject_id: s.phq8 for s in corpus.subjects}
    return evaluate_probs(probs, ds.labels, ds.subjects, phq, cfg.balance == "on", cfg.seed)


def _model_fields(meta: dict) -> dict:
    m = meta["model"]
    out = {"model": meta.get("cli_model", "bilstm_tcnn"), "stopwords": meta.get("stopwords", "remove")}
    if "timestep" in m:
        out["timestep"] = m["timestep"]
    if "window" in m:
        out["window"] = m["window"]
    if "encoder" in m:
        out["encoder"] = m["encoder"]
    return out


METRIC_COLUMNS = ("level", "task", "n", "accuracy", "precision", "recall", "f1", "weighted_f1",
                  "sensitivity", "specificity", "micro_auc")


def write_eval_outputs(res: EvalResult, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / v for k, v in (("metrics", "metrics.csv"), ("roc", "roc.csv"),
                                      ("confusion", "confusion.csv"),
                                      ("confusion_normalized", "confusion_normalized.csv"),
                                      ("patients", "patients.csv"), ("report", "report.txt"))}
    auc = res.roc.micro_auc if res.roc else float("nan")
    with open(paths["metrics"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for level, task, rep, a in (("sequence", "severity", res.sequence, auc),
                                    ("sequence", "binary", res.sequence_binary, float("nan")),
                                    ("patient", "severity", res.patient, float("nan")),
                                    ("patient", "binary", res.patient_binary, float("nan"))):
            row = rep.row()
            w.writerow([level, task] + [row["n"]] + [repr(row[k]) for k in METRIC_COLUMNS[3:-1]] + [repr(a)])
    if res.roc:
        res.roc.to_csv(paths["roc"], SEVERITY_NAMES)
    else:
        paths["roc"].write_text("curve,threshold,fpr,tpr\n")
    res.sequence.confusion.to_csv(paths["confusion"], SEVERITY_NAMES)
    res.sequence.confusion.to_csv(paths["confusion_normalized"], SEVERITY_NAMES, normalized=True)
    with open(paths["patients"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "n_windows", "voted", "voted_name", "tally"])
        for p in res.patients:
            tally = " ".join(f"{SEVERITY_NAMES[c]}:{n}" for c, n in p.tally.items())
            w.writerow([p.subject_id, len(p.window_preds), p.voted, SEVERITY_NAMES[p.voted], tally])
    paths["report"].write_text(format_report(res))
    return paths


def format_report(res: EvalResult) -> str:
    lines = [f"{'level':<9} {'task':<9} {'n':>6} {'acc':>7} {'prec':>7} {'rec':>7} {'f1':>7} "
             f"{'w-f1':>7} {'sens':>7} {'spec':>7}"]
    for level, task, r in (("sequence", "severity", res.sequence), ("sequence", "binary", res.sequence_binary),
                           ("patient", "severity", res.patient), ("patient", "binary", res.patient_binary)):
        lines.append(f"{level:<9} {task:<9} {r.n:>6} {r.accuracy:>7.4f} {r.precision:>7.4f} {r.recall:>7.4f} "
                     f"{r.f1:>7.4f} {r.weighted_f1:>7.4f} {r.sensitivity:>7.4f} {r.specificity:>7.4f}")
    if res.roc:
        lines.append(f"micro-average AUC (sequence level): {res.roc.micro_auc:.4f}")
    lines.append("row-normalized confusion (sequence level, rows true):")
    norm = res.sequence.confusion.normalized()
    for name, row in zip(SEVERITY_NAMES, norm):
        lines.append(f"  {name:<18} " + " ".join(f"{v:6.3f}" for v in row))
    return "\n".join(lines) + "\n"


# -- prediction for one subject -----------------------------------------------------------

@dataclass
class SubjectPrediction:
    subject_id: str
    window_preds: list[int]
    probs: np.ndarray
    voted: int
    tally: dict
    attention: dict


def predict_subject(loaded: Loaded, corpus: Corpus, sid: str, seed: int = 0) -> SubjectPrediction:
    model, meta = loaded.model, loaded.meta["model"]
    family = meta["family"]
    if family in ("audio", "fused"):
        audio = corpus.subject_audio_windows(sid, meta["timestep"], loaded.scaler)
    if family in ("text", "fused"):
        text = corpus.subject_text_windows(sid, meta["window"], loaded.vocab)
    if family == "audio":
        inputs = audio
    elif family == "text":
        inputs = text
    else:
        label = np.zeros(len(audio), dtype=np.int64)
        a = WindowSet(audio, label, np.array([sid] * len(audio)))
        t = WindowSet(text, np.zeros(len(text), dtype=np.int64), np.array([sid] * len(text)))
        pairs = PairedSet(a, t, seed=seed)
        inputs, _ = pairs.take(np.arange(len(pairs)))
    n = len(inputs["audio"]) if isinstance(inputs, dict) else len(inputs)
    if n == 0:
        raise ValueError(f"subject {sid} yields no windows for this model")
    probs = model.predict_proba(inputs)
    preds = probs.argmax(axis=1)
    vote = majority_vote(preds, sid)
    attention = {}
    if isinstance(model, TextModel) and model.last_attention is not None:
        attention["text"] = model.last_attention
    if isinstance(model, FusedModel):
        attention = dict(model.last_attention)
    return SubjectPrediction(sid, [int(p) for p in preds], probs, vote.voted, vote.tally, attention)


# -- statistics ------------------------------------------------------------------------------

def run_stats(cfg: RunConfig, corpus: Corpus | None = None):
    corpus = corpus or open_corpus(cfg)
    preload(corpus, corpus.subjects, cfg.threads, audio=True, text=False)
    return group_statistics(corpus.summaries(), equal_var=cfg.ttest == "pooled")
