"""Deterministic synthetic corpus in the formats the pipelines consume.

Layout of a generated directory::

    registry.csv                       subject_id,phq8,gender,partition
    audio/<id>_COVAREP.csv             74 columns, no header, one row per 10 ms
    transcripts/<id>_TRANSCRIPT.csv    tab separated, header row
    embeddings/vectors_100d.txt        token followed by 100 values
    generator.json                     the config that produced the corpus

Audio classes differ by mean shifts on a few designated columns riding on
AR(1) noise; text classes differ in how often class marker words occur. The
experiment group (PHQ-8 > 10) speaks in shorter sentences, while recording
durations are drawn from the same quantile grid for both groups.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .audio import N_COVAREP
from .models import N_CLASSES, phq_to_label
from .text import _resources

log = logging.getLogger(__name__)

PARTITIONS = ("train", "dev", "test")
# subjects per severity class (healthy .. severe) in each partition
DEFAULT_COUNTS = {
    "train": (16, 37, 30, 15, 9),
    "dev": (5, 13, 7, 4, 6),
    "test": (5, 20, 10, 5, 7),
}
SIGNAL_COLUMNS = (4, 9, 13, 21, 30, 38, 47, 60)
F0_COLUMN = 0
VUV_COLUMN = 1
FIRST_ID = 300

ELLIE_PROMPTS = (
    "hi i'm ellie thanks for coming in today",
    "how are you doing today",
    "where are you from originally",
    "what do you do to relax",
    "how easy is it for you to get a good night's sleep",
    "when was the last time you felt really happy",
    "tell me more about that",
    "how have you been feeling lately",
    "what are you most proud of in your life",
    "is there anything you regret",
    "how would your best friend describe you",
    "what's one of your most memorable experiences",
)
FILLERS = ("um", "uh", "yeah", "i'm", "don't", "it's", "that's", "i've")


@dataclass
class GeneratorConfig:
    seed: int = 7
    counts: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_COUNTS.items()})
    duration_mean_s: float = 30.0
    duration_std_s: float = 8.0
    duration_min_s: float = 10.0
    duration_max_s: float = 60.0
    vuv_rate: float = 0.6
    # audio signal, in units of the per-column noise scale
    audio_shift: float = 1.2
    ar_rho: float = 0.7
    subject_offset_std: float = 0.25
    # "sustained": class shift on every voiced frame; "short_span": the shift only
    # appears in short bursts and a slow per-subject drift rides on the same columns
    temporal_mode: str = "sustained"
    span_frames: int = 8
    span_period: int = 16
    drift_std: float = 1.0
    drift_rho: float = 0.995
    # text
    utterances_per_subject: int = 40
    sentence_mean_words: float = 10.0
    experiment_length_factor: float = 0.75
    stopword_rate: float = 0.3
    filler_rate: float = 0.05
    marker_rate: float = 0.2
    marker_purity: float = 0.75
    markers_per_class: int = 8
    neutral_words: int = 600
    embedding_coverage: float = 0.95
    marker_embedding_strength: float = 0.6

    def validate(self) -> None:
        for part in PARTITIONS:
            if part not in self.counts:
                raise ValueError(f"counts missing partition {part!r}")
            c = self.counts[part]
            if len(c) != N_CLASSES or min(c) < 1:
                raise ValueError(f"partition {part!r} needs at least one subject in each of {N_CLASSES} classes")
        if self.temporal_mode not in ("sustained", "short_span"):
            raise ValueError(f"unknown temporal_mode {self.temporal_mode!r}")
        if not 0.0 < self.vuv_rate <= 1.0:
            raise ValueError("vuv_rate must be in (0, 1]")
        if not 0.0 < self.experiment_length_factor <= 1.0:
            raise ValueError("experiment_length_factor must be in (0, 1]")
        if not 0.0 <= self.marker_rate < 1.0 or not 0.0 <= self.marker_purity <= 1.0:
            raise ValueError("marker_rate and marker_purity must be probabilities")
        if self.duration_min_s <= 0 or self.duration_min_s > self.duration_max_s:
            raise ValueError("duration bounds are inconsistent")

    @property
    def n_subjects(self) -> int:
        return sum(sum(v) for v in self.counts.values())


@dataclass
class SubjectSpec:
    subject_id: str
    phq8: int
    gender: int
    partition: str
    duration_s: float
    stream: int  # index used to derive this subject's random stream

    @property
    def label(self) -> int:
        return phq_to_label(self.phq8).index

    @property
    def experiment(self) -> bool:
        return self.phq8 > 10


# -- lexicon --------------------------------------------------------------------

_ONSETS = "bdfgklmnprtvz"
_NUCLEI = "aiou"


def _pseudo_words(rng: np.random.Generator, n: int, taken: set) -> list[str]:
    # CV syllables ending in a, i, o or u: immune to the suffix lemmatizer
    out = []
    while len(out) < n:
        syl = int(rng.integers(2, 4))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _NUCLEI[rng.integers(len(_NUCLEI))]
                    for _ in range(syl))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


@dataclass
class Lexicon:
    neutral: list[str]
    markers: list[list[str]]  # per class
    stopwords: list[str]


def build_lexicon(cfg: GeneratorConfig) -> Lexicon:
    rng = np.random.default_rng([cfg.seed, 1])
    stop, lemmas, _ = _resources()
    taken = set(stop) | set(lemmas) | set(lemmas.values())
    neutral = _pseudo_words(rng, cfg.neutral_words, taken)
    markers = [_pseudo_words(rng, cfg.markers_per_class, taken) for _ in range(N_CLASSES)]
    return Lexicon(neutral, markers, sorted(stop))


# -- subjects --------------------------------------------------------------------

_BINS = ((0, 4), (5, 9), (10, 14), (15, 19), (20, 24))


def plan_subjects(cfg: GeneratorConfig) -> list[SubjectSpec]:
    rng = np.random.default_rng([cfg.seed, 0])
    slots = [(part, c) for part in PARTITIONS for c in range(N_CLASSES) for _ in range(cfg.counts[part][c])]
    order = rng.permutation(len(slots))
    rows = []
    for i, j in enumerate(order):
        part, c = slots[j]
        lo, hi = _BINS[c]
        rows.append([f"{FIRST_ID + i}", int(rng.integers(lo, hi + 1)), int(rng.integers(0, 2)), part])
    # durations: both groups take the same quantile grid so their means match
    nd = NormalDist(cfg.duration_mean_s, cfg.duration_std_s)
    durations = [0.0] * len(rows)
    for experiment in (False, True):
        members = [i for i, r in enumerate(rows) if (r[1] > 10) == experiment]
        grid = [nd.inv_cdf((q + 0.5) / len(members)) for q in range(len(members))]
        grid = np.clip(grid, cfg.duration_min_s, cfg.duration_max_s)
        for i, d in zip(members, rng.permutation(grid)):
            durations[i] = round(float(d), 2)
    return [SubjectSpec(r[0], r[1], r[2], r[3], durations[i], i) for i, r in enumerate(rows)]


# -- audio -----------------------------------------------------------------------

def _class_patterns() -> np.ndarray:
    # rows of an 8x8 Hadamard matrix (skipping the constant row): pairwise Hamming distance 4
    h = np.array([[1]])
    for _ in range(3):
        h = np.block([[h, h], [h, -h]])
    return h[1:1 + N_CLASSES].astype(np.float64)


def _column_profile(seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([seed, 2])
    scale = np.exp(rng.uniform(np.log(0.02), np.log(20.0), N_COVAREP))
    mean = rng.normal(0.0, 1.0, N_COVAREP) * scale * 2.0
    return mean, scale


def _ar1(rng: np.random.Generator, n: int, d: int, rho: float) -> np.ndarray:
    eps = rng.standard_normal((n, d))
    out = np.empty((n, d))
    if n == 0:
        return out
    out[0] = eps[0]
    k = np.sqrt(1.0 - rho * rho)
    for t in range(1, n):
        out[t] = rho * out[t - 1] + k * eps[t]
    return out


def subject_audio(cfg: GeneratorConfig, s: SubjectSpec, rng: np.random.Generator) -> np.ndarray:
    """Full (frames, 74) matrix; unvoiced frames are all zero apart from VUV=0."""
    n = int(round(s.duration_s / 0.01))
    vuv = rng.random(n) < cfg.vuv_rate
    nv = int(vuv.sum())
    mean, scale = _column_profile(cfg.seed)
    feats = [j for j in range(N_COVAREP) if j not in (F0_COLUMN, VUV_COLUMN)]
    z = _ar1(rng, nv, len(feats), cfg.ar_rho)
    z += rng.normal(0.0, cfg.subject_offset_std, len(feats))
    cols = [feats.index(j) for j in SIGNAL_COLUMNS]
    shift = cfg.audio_shift * _class_patterns()[s.label]
    if cfg.temporal_mode == "sustained":
        z[:, cols] += shift
    else:
        phase = int(rng.integers(cfg.span_period))
        on = ((np.arange(nv) + phase) % cfg.span_period) < cfg.span_frames
        z[np.ix_(on, cols)] += shift
        z[:, cols] += cfg.drift_std * _ar1(rng, nv, len(cols), cfg.drift_rho)
    rows = np.zeros((n, N_COVAREP))
    voiced = mean + z_to_full(z, feats) * scale
    voiced[:, F0_COLUMN] = (210.0 - 90.0 * s.gender) + 25.0 * _ar1(rng, nv, 1, 0.95)[:, 0]
    voiced[:, VUV_COLUMN] = 1.0
    rows[vuv] = voiced
    return np.round(rows, 4)


def z_to_full(z: np.ndarray, feats: list[int]) -> np.ndarray:
    full = np.zeros((z.shape[0], N_COVAREP))
    full[:, feats] = z
    return full


_ROW_FMT = ",".join(["%.4f"] * N_COVAREP)


def format_covarep(rows: np.ndarray) -> str:
    rows = rows + 0.0  # no negative zeros in the text
    return "".join(_ROW_FMT % tuple(r) + "\n" for r in rows.tolist())


# -- text -------------------------------------------------------------------------

def subject_utterances(cfg: GeneratorConfig, s: SubjectSpec, lex: Lexicon,
                       rng: np.random.Generator) -> list[str]:
    mean_len = cfg.sentence_mean_words * (cfg.experiment_length_factor if s.experiment else 1.0)
    others = [c for c in range(N_CLASSES) if c != s.label]
    out = []
    for _ in range(cfg.utterances_per_subject):
        n = 1 + int(rng.poisson(max(mean_len - 1.0, 0.0)))
        words = []
        for u in rng.random((n, 3)):
            if u[0] < cfg.stopword_rate:
                words.append(lex.stopwords[int(u[1] * len(lex.stopwords))])
            elif u[0] < cfg.stopword_rate + cfg.filler_rate:
                words.append(FILLERS[int(u[1] * len(FILLERS))])
            elif u[0] < cfg.stopword_rate + cfg.filler_rate + cfg.marker_rate * (1 - cfg.stopword_rate - cfg.filler_rate):
                c = s.label if u[2] < cfg.marker_purity else others[int(rng.integers(len(others)))]
                words.append(lex.markers[c][int(u[1] * len(lex.markers[c]))])
            else:
                words.append(lex.neutral[int(u[1] * len(lex.neutral))])
        out.append(" ".join(words))
    return out


def format_transcript(utterances: list[str], rng: np.random.Generator) -> str:
    lines = ["start_time\tstop_time\tspeaker\tvalue"]
    t = float(rng.uniform(5.0, 30.0))
    for k, utt in enumerate(utterances):
        prompt = ELLIE_PROMPTS[k % len(ELLIE_PROMPTS)]
        for speaker, text in (("Ellie", prompt), ("Participant", utt)):
            dur = 0.3 * len(text.split()) + float(rng.uniform(0.2, 0.8))
            lines.append(f"{t:.3f}\t{t + dur:.3f}\t{speaker}\t{text}")
            t += dur + float(rng.uniform(0.3, 2.0))
    return "\n".join(lines) + "\n"


def embedding_lines(cfg: GeneratorConfig, lex: Lexicon, dim: int = 100) -> str:
    rng = np.random.default_rng([cfg.seed, 3])
    centroids = rng.normal(0.0, 1.0, (N_CLASSES, dim))
    entries = []
    for w in lex.stopwords + list(FILLERS):
        entries.append((w, rng.normal(0.0, 0.5, dim)))
    keep = rng.random(len(lex.neutral)) < cfg.embedding_coverage
    for w, k in zip(lex.neutral, keep):
        vec = rng.normal(0.0, 0.5, dim)
        if k:
            entries.append((w, vec))
    a = cfg.marker_embedding_strength
    for c, words in enumerate(lex.markers):
        for w in words:
            entries.append((w, a * centroids[c] + (1 - a) * rng.normal(0.0, 1.0, dim)))
    return "".join(w + " " + " ".join(f"{v:.5f}" for v in vec) + "\n" for w, vec in entries)


# -- driver ---------------------------------------------------------------------------

def _subject_rng(cfg: GeneratorConfig, s: SubjectSpec, part: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, 100 + s.stream, part])


def generate(cfg: GeneratorConfig, out_dir) -> Path:
    """Write the corpus; identical configs give byte-identical directories."""
    cfg.validate()
    out = Path(out_dir)
    for sub in ("audio", "transcripts", "embeddings"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    subjects = plan_subjects(cfg)
    lex = build_lexicon(cfg)
    with open(out / "registry.csv", "w", newline="") as fh:
        fh.write("subject_id,phq8,gender,partition\n")
        for s in subjects:
            fh.write(f"{s.subject_id},{s.phq8},{s.gender},{s.partition}\n")
    for s in subjects:
        rows = subject_audio(cfg, s, _subject_rng(cfg, s, 0))
        (out / "audio" / f"{s.subject_id}_COVAREP.csv").write_text(format_covarep(rows))
        trng = _subject_rng(cfg, s, 1)
        utts = subject_utterances(cfg, s, lex, trng)
        (out / "transcripts" / f"{s.subject_id}_TRANSCRIPT.csv").write_text(format_transcript(utts, trng))
    (out / "embeddings" / "vectors_100d.txt").write_text(embedding_lines(cfg, lex))
    (out / "generator.json").write_text(json.dumps(asdict(cfg), sort_keys=True, indent=1) + "\n")
    log.info("wrote %d subjects to %s", len(subjects), out)
    return out


def load_config(path) -> GeneratorConfig:
    return GeneratorConfig(**json.loads(Path(path).read_text()))


# -- self-test ------------------------------------------------------------------------

def softmax_regression(x: np.ndarray, y: np.ndarray, k: int, steps: int = 300, lr: float = 0.5,
                       l2: float = 1e-3) -> np.ndarray:
    """Full-batch multinomial logistic regression; returns (d+1, k) weights."""
    xb = np.hstack([x, np.ones((len(x), 1))])
    w = np.zeros((xb.shape[1], k))
    onehot = np.eye(k)[y]
    for _ in range(steps):
        z = xb @ w
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        w -= lr * (xb.T @ (p - onehot) / len(x) + l2 * w)
    return w


def linear_probe(corpus_dir, timestep: int = 16) -> float:
    """Test-partition accuracy of a linear classifier on window-mean audio features."""
    from .datasets import load_corpus  # local import: datasets depends on this module's formats

    corpus = load_corpus(corpus_dir)
    audio = corpus.audio_windows(timestep)
    feats = {p: audio[p].x.mean(axis=1) for p in ("train", "test")}
    w = softmax_regression(feats["train"], audio["train"].labels, N_CLASSES)
    xb = np.hstack([feats["test"], np.ones((len(feats["test"]), 1))])
    return float(((xb @ w).argmax(axis=1) == audio["test"].labels).mean())


def directory_digest(path) -> str:
    """sha256 over every file (relative path + bytes) in sorted order."""
    import hashlib

    h = hashlib.sha256()
    root = Path(path)
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).replace(os.sep, "/").encode())
            h.update(p.read_bytes())
    return h.hexdigest()
