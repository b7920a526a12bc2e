"""Corpus registry and the window datasets fed to ``fit``.

A corpus directory holds ``registry.csv`` plus per-subject COVAREP and
transcript files (see ``synth`` for the layout). Scaler statistics and the
vocabulary always come from the training partition.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .audio import DEFAULT_VUV_COLUMN, CovarepMatrix, FeatureScaler, load_covarep
from .evaluation import SubjectSummary
from .models import phq_to_label
from .text import (EmbeddingTable, NormalizeConfig, Vocabulary, build_vocabulary, load_embeddings,
                   normalize, parse_transcript, participant_utterances, window_tokens)

log = logging.getLogger(__name__)

TRAIN, DEV, TEST = "train", "dev", "test"


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Subject:
    subject_id: str
    phq8: int
    gender: int
    partition: str

    @property
    def label(self) -> int:
        return phq_to_label(self.phq8).index


def read_registry(path) -> list[Subject]:
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"registry not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"subject_id", "phq8", "gender", "partition"}
        missing = need - set(reader.fieldnames or ())
        if missing:
            raise CorpusError(f"{path}: missing columns {sorted(missing)}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                phq = int(row["phq8"])
                phq_to_label(phq)
                out.append(Subject(row["subject_id"].strip(), phq, int(row["gender"]), row["partition"].strip()))
            except ValueError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
    ids = [s.subject_id for s in out]
    if len(set(ids)) != len(ids):
        raise CorpusError(f"{path}: duplicate subject ids")
    return out


# -- datasets ------------------------------------------------------------------------

class WindowSet:
    """Windows with subject-level labels. ``cap`` limits how many windows per
    subject a training epoch draws (without replacement); None uses all."""

    def __init__(self, x: np.ndarray, labels: np.ndarray, subjects: np.ndarray, cap: int | None = None):
        self.x = x
        self.labels = np.asarray(labels, dtype=np.int64)
        self.subjects = np.asarray(subjects)
        self.cap = cap

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx):
        return self.x[idx], self.labels[idx]

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx, dtype=np.int64)
        return WindowSet(self.x[idx], self.labels[idx], self.subjects[idx], None)

    def with_cap(self, cap: int | None) -> "WindowSet":
        return WindowSet(self.x, self.labels, self.subjects, cap)

    def epoch_view(self, rng: np.random.Generator) -> "WindowSet":
        if self.cap is None:
            return self
        keep = []
        for sid in np.unique(self.subjects):
            members = np.nonzero(self.subjects == sid)[0]
            if len(members) > self.cap:
                members = np.sort(rng.choice(members, size=self.cap, replace=False))
            keep.append(members)
        return self.subset(np.concatenate(keep))


class PairedSet:
    """Audio/text window pairs from the same subject.

    Each subject contributes max(n_audio, n_text) pairs (or ``cap`` if smaller);
    both members of a pair are drawn uniformly from that subject's windows.
    The pairing is redrawn by every ``epoch_view``.
    """

    def __init__(self, audio: WindowSet, text: WindowSet, cap: int | None = None, seed: int = 0):
        self.audio, self.text, self.cap = audio, text, cap
        self._a_by = {s: np.nonzero(audio.subjects == s)[0] for s in np.unique(audio.subjects)}
        self._t_by = {s: np.nonzero(text.subjects == s)[0] for s in np.unique(text.subjects)}
        dropped = sorted(set(self._a_by) ^ set(self._t_by))
        if dropped:
            log.warning("subjects without both modalities are skipped: %s", dropped)
        self.pair_subjects = sorted(set(self._a_by) & set(self._t_by))
        self._draw(np.random.default_rng(seed))

    def _draw(self, rng: np.random.Generator) -> None:
        a_idx, t_idx, subj = [], [], []
        for s in self.pair_subjects:
            a, t = self._a_by[s], self._t_by[s]
            k = max(len(a), len(t))
            if self.cap is not None:
                k = min(k, self.cap)
            a_idx.append(rng.choice(a, size=k, replace=True))
            t_idx.append(rng.choice(t, size=k, replace=True))
            subj += [s] * k
        self.a_idx = np.concatenate(a_idx) if a_idx else np.zeros(0, dtype=np.int64)
        self.t_idx = np.concatenate(t_idx) if t_idx else np.zeros(0, dtype=np.int64)
        self.subjects = np.asarray(subj)
        self.labels = self.audio.labels[self.a_idx]

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx):
        return {"audio": self.audio.x[self.a_idx[idx]], "text": self.text.x[self.t_idx[idx]]}, self.labels[idx]

    def epoch_view(self, rng: np.random.Generator) -> "PairedSet":
        view = object.__new__(PairedSet)
        view.__dict__.update(self.__dict__)
        view._draw(rng)
        return view


# -- corpus --------------------------------------------------------------------------

class Corpus:
    def __init__(self, root, vuv_column: int = DEFAULT_VUV_COLUMN, audio_header: bool = False,
                 normalize_cfg: NormalizeConfig = NormalizeConfig()):
        self.root = Path(root)
        if not self.root.is_dir():
            raise CorpusError(f"corpus directory not found: {self.root}")
        self.subjects = read_registry(self.root / "registry.csv")
        self.vuv_column = vuv_column
        self.audio_header = audio_header
        self.normalize_cfg = normalize_cfg
        self._voiced: dict[str, np.ndarray] = {}
        self._frames: dict[str, int] = {}
        self._tokens: dict[str, list[str]] = {}
        self._utterances: dict[str, list[str]] = {}

    def partition(self, name: str) -> list[Subject]:
        out = [s for s in self.subjects if s.partition == name]
        if not out:
            raise CorpusError(f"partition {name!r} is empty in {self.root / 'registry.csv'}")
        return out

    def subject(self, sid: str) -> Subject:
        for s in self.subjects:
            if s.subject_id == sid:
                return s
        raise CorpusError(f"subject {sid!r} not in registry")

    def audio_path(self, sid: str) -> Path:
        return self.root / "audio" / f"{sid}_COVAREP.csv"

    def transcript_path(self, sid: str) -> Path:
        return self.root / "transcripts" / f"{sid}_TRANSCRIPT.csv"

    def embeddings_path(self) -> Path:
        found = sorted((self.root / "embeddings").glob("*.txt"))
        if not found:
            raise CorpusError(f"no embedding file under {self.root / 'embeddings'}")
        return found[0]

    # audio
    def covarep(self, sid: str) -> CovarepMatrix:
        path = self.audio_path(sid)
        if not path.is_file():
            raise CorpusError(f"missing COVAREP file: {path}")
        return load_covarep(path, sid, self.vuv_column, self.audio_header)

    def voiced(self, sid: str) -> np.ndarray:
        if sid not in self._voiced:
            m = self.covarep(sid)
            self._frames[sid] = m.n_frames
            self._voiced[sid] = m.voiced().astype(np.float32)
        return self._voiced[sid]

    def duration_seconds(self, sid: str) -> float:
        self.voiced(sid)
        return self._frames[sid] * 0.01

    @cached_property
    def scaler(self) -> FeatureScaler:
        return FeatureScaler.fit(np.concatenate([self.voiced(s.subject_id) for s in self.partition(TRAIN)]))

    def subject_audio_windows(self, sid: str, timestep: int, scaler: FeatureScaler | None = None) -> np.ndarray:
        scaler = scaler or self.scaler
        voiced = self.voiced(sid)
        count = voiced.shape[0] // timestep
        if count == 0:
            log.warning("subject %s yields no %d-frame windows", sid, timestep)
        return scaler.transform(voiced[:count * timestep]).reshape(count, timestep, voiced.shape[1])

    def audio_windows(self, timestep: int, partitions=(TRAIN, DEV, TEST),
                      scaler: FeatureScaler | None = None) -> dict[str, WindowSet]:
        out = {}
        for part in partitions:
            xs, ys, ss = [], [], []
            for s in self.partition(part):
                w = self.subject_audio_windows(s.subject_id, timestep, scaler)
                xs.append(w)
                ys += [s.label] * len(w)
                ss += [s.subject_id] * len(w)
            out[part] = WindowSet(np.concatenate(xs), np.array(ys), np.array(ss))
        return out

    # text
    def utterances(self, sid: str) -> list[str]:
        if sid not in self._utterances:
            path = self.transcript_path(sid)
            if not path.is_file():
                raise CorpusError(f"missing transcript: {path}")
            self._utterances[sid] = participant_utterances(parse_transcript(path))
        return self._utterances[sid]

    def tokens(self, sid: str) -> list[str]:
        if sid not in self._tokens:
            stream = []
            for utt in self.utterances(sid):
                stream += normalize(utt, self.normalize_cfg)
            self._tokens[sid] = stream
        return self._tokens[sid]

    @cached_property
    def vocabulary(self) -> Vocabulary:
        return build_vocabulary(self.tokens(s.subject_id) for s in self.partition(TRAIN))

    def embedding_table(self, vocab: Vocabulary | None = None, path=None) -> EmbeddingTable:
        return load_embeddings(path or self.embeddings_path(), vocab or self.vocabulary)

    def subject_text_windows(self, sid: str, window: int, vocab: Vocabulary | None = None) -> np.ndarray:
        vocab = vocab or self.vocabulary
        wins = window_tokens(vocab.encode(self.tokens(sid)), window)
        return np.stack(wins) if wins else np.zeros((0, window), dtype=np.int64)

    def text_windows(self, window: int, partitions=(TRAIN, DEV, TEST),
                     vocab: Vocabulary | None = None) -> dict[str, WindowSet]:
        out = {}
        for part in partitions:
            xs, ys, ss = [], [], []
            for s in self.partition(part):
                w = self.subject_text_windows(s.subject_id, window, vocab)
                if len(w) == 0:
                    log.warning("subject %s yields no %d-token windows", s.subject_id, window)
                xs.append(w)
                ys += [s.label] * len(w)
                ss += [s.subject_id] * len(w)
            out[part] = WindowSet(np.concatenate(xs), np.array(ys), np.array(ss))
        return out

    # statistics
    def summaries(self, partitions=(TRAIN, DEV, TEST)) -> list[SubjectSummary]:
        out = []
        for s in self.subjects:
            if s.partition not in partitions:
                continue
            lengths = [len(u.split()) for u in self.utterances(s.subject_id)]
            out.append(SubjectSummary(s.subject_id, s.phq8, self.duration_seconds(s.subject_id), lengths))
        return out


def load_corpus(root, **kwargs) -> Corpus:
    return Corpus(root, **kwargs)
