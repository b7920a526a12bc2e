"""Transcript parsing, token normalization, vocabulary, sliding windows and
pretrained-embedding alignment."""
from __future__ import annotations

import hashlib
import logging
import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

PAD = 0
UNK_TOKEN = "[UNK]"
EMBEDDING_DIM = 100
SPEAKERS = {"ellie": "Ellie", "participant": "Participant"}


class TranscriptError(ValueError):
    pass


class EmbeddingFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TranscriptEntry:
    start_time: float
    stop_time: float
    speaker: str
    utterance: str


def parse_transcript(path, header: bool | None = None) -> list[TranscriptEntry]:
    """Read a 4-column tab-separated transcript.

    ``header=None`` skips a first row whose start field is not numeric.
    """
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if lineno == 1 and header is not False:
                try:
                    float(fields[0])
                except ValueError:
                    continue
            if len(fields) != 4:
                raise TranscriptError(f"{path}:{lineno}: expected 4 tab-separated fields, found {len(fields)}")
            try:
                start, stop = float(fields[0]), float(fields[1])
            except ValueError:
                raise TranscriptError(f"{path}:{lineno}: non-numeric timestamp") from None
            if start > stop:
                raise TranscriptError(f"{path}:{lineno}: start time {start} after stop time {stop}")
            speaker = SPEAKERS.get(fields[2].strip().lower())
            if speaker is None:
                raise TranscriptError(f"{path}:{lineno}: unknown speaker {fields[2]!r}")
            entries.append(TranscriptEntry(start, stop, speaker, fields[3]))
    return entries


def participant_utterances(entries: Iterable[TranscriptEntry]) -> list[str]:
    return [e.utterance for e in entries if e.speaker == "Participant"]


# -- normalization ----------------------------------------------------------------

def _read_lines(name: str, override=None) -> list[str]:
    if override is not None:
        text = Path(override).read_text(encoding="utf-8")
    else:
        text = resources.files("moodseq.data").joinpath(name).read_text(encoding="utf-8")
    return [ln.strip("\r\n") for ln in text.splitlines() if ln.strip()]


@lru_cache(maxsize=None)
def _resources(stopwords_file=None, lemma_file=None, contractions_file=None):
    stop = frozenset(w.strip().lower() for w in _read_lines("stopwords.txt", stopwords_file))
    lemmas = dict(ln.split("\t", 1) for ln in _read_lines("lemma_exceptions.tsv", lemma_file))
    contractions = dict(ln.split("\t", 1) for ln in _read_lines("contractions.tsv", contractions_file))
    return stop, lemmas, contractions


_VOWELS = set("aeiou")
_NON_ALNUM = re.compile(r"[^a-z0-9]+")
_PROTECTED_S = ("ss", "us", "is", "ous", "ys", "as")


def _undouble(stem: str) -> str:
    if len(stem) >= 3 and stem[-1] == stem[-2] and stem[-1] not in _VOWELS | {"l", "s", "z"}:
        return stem[:-1]
    return stem


def _restore_e(stem: str) -> str:
    # hop -> hope, rid -> ride: short consonant-vowel-consonant stems lost a final e
    if (len(stem) == 3 and stem[0] not in _VOWELS and stem[1] in _VOWELS
            and stem[2] not in _VOWELS | {"w", "x", "y"}):
        return stem + "e"
    return stem


def _lemma_once(word: str, exceptions: dict) -> str:
    if word in exceptions:
        return exceptions[word]
    if len(word) < 4 or not word.isalpha():
        return word
    if word.endswith("ies") and len(word) > 4:
        return word[:-3] + "y"
    if word.endswith("ing") and len(word) - 3 >= 3:
        stem = word[:-3]
        if not any(c in _VOWELS or c == "y" for c in stem):
            return word
        undone = _undouble(stem)
        return undone if undone != stem else _restore_e(stem)
    if word.endswith("ed") and len(word) - 2 >= 3:
        stem = word[:-2]
        if not any(c in _VOWELS for c in stem):
            return word
        undone = _undouble(stem)
        return undone if undone != stem else _restore_e(stem)
    if word.endswith(("ches", "shes", "xes", "zes", "sses")):
        return word[:-2]
    if word.endswith("s") and not word.endswith(_PROTECTED_S):
        return word[:-1]
    return word


def lemmatize(word: str, exceptions: dict | None = None) -> str:
    """Suffix-rule lemmatizer, iterated to a fixed point so it is idempotent."""
    if exceptions is None:
        exceptions = _resources()[1]
    seen = {word}
    while True:
        nxt = _lemma_once(word, exceptions)
        if nxt == word or nxt in seen:
            return nxt
        seen.add(nxt)
        word = nxt


def expand_contractions(text: str, table: dict | None = None) -> str:
    if table is None:
        table = _resources()[2]
    text = text.replace("’", "'").replace("‘", "'")
    out = []
    for tok in text.split():
        core = tok.strip(".,!?;:\"()[]")
        rep = table.get(core)
        if rep is None and core.endswith("n't"):
            rep = core[:-3] + " not"
        elif rep is None and core.endswith("'s"):
            rep = core[:-2]  # possessive
        out.append(rep if rep is not None else tok)
    return " ".join(out)


@dataclass(frozen=True)
class NormalizeConfig:
    remove_stopwords: bool = True
    stopwords_file: str | None = None
    lemma_file: str | None = None
    contractions_file: str | None = None


def normalize(utterance: str, cfg: NormalizeConfig = NormalizeConfig()) -> list[str]:
    """lowercase -> contraction expansion -> punctuation strip -> stopwords -> lemmas."""
    stop, lemmas, contractions = _resources(cfg.stopwords_file, cfg.lemma_file, cfg.contractions_file)
    text = expand_contractions(utterance.lower(), contractions)
    tokens = _NON_ALNUM.sub(" ", text).split()
    if cfg.remove_stopwords:
        tokens = [t for t in tokens if t not in stop]
    tokens = [lemmatize(t, lemmas) for t in tokens]
    if cfg.remove_stopwords:
        # a lemma can itself be a stopword; dropping it keeps the pipeline idempotent
        tokens = [t for t in tokens if t not in stop]
    return tokens


# -- vocabulary --------------------------------------------------------------------

class Vocabulary:
    """Index 0 is padding; words occupy 1..V-1 by descending frequency (ties
    lexicographic); [UNK] takes index V."""

    def __init__(self, words: Sequence[str]):
        words = list(words)
        if UNK_TOKEN in words:
            words.remove(UNK_TOKEN)
        self.words = words + [UNK_TOKEN]
        self.index = {w: i + 1 for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ValueError("duplicate words in vocabulary")

    @property
    def unk(self) -> int:
        return self.index[UNK_TOKEN]

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        unk = self.unk
        return np.array([self.index.get(t, unk) for t in tokens], dtype=np.int64)

    def decode(self, indices: Iterable[int]) -> list[str]:
        return [self.words[i - 1] for i in indices if i != PAD]

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.words).encode("utf-8")).hexdigest()


def build_vocabulary(token_streams: Iterable[Sequence[str]]) -> Vocabulary:
    counts = Counter()
    for stream in token_streams:
        counts.update(stream)
    counts.pop(UNK_TOKEN, None)
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ordered = sorted(counts, key=lambda w: (-counts[w], w))
    return Vocabulary(ordered)


# -- windows --------------------------------------------------------------------------

@dataclass
class TextWindow:
    subject_id: str
    token_indices: np.ndarray
    label: int


def window_stride(window_size: int) -> int:
    return window_size - int(np.floor(0.2 * window_size))


def window_tokens(tokens: Sequence[int], window_size: int) -> list[np.ndarray]:
    """Fixed-length windows with 20% overlap; a short tail is zero-padded when it
    holds at least 20% of a window and dropped otherwise."""
    if window_size < 5:
        raise ValueError(f"window size must be >= 5, got {window_size}")
    tokens = np.asarray(tokens, dtype=np.int64)
    n = len(tokens)
    stride = window_stride(window_size)
    out = []
    offset = 0
    while offset < n:
        chunk = tokens[offset:offset + window_size]
        if len(chunk) == window_size:
            out.append(chunk.copy())
        elif len(chunk) >= 0.2 * window_size:
            padded = np.zeros(window_size, dtype=np.int64)
            padded[:len(chunk)] = chunk
            out.append(padded)
        if offset + window_size >= n:
            break
        offset += stride
    return out


# -- embeddings --------------------------------------------------------------------

@dataclass
class EmbeddingTable:
    matrix: np.ndarray  # (len(vocab) + 1, dim); row 0 is padding
    coverage: float


def read_embedding_file(path, dim: int = EMBEDDING_DIM) -> dict[str, np.ndarray]:
    vectors = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\r\n").split(" ")
            if len(parts) == 1 and not parts[0]:
                continue
            if len(parts) - 1 != dim:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected {dim} values after the token, found {len(parts) - 1}")
            try:
                vec = np.array([float(v) for v in parts[1:]], dtype=np.float32)
            except ValueError:
                raise EmbeddingFormatError(f"{path}:{lineno}: non-numeric embedding value") from None
            vectors[parts[0]] = vec
    return vectors


def load_embeddings(path, vocab: Vocabulary, dim: int = EMBEDDING_DIM) -> EmbeddingTable:
    vectors = read_embedding_file(path, dim)
    matrix = np.zeros((len(vocab) + 1, dim), dtype=np.float32)
    unk_row = (np.mean(np.stack(list(vectors.values())), axis=0).astype(np.float32)
               if vectors else np.zeros(dim, dtype=np.float32))
    found = 0
    for word, idx in vocab.index.items():
        if word == UNK_TOKEN:
            continue
        vec = vectors.get(word)
        if vec is None:
            matrix[idx] = unk_row
        else:
            matrix[idx] = vec
            found += 1
    matrix[vocab.unk] = unk_row
    n_words = len(vocab) - 1
    coverage = found / n_words if n_words else 0.0
    log.info("embedding coverage %.3f (%d of %d words)", coverage, found, n_words)
    return EmbeddingTable(matrix, coverage)


def write_embedding_file(path, vectors: dict[str, np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for word, vec in vectors.items():
            fh.write(word + " " + " ".join(repr(float(v)) for v in np.asarray(vec, dtype=np.float32)) + "\n")
