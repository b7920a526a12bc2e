import dataclasses
import numpy as np
import pytest

from moodseq.audio import load_covarep
from moodseq.datasets import read_registry
from moodseq.models import phq_to_label
from moodseq.synth import (DEFAULT_COUNTS, GeneratorConfig, build_lexicon, directory_digest, generate,
                           linear_probe, load_config, plan_subjects)
from moodseq.text import normalize, NormalizeConfig, parse_transcript, participant_utterances, \
    read_embedding_file


def test_default_config_matches_corpus_shape():
    cfg = GeneratorConfig()
    assert cfg.n_subjects == 189
    assert [sum(v) for v in DEFAULT_COUNTS.values()] == [107, 35, 47]


def test_validate_rejects_missing_class():
    cfg = GeneratorConfig(counts={"train": [1, 1, 1, 1, 0], "dev": [1] * 5, "test": [1] * 5})
    with pytest.raises(ValueError):
        cfg.validate()
    with pytest.raises(ValueError):
        GeneratorConfig(temporal_mode="bursty").validate()


def test_same_seed_gives_identical_directories(tiny_corpus, tmp_path):
    cfg = load_config(tiny_corpus / "generator.json")
    again = generate(cfg, tmp_path / "again")
    assert directory_digest(again) == directory_digest(tiny_corpus)
    other = generate(dataclasses.replace(cfg, seed=cfg.seed + 1), tmp_path / "other")
    assert directory_digest(other) != directory_digest(tiny_corpus)


def test_files_parse_cleanly(tiny_corpus):
    subjects = read_registry(tiny_corpus / "registry.csv")
    vocab_words = set()
    for s in subjects:
        m = load_covarep(tiny_corpus / "audio" / f"{s.subject_id}_COVAREP.csv")
        assert m.rows.shape[1] == 74 and set(np.unique(m.rows[:, 1])) <= {0.0, 1.0}
        assert 8.0 <= m.duration_seconds <= 60.0
        entries = parse_transcript(tiny_corpus / "transcripts" / f"{s.subject_id}_TRANSCRIPT.csv")
        assert {e.speaker for e in entries} == {"Ellie", "Participant"}
        for u in participant_utterances(entries):
            vocab_words.update(normalize(u, NormalizeConfig(remove_stopwords=False)))
    vectors = read_embedding_file(tiny_corpus / "embeddings" / "vectors_100d.txt")
    assert len(vocab_words & set(vectors)) / len(vocab_words) > 0.8


def test_partitions_disjoint_and_labels_consistent(tiny_corpus):
    subjects = read_registry(tiny_corpus / "registry.csv")
    ids = [s.subject_id for s in subjects]
    assert len(ids) == len(set(ids))
    for part in ("train", "dev", "test"):
        labels = {s.label for s in subjects if s.partition == part}
        assert labels == set(range(5))
    for spec in plan_subjects(GeneratorConfig()):
        assert phq_to_label(spec.phq8).index == spec.label


def test_experiment_sentences_shorter_by_factor():
    cfg = GeneratorConfig()
    specs = plan_subjects(cfg)
    lex = build_lexicon(cfg)
    from moodseq.synth import subject_utterances
    lengths = {False: [], True: []}
    for s in specs:
        utts = subject_utterances(cfg, s, lex, np.random.default_rng(int(s.subject_id)))
        lengths[s.experiment] += [len(u.split()) for u in utts]
    ratio = np.mean(lengths[True]) / np.mean(lengths[False])
    assert ratio < 1 and ratio == pytest.approx(cfg.experiment_length_factor, abs=0.03)


def test_durations_equal_across_groups():
    specs = plan_subjects(GeneratorConfig())
    ctl = [s.duration_s for s in specs if not s.experiment]
    exp = [s.duration_s for s in specs if s.experiment]
    assert abs(np.mean(ctl) - np.mean(exp)) < 0.5


def test_lexicon_survives_normalization():
    lex = build_lexicon(GeneratorConfig())
    keep = NormalizeConfig(remove_stopwords=False)
    for w in lex.neutral[:100] + [m for ms in lex.markers for m in ms]:
        assert normalize(w, keep) == [w]


@pytest.mark.slow
def test_linear_probe_on_default_corpus(default_corpus):
    assert linear_probe(default_corpus) > 0.9
