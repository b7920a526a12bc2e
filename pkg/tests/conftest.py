import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=400)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """A small generated corpus shared by pipeline, CLI and checkpoint tests."""
    from moodseq.synth import GeneratorConfig, generate

    cfg = GeneratorConfig(seed=11, counts={"train": [2, 2, 2, 2, 2], "dev": [1, 1, 1, 1, 1],
                                           "test": [1, 1, 1, 1, 1]},
                          duration_mean_s=12.0, duration_std_s=2.0, duration_min_s=8.0,
                          utterances_per_subject=20)
    return generate(cfg, tmp_path_factory.mktemp("tiny") / "corpus")


@pytest.fixture(scope="session")
def default_corpus(tmp_path_factory):
    """The default 189-subject corpus (seed 7), generated once per session."""
    from moodseq.synth import GeneratorConfig, generate

    return generate(GeneratorConfig(), tmp_path_factory.mktemp("default") / "corpus")


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split(".")[0]), k)):
            ok, detail = ACCEPTANCE[key]
            terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
