"""Shared fixtures: a small corpus and model config sized for fast unit
tests. The acceptance suite builds its own full-scale artifacts."""

import numpy as np
import pytest

from pivotgen import corpus as corpus_mod
from pivotgen.config import RunConfig
from pivotgen.model import ModelConfig


@pytest.fixture(scope="session")
def small_corpus() -> corpus_mod.Corpus:
    return corpus_mod.build_corpus(corpus_mod.CorpusParams(scenes=160, test=20, seed=3))


@pytest.fixture(scope="session")
def small_mcfg() -> ModelConfig:
    return ModelConfig()


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


def tiny_run_config(**pipeline_overrides) -> RunConfig:
    """Pipeline config with very few epochs, for CLI-level smoke tests."""
    run = RunConfig()
    run.pipeline.update(
        {"epochs_align_vision": 2, "epochs_align_lingual": 2, "epochs_dlr": 2, "epochs_finetune": 2}
    )
    run.pipeline.update(pipeline_overrides)
    return run
