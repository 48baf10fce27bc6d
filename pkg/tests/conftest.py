import numpy as np
import pytest
import torch

from drumbench.cache import build_cache
from drumbench.codec import CodecConfig
from drumbench.synth import CorpusSpec, generate_corpus


@pytest.fixture(scope="session", autouse=True)
def single_thread_torch():
    torch.set_num_threads(max(1, torch.get_num_threads()))


@pytest.fixture(scope="session")
def tiny_spec():
    return CorpusSpec(n_performances=8, beats_choices=(8,), bpm_range=(110.0, 150.0), seed=5)


@pytest.fixture(scope="session")
def tiny_corpus(tiny_spec):
    return generate_corpus(tiny_spec, sample_rate=16000)


@pytest.fixture(scope="session")
def desk_codec():
    return CodecConfig()


@pytest.fixture(scope="session")
def tiny_cache(tiny_corpus, desk_codec, tmp_path_factory):
    out = tmp_path_factory.mktemp("cache") / "tiny"
    return build_cache(
        tiny_corpus, desk_codec, n_components=16, split_fractions=(0.5, 0.25, 0.25), seed=3,
        out_dir=out,
    )
