"""Shared fixtures: small corpora and cached trained models.

Session-scoped model fixtures keep the suite fast; tests that mutate
parameters must copy them first.
"""

import numpy as np
import pytest

from islu.corpus import Corpus, Utterance, build_vocab, gen_synthetic
from islu.models import ModelConfig, Variant, init_model
from islu.training import TrainSpec, make_config, train


def make_model(variant, vocab_size=7, embedding_dim=3, hidden_dim=2,
               n_intents=2, seed=0, **kw):
    cfg = ModelConfig(variant=Variant(variant), vocab_size=vocab_size,
                      embedding_dim=embedding_dim, hidden_dim=hidden_dim,
                      n_intents=n_intents, seed=seed, **kw)
    return init_model(cfg), cfg


@pytest.fixture
def tiny_corpus():
    return Corpus.from_utterances([
        Utterance(("turn", "on", "light", "stop"), "switch"),
        Utterance(("play", "some", "jazz", "stop"), "music"),
        Utterance(("light", "off", "stop"), "switch"),
        Utterance(("play", "rock", "stop"), "music"),
    ])


@pytest.fixture(scope="session")
def synth_small():
    return gen_synthetic(3, 30, (3, 6), seed=5)


@pytest.fixture(scope="session")
def trained_online(synth_small):
    """A quickly trained stream-regime intent model plus its vocabulary."""
    cfg = make_config("online", synth_small, embedding_dim=12, hidden_dim=12, seed=0)
    params, history = train(TrainSpec(config=cfg, epochs=6, seed=0),
                            synth_small, synth_small)
    return params, cfg


@pytest.fixture(scope="session")
def trained_mt(synth_small):
    """A quickly trained dual-branch model (intent + boundary)."""
    cfg = make_config("multitask", synth_small, embedding_dim=12, hidden_dim=12, seed=0)
    params, history = train(TrainSpec(config=cfg, epochs=6, seed=0),
                            synth_small, synth_small)
    return params, cfg


@pytest.fixture(scope="session")
def trained_eos(synth_small):
    cfg = make_config("eos_only", synth_small, embedding_dim=12, hidden_dim=12, seed=0)
    params, history = train(TrainSpec(config=cfg, epochs=6, seed=0),
                            synth_small, synth_small)
    return params, cfg
