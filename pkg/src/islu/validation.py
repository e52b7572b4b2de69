"""Input validation helpers shared by the estimator layer.

These normalize user-facing inputs (raw strings or token lists, label
arrays) into the corpus types the training pipeline consumes.
"""

from __future__ import annotations

import numpy as np

from .corpus import Corpus, Utterance


def as_token_sequences(X) -> list[tuple[str, ...]]:
    """Coerce X into a list of non-empty token tuples.

    Accepts an iterable of strings (split on whitespace) or of token
    sequences. Tokens are lowercased to match the corpus loader.
    """
    if isinstance(X, str):
        raise TypeError("X must be an iterable of utterances, not a single string")
    seqs: list[tuple[str, ...]] = []
    for i, item in enumerate(X):
        if isinstance(item, str):
            tokens = item.split()
        else:
            tokens = [str(t) for t in item]
        if not tokens:
            raise ValueError(f"utterance {i} is empty")
        if any(not t or t != t.strip() or " " in t for t in tokens):
            raise ValueError(f"utterance {i} contains empty or whitespace tokens")
        seqs.append(tuple(t.lower() for t in tokens))
    if not seqs:
        raise ValueError("X is empty")
    return seqs


def check_labels(y, n_samples: int) -> list[str]:
    """Coerce y into one string label per sample."""
    labels = [str(v) for v in np.asarray(y).ravel()]
    if len(labels) != n_samples:
        raise ValueError(f"X has {n_samples} utterances but y has {len(labels)} labels")
    return labels


def corpus_from_xy(X, y) -> Corpus:
    seqs = as_token_sequences(X)
    labels = check_labels(y, len(seqs))
    return Corpus.from_utterances(
        Utterance(tokens, label) for tokens, label in zip(seqs, labels))


def split_train_dev(corpus: Corpus, fraction: float = 0.1,
                    seed: int = 0) -> tuple[Corpus, Corpus]:
    """Per-intent holdout split.

    Sampling within each intent keeps every intent represented in the
    training half (required: dev intents must be a subset of train's). When
    the corpus is too small to spare any utterance, dev falls back to a copy
    of train.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction {fraction} outside (0, 1)")
    rng = np.random.default_rng(seed)
    buckets: dict[str, list[Utterance]] = {label: [] for label in corpus.intent_set}
    for utt in corpus.utterances:
        buckets[utt.intent].append(utt)

    train: list[Utterance] = []
    dev: list[Utterance] = []
    for label in corpus.intent_set:
        utts = buckets[label]
        n_dev = min(int(round(fraction * len(utts))), len(utts) - 1)
        dev_idx = set(rng.permutation(len(utts))[:n_dev].tolist())
        for i, utt in enumerate(utts):
            (dev if i in dev_idx else train).append(utt)
    if not dev:
        dev = list(train)
    return Corpus.from_utterances(train), Corpus.from_utterances(dev)
