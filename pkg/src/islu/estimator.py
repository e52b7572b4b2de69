"""Estimator layer: fit/predict wrappers around the training pipeline.

StreamingIntentClassifier classifies whole utterances (intent at the final
token, the oracle-EOS convention) and exposes the underlying model for
streaming use. EosDetector labels every token with an end-of-utterance
probability.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import models
from .models import Variant
from .neural import sigmoid, softmax
from .training import TrainSpec, config_vocab, make_config, train
from .validation import as_token_sequences, corpus_from_xy, split_train_dev


class StreamingIntentClassifier(ClassifierMixin, BaseEstimator):
    """Intent classifier over token sequences.

    X is an iterable of utterances (whitespace-joined strings or token
    sequences); y holds one intent label per utterance. A slice of the
    training data, split per intent, serves as the dev set for epoch
    selection. After fit, ``params_`` and ``config_`` plug directly into the
    streaming and evaluation layers.
    """

    def __init__(self, variant="multitask", embedding_dim=64, hidden_dim=64,
                 dropout=0.0, lr=0.001, epochs=20, max_utts_train=None,
                 min_count=1, eos_threshold=0.5, validation_fraction=0.1, seed=0):
        self.variant = variant
        self.embedding_dim = embedding_dim
        self.hidden_dim = hidden_dim
        self.dropout = dropout
        self.lr = lr
        self.epochs = epochs
        self.max_utts_train = max_utts_train
        self.min_count = min_count
        self.eos_threshold = eos_threshold
        self.validation_fraction = validation_fraction
        self.seed = seed

    def fit(self, X, y):
        variant = Variant(self.variant)
        if not variant.has_intent:
            raise ValueError("eos_only has no intent output; use EosDetector")
        corpus = corpus_from_xy(X, y)
        if len(corpus.intent_set) < 2:
            raise ValueError("need at least 2 intent classes")
        train_c, dev_c = split_train_dev(corpus, self.validation_fraction, self.seed)
        config = make_config(variant, train_c, min_count=self.min_count,
                             embedding_dim=self.embedding_dim, hidden_dim=self.hidden_dim,
                             dropout=self.dropout, eos_threshold=self.eos_threshold,
                             seed=self.seed)
        spec = TrainSpec(config=config, lr=self.lr, epochs=self.epochs,
                         max_utts_train=self.max_utts_train, seed=self.seed)
        self.params_, self.history_ = train(spec, train_c, dev_c)
        self.config_ = config
        self.vocab_ = config_vocab(config)
        self.classes_ = np.asarray(config.intent_labels, dtype=object)
        return self

    def _final_logits(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        rows = []
        for tokens in as_token_sequences(X):
            result = models.forward(self.params_, self.config_,
                                    self.vocab_.encode(tokens), training=False)
            rows.append(result.intent_logits[-1])
        return np.vstack(rows)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self._final_logits(X), axis=1)

    def predict(self, X) -> np.ndarray:
        logits = self._final_logits(X)
        return self.classes_[np.argmax(logits, axis=1)]


class EosDetector(BaseEstimator):
    """Per-token end-of-utterance detector.

    fit treats each training sequence as one utterance (its final token is
    the positive example); streams stitched from several utterances provide
    the interior positives and negatives. predict_proba returns one
    probability array per input sequence; predict thresholds them.
    """

    def __init__(self, embedding_dim=64, hidden_dim=64, dropout=0.0, lr=0.001,
                 epochs=20, max_utts_train=None, min_count=1, eos_threshold=0.5,
                 validation_fraction=0.1, seed=0):
        self.embedding_dim = embedding_dim
        self.hidden_dim = hidden_dim
        self.dropout = dropout
        self.lr = lr
        self.epochs = epochs
        self.max_utts_train = max_utts_train
        self.min_count = min_count
        self.eos_threshold = eos_threshold
        self.validation_fraction = validation_fraction
        self.seed = seed

    def fit(self, X, y=None):
        seqs = as_token_sequences(X)
        corpus = corpus_from_xy(seqs, ["utterance"] * len(seqs))
        train_c, dev_c = split_train_dev(corpus, self.validation_fraction, self.seed)
        config = make_config(Variant.EOS_ONLY, train_c, min_count=self.min_count,
                             embedding_dim=self.embedding_dim, hidden_dim=self.hidden_dim,
                             dropout=self.dropout, eos_threshold=self.eos_threshold,
                             seed=self.seed)
        spec = TrainSpec(config=config, lr=self.lr, epochs=self.epochs,
                         max_utts_train=self.max_utts_train, seed=self.seed)
        self.params_, self.history_ = train(spec, train_c, dev_c)
        self.config_ = config
        self.vocab_ = config_vocab(config)
        return self

    def predict_proba(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "params_")
        probs = []
        for tokens in as_token_sequences(X):
            result = models.forward(self.params_, self.config_,
                                    self.vocab_.encode(tokens), training=False)
            probs.append(sigmoid(result.eos_logits))
        return probs

    def predict(self, X) -> list[np.ndarray]:
        return [(p >= self.eos_threshold).astype(np.int64) for p in self.predict_proba(X)]
