"""Training regimes, the epoch loop, dev-set model selection, and grid search.

The offline regime trains on single utterances (its masked intent loss then
reduces to cross-entropy at the final timestep); online regimes train on
streams stitched from up to max_utts_train consecutive utterances. Updates
are batch-size-1 Adam steps with global-norm gradient clipping.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evaluation, models, neural
from .corpus import Corpus, StreamSet, Vocabulary, build_vocab, stitch_streams
from .models import ModelConfig, Parameters, Variant

GRID_HIDDEN = (32, 64, 128, 256)
GRID_DROPOUT = (0.1, 0.15, 0.2, 0.25, 0.3)
DEFAULT_MAX_UTTS_ONLINE = 3


@dataclass(frozen=True)
class TrainSpec:
    """Everything train() needs besides the corpora.

    The config must carry intent_labels and vocab_tokens; make_config builds
    one from a training corpus.
    """

    config: ModelConfig
    lr: float = 0.001
    epochs: int = 20
    max_utts_train: int | None = None  # None: 1 for offline, 3 for online regimes
    seed: int = 0
    clip_norm: float = 5.0
    grid_hidden: tuple[int, ...] = GRID_HIDDEN
    grid_dropout: tuple[float, ...] = GRID_DROPOUT

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.max_utts_train is not None and self.max_utts_train < 1:
            raise ValueError("max_utts_train must be >= 1")
        if self.config.variant is Variant.OFFLINE and self.max_utts_train not in (None, 1):
            raise ValueError("the offline regime trains on single utterances")
        object.__setattr__(self, "grid_hidden", tuple(self.grid_hidden))
        object.__setattr__(self, "grid_dropout", tuple(self.grid_dropout))

    @property
    def resolved_max_utts(self) -> int:
        if self.max_utts_train is not None:
            return self.max_utts_train
        return 1 if self.config.variant is Variant.OFFLINE else DEFAULT_MAX_UTTS_ONLINE


@dataclass(frozen=True)
class TrainHistory:
    """Per-epoch curves; accuracies are nan where the variant lacks the branch."""

    train_loss: tuple[float, ...]
    dev_intent_acc: tuple[float, ...]
    dev_eos_acc: tuple[float, ...]
    clip_events: int
    best_epoch: int

    def __post_init__(self):
        n = len(self.train_loss)
        if len(self.dev_intent_acc) != n or len(self.dev_eos_acc) != n:
            raise ValueError("history series must share one length")
        if not 0 <= self.best_epoch < n:
            raise ValueError("best_epoch out of range")

    @property
    def best_dev(self) -> float:
        """The selection metric at the selected epoch."""
        series = self.dev_intent_acc
        if all(math.isnan(v) for v in series):
            series = self.dev_eos_acc
        return series[self.best_epoch]


def make_config(variant, train_corpus: Corpus, *, min_count: int = 1,
                embedding_dim: int = 556, hidden_dim: int = 64, dropout: float = 0.0,
                eos_threshold: float = 0.5, seed: int = 0) -> ModelConfig:
    """Build a self-describing config: vocabulary from the training corpus
    only, intent ids in first-appearance order."""
    vocab = build_vocab(train_corpus, min_count)
    return ModelConfig(variant=Variant(variant), vocab_size=len(vocab),
                       n_intents=len(train_corpus.intent_set),
                       embedding_dim=embedding_dim, hidden_dim=hidden_dim,
                       dropout=dropout, eos_threshold=eos_threshold, seed=seed,
                       intent_labels=train_corpus.intent_set,
                       vocab_tokens=vocab.id_to_token)


def config_vocab(config: ModelConfig) -> Vocabulary:
    if config.vocab_tokens is None:
        raise ValueError("config carries no vocabulary; build it with make_config")
    return Vocabulary.from_tokens(config.vocab_tokens)


def _validate(spec: TrainSpec, train_corpus: Corpus, dev_corpus: Corpus) -> None:
    if spec.config.intent_labels is None or spec.config.vocab_tokens is None:
        raise ValueError("config must carry intent_labels and vocab_tokens; "
                         "build it with make_config")
    if not train_corpus.utterances or not dev_corpus.utterances:
        raise ValueError("empty corpus")
    labels = set(spec.config.intent_labels)
    stray_train = sorted(set(train_corpus.intent_set) - labels)
    if stray_train:
        raise ValueError(f"config does not cover training intents: {stray_train}")
    stray_dev = sorted(set(dev_corpus.intent_set) - labels)
    if stray_dev:
        raise ValueError(f"intents present in dev but not in train: {stray_dev}")


def training_streams(spec: TrainSpec, train_corpus: Corpus) -> StreamSet:
    return stitch_streams(train_corpus, config_vocab(spec.config),
                          spec.resolved_max_utts, spec.seed, spec.config.intent_labels)


def dev_streams(spec: TrainSpec, dev_corpus: Corpus) -> StreamSet:
    """Dev streams are stitched once with a seed offset so they never mirror
    the training groupings."""
    return stitch_streams(dev_corpus, config_vocab(spec.config),
                          spec.resolved_max_utts, spec.seed + 1, spec.config.intent_labels)


def _dev_metrics(params: Parameters, config: ModelConfig, dev_set: StreamSet):
    """(intent accuracy at oracle EOS, per-token EOS accuracy); nan where absent."""
    outputs = evaluation.run_streams(params, config, dev_set)
    intent_acc = eos_acc = float("nan")
    if config.variant.has_intent:
        intent_acc, _ = evaluation.oracle_accuracy(dev_set, outputs.intent_logits)
    if config.variant.has_eos:
        report = evaluation.predicted_report(dev_set, None, outputs.eos_probs,
                                             config.eos_threshold)
        eos_acc = report.eos_token_acc
    return intent_acc, eos_acc


def train(spec: TrainSpec, train_corpus: Corpus,
          dev_corpus: Corpus) -> tuple[Parameters, TrainHistory]:
    """Run the full training loop; returns the dev-best parameters.

    Deterministic under spec.seed: stream stitching, per-epoch sample order,
    and dropout all derive from it. Dev evaluation runs in inference mode.
    The best epoch is the first one attaining the maximum dev metric (intent
    accuracy at oracle EOS, or per-token EOS accuracy for the EOS-only
    variant).
    """
    _validate(spec, train_corpus, dev_corpus)
    config = spec.config
    train_set = training_streams(spec, train_corpus)
    dev_set = dev_streams(spec, dev_corpus)

    params = models.init_model(config)
    adam = neural.init_adam(params.tensors())
    rng = np.random.default_rng(spec.seed)

    losses: list[float] = []
    dev_intent: list[float] = []
    dev_eos: list[float] = []
    clip_events = 0
    best_params = params.copy()
    best_metric = -math.inf
    best_epoch = 0

    for epoch in range(spec.epochs):
        order = rng.permutation(len(train_set.samples))
        total = 0.0
        for idx in order:
            sample = train_set.samples[idx]
            result = models.forward(params, config, sample.token_ids,
                                    training=True, rng=rng)
            loss, d_int, d_eos = models.sequence_loss_grads(
                config, result, sample.intent_ids, sample.eos_flags)
            grads = models.backward(params, config, result.tape, d_int, d_eos)
            _, clipped = neural.clip_global_norm(grads, spec.clip_norm)
            clip_events += clipped
            neural.adam_step(params.tensors(), grads, adam, lr=spec.lr)
            total += loss
        losses.append(total / len(train_set.samples))

        intent_acc, eos_acc = _dev_metrics(params, config, dev_set)
        dev_intent.append(intent_acc)
        dev_eos.append(eos_acc)
        metric = intent_acc if config.variant.has_intent else eos_acc
        if metric > best_metric:
            best_metric = metric
            best_epoch = epoch
            best_params = params.copy()

    history = TrainHistory(tuple(losses), tuple(dev_intent), tuple(dev_eos),
                           clip_events, best_epoch)
    return best_params, history


@dataclass(frozen=True)
class GridSearchResult:
    params: Parameters
    config: ModelConfig
    history: TrainHistory
    all_results: tuple[tuple[int, float, float], ...]  # (hidden_dim, dropout, best_dev)


def grid_search(spec: TrainSpec, train_corpus: Corpus,
                dev_corpus: Corpus) -> GridSearchResult:
    """Train every (hidden_dim, dropout) grid point and keep the dev-best.

    Points run in ascending order and improvements must be strict, so ties
    resolve to the smaller hidden_dim, then the smaller dropout.
    """
    if not spec.grid_hidden or not spec.grid_dropout:
        raise ValueError("empty hyperparameter grid")
    best = None
    results: list[tuple[int, float, float]] = []
    for hidden in sorted(set(spec.grid_hidden)):
        for dropout in sorted(set(spec.grid_dropout)):
            config = dataclasses.replace(spec.config, hidden_dim=hidden, dropout=dropout)
            point = dataclasses.replace(spec, config=config)
            params, history = train(point, train_corpus, dev_corpus)
            results.append((hidden, dropout, history.best_dev))
            if best is None or history.best_dev > best[2].best_dev:
                best = (params, config, history)
    return GridSearchResult(best[0], best[1], best[2], tuple(results))


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


def _float_tuple(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


_SPEC_PARSERS = {"lr": float, "epochs": int, "max_utts_train": int, "seed": int,
                 "clip_norm": float, "grid_hidden": _int_tuple,
                 "grid_dropout": _float_tuple}


def parse_train_options(path) -> dict:
    """Read TrainSpec field overrides from a key=value file (blank lines and
    #-comments ignored)."""
    kwargs = {}
    path = Path(path)
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SPEC_PARSERS:
            raise ValueError(f"{path}:{lineno}: unknown training option {key!r}")
        try:
            kwargs[key] = _SPEC_PARSERS[key](value)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad value for {key!r}: {value!r}") from exc
    return kwargs


def load_train_spec(path, config: ModelConfig) -> TrainSpec:
    return TrainSpec(config=config, **parse_train_options(path))


HISTORY_CSV_HEADER = "epoch,train_loss,dev_intent_acc,dev_eos_acc"


def _fmt_acc(value: float) -> str:
    return "nan" if math.isnan(value) else f"{value:.6f}"


def history_csv(history: TrainHistory) -> str:
    lines = [HISTORY_CSV_HEADER]
    for epoch in range(len(history.train_loss)):
        lines.append(f"{epoch},{history.train_loss[epoch]:.6f},"
                     f"{_fmt_acc(history.dev_intent_acc[epoch])},"
                     f"{_fmt_acc(history.dev_eos_acc[epoch])}")
    return "\n".join(lines)


def save_history(history: TrainHistory, path) -> None:
    Path(path).write_text(history_csv(history) + "\n", encoding="utf-8")
