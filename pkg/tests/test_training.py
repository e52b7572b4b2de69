"""Training loop behavior: learnability, determinism, selection, and the
grid search plus its option-file front end."""

import dataclasses
import math

import numpy as np
import pytest

from islu import evaluation
from islu.corpus import Corpus, Utterance
from islu.models import ModelConfig, Variant
from islu.training import (
    HISTORY_CSV_HEADER,
    TrainHistory,
    TrainSpec,
    config_vocab,
    dev_streams,
    grid_search,
    history_csv,
    load_train_spec,
    make_config,
    parse_train_options,
    save_history,
    train,
    training_streams,
)

ALL_VARIANTS = [v.value for v in Variant]


def overfit_corpus():
    return Corpus.from_utterances([
        Utterance(("turn", "on", "the", "light", "stop"), "switch"),
        Utterance(("play", "some", "loud", "jazz", "stop"), "music"),
        Utterance(("dim", "light", "now", "stop"), "switch"),
        Utterance(("play", "rock", "stop"), "music"),
        Utterance(("light", "off", "stop"), "switch"),
    ])


def separable_corpus():
    """20 utterances whose every content token is intent-specific."""
    rng = np.random.default_rng(3)
    kw = {"alpha": ("red", "green", "blue"), "beta": ("cat", "dog", "fox")}
    utts = []
    for i in range(20):
        intent = "alpha" if i % 2 == 0 else "beta"
        n = int(rng.integers(2, 6))
        toks = [kw[intent][int(rng.integers(0, 3))] for _ in range(n)]
        toks.append("over")
        utts.append(Utterance(tuple(toks), intent))
    return Corpus.from_utterances(utts)


# -------------------------------------------------------------------- specs


def test_trainspec_validation():
    corpus = overfit_corpus()
    cfg = make_config("online", corpus, embedding_dim=4, hidden_dim=4)
    with pytest.raises(ValueError):
        TrainSpec(config=cfg, epochs=0)
    with pytest.raises(ValueError):
        TrainSpec(config=cfg, lr=0.0)
    with pytest.raises(ValueError):
        TrainSpec(config=cfg, clip_norm=0.0)
    with pytest.raises(ValueError):
        TrainSpec(config=cfg, max_utts_train=0)
    off = make_config("offline", corpus, embedding_dim=4, hidden_dim=4)
    with pytest.raises(ValueError, match="single utterances"):
        TrainSpec(config=off, max_utts_train=3)


def test_resolved_max_utts_defaults():
    corpus = overfit_corpus()
    off = TrainSpec(config=make_config("offline", corpus, embedding_dim=4, hidden_dim=4))
    onl = TrainSpec(config=make_config("online", corpus, embedding_dim=4, hidden_dim=4))
    assert off.resolved_max_utts == 1
    assert onl.resolved_max_utts == 3
    wide = dataclasses.replace(onl, max_utts_train=7)
    assert wide.resolved_max_utts == 7


def test_make_config_carries_vocab_and_labels():
    corpus = overfit_corpus()
    cfg = make_config("multitask", corpus, embedding_dim=4, hidden_dim=4)
    assert cfg.intent_labels == ("switch", "music")   # first appearance order
    assert cfg.n_intents == 2
    vocab = config_vocab(cfg)
    assert vocab.token_to_id["<unk>"] == 0
    assert len(vocab) == cfg.vocab_size
    assert "light" in vocab.token_to_id

    bare = ModelConfig(variant="multitask", vocab_size=5, n_intents=2,
                       embedding_dim=4, hidden_dim=4)
    with pytest.raises(ValueError, match="make_config"):
        config_vocab(bare)


def test_training_regimes_respect_utterance_caps():
    corpus = overfit_corpus()
    off = TrainSpec(config=make_config("offline", corpus, embedding_dim=4, hidden_dim=4))
    for sample in training_streams(off, corpus).samples:
        assert len(sample.utt_spans) == 1
    onl = TrainSpec(config=make_config("online", corpus, embedding_dim=4, hidden_dim=4),
                    max_utts_train=2)
    assert all(1 <= len(s.utt_spans) <= 2 for s in training_streams(onl, corpus).samples)


# ----------------------------------------------------------------- training


def test_separable_corpus_reaches_perfect_dev_accuracy():
    corpus = separable_corpus()
    cfg = make_config("online", corpus, embedding_dim=16, hidden_dim=16, seed=0)
    _, history = train(TrainSpec(config=cfg, lr=0.01, epochs=20, seed=0),
                       corpus, corpus)
    assert history.dev_intent_acc[-1] == 1.0
    assert history.best_dev == 1.0


def test_history_length_matches_epochs():
    corpus = overfit_corpus()
    cfg = make_config("online", corpus, embedding_dim=4, hidden_dim=4)
    _, history = train(TrainSpec(config=cfg, epochs=1, seed=0), corpus, corpus)
    assert len(history.train_loss) == 1
    assert len(history.dev_intent_acc) == 1
    assert len(history.dev_eos_acc) == 1
    assert history.best_epoch == 0


def test_training_is_deterministic():
    corpus = overfit_corpus()
    cfg = make_config("multitask_fb", corpus, embedding_dim=6, hidden_dim=6,
                      dropout=0.2, seed=1)
    spec = TrainSpec(config=cfg, epochs=3, seed=1)
    params_a, hist_a = train(spec, corpus, corpus)
    params_b, hist_b = train(spec, corpus, corpus)
    for name in params_a.tensors():
        assert np.array_equal(params_a.tensors()[name], params_b.tensors()[name])
    assert hist_a == hist_b


@pytest.mark.parametrize("variant", ALL_VARIANTS)
def test_overfit_loss_drop(variant):
    corpus = overfit_corpus()
    cfg = make_config(variant, corpus, embedding_dim=16, hidden_dim=16, seed=0)
    _, history = train(TrainSpec(config=cfg, lr=0.01, epochs=20, seed=0),
                       corpus, corpus)
    assert history.train_loss[-1] <= 0.1 * history.train_loss[0]


def test_best_epoch_is_first_maximum():
    corpus = separable_corpus()
    cfg = make_config("online", corpus, embedding_dim=16, hidden_dim=16, seed=0)
    _, history = train(TrainSpec(config=cfg, lr=0.01, epochs=10, seed=0),
                       corpus, corpus)
    best = max(history.dev_intent_acc)
    assert history.dev_intent_acc[history.best_epoch] == best
    assert all(v < best for v in history.dev_intent_acc[:history.best_epoch])


def test_returned_params_reproduce_best_dev_metric():
    """Dev evaluation runs in inference mode, so re-scoring the returned
    parameters on the dev streams must land exactly on the recorded value."""
    corpus = overfit_corpus()
    cfg = make_config("online", corpus, embedding_dim=6, hidden_dim=6,
                      dropout=0.3, seed=0)
    spec = TrainSpec(config=cfg, epochs=3, seed=0)
    params, history = train(spec, corpus, corpus)
    dev = dev_streams(spec, corpus)
    outputs = evaluation.run_streams(params, cfg, dev)
    acc, _ = evaluation.oracle_accuracy(dev, outputs.intent_logits)
    assert acc == history.dev_intent_acc[history.best_epoch]


def test_eos_only_selects_on_eos_accuracy():
    corpus = overfit_corpus()
    cfg = make_config("eos_only", corpus, embedding_dim=6, hidden_dim=6, seed=0)
    _, history = train(TrainSpec(config=cfg, epochs=2, seed=0), corpus, corpus)
    assert all(math.isnan(v) for v in history.dev_intent_acc)
    assert history.best_dev == history.dev_eos_acc[history.best_epoch]


def test_dev_intent_not_in_train_raises():
    corpus = overfit_corpus()
    cfg = make_config("online", corpus, embedding_dim=4, hidden_dim=4)
    dev = Corpus.from_utterances([Utterance(("hello", "stop"), "greeting")])
    with pytest.raises(ValueError, match="dev but not in train"):
        train(TrainSpec(config=cfg, epochs=1), corpus, dev)


def test_config_without_vocab_rejected_by_train():
    corpus = overfit_corpus()
    bare = ModelConfig(variant="online", vocab_size=12, n_intents=2,
                       embedding_dim=4, hidden_dim=4)
    with pytest.raises(ValueError, match="make_config"):
        train(TrainSpec(config=bare, epochs=1), corpus, corpus)


def test_history_invariants():
    with pytest.raises(ValueError):
        TrainHistory(train_loss=(1.0, 0.5), dev_intent_acc=(0.5,),
                     dev_eos_acc=(float("nan"), float("nan")),
                     clip_events=0, best_epoch=0)
    with pytest.raises(ValueError):
        TrainHistory(train_loss=(1.0,), dev_intent_acc=(0.5,),
                     dev_eos_acc=(float("nan"),), clip_events=0, best_epoch=1)


# -------------------------------------------------------------- grid search


def test_grid_of_one_point_equals_train():
    corpus = overfit_corpus()
    cfg = make_config("online", corpus, embedding_dim=6, hidden_dim=6, seed=0)
    spec = TrainSpec(config=cfg, epochs=2, seed=0,
                     grid_hidden=(6,), grid_dropout=(0.0,))
    direct_params, direct_hist = train(spec, corpus, corpus)
    result = grid_search(spec, corpus, corpus)
    assert len(result.all_results) == 1
    assert history_csv(result.history) == history_csv(direct_hist)
    assert result.history.best_epoch == direct_hist.best_epoch
    for name in direct_params.tensors():
        assert np.array_equal(result.params.tensors()[name],
                              direct_params.tensors()[name])


def test_grid_runs_every_point_and_breaks_ties_small_first():
    corpus = separable_corpus()
    cfg = make_config("online", corpus, embedding_dim=16, hidden_dim=16, seed=0)
    spec = TrainSpec(config=cfg, lr=0.01, epochs=8, seed=0,
                     grid_hidden=(16, 32), grid_dropout=(0.0, 0.2))
    result = grid_search(spec, corpus, corpus)
    assert len(result.all_results) == 4
    assert [(h, d) for h, d, _ in result.all_results] == [
        (16, 0.0), (16, 0.2), (32, 0.0), (32, 0.2)]
    assert result.history.best_dev == max(s for _, _, s in result.all_results)
    scores = {s for _, _, s in result.all_results}
    assert scores == {1.0}, "tie-break scenario requires equal scores"
    assert result.config.hidden_dim == 16
    assert result.config.dropout == 0.0


def test_grid_empty_raises():
    corpus = overfit_corpus()
    cfg = make_config("online", corpus, embedding_dim=4, hidden_dim=4)
    spec = TrainSpec(config=cfg, epochs=1, grid_hidden=(), grid_dropout=(0.0,))
    with pytest.raises(ValueError, match="grid"):
        grid_search(spec, corpus, corpus)


# ------------------------------------------------------------- option files


def test_parse_train_options(tmp_path):
    p = tmp_path / "opts.txt"
    p.write_text(
        "# training overrides\n"
        "\n"
        "lr = 0.01\n"
        "epochs=5\n"
        "max_utts_train = 4\n"
        "grid_hidden = 32, 64\n"
        "grid_dropout = 0.0 0.3\n",
        encoding="utf-8")
    opts = parse_train_options(p)
    assert opts == {"lr": 0.01, "epochs": 5, "max_utts_train": 4,
                    "grid_hidden": (32, 64), "grid_dropout": (0.0, 0.3)}


def test_parse_train_options_errors(tmp_path):
    p = tmp_path / "opts.txt"
    p.write_text("lr = 0.01\nnot a pair\n", encoding="utf-8")
    with pytest.raises(ValueError, match=":2: expected key=value"):
        parse_train_options(p)

    p.write_text("banana = 3\n", encoding="utf-8")
    with pytest.raises(ValueError, match=":1: unknown training option"):
        parse_train_options(p)

    p.write_text("\n\nepochs = soon\n", encoding="utf-8")
    with pytest.raises(ValueError, match=":3: bad value"):
        parse_train_options(p)


def test_load_train_spec(tmp_path):
    corpus = overfit_corpus()
    cfg = make_config("online", corpus, embedding_dim=4, hidden_dim=4)
    p = tmp_path / "opts.txt"
    p.write_text("epochs = 7\nseed = 11\n", encoding="utf-8")
    spec = load_train_spec(p, cfg)
    assert spec.epochs == 7
    assert spec.seed == 11
    assert spec.config is cfg


# ------------------------------------------------------------------ history


def test_history_csv_format(tmp_path):
    corpus = overfit_corpus()
    cfg = make_config("offline", corpus, embedding_dim=4, hidden_dim=4)
    _, history = train(TrainSpec(config=cfg, epochs=2, seed=0), corpus, corpus)
    text = history_csv(history)
    lines = text.splitlines()
    assert lines[0] == HISTORY_CSV_HEADER == "epoch,train_loss,dev_intent_acc,dev_eos_acc"
    assert len(lines) == 3
    assert lines[1].startswith("0,")
    assert lines[2].startswith("1,")
    assert lines[1].endswith(",nan")   # no boundary branch on this variant

    out = tmp_path / "h.csv"
    save_history(history, out)
    assert out.read_text(encoding="utf-8") == text + "\n"
