"""Metrics over token streams: intent accuracy at oracle and predicted
utterance boundaries, per-token and boundary-level EOS detection scores,
early-detection position distributions, and a paired permutation test.

All functions run models in inference mode (no dropout). Metric values are
plain Python floats so reports serialize cleanly.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from . import models
from .corpus import StreamSet
from .models import ModelConfig, Parameters
from .neural import sigmoid

N_BINS = 20


@dataclass
class StreamOutputs:
    """Per-sample model outputs; entries align with StreamSet.samples."""

    intent_logits: list[np.ndarray] | None  # each (T, C)
    eos_probs: list[np.ndarray] | None      # each (T,)


def run_streams(params: Parameters, config: ModelConfig, streams: StreamSet) -> StreamOutputs:
    """Forward every sample once, inference mode."""
    intent = [] if config.variant.has_intent else None
    eos = [] if config.variant.has_eos else None
    for sample in streams.samples:
        result = models.forward(params, config, sample.token_ids, training=False)
        if intent is not None:
            intent.append(result.intent_logits)
        if eos is not None:
            eos.append(sigmoid(result.eos_logits))
    return StreamOutputs(intent, eos)


@dataclass(frozen=True)
class UttRecord:
    """One gold utterance's outcome."""

    stream_index: int
    utt_index: int
    gold_intent: int
    committed: tuple[int, ...]          # intent argmax at each commit position, in order
    correct_at_oracle: bool | None
    earliest_stable: float | None       # normalized position, stable-correct prefix
    earliest_first: float | None        # normalized position of first correct argmax


@dataclass
class EvalReport:
    """All stream-level metrics; fields stay None when the inputs lack the
    branch that produces them."""

    n_utterances: int
    intent_acc_oracle: float | None = None
    intent_acc_predicted: float | None = None
    intent_acc_matched: float | None = None
    intent_acc_false_pos: float | None = None
    eos_token_acc: float | None = None
    eos_boundary_precision: float | None = None
    eos_boundary_recall: float | None = None
    eos_boundary_f1: float | None = None
    n_matched: int = 0
    n_false_pos: int = 0
    n_missed: int = 0
    records: tuple[UttRecord, ...] = ()


def _earliest_positions(argmaxes: np.ndarray, start: int, end: int, gold: int):
    """(stable, first) normalized positions, or (None, None) when the
    prediction at the utterance-final token is wrong."""
    if argmaxes[end - 1] != gold:
        return None, None
    t0 = end - 1
    while t0 > start and argmaxes[t0 - 1] == gold:
        t0 -= 1
    length = end - start
    stable = (t0 - start + 1) / length
    first_local = int(np.nonzero(argmaxes[start:end] == gold)[0][0])
    return stable, (first_local + 1) / length


def _require_samples(streams: StreamSet) -> None:
    if not streams.samples:
        raise ValueError("empty stream set")


def oracle_accuracy(streams: StreamSet, intent_logits_seq) -> tuple[float, tuple[UttRecord, ...]]:
    """Intent accuracy with gold segmentation: argmax at each utterance-final
    token, plus per-utterance records with early-detection positions."""
    _require_samples(streams)
    records = []
    correct = total = 0
    for si, sample in enumerate(streams.samples):
        argmaxes = np.argmax(intent_logits_seq[si], axis=1)
        for ui, (start, end) in enumerate(sample.utt_spans):
            gold = int(sample.intent_ids[start])
            pred = int(argmaxes[end - 1])
            ok = pred == gold
            correct += ok
            total += 1
            stable, first = _earliest_positions(argmaxes, start, end, gold)
            records.append(UttRecord(si, ui, gold, (pred,), ok, stable, first))
    return correct / total, tuple(records)


def eval_oracle(params: Parameters, config: ModelConfig, streams: StreamSet) -> EvalReport:
    """Intent accuracy assuming gold utterance boundaries."""
    if not config.variant.has_intent:
        raise ValueError("oracle intent evaluation needs an intent branch")
    outputs = run_streams(params, config, streams)
    acc, records = oracle_accuracy(streams, outputs.intent_logits)
    return EvalReport(n_utterances=len(records), intent_acc_oracle=acc, records=records)


def predicted_report(streams: StreamSet, intent_logits_seq, eos_probs_seq,
                     threshold: float) -> EvalReport:
    """All metrics derivable from per-token intent logits (optional) and EOS
    probabilities.

    Alignment rule for intent_acc_predicted: each gold utterance is scored at
    the last predicted EOS inside its span; utterances with no predicted EOS
    count as errors. intent_acc_matched restricts to utterances whose final
    token was itself a predicted EOS. intent_acc_false_pos scores predicted
    EOS at non-boundary positions against the enclosing utterance's intent.
    """
    _require_samples(streams)
    tok_correct = tok_total = 0
    tp = fp = fn = 0
    n_utts = 0
    oracle_correct = pred_correct = 0
    matched_n = matched_correct = 0
    fpos_n = fpos_correct = 0
    missed = 0
    records = []

    for si, sample in enumerate(streams.samples):
        probs = np.asarray(eos_probs_seq[si], dtype=np.float64)
        flags = np.asarray(sample.eos_flags, dtype=np.int64)
        fired = probs >= threshold
        tok_correct += int((fired.astype(np.int64) == flags).sum())
        tok_total += flags.size
        gold_pos = np.nonzero(flags)[0]
        pred_pos = np.nonzero(fired)[0]
        gold_set = set(gold_pos.tolist())
        hits = sum(1 for t in pred_pos if t in gold_set)
        tp += hits
        fp += len(pred_pos) - hits
        fn += len(gold_pos) - hits

        argmaxes = None
        if intent_logits_seq is not None:
            argmaxes = np.argmax(intent_logits_seq[si], axis=1)
            for t in pred_pos:
                if t not in gold_set:
                    fpos_n += 1
                    fpos_correct += int(argmaxes[t]) == int(sample.intent_ids[t])

        for ui, (start, end) in enumerate(sample.utt_spans):
            n_utts += 1
            gold = int(sample.intent_ids[start])
            inside = pred_pos[(pred_pos >= start) & (pred_pos < end)]
            if argmaxes is None:
                records.append(UttRecord(si, ui, gold, (), None, None, None))
                if inside.size == 0:
                    missed += 1
                elif inside[-1] == end - 1:
                    matched_n += 1
                continue
            ok_oracle = int(argmaxes[end - 1]) == gold
            oracle_correct += ok_oracle
            committed = tuple(int(argmaxes[t]) for t in inside)
            if inside.size == 0:
                missed += 1
            else:
                pred_correct += int(argmaxes[inside[-1]]) == gold
                if inside[-1] == end - 1:
                    matched_n += 1
                    matched_correct += int(argmaxes[end - 1]) == gold
            stable, first = _earliest_positions(argmaxes, start, end, gold)
            records.append(UttRecord(si, ui, gold, committed, bool(ok_oracle), stable, first))

    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    has_intent = intent_logits_seq is not None
    return EvalReport(
        n_utterances=n_utts,
        intent_acc_oracle=oracle_correct / n_utts if has_intent else None,
        intent_acc_predicted=pred_correct / n_utts if has_intent else None,
        intent_acc_matched=(matched_correct / matched_n if matched_n else 0.0) if has_intent else None,
        intent_acc_false_pos=(fpos_correct / fpos_n if fpos_n else 0.0) if has_intent else None,
        eos_token_acc=tok_correct / tok_total,
        eos_boundary_precision=precision,
        eos_boundary_recall=recall,
        eos_boundary_f1=f1,
        n_matched=matched_n,
        n_false_pos=fpos_n,
        n_missed=missed,
        records=tuple(records),
    )


def _check_vocab_compat(a: ModelConfig, b: ModelConfig) -> None:
    if a.vocab_size != b.vocab_size:
        raise ValueError(f"vocabulary mismatch: sizes {a.vocab_size} vs {b.vocab_size}")
    if (a.vocab_tokens is not None and b.vocab_tokens is not None
            and a.vocab_tokens != b.vocab_tokens):
        raise ValueError("vocabulary mismatch: models index different tokens")


def eval_predicted(intent_source, eos_source, streams: StreamSet,
                   threshold: float | None = None) -> EvalReport:
    """Metrics with predicted boundaries.

    Each source is a (params, config) pair; pass the same pair twice for a
    model with both branches, or an intent-only model plus a separate EOS
    detector. intent_source may be None for EOS-only metrics.
    """
    if eos_source is None:
        raise ValueError("eval_predicted needs an EOS source")
    eos_params, eos_config = eos_source
    if not eos_config.variant.has_eos:
        raise ValueError(f"variant {eos_config.variant.value} has no EOS branch")
    if threshold is None:
        threshold = eos_config.eos_threshold

    intent_logits_seq = None
    if intent_source is not None:
        intent_params, intent_config = intent_source
        if not intent_config.variant.has_intent:
            raise ValueError(f"variant {intent_config.variant.value} has no intent branch")
        _check_vocab_compat(intent_config, eos_config)
        if intent_params is eos_params and intent_config is eos_config:
            outputs = run_streams(intent_params, intent_config, streams)
            return predicted_report(streams, outputs.intent_logits, outputs.eos_probs, threshold)
        intent_logits_seq = run_streams(intent_params, intent_config, streams).intent_logits
    eos_probs_seq = run_streams(eos_params, eos_config, streams).eos_probs
    return predicted_report(streams, intent_logits_seq, eos_probs_seq, threshold)


def eval_eos(params: Parameters, config: ModelConfig, streams: StreamSet,
             threshold: float | None = None) -> EvalReport:
    """EOS detection metrics only (works for any variant with an EOS branch)."""
    return eval_predicted(None, (params, config), streams, threshold)


@dataclass
class EarlyDetectionDist:
    """Class-balanced histogram of normalized detection positions."""

    bin_edges: np.ndarray    # (N_BINS + 1,)
    weights: np.ndarray      # (N_BINS,) sums to 1 when any utterance qualifies
    mean_position: float


@dataclass
class EarlyDetectionResult:
    """Early-detection distributions plus the per-utterance positions they
    were built from, keyed by (stream_index, utt_index) for pairing."""

    stable: EarlyDetectionDist
    first_touch: EarlyDetectionDist
    positions_stable: dict[tuple[int, int], float]
    positions_first: dict[tuple[int, int], float]
    gold_intents: dict[tuple[int, int], int]


def class_balanced_histogram(positions: dict, gold_intents: dict) -> EarlyDetectionDist:
    """Histogram where every intent class contributes equal total mass."""
    edges = np.linspace(0.0, 1.0, N_BINS + 1)
    keys = sorted(positions)
    if not keys:
        return EarlyDetectionDist(edges, np.zeros(N_BINS), float("nan"))
    class_counts = Counter(gold_intents[k] for k in keys)
    n_classes = len(class_counts)
    weights = np.array([1.0 / (n_classes * class_counts[gold_intents[k]]) for k in keys])
    values = np.array([positions[k] for k in keys])
    hist, _ = np.histogram(values, bins=edges, weights=weights)
    return EarlyDetectionDist(edges, hist, float((weights * values).sum()))


def early_detection(params: Parameters, config: ModelConfig,
                    streams: StreamSet) -> EarlyDetectionResult:
    """How early the intent prediction becomes (and stays) correct.

    Uses gold segmentation; only utterances predicted correctly at their
    final token contribute. Positions are (t - start + 1) / span_length, in
    (0, 1]. The stable distribution is over the start of the final run of
    correct predictions; first_touch is over the first correct prediction.
    """
    if not config.variant.has_intent:
        raise ValueError("early detection needs an intent branch")
    _, records = oracle_accuracy(streams, run_streams(params, config, streams).intent_logits)
    positions_stable: dict[tuple[int, int], float] = {}
    positions_first: dict[tuple[int, int], float] = {}
    gold_intents: dict[tuple[int, int], int] = {}
    for rec in records:
        if rec.earliest_stable is None:
            continue
        key = (rec.stream_index, rec.utt_index)
        positions_stable[key] = rec.earliest_stable
        positions_first[key] = rec.earliest_first
        gold_intents[key] = rec.gold_intent
    return EarlyDetectionResult(
        stable=class_balanced_histogram(positions_stable, gold_intents),
        first_touch=class_balanced_histogram(positions_first, gold_intents),
        positions_stable=positions_stable,
        positions_first=positions_first,
        gold_intents=gold_intents,
    )


def paired_positions(a: EarlyDetectionResult, b: EarlyDetectionResult,
                     kind: str = "stable") -> tuple[np.ndarray, np.ndarray]:
    """Aligned position arrays over utterances both models detected correctly."""
    if kind not in ("stable", "first"):
        raise ValueError("kind must be 'stable' or 'first'")
    pa = a.positions_stable if kind == "stable" else a.positions_first
    pb = b.positions_stable if kind == "stable" else b.positions_first
    common = sorted(set(pa) & set(pb))
    if not common:
        raise ValueError("no utterances detected correctly by both models")
    return (np.array([pa[k] for k in common]), np.array([pb[k] for k in common]))


def permutation_test(positions_a, positions_b, n_perm: int = 10000, seed: int = 0) -> float:
    """Two-sided paired sign-flip permutation test on the mean difference.

    Returns (count of permuted |mean| >= observed |mean|, plus one) divided
    by (n_perm + 1), so the p-value is never exactly zero.
    """
    a = np.asarray(positions_a, dtype=np.float64)
    b = np.asarray(positions_b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape or a.size == 0:
        raise ValueError("paired positions must be equal-length non-empty 1-D arrays")
    diff = a - b
    observed = abs(float(diff.mean()))
    rng = np.random.default_rng(seed)
    signs = rng.integers(0, 2, size=(n_perm, diff.size)) * 2 - 1
    permuted = np.abs((signs * diff).mean(axis=1))
    count = int((permuted >= observed - 1e-12).sum())
    return (count + 1) / (n_perm + 1)


def report_to_json(report: EvalReport) -> str:
    return json.dumps(asdict(report), indent=2, sort_keys=True)


REPORT_CSV_HEADER = ("model,max_utts,n_utterances,intent_acc_oracle,intent_acc_predicted,"
                     "intent_acc_matched,intent_acc_false_pos,eos_token_acc,"
                     "eos_boundary_precision,eos_boundary_recall,eos_boundary_f1")


def _fmt(value) -> str:
    return "" if value is None else f"{value:.6f}"


def report_csv_row(model_name: str, max_utts: int, report: EvalReport) -> str:
    cells = [model_name, str(max_utts), str(report.n_utterances),
             _fmt(report.intent_acc_oracle), _fmt(report.intent_acc_predicted),
             _fmt(report.intent_acc_matched), _fmt(report.intent_acc_false_pos),
             _fmt(report.eos_token_acc), _fmt(report.eos_boundary_precision),
             _fmt(report.eos_boundary_recall), _fmt(report.eos_boundary_f1)]
    return ",".join(cells)


def histogram_csv(dist: EarlyDetectionDist) -> str:
    lines = ["bin_low,bin_high,weight"]
    for k in range(len(dist.weights)):
        lines.append(f"{dist.bin_edges[k]:.6g},{dist.bin_edges[k + 1]:.6g},"
                     f"{dist.weights[k]:.12g}")
    return "\n".join(lines)
