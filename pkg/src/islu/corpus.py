"""Corpus loading, vocabulary construction, synthetic corpora, and stream stitching.

The training atom is a labeled single-intent utterance. To emulate the
continuous output of an incremental ASR, utterances are stitched into
unsegmented token streams carrying per-token end-of-sentence flags and
per-token intent ids.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

UNK_TOKEN = "<unk>"
UNK_ID = 0


class CorpusError(Exception):
    """Malformed or missing corpus data."""


@dataclass(frozen=True)
class Utterance:
    """One transcribed query with a single intent label."""

    tokens: tuple[str, ...]
    intent: str

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("utterance has no tokens")
        for t in self.tokens:
            if not t or t.split() != [t]:
                raise ValueError(f"bad token {t!r}: tokens must be non-empty and whitespace-free")
        if not self.intent:
            raise ValueError("empty intent label")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Corpus:
    """A list of utterances plus the ordered set of intents appearing in them."""

    utterances: tuple[Utterance, ...]
    intent_set: tuple[str, ...]

    @classmethod
    def from_utterances(cls, utterances) -> "Corpus":
        utts = tuple(utterances)
        if not utts:
            raise CorpusError("empty corpus")
        seen: dict[str, None] = {}
        for u in utts:
            seen.setdefault(u.intent, None)
        return cls(utts, tuple(seen))

    def intent_ids(self) -> dict[str, int]:
        return {label: i for i, label in enumerate(self.intent_set)}

    def __len__(self) -> int:
        return len(self.utterances)


@dataclass(frozen=True)
class Vocabulary:
    """Word-to-id map with a reserved UNK at id 0.

    Ids are assigned by descending corpus count, ties broken lexicographically,
    so the mapping is independent of corpus order.
    """

    token_to_id: dict[str, int]
    id_to_token: tuple[str, ...]

    @classmethod
    def from_tokens(cls, id_to_token) -> "Vocabulary":
        toks = tuple(id_to_token)
        if not toks or toks[0] != UNK_TOKEN:
            raise ValueError(f"id 0 must be {UNK_TOKEN!r}")
        return cls({t: i for i, t in enumerate(toks)}, toks)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, tokens) -> list[int]:
        return [self.lookup(t) for t in tokens]

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id


@dataclass(frozen=True)
class StreamSample:
    """One unsegmented token stream stitched from consecutive utterances.

    eos_flags marks the final token of every constituent utterance;
    intent_ids carries the enclosing utterance's intent at every position;
    utt_spans are end-exclusive (start, end) index pairs partitioning [0, T).
    """

    token_ids: tuple[int, ...]
    eos_flags: tuple[int, ...]
    intent_ids: tuple[int, ...]
    utt_spans: tuple[tuple[int, int], ...]

    def __post_init__(self):
        T = len(self.token_ids)
        if T == 0:
            raise ValueError("empty stream sample")
        if len(self.eos_flags) != T or len(self.intent_ids) != T:
            raise ValueError("eos_flags/intent_ids length mismatch")
        if any(f not in (0, 1) for f in self.eos_flags):
            raise ValueError("eos_flags must be binary")
        if self.eos_flags[-1] != 1:
            raise ValueError("last token must be an EOS")
        if sum(self.eos_flags) != len(self.utt_spans):
            raise ValueError("EOS count must equal utterance count")
        pos = 0
        for start, end in self.utt_spans:
            if start != pos or end <= start:
                raise ValueError("spans must partition [0, T)")
            if self.eos_flags[end - 1] != 1 or any(self.eos_flags[i] for i in range(start, end - 1)):
                raise ValueError("EOS flags must sit exactly at span ends")
            if len(set(self.intent_ids[start:end])) != 1:
                raise ValueError("intent must be constant within a span")
            pos = end
        if pos != T:
            raise ValueError("spans must cover the whole sample")

    def __len__(self) -> int:
        return len(self.token_ids)

    @property
    def n_utterances(self) -> int:
        return len(self.utt_spans)


@dataclass(frozen=True)
class StreamSet:
    """A stitched copy of a corpus for one maximum-utterances-per-sample limit."""

    samples: tuple[StreamSample, ...]
    max_utts: int
    seed: int

    def __post_init__(self):
        if self.max_utts < 1:
            raise ValueError("max_utts must be >= 1")
        for s in self.samples:
            if not 1 <= s.n_utterances <= self.max_utts:
                raise ValueError("sample utterance count outside [1, max_utts]")

    def __len__(self) -> int:
        return len(self.samples)


def load_corpus(path) -> Corpus:
    """Read a corpus file: one ``intent<TAB>token token ...`` line per utterance.

    Tokens are lowercased; intents are kept verbatim and ordered by first
    appearance. Raises CorpusError with a line number on malformed input.
    """
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"corpus file not found: {path}")
    utterances = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if "\t" not in line:
                raise CorpusError(f"{path}:{lineno}: expected intent<TAB>tokens")
            intent, text = line.split("\t", 1)
            tokens = text.split()
            if not intent:
                raise CorpusError(f"{path}:{lineno}: empty intent label")
            if not tokens:
                raise CorpusError(f"{path}:{lineno}: empty token list")
            utterances.append(Utterance(tuple(t.lower() for t in tokens), intent))
    if not utterances:
        raise CorpusError(f"empty corpus: {path}")
    return Corpus.from_utterances(utterances)


def save_corpus(corpus: Corpus, path) -> None:
    """Write a corpus in the same TSV format load_corpus reads."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for u in corpus.utterances:
            fh.write(f"{u.intent}\t{' '.join(u.tokens)}\n")


def build_vocab(corpus: Corpus, min_count: int = 1) -> Vocabulary:
    """Assign ids to tokens with count >= min_count; everything else maps to UNK."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter(t for u in corpus.utterances for t in u.tokens)
    kept = sorted((t for t, c in counts.items() if c >= min_count),
                  key=lambda t: (-counts[t], t))
    id_to_token = (UNK_TOKEN, *kept)
    return Vocabulary({t: i for i, t in enumerate(id_to_token)}, id_to_token)


def _make_sample(utts, vocab: Vocabulary, label_to_id: dict[str, int]) -> StreamSample:
    token_ids: list[int] = []
    eos_flags: list[int] = []
    intent_ids: list[int] = []
    spans: list[tuple[int, int]] = []
    for u in utts:
        start = len(token_ids)
        ids = vocab.encode(u.tokens)
        token_ids.extend(ids)
        eos_flags.extend([0] * (len(ids) - 1) + [1])
        intent_ids.extend([label_to_id[u.intent]] * len(ids))
        spans.append((start, len(token_ids)))
    return StreamSample(tuple(token_ids), tuple(eos_flags), tuple(intent_ids), tuple(spans))


def stitch_streams(corpus: Corpus, vocab: Vocabulary, max_utts: int, seed: int,
                   intent_labels=None) -> StreamSet:
    """Stitch the whole corpus into multi-utterance streams.

    Utterance order is randomized by the seeded generator; each sample takes a
    uniform draw from {1..max_utts} utterances (clamped by what remains), so
    every utterance is consumed exactly once. ``intent_labels`` overrides the
    id ordering (needed when evaluating against a model trained elsewhere).
    """
    if max_utts < 1:
        raise ValueError("max_utts must be >= 1")
    if not corpus.utterances:
        raise CorpusError("empty corpus")
    labels = tuple(intent_labels) if intent_labels is not None else corpus.intent_set
    label_to_id = {lab: i for i, lab in enumerate(labels)}
    missing = [i for i in corpus.intent_set if i not in label_to_id]
    if missing:
        raise CorpusError(f"intents not covered by label set: {missing}")

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus.utterances))
    samples = []
    pos = 0
    while pos < len(order):
        take = int(rng.integers(1, max_utts + 1))
        group = [corpus.utterances[i] for i in order[pos:pos + take]]
        pos += len(group)
        samples.append(_make_sample(group, vocab, label_to_id))
    return StreamSet(tuple(samples), max_utts, seed)


# Synthetic corpus vocabulary. Every utterance ends with a terminal word so
# utterance boundaries are lexically learnable (mirroring how real queries
# end); terminals also leak into utterance bodies at a small rate to create
# genuine false-positive pressure for the EOS detector.
N_FILLERS = 50
N_KEYWORDS_PER_INTENT = 3
N_TERMINALS = 6
TERMINAL_NOISE_RATE = 0.02
KEYWORD_RATE = 0.35


def synthetic_keywords(n_intents: int) -> dict[str, tuple[str, ...]]:
    """Per-intent keyword sets used by gen_synthetic (disjoint by construction)."""
    return {
        f"intent{i:02d}": tuple(f"kw{i:02d}{j}" for j in range(N_KEYWORDS_PER_INTENT))
        for i in range(n_intents)
    }


def gen_synthetic(n_intents: int, n_utts: int, len_range: tuple[int, int], seed: int) -> Corpus:
    """Generate a desk-scale stand-in corpus with keyword-separable intents.

    Each intent owns 3 disjoint keywords; every utterance carries at least one
    keyword of its intent (occurrences repeat at KEYWORD_RATE, so longer
    utterances restate their evidence), filler words from a shared 50-word
    pool, and a terminal word as its final token. Deterministic under seed.
    """
    lo, hi = len_range
    if n_intents < 2:
        raise ValueError("n_intents must be >= 2")
    if n_utts < 1:
        raise ValueError("n_utts must be >= 1")
    if lo < 2 or hi < lo:
        raise ValueError(f"invalid length range {len_range}")

    rng = np.random.default_rng(seed)
    fillers = [f"w{k:02d}" for k in range(N_FILLERS)]
    terminals = [f"end{j}" for j in range(N_TERMINALS)]
    keywords = synthetic_keywords(n_intents)
    intents = list(keywords)

    utterances = []
    for k in range(n_utts):
        intent = intents[k % n_intents]
        length = int(rng.integers(lo, hi + 1))
        body_len = length - 1
        body = []
        n_kw = 0
        for _ in range(body_len):
            if rng.random() < KEYWORD_RATE:
                body.append(keywords[intent][int(rng.integers(0, N_KEYWORDS_PER_INTENT))])
                n_kw += 1
            elif rng.random() < TERMINAL_NOISE_RATE:
                body.append(terminals[int(rng.integers(0, N_TERMINALS))])
            else:
                body.append(fillers[int(rng.integers(0, N_FILLERS))])
        if n_kw == 0:
            kw_pos = int(rng.integers(0, body_len))
            body[kw_pos] = keywords[intent][int(rng.integers(0, N_KEYWORDS_PER_INTENT))]
        body.append(terminals[int(rng.integers(0, N_TERMINALS))])
        utterances.append(Utterance(tuple(body), intent))
    return Corpus.from_utterances(utterances)


def format_stream_line(sample: StreamSample, vocab: Vocabulary) -> str:
    """Render a stream sample as tokens, with ``|`` appended to utterance-final tokens."""
    parts = []
    for i, tid in enumerate(sample.token_ids):
        tok = vocab.id_to_token[tid]
        parts.append(tok + "|" if sample.eos_flags[i] else tok)
    return " ".join(parts)


def dump_streams(streams: StreamSet, vocab: Vocabulary, path) -> None:
    """Write the debugging dump: one line per sample."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for s in streams.samples:
            fh.write(format_stream_line(s, vocab) + "\n")
