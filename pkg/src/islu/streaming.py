"""Token-at-a-time inference sessions and their typed events.

A session wraps one model's recurrent state. Each pushed token yields an
intent HYPOTHESIS (when the model has an intent branch), an EOS_DETECTED
event when the end-of-utterance signal fires, and an INTENT_COMMITTED event
at each EOS carrying the span since the previous commit. Recurrent state is
never reset, so context flows across utterance boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import models
from .models import ModelConfig, Parameters, StreamState

PREDICTED_EOS = "predicted-eos"
ORACLE_EOS = "oracle-eos"
MODES = (PREDICTED_EOS, ORACLE_EOS)


@dataclass(frozen=True, eq=False)
class Hypothesis:
    position: int
    intent_dist: np.ndarray


@dataclass(frozen=True, eq=False)
class EosDetected:
    position: int
    eos_prob: float


@dataclass(frozen=True, eq=False)
class IntentCommitted:
    """span is end-exclusive: tokens span[0] .. span[1]-1 form the utterance."""

    span: tuple[int, int]
    intent_id: int
    label: str
    intent_dist: np.ndarray


Event = Hypothesis | EosDetected | IntentCommitted


@dataclass
class Session:
    """Mutable per-stream inference state; drive it with push()."""

    params: Parameters
    config: ModelConfig
    mode: str
    threshold: float
    state: StreamState = field(repr=False, default=None)
    utt_start: int = 0

    @property
    def position(self) -> int:
        """Index the next pushed token will occupy."""
        return self.state.step_count


def open_session(params: Parameters, config: ModelConfig, mode: str = PREDICTED_EOS,
                 threshold: float | None = None) -> Session:
    """Start a zero-state session.

    predicted-eos mode needs a model with an EOS branch; oracle-eos works
    with any variant (the caller supplies gold flags to push).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == PREDICTED_EOS and not config.variant.has_eos:
        raise ValueError(f"variant {config.variant.value} has no EOS branch; "
                         "use oracle-eos mode or a composite run")
    if threshold is None:
        threshold = config.eos_threshold
    return Session(params, config, mode, threshold, models.fresh_state(config))


def push(session: Session, token_id: int, oracle_eos: int | None = None) -> list[Event]:
    """Consume one token; returns the events it triggered, in order
    (HYPOTHESIS, then EOS_DETECTED, then INTENT_COMMITTED)."""
    if session.mode == ORACLE_EOS:
        if oracle_eos is None:
            raise ValueError("oracle-eos mode requires an oracle_eos flag on every push")
    elif oracle_eos is not None:
        raise ValueError("oracle_eos flag is only accepted in oracle-eos mode")

    position = session.position
    session.state, out = models.step(session.params, session.config, session.state, token_id)

    events: list[Event] = []
    if out.intent_dist is not None:
        events.append(Hypothesis(position, out.intent_dist))

    if session.mode == ORACLE_EOS:
        fired = bool(oracle_eos)
    else:
        fired = out.eos_prob >= session.threshold
    if fired:
        events.append(EosDetected(position, out.eos_prob if out.eos_prob is not None else 1.0))
        if out.intent_dist is not None:
            intent_id = int(np.argmax(out.intent_dist))
            events.append(IntentCommitted((session.utt_start, position + 1), intent_id,
                                          session.config.labels[intent_id], out.intent_dist))
        session.utt_start = position + 1
    return events


def _check_vocab_compat(a: ModelConfig, b: ModelConfig) -> None:
    if a.vocab_size != b.vocab_size:
        raise ValueError(f"vocabulary mismatch: sizes {a.vocab_size} vs {b.vocab_size}")
    if (a.vocab_tokens is not None and b.vocab_tokens is not None
            and a.vocab_tokens != b.vocab_tokens):
        raise ValueError("vocabulary mismatch: models index different tokens")


@dataclass
class CompositeSession:
    """Two models advanced in lockstep: the EOS model's detections trigger
    commits read from the intent model's hypotheses."""

    intent_params: Parameters
    intent_config: ModelConfig
    eos_params: Parameters
    eos_config: ModelConfig
    threshold: float
    intent_state: StreamState = field(repr=False, default=None)
    eos_state: StreamState = field(repr=False, default=None)
    utt_start: int = 0

    @property
    def position(self) -> int:
        return self.intent_state.step_count


def open_composite(intent_model, eos_model,
                   threshold: float | None = None) -> CompositeSession:
    """Pair an intent model with a separate EOS detector; each model is a
    (params, config) pair sharing one vocabulary."""
    intent_params, intent_config = intent_model
    eos_params, eos_config = eos_model
    if not intent_config.variant.has_intent:
        raise ValueError(f"variant {intent_config.variant.value} has no intent branch")
    if not eos_config.variant.has_eos:
        raise ValueError(f"variant {eos_config.variant.value} has no EOS branch")
    _check_vocab_compat(intent_config, eos_config)
    if threshold is None:
        threshold = eos_config.eos_threshold
    return CompositeSession(intent_params, intent_config, eos_params, eos_config,
                            threshold, models.fresh_state(intent_config),
                            models.fresh_state(eos_config))


def push_composite(session: CompositeSession, token_id: int) -> list[Event]:
    position = session.position
    session.intent_state, intent_out = models.step(
        session.intent_params, session.intent_config, session.intent_state, token_id)
    session.eos_state, eos_out = models.step(
        session.eos_params, session.eos_config, session.eos_state, token_id)
    events: list[Event] = [Hypothesis(position, intent_out.intent_dist)]
    if eos_out.eos_prob >= session.threshold:
        events.append(EosDetected(position, eos_out.eos_prob))
        intent_id = int(np.argmax(intent_out.intent_dist))
        events.append(IntentCommitted((session.utt_start, position + 1), intent_id,
                                      session.intent_config.labels[intent_id],
                                      intent_out.intent_dist))
        session.utt_start = position + 1
    return events


def run_composite(intent_model, eos_model, token_ids,
                  threshold: float | None = None) -> list[Event]:
    """Feed a whole token stream through a composite session."""
    session = open_composite(intent_model, eos_model, threshold)
    events: list[Event] = []
    for token_id in token_ids:
        events.extend(push_composite(session, token_id))
    return events


def _top_pairs(intent_dist: np.ndarray, labels, k: int = 3) -> str:
    order = np.argsort(-intent_dist, kind="stable")[:k]
    return " ".join(f"{labels[i]}:{intent_dist[i]:.6f}" for i in order)


def format_event(event: Event, labels) -> str:
    """One tab-separated line per event: position, type, payload."""
    if isinstance(event, Hypothesis):
        return f"{event.position}\tHYPOTHESIS\t{_top_pairs(event.intent_dist, labels)}"
    if isinstance(event, EosDetected):
        return f"{event.position}\tEOS_DETECTED\teos:{event.eos_prob:.6f}"
    if isinstance(event, IntentCommitted):
        return (f"{event.span[1] - 1}\tINTENT_COMMITTED\t"
                f"{_top_pairs(event.intent_dist, labels)}")
    raise TypeError(f"not an event: {event!r}")
