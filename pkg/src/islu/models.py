"""The five architecture variants over the numeric core.

All variants embed tokens and run one unidirectional LSTM per task branch:

  offline / online   intent branch only (they differ in training regime)
  eos_only           EOS branch only
  multitask          shared embedding, task-specific LSTMs and output layers
  multitask_fb       multitask + the EOS sigmoid output concatenated onto the
                     intent LSTM input at the same timestep

The feedback signal is the raw probability and is treated as a constant
during backward: no gradient flows from the intent loss into the EOS branch.
"""

from __future__ import annotations

import urllib.parse
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import neural
from .neural import LossInputs, LstmParams, sigmoid, softmax

CHECKPOINT_HEADER = "ISLU-CKPT v1"
INIT_SCALE = 0.08
FORGET_BIAS = 1.0


class CheckpointError(Exception):
    """Unreadable, corrupt, or mismatched checkpoint files."""


class Variant(str, Enum):
    OFFLINE = "offline"
    ONLINE = "online"
    EOS_ONLY = "eos_only"
    MULTITASK = "multitask"
    MULTITASK_FB = "multitask_fb"

    @property
    def has_intent(self) -> bool:
        return self is not Variant.EOS_ONLY

    @property
    def has_eos(self) -> bool:
        return self in (Variant.EOS_ONLY, Variant.MULTITASK, Variant.MULTITASK_FB)

    @property
    def has_feedback(self) -> bool:
        return self is Variant.MULTITASK_FB


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters identifying one model; optionally carries the
    vocabulary and intent labels so a checkpoint is self-describing."""

    variant: Variant
    vocab_size: int
    n_intents: int
    embedding_dim: int = 556
    hidden_dim: int = 64
    dropout: float = 0.0
    eos_threshold: float = 0.5
    seed: int = 0
    intent_labels: tuple[str, ...] | None = None
    vocab_tokens: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if min(self.vocab_size, self.n_intents, self.embedding_dim, self.hidden_dim) < 1:
            raise ValueError("all dimensions must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout {self.dropout} outside [0, 1)")
        if not 0.0 < self.eos_threshold < 1.0:
            raise ValueError(f"eos_threshold {self.eos_threshold} outside (0, 1)")
        if self.intent_labels is not None:
            object.__setattr__(self, "intent_labels", tuple(self.intent_labels))
            if len(self.intent_labels) != self.n_intents:
                raise ValueError("intent_labels length must equal n_intents")
        if self.vocab_tokens is not None:
            object.__setattr__(self, "vocab_tokens", tuple(self.vocab_tokens))
            if len(self.vocab_tokens) != self.vocab_size:
                raise ValueError("vocab_tokens length must equal vocab_size")

    @property
    def labels(self) -> tuple[str, ...]:
        if self.intent_labels is not None:
            return self.intent_labels
        return tuple(f"intent_{i}" for i in range(self.n_intents))

    @property
    def intent_input_dim(self) -> int:
        return self.embedding_dim + (1 if self.variant.has_feedback else 0)


@dataclass
class BranchParams:
    lstm: LstmParams
    w_out: np.ndarray  # (out_dim, H)
    b_out: np.ndarray  # (out_dim,)


@dataclass
class Parameters:
    """All trainable tensors for one variant."""

    embedding: np.ndarray  # (V, E)
    intent: BranchParams | None
    eos: BranchParams | None

    def tensors(self) -> dict[str, np.ndarray]:
        """Live views on every tensor, in a fixed order (used by Adam,
        checkpoints, and the gradient checker)."""
        out: dict[str, np.ndarray] = {"embedding": self.embedding}
        for name, branch in (("intent", self.intent), ("eos", self.eos)):
            if branch is None:
                continue
            out[f"{name}.w_x"] = branch.lstm.w_x
            out[f"{name}.w_h"] = branch.lstm.w_h
            out[f"{name}.b"] = branch.lstm.b
            out[f"{name}.w_out"] = branch.w_out
            out[f"{name}.b_out"] = branch.b_out
        return out

    def copy(self) -> "Parameters":
        def copy_branch(b):
            if b is None:
                return None
            return BranchParams(LstmParams(b.lstm.w_x.copy(), b.lstm.w_h.copy(), b.lstm.b.copy()),
                                b.w_out.copy(), b.b_out.copy())
        return Parameters(self.embedding.copy(), copy_branch(self.intent), copy_branch(self.eos))


# Fixed per-tensor RNG slots: each weight tensor draws from its own seeded
# stream, so variants sharing a seed share every tensor they have in common
# (multitask vs multitask_fb differ only in the feedback column of intent.w_x).
_RNG_SLOTS = {"embedding": 0, "intent.w_x": 1, "intent.w_h": 2, "intent.w_out": 3,
              "eos.w_x": 4, "eos.w_h": 5, "eos.w_out": 6}


def _draw(config: ModelConfig, name: str, rows: int, cols: int) -> np.ndarray:
    rng = np.random.default_rng([config.seed, _RNG_SLOTS[name]])
    # drawn transposed so a wider input (feedback column) only appends values
    return np.ascontiguousarray(rng.uniform(-INIT_SCALE, INIT_SCALE, size=(cols, rows)).T)


def _init_branch(config: ModelConfig, name: str, input_dim: int, out_dim: int) -> BranchParams:
    H = config.hidden_dim
    w_x = _draw(config, f"{name}.w_x", 4 * H, input_dim)
    w_h = _draw(config, f"{name}.w_h", 4 * H, H)
    b = np.zeros(4 * H)
    b[H:2 * H] = FORGET_BIAS
    return BranchParams(LstmParams(w_x, w_h, b),
                        _draw(config, f"{name}.w_out", out_dim, H),
                        np.zeros(out_dim))


def init_model(config: ModelConfig) -> Parameters:
    """Deterministic initialization: uniform(-0.08, 0.08) weights, zero biases
    except forget-gate bias of 1."""
    embedding = _draw(config, "embedding", config.vocab_size, config.embedding_dim)
    intent = eos = None
    if config.variant.has_intent:
        intent = _init_branch(config, "intent", config.intent_input_dim, config.n_intents)
    if config.variant.has_eos:
        eos = _init_branch(config, "eos", config.embedding_dim, 1)
    return Parameters(embedding, intent, eos)


@dataclass
class Tape:
    """Forward intermediates for one sequence, sufficient for backward."""

    token_ids: np.ndarray
    emb: np.ndarray                       # post-dropout embedding output
    masks: dict[str, np.ndarray] | None   # None outside training / without dropout
    eos_cache: dict | None
    eos_h: np.ndarray | None              # post-dropout EOS LSTM output
    feedback: np.ndarray | None           # sigmoid(eos_logits) fed to the intent branch
    intent_cache: dict | None
    intent_h: np.ndarray | None


@dataclass
class ForwardResult:
    intent_logits: np.ndarray | None  # (T, C)
    eos_logits: np.ndarray | None     # (T,)
    tape: Tape


def _check_token_ids(token_ids, vocab_size: int) -> np.ndarray:
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError("token_ids must be a non-empty 1-D sequence")
    if ((ids < 0) | (ids >= vocab_size)).any():
        raise ValueError(f"token id out of range [0, {vocab_size})")
    return ids


def forward(params: Parameters, config: ModelConfig, token_ids, training: bool = False,
            rng=None, dropout_masks: dict | None = None, feedback_override=None,
            state: StreamState | None = None) -> ForwardResult:
    """Whole-sequence left-to-right pass, from zero state unless ``state``
    carries one in.

    Dropout applies to the embedding output and each LSTM output, training
    only; masks are drawn from ``rng`` unless ``dropout_masks`` pins them
    (the gradient checker does this to keep the loss deterministic).
    ``feedback_override`` replaces the feedback column of multitask_fb, used
    to finite-difference the stop-gradient loss.
    """
    ids = _check_token_ids(token_ids, config.vocab_size)
    T = ids.size
    emb = params.embedding[ids]

    masks = None
    if training and config.dropout > 0.0:
        if dropout_masks is not None:
            masks = dropout_masks
        else:
            if rng is None:
                raise ValueError("training with dropout needs an rng or fixed masks")
            masks = {"emb": neural.dropout_mask((T, config.embedding_dim), config.dropout, rng)}
            if config.variant.has_eos:
                masks["eos_h"] = neural.dropout_mask((T, config.hidden_dim), config.dropout, rng)
            if config.variant.has_intent:
                masks["intent_h"] = neural.dropout_mask((T, config.hidden_dim), config.dropout, rng)
        emb = emb * masks["emb"]

    eos_cache = eos_h = eos_logits = feedback = None
    if config.variant.has_eos:
        eos_cache = neural.lstm_forward(emb, params.eos.lstm,
                                        h0=state.h_eos if state else None,
                                        c0=state.c_eos if state else None)
        eos_h = eos_cache["h"]
        if masks is not None:
            eos_h = eos_h * masks["eos_h"]
        eos_logits = eos_h @ params.eos.w_out[0] + params.eos.b_out[0]

    intent_cache = intent_h = intent_logits = None
    if config.variant.has_intent:
        x_in = emb
        if config.variant.has_feedback:
            feedback = (np.asarray(feedback_override, dtype=np.float64)
                        if feedback_override is not None else sigmoid(eos_logits))
            x_in = np.concatenate([emb, feedback[:, None]], axis=1)
        intent_cache = neural.lstm_forward(x_in, params.intent.lstm,
                                           h0=state.h_intent if state else None,
                                           c0=state.c_intent if state else None)
        intent_h = intent_cache["h"]
        if masks is not None:
            intent_h = intent_h * masks["intent_h"]
        intent_logits = intent_h @ params.intent.w_out.T + params.intent.b_out

    tape = Tape(ids, emb, masks, eos_cache, eos_h, feedback, intent_cache, intent_h)
    return ForwardResult(intent_logits, eos_logits, tape)


def backward(params: Parameters, config: ModelConfig, tape: Tape,
             d_intent_logits=None, d_eos_logits=None) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients of the loss whose logit derivatives are
    given; full-sequence BPTT, feedback column treated as constant."""
    grads = {name: np.zeros_like(t) for name, t in params.tensors().items()}
    T = tape.token_ids.size
    d_emb = np.zeros((T, config.embedding_dim))

    if config.variant.has_intent:
        d_logits = (np.zeros((T, config.n_intents)) if d_intent_logits is None
                    else np.asarray(d_intent_logits, dtype=np.float64))
        grads["intent.w_out"] = d_logits.T @ tape.intent_h
        grads["intent.b_out"] = d_logits.sum(axis=0)
        d_h = d_logits @ params.intent.w_out
        if tape.masks is not None:
            d_h = d_h * tape.masks["intent_h"]
        d_x, lstm_grads, _, _ = neural.lstm_backward(tape.intent_cache, params.intent.lstm, d_h)
        grads["intent.w_x"] = lstm_grads["w_x"]
        grads["intent.w_h"] = lstm_grads["w_h"]
        grads["intent.b"] = lstm_grads["b"]
        d_emb += d_x[:, :config.embedding_dim]

    if config.variant.has_eos:
        d_logit = (np.zeros(T) if d_eos_logits is None
                   else np.asarray(d_eos_logits, dtype=np.float64))
        grads["eos.w_out"] = (d_logit[None, :] @ tape.eos_h)
        grads["eos.b_out"] = np.array([d_logit.sum()])
        d_h = d_logit[:, None] * params.eos.w_out[0]
        if tape.masks is not None:
            d_h = d_h * tape.masks["eos_h"]
        d_x, lstm_grads, _, _ = neural.lstm_backward(tape.eos_cache, params.eos.lstm, d_h)
        grads["eos.w_x"] = lstm_grads["w_x"]
        grads["eos.w_h"] = lstm_grads["w_h"]
        grads["eos.b"] = lstm_grads["b"]
        d_emb += d_x

    if tape.masks is not None:
        d_emb = d_emb * tape.masks["emb"]
    np.add.at(grads["embedding"], tape.token_ids, d_emb)
    return grads


def sequence_loss(config: ModelConfig, result: ForwardResult, intent_ids, eos_flags) -> float:
    """The variant's training loss on one stream."""
    L = LossInputs(intent_ids=intent_ids, eos_flags=eos_flags,
                   intent_logits=result.intent_logits, eos_logits=result.eos_logits)
    if config.variant is Variant.EOS_ONLY:
        return neural.eos_bce_loss(L.eos_logits, L.eos_flags)
    if config.variant.has_eos:
        return neural.multitask_loss(L)
    return neural.masked_intent_loss(L)


def sequence_loss_grads(config: ModelConfig, result: ForwardResult, intent_ids, eos_flags):
    """Returns (loss, d_intent_logits, d_eos_logits) for the variant's loss."""
    L = LossInputs(intent_ids=intent_ids, eos_flags=eos_flags,
                   intent_logits=result.intent_logits, eos_logits=result.eos_logits)
    d_int = d_eos = None
    loss = 0.0
    if config.variant.has_intent:
        loss += neural.masked_intent_loss(L)
        d_int = neural.masked_intent_grad(L)
    if config.variant.has_eos:
        loss += neural.eos_bce_loss(L.eos_logits, L.eos_flags)
        d_eos = neural.eos_bce_grad(L.eos_logits, L.eos_flags)
    return loss, d_int, d_eos


@dataclass(frozen=True)
class StreamState:
    """Per-session recurrent state; fresh state is all-zero."""

    h_intent: np.ndarray | None
    c_intent: np.ndarray | None
    h_eos: np.ndarray | None
    c_eos: np.ndarray | None
    step_count: int = 0


def fresh_state(config: ModelConfig) -> StreamState:
    H = config.hidden_dim
    zi = (np.zeros(H), np.zeros(H)) if config.variant.has_intent else (None, None)
    ze = (np.zeros(H), np.zeros(H)) if config.variant.has_eos else (None, None)
    return StreamState(zi[0], zi[1], ze[0], ze[1], 0)


def final_state(result: ForwardResult, config: ModelConfig,
                base: StreamState | None = None) -> StreamState:
    """The recurrent state after the sequence forward() just processed,
    suitable for carrying into another forward call."""
    tape = result.tape
    h_i = c_i = h_e = c_e = None
    if tape.intent_cache is not None:
        h_i = tape.intent_cache["h"][-1].copy()
        c_i = tape.intent_cache["c"][-1].copy()
    if tape.eos_cache is not None:
        h_e = tape.eos_cache["h"][-1].copy()
        c_e = tape.eos_cache["c"][-1].copy()
    start = base.step_count if base is not None else 0
    return StreamState(h_i, c_i, h_e, c_e, start + tape.token_ids.size)


@dataclass(frozen=True)
class StepOutput:
    intent_dist: np.ndarray | None  # (C,) simplex vector
    eos_prob: float | None


def step(params: Parameters, config: ModelConfig, state: StreamState,
         token_id: int) -> tuple[StreamState, StepOutput]:
    """One incremental token: exactly one LSTM step per branch, no dropout,
    state never reset internally."""
    tid = int(token_id)
    if not 0 <= tid < config.vocab_size:
        raise ValueError(f"token id {tid} out of range [0, {config.vocab_size})")
    x = params.embedding[tid]

    h_e = c_e = None
    eos_prob = None
    if config.variant.has_eos:
        h_e, c_e = neural.lstm_step(x, state.h_eos, state.c_eos, params.eos.lstm)
        eos_logit = float(params.eos.w_out[0] @ h_e + params.eos.b_out[0])
        eos_prob = float(sigmoid(eos_logit))

    h_i = c_i = None
    intent_dist = None
    if config.variant.has_intent:
        x_in = np.concatenate([x, [eos_prob]]) if config.variant.has_feedback else x
        h_i, c_i = neural.lstm_step(x_in, state.h_intent, state.c_intent, params.intent.lstm)
        intent_dist = softmax(params.intent.w_out @ h_i + params.intent.b_out)

    new_state = StreamState(h_i, c_i, h_e, c_e, state.step_count + 1)
    return new_state, StepOutput(intent_dist, eos_prob)


def expected_tensor_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    H, E, C = config.hidden_dim, config.embedding_dim, config.n_intents
    shapes: dict[str, tuple[int, ...]] = {"embedding": (config.vocab_size, E)}
    if config.variant.has_intent:
        shapes.update({"intent.w_x": (4 * H, config.intent_input_dim),
                       "intent.w_h": (4 * H, H), "intent.b": (4 * H,),
                       "intent.w_out": (C, H), "intent.b_out": (C,)})
    if config.variant.has_eos:
        shapes.update({"eos.w_x": (4 * H, E), "eos.w_h": (4 * H, H), "eos.b": (4 * H,),
                       "eos.w_out": (1, H), "eos.b_out": (1,)})
    return shapes


def _quote_seq(values) -> str:
    return " ".join(urllib.parse.quote(v, safe="") for v in values)


def _unquote_seq(text: str) -> tuple[str, ...]:
    return tuple(urllib.parse.unquote(part) for part in text.split(" ") if part)


def save_checkpoint(params: Parameters, config: ModelConfig, path) -> None:
    """Text checkpoint: header, one config line, then each tensor as a
    ``name dims...`` line followed by one row of 17-significant-digit
    values per line."""
    pairs = [("variant", config.variant.value),
             ("vocab_size", str(config.vocab_size)),
             ("embedding_dim", str(config.embedding_dim)),
             ("hidden_dim", str(config.hidden_dim)),
             ("n_intents", str(config.n_intents)),
             ("dropout", repr(config.dropout)),
             ("eos_threshold", repr(config.eos_threshold)),
             ("seed", str(config.seed))]
    if config.intent_labels is not None:
        pairs.append(("intents", _quote_seq(config.intent_labels)))
    if config.vocab_tokens is not None:
        pairs.append(("vocab", _quote_seq(config.vocab_tokens)))

    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(CHECKPOINT_HEADER + "\n")
        fh.write(",".join(f"{k}={v}" for k, v in pairs) + "\n")
        for name, tensor in params.tensors().items():
            fh.write(f"{name} {' '.join(str(d) for d in tensor.shape)}\n")
            rows = tensor.reshape(tensor.shape[0], -1) if tensor.ndim > 1 else tensor[None, :]
            for row in rows:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def _parse_config_line(line: str) -> ModelConfig:
    fields: dict[str, str] = {}
    for part in line.split(","):
        if "=" not in part:
            raise CheckpointError(f"bad config entry: {part!r}")
        key, value = part.split("=", 1)
        fields[key] = value
    try:
        return ModelConfig(
            variant=Variant(fields["variant"]),
            vocab_size=int(fields["vocab_size"]),
            n_intents=int(fields["n_intents"]),
            embedding_dim=int(fields["embedding_dim"]),
            hidden_dim=int(fields["hidden_dim"]),
            dropout=float(fields["dropout"]),
            eos_threshold=float(fields["eos_threshold"]),
            seed=int(fields["seed"]),
            intent_labels=_unquote_seq(fields["intents"]) if "intents" in fields else None,
            vocab_tokens=_unquote_seq(fields["vocab"]) if "vocab" in fields else None,
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"bad checkpoint config: {exc}") from exc


def load_checkpoint(path, expect_variant: Variant | None = None):
    """Read a checkpoint; returns (Parameters, ModelConfig).

    Raises CheckpointError on version mismatch, truncation, shape mismatch,
    non-finite values, or (when expect_variant is given) the wrong variant.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    with path.open(encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise CheckpointError(f"not a supported checkpoint (expected {CHECKPOINT_HEADER!r})")
    if len(lines) < 2:
        raise CheckpointError("corrupt checkpoint: missing config line")
    config = _parse_config_line(lines[1])
    if expect_variant is not None and config.variant is not Variant(expect_variant):
        raise CheckpointError(
            f"checkpoint variant {config.variant.value!r} does not match "
            f"expected {Variant(expect_variant).value!r}")

    expected = expected_tensor_shapes(config)
    tensors: dict[str, np.ndarray] = {}
    pos = 2
    for name, shape in expected.items():
        if pos >= len(lines):
            raise CheckpointError(f"corrupt checkpoint: missing tensor {name}")
        head = lines[pos].split()
        pos += 1
        if head[0] != name:
            raise CheckpointError(f"corrupt checkpoint: expected tensor {name}, got {head[0]!r}")
        dims = tuple(int(d) for d in head[1:])
        if dims != shape:
            raise CheckpointError(f"shape mismatch for {name}: file {dims}, expected {shape}")
        n_rows = shape[0] if len(shape) > 1 else 1
        n_cols = shape[1] if len(shape) > 1 else shape[0]
        if pos + n_rows > len(lines):
            raise CheckpointError(f"corrupt checkpoint: truncated tensor {name}")
        rows = []
        for r in range(n_rows):
            try:
                row = np.array(lines[pos + r].split(), dtype=np.float64)
            except ValueError as exc:
                raise CheckpointError(f"corrupt checkpoint: bad values in {name}") from exc
            if row.size != n_cols:
                raise CheckpointError(f"corrupt checkpoint: wrong value count in {name}")
            rows.append(row)
        pos += n_rows
        tensor = np.vstack(rows).reshape(shape)
        if not np.isfinite(tensor).all():
            raise CheckpointError(f"corrupt checkpoint: non-finite values in {name}")
        tensors[name] = tensor
    if pos != len(lines):
        raise CheckpointError("corrupt checkpoint: trailing data")

    intent = eos = None
    if config.variant.has_intent:
        intent = BranchParams(LstmParams(tensors["intent.w_x"], tensors["intent.w_h"],
                                         tensors["intent.b"]),
                              tensors["intent.w_out"], tensors["intent.b_out"])
    if config.variant.has_eos:
        eos = BranchParams(LstmParams(tensors["eos.w_x"], tensors["eos.w_h"], tensors["eos.b"]),
                           tensors["eos.w_out"], tensors["eos.b_out"])
    return Parameters(tensors["embedding"], intent, eos), config


def gradcheck_variant(variant, seed: int = 0, dropout: float = 0.0, delta: float = 1e-5):
    """Finite-difference check of the full training loss on a tiny model
    (V=5, E=3, H=2, C=2) and a stitched two-utterance sample (T=4).

    For multitask_fb the finite differences are taken with the feedback
    column frozen at its unperturbed values, matching the stop-gradient
    treatment of the feedback path. Returns (max_rel_err, per_tensor).
    """
    rng = np.random.default_rng(seed)
    config = ModelConfig(variant=Variant(variant), vocab_size=5, n_intents=2,
                         embedding_dim=3, hidden_dim=2, dropout=dropout, seed=seed)
    params = init_model(config)
    token_ids = rng.integers(0, 5, size=4)
    intents = rng.integers(0, 2, size=2)
    intent_ids = np.array([intents[0], intents[0], intents[1], intents[1]])
    eos_flags = np.array([0, 1, 0, 1])

    training = dropout > 0.0
    masks = None
    if training:
        masks = {"emb": neural.dropout_mask((4, 3), dropout, rng)}
        if config.variant.has_eos:
            masks["eos_h"] = neural.dropout_mask((4, 2), dropout, rng)
        if config.variant.has_intent:
            masks["intent_h"] = neural.dropout_mask((4, 2), dropout, rng)

    base = forward(params, config, token_ids, training=training, dropout_masks=masks)
    fb_fix = sigmoid(base.eos_logits) if config.variant.has_feedback else None
    loss, d_int, d_eos = sequence_loss_grads(config, base, intent_ids, eos_flags)
    analytic = backward(params, config, base.tape, d_int, d_eos)

    def loss_fn():
        fr = forward(params, config, token_ids, training=training,
                     dropout_masks=masks, feedback_override=fb_fix)
        return sequence_loss_grads(config, fr, intent_ids, eos_flags)[0]

    return neural.grad_check(loss_fn, params.tensors(), analytic, delta=delta)
