"""Dense numeric core: activations, LSTM cell and BPTT, the two losses,
Adam, inverted dropout, and a finite-difference gradient checker.

Everything is float64. Functions are pure over explicit state; the only
mutation is the in-place parameter update inside adam_step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


@dataclass
class LstmParams:
    """Single-cell LSTM weights, gates stacked as [input, forget, cell, output]."""

    w_x: np.ndarray  # (4H, E)
    w_h: np.ndarray  # (4H, H)
    b: np.ndarray    # (4H,)

    def __post_init__(self):
        four_h, hidden = self.w_h.shape
        if four_h != 4 * hidden:
            raise ValueError(f"w_h shape {self.w_h.shape} is not (4H, H)")
        if self.w_x.shape[0] != four_h or self.b.shape != (four_h,):
            raise ValueError("inconsistent LSTM parameter shapes")

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_h.shape[1]


def init_lstm_params(input_dim: int, hidden_dim: int, rng, scale: float = 0.08,
                     forget_bias: float = 1.0) -> LstmParams:
    """Uniform(-scale, scale) weights, zero biases except the forget gate."""
    w_x = rng.uniform(-scale, scale, size=(4 * hidden_dim, input_dim))
    w_h = rng.uniform(-scale, scale, size=(4 * hidden_dim, hidden_dim))
    b = np.zeros(4 * hidden_dim)
    b[hidden_dim:2 * hidden_dim] = forget_bias
    return LstmParams(w_x, w_h, b)


def lstm_step(x, h, c, p: LstmParams):
    """One gated update; returns (h', c')."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    H = p.hidden_dim
    if x.shape != (p.input_dim,) or h.shape != (H,) or c.shape != (H,):
        raise ValueError(
            f"dimension mismatch: x{x.shape} h{h.shape} c{c.shape} "
            f"vs E={p.input_dim} H={H}")
    gates = p.w_x @ x + p.w_h @ h + p.b
    i = sigmoid(gates[:H])
    f = sigmoid(gates[H:2 * H])
    g = np.tanh(gates[2 * H:3 * H])
    o = sigmoid(gates[3 * H:])
    c2 = f * c + i * g
    h2 = o * np.tanh(c2)
    return h2, c2


def lstm_forward(x_seq, p: LstmParams, h0=None, c0=None) -> dict:
    """Run the cell over a (T, E) input; returns a cache sufficient for BPTT."""
    x_seq = np.asarray(x_seq, dtype=np.float64)
    T = x_seq.shape[0]
    H = p.hidden_dim
    h0 = np.zeros(H) if h0 is None else h0
    c0 = np.zeros(H) if c0 is None else c0
    i = np.empty((T, H)); f = np.empty((T, H)); g = np.empty((T, H)); o = np.empty((T, H))
    c = np.empty((T, H)); tanh_c = np.empty((T, H)); h = np.empty((T, H))
    h_prev, c_prev = h0, c0
    for t in range(T):
        gates = p.w_x @ x_seq[t] + p.w_h @ h_prev + p.b
        i[t] = sigmoid(gates[:H])
        f[t] = sigmoid(gates[H:2 * H])
        g[t] = np.tanh(gates[2 * H:3 * H])
        o[t] = sigmoid(gates[3 * H:])
        c[t] = f[t] * c_prev + i[t] * g[t]
        tanh_c[t] = np.tanh(c[t])
        h[t] = o[t] * tanh_c[t]
        h_prev, c_prev = h[t], c[t]
    return {"x": x_seq, "i": i, "f": f, "g": g, "o": o,
            "c": c, "tanh_c": tanh_c, "h": h, "h0": h0, "c0": c0}


def lstm_backward(cache: dict, p: LstmParams, d_h):
    """Full-sequence BPTT given upstream gradients on every h_t.

    Returns (d_x (T,E), grads {w_x, w_h, b}, d_h0, d_c0).
    """
    x_seq = cache["x"]
    T, H = cache["h"].shape
    d_x = np.zeros_like(x_seq)
    d_wx = np.zeros_like(p.w_x)
    d_wh = np.zeros_like(p.w_h)
    d_b = np.zeros_like(p.b)
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    i, f, g, o = cache["i"], cache["f"], cache["g"], cache["o"]
    for t in reversed(range(T)):
        dh = d_h[t] + dh_next
        tc = cache["tanh_c"][t]
        do = dh * tc
        dc = dh * o[t] * (1.0 - tc * tc) + dc_next
        c_prev = cache["c"][t - 1] if t > 0 else cache["c0"]
        h_prev = cache["h"][t - 1] if t > 0 else cache["h0"]
        di = dc * g[t]
        df = dc * c_prev
        dg = dc * i[t]
        dc_next = dc * f[t]
        d_pre = np.concatenate([
            di * i[t] * (1.0 - i[t]),
            df * f[t] * (1.0 - f[t]),
            dg * (1.0 - g[t] * g[t]),
            do * o[t] * (1.0 - o[t]),
        ])
        d_wx += np.outer(d_pre, x_seq[t])
        d_wh += np.outer(d_pre, h_prev)
        d_b += d_pre
        d_x[t] = p.w_x.T @ d_pre
        dh_next = p.w_h.T @ d_pre
    return d_x, {"w_x": d_wx, "w_h": d_wh, "b": d_b}, dh_next, dc_next


@dataclass
class LossInputs:
    """Per-timestep logits plus gold labels and the EOS mask for one stream."""

    intent_ids: np.ndarray            # (T,) gold intent of the enclosing utterance
    eos_flags: np.ndarray             # (T,) binary; mask for the intent loss, label for BCE
    intent_logits: np.ndarray | None = None  # (T, C)
    eos_logits: np.ndarray | None = None     # (T,)

    def __post_init__(self):
        self.intent_ids = np.asarray(self.intent_ids, dtype=np.int64)
        self.eos_flags = np.asarray(self.eos_flags, dtype=np.int64)
        T = self.eos_flags.shape[0]
        if T < 1 or self.intent_ids.shape != (T,):
            raise ValueError("intent_ids/eos_flags must be equal-length, T >= 1")
        if not np.isin(self.eos_flags, (0, 1)).all():
            raise ValueError("eos_flags must be binary")
        if self.intent_logits is not None:
            self.intent_logits = np.asarray(self.intent_logits, dtype=np.float64)
            if self.intent_logits.ndim != 2 or self.intent_logits.shape[0] != T:
                raise ValueError("intent_logits must be (T, C)")
            C = self.intent_logits.shape[1]
            if C < 2:
                raise ValueError("need at least 2 intent classes")
            if ((self.intent_ids < 0) | (self.intent_ids >= C)).any():
                raise ValueError("intent id out of range")
        if self.eos_logits is not None:
            self.eos_logits = np.asarray(self.eos_logits, dtype=np.float64)
            if self.eos_logits.shape != (T,):
                raise ValueError("eos_logits must be (T,)")


def masked_intent_loss(L: LossInputs) -> float:
    """Cross-entropy summed over EOS positions only (zero if the mask is empty)."""
    if L.intent_logits is None:
        raise ValueError("masked_intent_loss needs intent logits")
    idx = np.nonzero(L.eos_flags)[0]
    if idx.size == 0:
        warnings.warn("degenerate sample: no EOS position in mask, loss is 0",
                      RuntimeWarning, stacklevel=2)
        return 0.0
    logp = log_softmax(L.intent_logits[idx], axis=1)
    return float(-logp[np.arange(idx.size), L.intent_ids[idx]].sum())


def masked_intent_grad(L: LossInputs) -> np.ndarray:
    """d(masked_intent_loss)/d(intent_logits): softmax minus one-hot at EOS rows."""
    if L.intent_logits is None:
        raise ValueError("masked_intent_grad needs intent logits")
    d = np.zeros_like(L.intent_logits)
    idx = np.nonzero(L.eos_flags)[0]
    if idx.size == 0:
        return d
    probs = softmax(L.intent_logits[idx], axis=1)
    probs[np.arange(idx.size), L.intent_ids[idx]] -= 1.0
    d[idx] = probs
    return d


def eos_bce_loss(eos_logits, eos_flags) -> float:
    """Binary cross-entropy on sigmoid(logits), summed over all positions.

    Uses the log-sum form max(z,0) - z*y + log(1+exp(-|z|)) for stability.
    """
    z = np.asarray(eos_logits, dtype=np.float64)
    y = np.asarray(eos_flags, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError("eos_logits/eos_flags shape mismatch")
    return float((np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))).sum())


def eos_bce_grad(eos_logits, eos_flags) -> np.ndarray:
    z = np.asarray(eos_logits, dtype=np.float64)
    y = np.asarray(eos_flags, dtype=np.float64)
    return sigmoid(z) - y


def multitask_loss(L: LossInputs) -> float:
    """Masked intent cross-entropy plus per-token EOS BCE."""
    if L.intent_logits is None or L.eos_logits is None:
        raise ValueError("multitask_loss needs both logit streams")
    return masked_intent_loss(L) + eos_bce_loss(L.eos_logits, L.eos_flags)


def dropout_mask(shape, rate: float, rng, training: bool = True) -> np.ndarray:
    """Inverted-dropout mask: kept units scaled by 1/(1-rate); identity off training."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= rate) / (1.0 - rate)


@dataclass
class AdamState:
    """First/second moment estimates, keyed like the parameter dict."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step_count: int = 0


def init_adam(tensors: dict[str, np.ndarray]) -> AdamState:
    return AdamState(m={k: np.zeros_like(t) for k, t in tensors.items()},
                     v={k: np.zeros_like(t) for k, t in tensors.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """Bias-corrected Adam update, in place; returns (params, state)."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}: {g.shape} vs {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float):
    """Scale all gradients so their joint L2 norm is at most max_norm.

    Returns (norm_before, clipped_flag); scales in place.
    """
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
        return norm, True
    return norm, False


def grad_check(loss_fn, tensors: dict[str, np.ndarray],
               analytic: dict[str, np.ndarray], delta: float = 1e-5):
    """Central-finite-difference check of analytic gradients.

    loss_fn() must recompute the loss from the (mutated) tensors. Relative
    error uses max(|a|,|n|) as denominator; differences below 1e-8 count as
    zero so true-zero gradients do not blow up the ratio.

    Returns (max_relative_error, per_tensor_max).
    """
    per_tensor: dict[str, float] = {}
    for name, tensor in tensors.items():
        a = analytic[name]
        worst = 0.0
        it = np.nditer(tensor, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = tensor[idx]
            tensor[idx] = orig + delta
            lp = loss_fn()
            tensor[idx] = orig - delta
            lm = loss_fn()
            tensor[idx] = orig
            numeric = (lp - lm) / (2.0 * delta)
            diff = abs(a[idx] - numeric)
            if diff >= 1e-8:
                worst = max(worst, diff / max(abs(a[idx]), abs(numeric)))
            it.iternext()
        per_tensor[name] = worst
    return max(per_tensor.values()), per_tensor
