"""Model construction, forward/step agreement, and checkpoint round trips."""

import numpy as np
import pytest

from islu.models import (
    CHECKPOINT_HEADER,
    CheckpointError,
    ModelConfig,
    Variant,
    final_state,
    forward,
    fresh_state,
    init_model,
    load_checkpoint,
    save_checkpoint,
    step,
)
from islu.neural import lstm_forward, sigmoid, softmax

from conftest import make_model

ALL_VARIANTS = list(Variant)
VARIANT_IDS = [v.value for v in ALL_VARIANTS]


# ------------------------------------------------------------ configuration


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(variant="offline", vocab_size=0, n_intents=2,
                    embedding_dim=3, hidden_dim=2)
    with pytest.raises(ValueError):
        ModelConfig(variant="offline", vocab_size=5, n_intents=2,
                    embedding_dim=3, hidden_dim=2, dropout=1.0)
    with pytest.raises(ValueError):
        ModelConfig(variant="offline", vocab_size=5, n_intents=2,
                    embedding_dim=3, hidden_dim=2, eos_threshold=0.0)
    with pytest.raises(ValueError):
        ModelConfig(variant="offline", vocab_size=5, n_intents=3,
                    embedding_dim=3, hidden_dim=2, intent_labels=("a", "b"))
    with pytest.raises(ValueError):
        ModelConfig(variant="not-a-variant", vocab_size=5, n_intents=2,
                    embedding_dim=3, hidden_dim=2)


def test_config_feedback_widens_intent_input():
    _, mt = make_model("multitask")
    _, fb = make_model("multitask_fb")
    assert mt.intent_input_dim == mt.embedding_dim
    assert fb.intent_input_dim == fb.embedding_dim + 1


def test_default_labels():
    _, cfg = make_model("offline", n_intents=3)
    assert cfg.labels == ("intent_0", "intent_1", "intent_2")
    _, named = make_model("offline", n_intents=2, intent_labels=("yes", "no"))
    assert named.labels == ("yes", "no")


# ----------------------------------------------------------- initialization


def test_variant_branch_presence():
    presence = {
        "offline": (True, False),
        "online": (True, False),
        "eos_only": (False, True),
        "multitask": (True, True),
        "multitask_fb": (True, True),
    }
    for name, (want_intent, want_eos) in presence.items():
        params, _ = make_model(name)
        assert (params.intent is not None) == want_intent
        assert (params.eos is not None) == want_eos


def test_init_shared_tensors_across_variants():
    """Tensors draw from per-slot seeded streams, so two variants with the
    same seed agree on every tensor they share."""
    off, _ = make_model("offline", seed=4)
    onl, _ = make_model("online", seed=4)
    for name in off.tensors():
        assert np.array_equal(off.tensors()[name], onl.tensors()[name])

    mt, _ = make_model("multitask", seed=4)
    fb, _ = make_model("multitask_fb", seed=4)
    E = 3
    assert np.array_equal(fb.intent.lstm.w_x[:, :E], mt.intent.lstm.w_x)
    assert fb.intent.lstm.w_x.shape[1] == E + 1
    assert np.array_equal(mt.embedding, fb.embedding)
    assert np.array_equal(mt.eos.lstm.w_x, fb.eos.lstm.w_x)
    assert np.array_equal(mt.intent.lstm.w_h, fb.intent.lstm.w_h)

    eos, _ = make_model("eos_only", seed=4)
    assert np.array_equal(eos.eos.lstm.w_h, mt.eos.lstm.w_h)


def test_init_ranges_and_biases():
    params, cfg = make_model("multitask", hidden_dim=4)
    H = cfg.hidden_dim
    for branch in (params.intent, params.eos):
        b = branch.lstm.b
        assert np.all(b[H:2 * H] == 1.0)
        assert np.all(b[:H] == 0.0) and np.all(b[2 * H:] == 0.0)
        assert np.all(np.abs(branch.lstm.w_x) <= 0.08)
        assert np.all(np.abs(branch.lstm.w_h) <= 0.08)
        assert np.all(branch.b_out == 0.0)
    assert np.all(np.abs(params.embedding) <= 0.08)


def test_init_deterministic_and_seed_sensitive():
    a, _ = make_model("multitask_fb", seed=7)
    b, _ = make_model("multitask_fb", seed=7)
    c, _ = make_model("multitask_fb", seed=8)
    for name in a.tensors():
        assert np.array_equal(a.tensors()[name], b.tensors()[name])
    assert not np.array_equal(a.embedding, c.embedding)


# ----------------------------------------------------------------- forward


def test_forward_shapes():
    for name in VARIANT_IDS:
        params, cfg = make_model(name)
        result = forward(params, cfg, [0, 1, 2, 3])
        if cfg.variant.has_intent:
            assert result.intent_logits.shape == (4, cfg.n_intents)
        else:
            assert result.intent_logits is None
        if cfg.variant.has_eos:
            assert result.eos_logits.shape == (4,)
        else:
            assert result.eos_logits is None


def test_forward_rejects_bad_token_ids():
    params, cfg = make_model("online")
    with pytest.raises(ValueError):
        forward(params, cfg, [])
    with pytest.raises(ValueError):
        forward(params, cfg, [0, cfg.vocab_size])
    with pytest.raises(ValueError):
        forward(params, cfg, [-1])


def test_forward_single_token():
    params, cfg = make_model("multitask")
    result = forward(params, cfg, [2])
    assert result.intent_logits.shape == (1, 2)
    assert result.eos_logits.shape == (1,)


def test_feedback_is_half_when_eos_branch_is_zero():
    """With the boundary branch zeroed its logit is 0 everywhere, so the
    feedback column pinned to the intent input is exactly sigmoid(0)=0.5."""
    params, cfg = make_model("multitask_fb")
    params.eos.lstm.w_x[:] = 0.0
    params.eos.lstm.w_h[:] = 0.0
    params.eos.lstm.b[:] = 0.0
    params.eos.w_out[:] = 0.0
    params.eos.b_out[:] = 0.0
    result = forward(params, cfg, [0, 1, 2])
    assert np.array_equal(result.tape.feedback, np.full(3, 0.5))

    x_in = np.concatenate([params.embedding[[0, 1, 2]], np.full((3, 1), 0.5)], axis=1)
    cache = lstm_forward(x_in, params.intent.lstm)
    manual = cache["h"] @ params.intent.w_out.T + params.intent.b_out
    assert np.allclose(result.intent_logits, manual, atol=1e-15)


def test_feedback_uses_same_timestep_eos_prob():
    params, cfg = make_model("multitask_fb", seed=2)
    result = forward(params, cfg, [1, 4, 2, 6])
    assert np.allclose(result.tape.feedback, sigmoid(result.eos_logits), atol=1e-15)


# ------------------------------------------------------- incremental stepping


@pytest.mark.parametrize("name", VARIANT_IDS)
def test_step_folds_to_forward(name):
    params, cfg = make_model(name, vocab_size=9, embedding_dim=4, hidden_dim=3, seed=1)
    rng = np.random.default_rng(0)
    ids = rng.integers(0, 9, size=12)
    result = forward(params, cfg, ids)

    state = fresh_state(cfg)
    for t, tid in enumerate(ids):
        state, out = step(params, cfg, state, int(tid))
        if cfg.variant.has_intent:
            want = softmax(result.intent_logits[t])
            assert np.abs(out.intent_dist - want).max() <= 1e-12
        else:
            assert out.intent_dist is None
        if cfg.variant.has_eos:
            assert abs(out.eos_prob - sigmoid(result.eos_logits[t])) <= 1e-12
        else:
            assert out.eos_prob is None
    assert state.step_count == 12


def test_split_forward_matches_whole_forward():
    params, cfg = make_model("multitask_fb", vocab_size=9, embedding_dim=4,
                             hidden_dim=3, seed=1)
    ids = np.array([3, 1, 4, 1, 5, 8, 2, 6])
    whole = forward(params, cfg, ids)

    first = forward(params, cfg, ids[:5])
    carried = final_state(first, cfg)
    second = forward(params, cfg, ids[5:], state=carried)
    stitched = np.vstack([first.intent_logits, second.intent_logits])
    assert np.abs(stitched - whole.intent_logits).max() <= 1e-12
    assert np.abs(np.concatenate([first.eos_logits, second.eos_logits])
                  - whole.eos_logits).max() <= 1e-12
    assert final_state(second, cfg, base=carried).step_count == 8


def test_step_rejects_out_of_range_token():
    params, cfg = make_model("online")
    state = fresh_state(cfg)
    with pytest.raises(ValueError):
        step(params, cfg, state, cfg.vocab_size)
    with pytest.raises(ValueError):
        step(params, cfg, state, -1)


def test_step_output_is_distribution():
    params, cfg = make_model("multitask", n_intents=4)
    state = fresh_state(cfg)
    state, out = step(params, cfg, state, 3)
    assert abs(out.intent_dist.sum() - 1.0) <= 1e-12
    assert np.all(out.intent_dist >= 0.0)
    assert 0.0 < out.eos_prob < 1.0


# --------------------------------------------------------------- checkpoints


def checkpoint_config(**kw):
    base = dict(variant=Variant.MULTITASK_FB, vocab_size=6, n_intents=3,
                embedding_dim=3, hidden_dim=2, dropout=0.25, eos_threshold=0.6,
                seed=9, intent_labels=("alarm", "play music", "who,what"),
                vocab_tokens=("<unk>", "a", "b c", "d,e", "f", "g"))
    base.update(kw)
    return ModelConfig(**base)


def test_checkpoint_round_trip_is_byte_identical(tmp_path):
    cfg = checkpoint_config()
    params = init_model(cfg)
    params.embedding[0, 0] = 1.0 / 3.0   # needs all 17 digits to round-trip
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(params, cfg, p1)
    loaded, loaded_cfg = load_checkpoint(p1)
    save_checkpoint(loaded, loaded_cfg, p2)
    assert p1.read_bytes() == p2.read_bytes()

    assert loaded_cfg == cfg
    for name, tensor in params.tensors().items():
        assert np.array_equal(loaded.tensors()[name], tensor), name


def test_checkpoint_header_line(tmp_path):
    cfg = checkpoint_config()
    p = tmp_path / "m.ckpt"
    save_checkpoint(init_model(cfg), cfg, p)
    assert p.read_text(encoding="utf-8").splitlines()[0] == CHECKPOINT_HEADER
    assert CHECKPOINT_HEADER == "ISLU-CKPT v1"


def test_checkpoint_expect_variant(tmp_path):
    cfg = checkpoint_config(variant=Variant.ONLINE, intent_labels=None,
                            vocab_tokens=None)
    p = tmp_path / "m.ckpt"
    save_checkpoint(init_model(cfg), cfg, p)
    load_checkpoint(p, expect_variant=Variant.ONLINE)
    with pytest.raises(CheckpointError, match="variant"):
        load_checkpoint(p, expect_variant=Variant.MULTITASK)


def test_checkpoint_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_checkpoint_bad_header(tmp_path):
    p = tmp_path / "m.ckpt"
    p.write_text("SOMETHING ELSE v9\n", encoding="utf-8")
    with pytest.raises(CheckpointError, match="not a supported checkpoint"):
        load_checkpoint(p)


def test_checkpoint_truncation(tmp_path):
    cfg = checkpoint_config()
    p = tmp_path / "m.ckpt"
    save_checkpoint(init_model(cfg), cfg, p)
    lines = p.read_text(encoding="utf-8").splitlines()
    p.write_text("\n".join(lines[:-1]) + "\n", encoding="utf-8")
    with pytest.raises(CheckpointError, match="corrupt"):
        load_checkpoint(p)


def test_checkpoint_shape_mismatch(tmp_path):
    cfg = checkpoint_config()
    p = tmp_path / "m.ckpt"
    save_checkpoint(init_model(cfg), cfg, p)
    lines = p.read_text(encoding="utf-8").splitlines()
    assert lines[2].startswith("embedding 6 3")
    lines[2] = "embedding 6 4"
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(CheckpointError, match="shape mismatch"):
        load_checkpoint(p)


def test_checkpoint_non_finite(tmp_path):
    cfg = checkpoint_config()
    p = tmp_path / "m.ckpt"
    save_checkpoint(init_model(cfg), cfg, p)
    lines = p.read_text(encoding="utf-8").splitlines()
    row = lines[3].split()
    row[0] = "nan"
    lines[3] = " ".join(row)
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(CheckpointError, match="non-finite"):
        load_checkpoint(p)


def test_checkpoint_trailing_data(tmp_path):
    cfg = checkpoint_config()
    p = tmp_path / "m.ckpt"
    save_checkpoint(init_model(cfg), cfg, p)
    with p.open("a", encoding="utf-8") as fh:
        fh.write("0.0 0.0 0.0\n")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(p)


def test_checkpoint_loaded_model_predicts_identically(tmp_path):
    params, cfg = make_model("multitask", vocab_size=9, embedding_dim=4,
                             hidden_dim=3, seed=6)
    p = tmp_path / "m.ckpt"
    save_checkpoint(params, cfg, p)
    loaded, loaded_cfg = load_checkpoint(p)
    ids = [1, 7, 3, 0, 8]
    a = forward(params, cfg, ids)
    b = forward(loaded, loaded_cfg, ids)
    assert np.array_equal(a.intent_logits, b.intent_logits)
    assert np.array_equal(a.eos_logits, b.eos_logits)
