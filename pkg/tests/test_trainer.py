import dataclasses
import filecmp

import numpy as np
import pytest

from deskclip.checkpoint import (
    STATE_TAG,
    VOCAB_TAG,
    decode_train_state,
    decode_vocab,
    encode_train_state,
    encode_vocab,
    load_checkpoint,
    save_checkpoint,
)
from deskclip.data import generate_synthetic
from deskclip.encoders import TextConfig, VitConfig
from deskclip.errors import CheckpointError, ConfigError
from deskclip.losses import LossConfig
from deskclip.trainer import (
    TrainConfig,
    build_model,
    load_model_for_eval,
    train,
    trainable_parameters,
)

MICRO_IMAGE = VitConfig(image_size=16, patch_size=8, width=16, depth=1, heads=2, embed_dim=16)
MICRO_TEXT = TextConfig(vocab_size=64, context_length=12, width=16, depth=1, heads=2, embed_dim=16)


def micro_train_cfg(**kw) -> TrainConfig:
    base = dict(variant="clip", epochs=1, batch_size=4, seed=3, warmup_epochs=0.5,
                peak_lr=1e-3, base_lr=1e-4)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def records():
    return generate_synthetic(num_classes=4, per_class=3, seed=0)


# ---------------------------------------------------------------- checkpoint codec


def test_checkpoint_roundtrip(tmp_path):
    path = tmp_path / "m.ckpt"
    tensors = {
        "w": np.arange(6, dtype=np.float64).reshape(2, 3),
        "scalar": np.asarray(0.07),
    }
    blocks = {b"MISC": b"\x00\x01payload"}
    save_checkpoint(path, "a.b=1\nc.d=two", tensors, blocks)
    config, loaded, got_blocks = load_checkpoint(path)
    assert config == "a.b=1\nc.d=two"
    assert np.array_equal(loaded["w"], tensors["w"])
    assert loaded["scalar"].shape == ()
    assert float(loaded["scalar"]) == 0.07
    assert got_blocks[b"MISC"] == blocks[b"MISC"]


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_detects_truncation(tmp_path):
    path = tmp_path / "whole.ckpt"
    save_checkpoint(path, "k=v", {"w": np.ones((4, 4))}, {b"MISC": b"xyz"})
    whole = path.read_bytes()
    cut = tmp_path / "cut.ckpt"
    # slice at several depths: header, tensor payload, block payload
    for end in (4, 20, len(whole) // 2, len(whole) - 1):
        cut.write_bytes(whole[:end])
        with pytest.raises(CheckpointError):
            load_checkpoint(cut)


def test_checkpoint_rejects_trailing_garbage(tmp_path):
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, "k=v", {"w": np.ones(2)})
    path.write_bytes(path.read_bytes() + b"extra")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_rejects_bad_block_tag(tmp_path):
    with pytest.raises(CheckpointError, match="tag"):
        save_checkpoint(tmp_path / "x.ckpt", "k=v", {}, {b"TOOLONG": b""})


def test_vocab_codec_roundtrip():
    vocab = {"<pad>": 0, "naive": 5, "café": 6, "☃": 7}
    assert decode_vocab(encode_vocab(vocab)) == vocab


def test_train_state_codec_roundtrip():
    m = {"a": np.random.default_rng(0).normal(size=(3, 2)), "b": np.zeros(())}
    v = {k: np.abs(arr) for k, arr in m.items()}
    buf = np.random.default_rng(1).normal(size=(8, 4))
    payload = encode_train_state(2, 5, 29, 0.625, 29, m, v, buf, 6, 3, 8)
    state = decode_train_state(payload)
    assert (state["epoch"], state["step_in_epoch"], state["global_step"]) == (2, 5, 29)
    assert state["best_accuracy"] == 0.625
    assert state["adam_t"] == 29
    assert np.array_equal(state["moments_m"]["a"], m["a"])
    assert np.array_equal(state["moments_v"]["b"], v["b"])
    assert np.array_equal(state["queue_buffer"], buf)
    assert (state["queue_fill"], state["queue_head"], state["queue_capacity"]) == (6, 3, 8)


def test_train_state_rejects_trailing_bytes():
    payload = encode_train_state(0, 0, 0, 0.0, 0, {}, {}, np.zeros((2, 2)), 0, 0, 2)
    with pytest.raises(CheckpointError, match="trailing"):
        decode_train_state(payload + b"x")


# ---------------------------------------------------------------- model assembly


def test_build_model_variants_share_interface():
    for encoder in ("vit", "conv"):
        cfg = micro_train_cfg(image_encoder=encoder)
        image_cfg = MICRO_IMAGE if encoder == "vit" else _micro_conv()
        model = build_model(cfg, image_cfg, MICRO_TEXT)
        names = [n for n, _ in model.named_parameters()]
        assert "log_temperature" in names
        assert any(n.startswith("image.") for n in names)
        assert any(n.startswith("text.") for n in names)


def _micro_conv():
    from deskclip.encoders import ConvConfig

    return ConvConfig(image_size=16, stage_channels=(8, 16), embed_dim=16)


def test_build_model_rejects_mismatched_encoder_config():
    with pytest.raises(ConfigError):
        build_model(micro_train_cfg(image_encoder="conv"), MICRO_IMAGE, MICRO_TEXT)


def test_trainable_parameters_drop_mlm_head_when_unused():
    model = build_model(micro_train_cfg(), MICRO_IMAGE, MICRO_TEXT)
    all_names = {n for n, _ in model.named_parameters()}
    mlm_names = {n for n in all_names if n.startswith("text.mlm_head.")}
    assert mlm_names, "expected an mlm head on the text tower"
    for variant in ("clip", "slip", "filip"):
        kept = {n for n, _ in trainable_parameters(model, variant)}
        assert kept == all_names - mlm_names
    for variant in ("declip", "defilip"):
        kept = {n for n, _ in trainable_parameters(model, variant)}
        assert kept == all_names


# ---------------------------------------------------------------- training runs


def run_micro(tmp_path, records, name, *, resume_from=None, stop_after_steps=None,
              epochs=1, variant="clip"):
    return train(
        tmp_path / name,
        records,
        records[:4],
        ["red circle", "green circle", "blue circle", "yellow circle"],
        micro_train_cfg(epochs=epochs, variant=variant),
        LossConfig(variant=variant, neighbor_queue_capacity=8),
        MICRO_IMAGE,
        MICRO_TEXT,
        resume_from=resume_from,
        stop_after_steps=stop_after_steps,
    )


def test_zero_epochs_writes_initial_checkpoint(tmp_path, records):
    result = run_micro(tmp_path, records, "zero", epochs=0)
    assert result.steps_run == 0
    assert not result.aborted
    assert result.final_path.exists()
    config, tensors, blocks = load_checkpoint(result.final_path)
    assert "log_temperature" in tensors
    assert VOCAB_TAG in blocks and STATE_TAG in blocks


def test_training_is_deterministic(tmp_path, records):
    a = run_micro(tmp_path, records, "a")
    b = run_micro(tmp_path, records, "b")
    assert a.metrics_path.read_text() == b.metrics_path.read_text()
    assert filecmp.cmp(a.final_path, b.final_path, shallow=False)


def test_interrupt_and_resume_is_bitwise(tmp_path, records):
    whole = run_micro(tmp_path, records, "whole", epochs=2)
    part = run_micro(tmp_path, records, "part", epochs=2, stop_after_steps=3)
    assert part.steps_run == 3
    resumed = run_micro(tmp_path, records, "part", epochs=2, resume_from=part.final_path)
    assert filecmp.cmp(whole.final_path, resumed.final_path, shallow=False)
    assert whole.metrics_path.read_text() == resumed.metrics_path.read_text()


def test_resume_rejects_config_mismatch(tmp_path, records):
    done = run_micro(tmp_path, records, "origin", epochs=1)
    with pytest.raises(CheckpointError, match="config"):
        train(
            tmp_path / "other",
            records,
            [],
            [],
            micro_train_cfg(epochs=1, seed=99),  # different seed: different config text
            LossConfig(variant="clip", neighbor_queue_capacity=8),
            MICRO_IMAGE,
            MICRO_TEXT,
            resume_from=done.final_path,
        )


def test_composite_variant_trains_a_step(tmp_path, records):
    result = run_micro(tmp_path, records, "declip", variant="declip", stop_after_steps=1)
    assert result.steps_run == 1
    lines = result.metrics_path.read_text().splitlines()
    assert "neighbor=" in lines[0] and "multiview=" in lines[0]


def test_train_rejects_empty_dataset(tmp_path):
    with pytest.raises(ConfigError, match="empty"):
        train(tmp_path / "r", [], [], [], micro_train_cfg(),
              LossConfig(variant="clip"), MICRO_IMAGE, MICRO_TEXT)


def test_train_rejects_variant_mismatch(tmp_path, records):
    with pytest.raises(ConfigError, match="mismatch"):
        train(tmp_path / "r", records, [], [], micro_train_cfg(variant="clip"),
              LossConfig(variant="slip"), MICRO_IMAGE, MICRO_TEXT)


def test_train_rejects_oversized_batch(tmp_path, records):
    with pytest.raises(ConfigError, match="batch_size"):
        train(tmp_path / "r", records, [], [], micro_train_cfg(batch_size=512),
              LossConfig(variant="clip"), MICRO_IMAGE, MICRO_TEXT)


def test_load_model_for_eval_reproduces_parameters(tmp_path, records):
    result = run_micro(tmp_path, records, "evalsrc")
    model, vocab, (train_cfg, loss_cfg, image_cfg, text_cfg) = load_model_for_eval(result.final_path)
    _, tensors, _ = load_checkpoint(result.final_path)
    for name, p in model.named_parameters():
        assert np.array_equal(p.data, tensors[name]), name
    assert train_cfg.variant == "clip"
    assert image_cfg.image_size == 16
    assert text_cfg.context_length == 12
    assert "circle" in vocab.token_to_id
