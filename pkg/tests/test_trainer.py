import struct

import numpy as np
import pytest

from bifold import tensor as T
from bifold.batching import batch_for
from bifold.encoders import ConfigError, Vocabulary
from bifold.lora import LoraLinear
from bifold.model import ArchConfig, init_model, trainable_fraction
from bifold.trainer import (MAGIC, CheckpointError, TrainConfig, TrainingError, load_checkpoint, read_header,
                            save_checkpoint, train)
from conftest import TINY_ARCH, make_tiny_model


def _cfg(**kw):
    base = dict(steps=10, batch_size=2, lr=3e-3, history=2, log_every=0)
    base.update(kw)
    return TrainConfig(**base)


def _forward(model, data, items=((0, 0), (1, 1), (2, 0))):
    batch = batch_for(data, list(items), model.ctx, model.vocab, model.arch.max_text_len)
    with T.no_grad():
        p, q, _ = model.forward(batch)
    return p.data, q.data


def _adapters(model):
    return [m for blk in model.text_encoder.blocks + model.image_encoder.blocks
            for m in (blk.attn.q_proj, blk.attn.v_proj)]


def test_same_seed_same_model(tiny_data):
    a, b = make_tiny_model(tiny_data), make_tiny_model(tiny_data)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and np.array_equal(pa.data, pb.data)


def test_registry_is_exhaustive_and_unique(tiny_data):
    model = make_tiny_model(tiny_data)
    names = [n for n, _ in model.named_parameters()]
    assert len(names) == len(set(names))
    ids = [id(p) for _, p in model.named_parameters()]
    assert len(ids) == len(set(ids))
    assert all(isinstance(m, LoraLinear) for m in _adapters(model))


def test_initial_output_equals_adapter_free(tiny_data):
    model = make_tiny_model(tiny_data)
    with_adapters = _forward(model, tiny_data)
    for m in _adapters(model):
        m.A.data = np.random.default_rng(0).normal(size=m.A.shape) * 100  # irrelevant while B == 0
    assert all(np.array_equal(x, y) for x, y in zip(with_adapters, _forward(model, tiny_data)))


def test_encoder_trainable_fraction_closed_form():
    from bifold.foldworld import template_words
    vocab = Vocabulary(sorted(template_words()))
    from bifold.fusion import ContextConfig
    model = init_model(ArchConfig(), ContextConfig(), vocab, 0)
    d, r, L = 64, 4, len(vocab)
    mlp_hidden = 2 * d
    block = 4 * d * d + (d * mlp_hidden + mlp_hidden) + (mlp_hidden * d + d) + 4 * d
    adapters = 2 * (r * d + d * r)
    text = L * d + 2 * (block + adapters) + 2 * d
    image = (16 * d + d) + 2 * (block + adapters) + 2 * d
    total = text + image
    trainable = 4 * adapters
    assert trainable_fraction(model) == pytest.approx(trainable / total, rel=0, abs=1e-15)
    assert 0.01 < trainable_fraction(model) < 0.1


def test_invalid_arch_rejected():
    with pytest.raises(ConfigError):
        ArchConfig(d_model=30)
    with pytest.raises(ConfigError):
        ArchConfig(image_size=30)


def test_loss_decreases_over_first_50_steps():
    from bifold.foldworld import generate_dataset
    from conftest import TINY_WORLD
    data = generate_dataset(10, 3, TINY_WORLD)
    model = make_tiny_model(data)
    losses = train(model, data, _cfg(steps=50, batch_size=4, lr=1e-2)).losses
    assert np.mean(losses[-10:]) < np.mean(losses[:10])
    assert losses[-1] < losses[0]


def test_frozen_bases_bit_identical_and_deterministic(tiny_data):
    a = make_tiny_model(tiny_data)
    frozen = {n: p.data.copy() for n, p in a.named_parameters() if not p.requires_grad}
    trainable = {n: p.data.copy() for n, p in a.named_parameters() if p.requires_grad}
    ra = train(a, tiny_data, _cfg())
    after = dict(a.named_parameters())
    assert all(np.array_equal(after[n].data, v) for n, v in frozen.items())
    assert any(not np.array_equal(after[n].data, v) for n, v in trainable.items())
    b = make_tiny_model(tiny_data)
    rb = train(b, tiny_data, _cfg())
    assert ra.losses == rb.losses


def test_none_mode_ignores_context_frames(tiny_data):
    model = make_tiny_model(tiny_data, mode="none", H=0)
    batch = batch_for(tiny_data, [(0, 1), (1, 1)], model.ctx, model.vocab, model.arch.max_text_len)
    with T.no_grad():
        p1 = model.forward(batch)[0].data
        batch.context = np.random.default_rng(0).random((2, 3, 1, 16, 16))
        p2 = model.forward(batch)[0].data
    assert np.array_equal(p1, p2)


def test_nan_loss_aborts_and_restores(tiny_data):
    model = make_tiny_model(tiny_data)
    name, p = next((n, p) for n, p in model.named_parameters() if p.requires_grad and "pick_head" in n)
    before = p.data.copy()
    p.data = p.data.copy()
    p.data[...] = np.nan
    with pytest.raises(TrainingError):
        train(model, tiny_data, _cfg(steps=3))
    assert np.all(np.isnan(p.data))  # restored to its (bad) value before the failing step
    p.data = before


def test_context_mismatch_rejected(tiny_data):
    model = make_tiny_model(tiny_data, H=2)
    with pytest.raises(ValueError):
        train(model, tiny_data, _cfg(history=3))


def test_checkpoint_round_trip(tiny_data, tmp_path):
    model = make_tiny_model(tiny_data)
    train(model, tiny_data, _cfg(steps=5))
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    for x, y in zip(_forward(model, tiny_data), _forward(back, tiny_data)):
        assert np.max(np.abs(x - y) / np.abs(x)) < 1e-6
    header, _ = read_header(path)
    assert [t["name"] for t in header["tensors"]] == [n for n, _ in model.named_parameters()]
    assert header["context"] == {"H": 2, "context_mode": "keyframes"}
    raw = path.read_bytes()
    assert raw[:4] == MAGIC and struct.unpack("<I", raw[4:8])[0] == 1


def _corrupt(path, fn):
    raw = bytearray(path.read_bytes())
    path.write_bytes(bytes(fn(raw)))


@pytest.mark.parametrize("fn, msg", [
    (lambda r: b"XXXX" + r[4:], "magic"),
    (lambda r: r[:4] + struct.pack("<I", 7) + r[8:], "version"),
    (lambda r: r[:-10], "truncated"),
    (lambda r: r[:12], "too short"),
    (lambda r: r[:16] + b"!" + r[17:], "JSON"),
])
def test_corrupted_checkpoints_rejected(tiny_data, tmp_path, fn, msg):
    path = tmp_path / "m.ckpt"
    save_checkpoint(make_tiny_model(tiny_data), path)
    _corrupt(path, fn)
    with pytest.raises(CheckpointError, match=msg):
        load_checkpoint(path)


def test_shape_disagreement_rejected(tiny_data, tmp_path):
    import json
    path = tmp_path / "m.ckpt"
    save_checkpoint(make_tiny_model(tiny_data), path)
    header, payload = read_header(path)
    header["tensors"][0]["shape"] = [1] + header["tensors"][0]["shape"]
    h = json.dumps(header).encode()
    path.write_bytes(MAGIC + struct.pack("<I", 1) + struct.pack("<Q", len(h)) + h + payload)
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(path)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ValueError):
        TrainConfig(ambiguous_share=2)


def test_sgd_option_runs(tiny_data):
    model = make_tiny_model(tiny_data)
    r = train(model, tiny_data, _cfg(steps=3, optimizer="sgd", lr=0.1))
    assert len(r.losses) == 3


def test_sampler_draws_the_ambiguous_share_from_ambiguous_steps(tiny_data):
    from bifold.trainer import StepPool
    model = make_tiny_model(tiny_data)
    pool = StepPool(tiny_data, model.ctx, model.vocab, 2.0)
    idx = pool.sample(np.random.default_rng(0), 20000, 0.3)
    flags = np.array([tiny_data.episodes[e].steps[s].ambiguous for e, s in pool.items])
    assert abs(flags[idx].mean() - 0.3) < 0.015
