import numpy as np
import pytest

from bifold import tensor as T
from bifold.fusion import (ContextConfig, FusionTransformer, assemble, expected_length, extract_current,
                           fuse, fuse_current, scatter_current)
from bifold.tensor import ContractError, Tensor

D = 16


def _inputs(rng, b=2, text_len=7, n_patches=64, H=3):
    text = Tensor(rng.normal(size=(b, text_len, D)))
    cur = Tensor(rng.normal(size=(b, n_patches, D)))
    ctx = [Tensor(rng.normal(size=(b, n_patches, D))) for _ in range(H)]
    return text, cur, ctx


def _fusion(H=3, seed=0):
    return FusionTransformer(np.random.default_rng(seed), D, 4, 2, H, mlp_ratio=2)


def test_context_config_validation():
    assert ContextConfig.for_mode("none") == ContextConfig(0, "none")
    with pytest.raises(ValueError):
        ContextConfig(0, "keyframes")
    with pytest.raises(ValueError):
        ContextConfig(2, "none")
    with pytest.raises(ValueError):
        ContextConfig(3, "sometimes")


def test_token_budget_examples():
    rng = np.random.default_rng(0)
    f = _fusion()
    seq = assemble(f, *_inputs(rng), ContextConfig(3), (8, 8))
    assert seq.n_total == 268 == expected_length(7, 64, 3)
    f0 = _fusion(H=0)
    text, cur, _ = _inputs(rng, H=0)
    seq0 = assemble(f0, text, cur, [], ContextConfig(0, "none"), (8, 8))
    assert seq0.n_total == 1 + 7 + 1 + 64


@pytest.mark.parametrize("H", [0, 1, 2, 3])
@pytest.mark.parametrize("text_len", [1, 5, 12])
def test_token_budget_closed_form(H, text_len):
    rng = np.random.default_rng(H * 100 + text_len)
    f = _fusion(H=H)
    cfg = ContextConfig.for_mode("none" if H == 0 else "keyframes", H)
    seq = assemble(f, *_inputs(rng, text_len=text_len, n_patches=16, H=H), cfg, (4, 4))
    assert seq.n_total == expected_length(text_len, 16, H)
    assert len(seq.segment_table()) == seq.n_total


def test_wrong_context_count_rejected():
    rng = np.random.default_rng(0)
    text, cur, ctx = _inputs(rng)
    with pytest.raises(ContractError):
        assemble(_fusion(), text, cur, ctx[:2], ContextConfig(3), (8, 8))


def test_swapping_context_slots_changes_sequence():
    rng = np.random.default_rng(1)
    f = _fusion()
    text, cur, ctx = _inputs(rng)
    a = assemble(f, text, cur, ctx, ContextConfig(3), (8, 8)).tokens.data
    b = assemble(f, text, cur, [ctx[1], ctx[0], ctx[2]], ContextConfig(3), (8, 8)).tokens.data
    assert not np.array_equal(a, b)


def test_fuse_attention_rows_and_shape():
    rng = np.random.default_rng(2)
    f = _fusion()
    seq = assemble(f, *_inputs(rng), ContextConfig(3), (8, 8))
    with T.no_grad():
        out = fuse(f, seq, introspect=True)
    assert out.tokens.shape == seq.tokens.shape
    assert len(out.attention) == 2
    for att in out.attention:
        assert att.shape == (2, 4, 268, 268)
        assert np.allclose(att.sum(axis=-1), 1.0, atol=1e-12)


def test_zeroing_context_changes_current_outputs():
    rng = np.random.default_rng(3)
    f = _fusion()
    text, cur, ctx = _inputs(rng)
    with T.no_grad():
        a = extract_current(fuse(f, assemble(f, text, cur, ctx, ContextConfig(3), (8, 8)))).data
        zeros = [Tensor(np.zeros(c.shape)) for c in ctx]
        b = extract_current(fuse(f, assemble(f, text, cur, zeros, ContextConfig(3), (8, 8)))).data
    assert np.max(np.abs(a - b)) > 1e-6


def test_extract_current_selection_and_round_trip():
    rng = np.random.default_rng(4)
    f = _fusion()
    seq = assemble(f, *_inputs(rng), ContextConfig(3), (8, 8))
    with T.no_grad():
        out = fuse(f, seq)
    grid = extract_current(out).data
    assert grid.shape == (2, 8, 8, D)
    seg = out.segment("current")
    assert np.array_equal(grid.reshape(2, 64, D), out.tokens.data[:, seg.start:seg.stop])
    assert np.array_equal(scatter_current(out, grid), out.tokens.data)


def test_fast_path_matches_full_fusion():
    rng = np.random.default_rng(5)
    f = _fusion()
    seq = assemble(f, *_inputs(rng), ContextConfig(3), (8, 8))
    with T.no_grad():
        full = extract_current(fuse(f, seq)).data
        fast = fuse_current(f, seq).data
    assert np.max(np.abs(full - fast)) < 1e-12


def test_extract_without_segments_rejected():
    rng = np.random.default_rng(6)
    f = _fusion()
    seq = assemble(f, *_inputs(rng), ContextConfig(3), (8, 8))
    seq.segments = []
    with pytest.raises(ContractError):
        extract_current(seq)


def test_prefix_rows_are_independent():
    rng = np.random.default_rng(7)
    f = _fusion()
    seq = assemble(f, *_inputs(rng), ContextConfig(3), (8, 8))
    loss = T.getitem(seq.tokens, (slice(None), seq.segment("prefix:context2").start)).sum()
    loss.backward()
    touched = np.flatnonzero(np.abs(f.prefix.grad).sum(axis=1))
    assert list(touched) == [3]


@pytest.mark.parametrize("tags", [False, True])
def test_image_tokens_carry_modality_and_optional_segment_tag(tags):
    rng = np.random.default_rng(4)
    f = FusionTransformer(np.random.default_rng(0), D, 4, 1, 2, mlp_ratio=2, segment_tags=tags)
    text, cur, ctx = _inputs(rng, H=2)
    seq = assemble(f, text, cur, ctx, ContextConfig(2), (8, 8))
    for name, raw, k in (("current", cur, 1), ("context2", ctx[1], 3)):
        s = seq.segment(name)
        expect = raw.data + f.modality.data[1] + (f.prefix.data[k] if tags else 0.0)
        assert np.array_equal(seq.tokens.data[:, s.start:s.stop], expect)
    s = seq.segment("text")
    expect = text.data + f.modality.data[0] + (f.prefix.data[0] if tags else 0.0)
    assert np.array_equal(seq.tokens.data[:, s.start:s.stop], expect)


def test_patch_table_is_added_to_image_segments_only():
    rng = np.random.default_rng(5)
    table = rng.normal(size=(64, D))
    plain = _fusion(H=2)
    with_pe = FusionTransformer(np.random.default_rng(0), D, 4, 2, 2, mlp_ratio=2, patch_pe=table)
    text, cur, ctx = _inputs(rng, H=2)
    a = assemble(plain, text, cur, ctx, ContextConfig(2), (8, 8))
    b = assemble(with_pe, text, cur, ctx, ContextConfig(2), (8, 8))
    diff = b.tokens.data - a.tokens.data
    for seg in a.segments:
        part = diff[:, seg.start:seg.stop]
        if seg.name in ("current", "context1", "context2"):
            assert np.allclose(part, table, atol=1e-12)
        else:
            assert np.array_equal(part, np.zeros_like(part))
    # the table is a fixed input, not a parameter
    assert len(with_pe.parameters()) == len(plain.parameters())
