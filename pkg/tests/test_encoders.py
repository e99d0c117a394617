import logging
import math

import numpy as np
import pytest

from bifold import tensor as T
from bifold.encoders import (UNK_ID, ConfigError, ImageEncoder, Observation, TextEncoder, default_vocabulary,
                             detokenize, encode_image, encode_text, pe_2d_table, sinusoidal_pe_1d,
                             sinusoidal_pe_2d, tokenize)
from bifold.tensor import ContractError


@pytest.fixture(scope="module")
def vocab():
    return default_vocabulary()


def test_tokenize_template_sentence(vocab):
    instr = tokenize("fold the left edge to the center", vocab)
    assert len(instr.token_ids) == 7
    assert UNK_ID not in instr.token_ids
    assert detokenize(instr, vocab) == "fold the left edge to the center"


def test_tokenize_empty_and_unknown(vocab):
    with pytest.raises(ContractError):
        tokenize("", vocab)
    with pytest.raises(ContractError):
        tokenize("   ", vocab)
    assert UNK_ID in tokenize("fold the zzz", vocab).token_ids


def test_tokenize_ids_within_vocabulary(vocab):
    instr = tokenize("Unfold THE last fold", vocab)
    assert all(0 <= i < len(vocab) for i in instr.token_ids)


def test_pe_1d_position_zero_and_bounds():
    v = sinusoidal_pe_1d(0, 16)
    assert np.array_equal(v[0::2], np.zeros(8))
    assert np.array_equal(v[1::2], np.ones(8))
    for p in range(50):
        assert np.max(np.abs(sinusoidal_pe_1d(p, 16))) <= 1.0


def test_pe_1d_hand_value():
    expected = [math.sin(3), math.cos(3), math.sin(3 / 100), math.cos(3 / 100)]
    assert np.allclose(sinusoidal_pe_1d(3, 4), expected, rtol=0, atol=1e-15)


def test_pe_odd_or_bad_width_rejected():
    with pytest.raises(ConfigError):
        sinusoidal_pe_1d(1, 5)
    with pytest.raises(ConfigError):
        sinusoidal_pe_2d(1, 1, 6)


def test_pe_2d_composition_and_symmetry():
    assert np.array_equal(sinusoidal_pe_2d(2, 5, 8),
                          np.concatenate([sinusoidal_pe_1d(2, 4), sinusoidal_pe_1d(5, 4)]))
    assert np.array_equal(sinusoidal_pe_2d(0, 0, 8),
                          np.concatenate([sinusoidal_pe_1d(0, 4), sinusoidal_pe_1d(0, 4)]))
    a, b = sinusoidal_pe_2d(3, 6, 16), sinusoidal_pe_2d(6, 3, 16)
    assert np.array_equal(a[:8], b[8:]) and np.array_equal(a[8:], b[:8])


def test_pe_2d_table_rows_match_pointwise_and_are_injective():
    tab = pe_2d_table(8, 8, 64)
    for r in range(8):
        for c in range(8):
            assert np.array_equal(tab[r * 8 + c], sinusoidal_pe_2d(r, c, 64))
    assert len({row.tobytes() for row in tab}) == 64
    d = np.linalg.norm(tab[:, None] - tab[None], axis=-1)
    assert d[~np.eye(64, dtype=bool)].min() > 1e-3


def _text_encoder(vocab):
    return TextEncoder(np.random.default_rng(0), len(vocab), 32, 4, 2, 12)


def _image_encoder():
    return ImageEncoder(np.random.default_rng(0), 32, 4, 1, 32, 4, 2)


def test_encode_text_shape_determinism_and_order(vocab):
    enc = _text_encoder(vocab)
    instr = tokenize("fold the left edge to the center", vocab)
    a = encode_text(enc, instr).tokens.data
    b = encode_text(enc, instr).tokens.data
    assert a.shape == (7, 32)
    assert np.array_equal(a, b)
    swapped = tokenize("fold the edge left to the center", vocab)
    assert not np.allclose(encode_text(enc, swapped).tokens.data, a)


def test_encode_text_truncates_with_warning(vocab, caplog):
    enc = _text_encoder(vocab)
    long = tokenize(" ".join(["fold the left edge"] * 5), vocab)
    with caplog.at_level(logging.WARNING):
        out = encode_text(enc, long)
    assert out.tokens.shape == (12, 32)
    assert "truncating" in caplog.text


def test_encode_image_count_sharing_and_nondegeneracy():
    enc = _image_encoder()
    obs = Observation(np.random.default_rng(1).random((32, 32)), np.ones((32, 32)))
    a = encode_image(enc, obs)
    assert a.tokens.shape == (64, 32) and a.grid_shape == (8, 8)
    again = encode_image(enc, Observation(obs.image.copy(), obs.mask.copy()))
    assert np.array_equal(a.tokens.data, again.tokens.data)
    zero = encode_image(enc, Observation(np.zeros((32, 32)), np.zeros((32, 32)))).tokens.data
    one = encode_image(enc, Observation(np.ones((32, 32)), np.ones((32, 32)))).tokens.data
    assert not np.allclose(zero, one)


def test_shared_weights_change_both_outputs_identically():
    enc = _image_encoder()
    frames = np.random.default_rng(2).random((1, 1, 32, 32))
    enc.proj.weight.data = enc.proj.weight.data * 1.5
    cur = enc(frames).data
    ctx = enc(frames.copy()).data
    assert np.array_equal(cur, ctx)


def test_encoders_are_pure():
    enc = _image_encoder()
    before = [p.data.copy() for p in enc.parameters()]
    enc(np.random.default_rng(3).random((2, 1, 32, 32)))
    assert all(np.array_equal(b, p.data) for b, p in zip(before, enc.parameters()))


def test_indivisible_image_rejected():
    with pytest.raises(ConfigError):
        ImageEncoder(np.random.default_rng(0), 30, 4, 1, 32, 4, 1)
    enc = _image_encoder()
    with pytest.raises(ConfigError):
        encode_image(enc, Observation(np.zeros((30, 30)), np.zeros((30, 30))))


def test_observation_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        Observation(np.zeros((4, 4)), np.zeros((4, 5)))
