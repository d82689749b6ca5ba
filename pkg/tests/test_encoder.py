import numpy as np
import pytest

from nestrq.encoder import (
    CausalitySpec,
    EncoderConfig,
    adapt_encoder,
    block_masks,
    build_attention_mask,
    conformer_block,
    encode,
    expand_conv_kernels,
    init_encoder_params,
    parameter_checksum,
    set_attention_mode,
    subsample,
    truncate_conv_kernels,
)
from nestrq.errors import ConfigError, InputError
from nestrq.numcore import Rng, Tensor, layer_norm
from nestrq.quantizer import init_quantizer, quantize


def _setup(causality=None, blocks=2, dim=32, mels=16, seed=0):
    cfg = EncoderConfig(num_mels=mels, num_blocks=blocks, model_dim=dim, num_heads=4,
                        causality=causality or CausalitySpec.causal())
    return cfg, init_encoder_params(cfg, Rng(seed).fork("init"))


def _x(t, mels=16, seed=1):
    return np.random.default_rng(seed).normal(size=(t, mels))


def _bump(x, frames, seed=2):
    y = x.copy()
    y[frames] += np.random.default_rng(seed).normal(size=y[frames].shape)
    return y


# --- subsampler ---------------------------------------------------------------

@pytest.mark.parametrize("t, l", [(16, 4), (17, 4), (4, 1), (31, 7)])
def test_subsample_length(t, l):
    _, p = _setup()
    assert subsample(_x(t), p).shape == (l, 32)


def test_subsample_too_short():
    _, p = _setup()
    with pytest.raises(InputError):
        subsample(_x(3), p)


def test_subsample_row_zero_ignores_frames_from_8():
    _, p = _setup()
    x = _x(32)
    a = subsample(x, p).data
    b = subsample(_bump(x, slice(8, None)), p).data
    assert np.abs(a[0] - b[0]).max() == 0.0


def test_subsample_group_causal_every_position():
    _, p = _setup()
    x = _x(40)
    base = subsample(x, p).data
    for l in range(9):
        moved = subsample(_bump(x, slice(4 * (l + 1), None)), p).data
        assert np.abs(moved[: l + 1] - base[: l + 1]).max() == 0.0
        assert np.abs(moved[l + 1] - base[l + 1]).max() > 0.0


# --- masks --------------------------------------------------------------------

def test_masks_by_hand():
    assert build_attention_mask(3, "NC-A").all()
    np.testing.assert_array_equal(build_attention_mask(3, "C-A"), np.tril(np.ones((3, 3), bool)))
    ahead = np.array([[1, 1, 0], [1, 1, 1], [1, 1, 1]], dtype=bool)
    np.testing.assert_array_equal(build_attention_mask(3, "lookahead"), ahead)


def test_bottom_blocks_get_lookahead():
    cfg = EncoderConfig(num_blocks=4, causality=CausalitySpec.streaming(3))
    masks = block_masks(cfg, 5)
    assert [m[0, 1] for m in masks] == [True, True, True, False]


def test_causality_spec_validation():
    assert CausalitySpec.streaming().lookahead_blocks == 3
    with pytest.raises(ConfigError):
        CausalitySpec("C-A", "C-C", 2)
    with pytest.raises(ConfigError):
        EncoderConfig(num_blocks=2, causality=CausalitySpec.streaming(3))
    with pytest.raises(ConfigError):
        EncoderConfig(model_dim=30, num_heads=4)
    assert CausalitySpec.noncausal(15).kernel_size == 31
    assert CausalitySpec.causal(15).kernel_size == 16


# --- block ----------------------------------------------------------------------

def test_block_with_silenced_branches_is_final_norm():
    cfg, p = _setup()
    for name in ("ff1.down", "ff2.down", "attn.out", "conv.pointwise2"):
        for part in ("weight", "bias"):
            key = f"blocks.0.{name}.{part}"
            p[key] = Tensor(np.zeros_like(p[key].data), True)
    x = _x(6, 32)
    out = conformer_block(x, p, 0, build_attention_mask(6, "C-A"), cfg.causality, 4).data
    ref = layer_norm(x, p["blocks.0.final_norm.gain"], p["blocks.0.final_norm.bias"]).data
    assert out.shape == x.shape
    np.testing.assert_allclose(out, ref, atol=1e-14)
    zero = conformer_block(np.zeros((6, 32)), p, 0, build_attention_mask(6, "C-A"), cfg.causality, 4)
    np.testing.assert_array_equal(zero.data, 0.0)


def test_causal_block_rows_unaffected_by_future():
    cfg, p = _setup()
    x = _x(10, 32)
    mask = build_attention_mask(10, "C-A")
    base = conformer_block(x, p, 0, mask, cfg.causality, 4).data
    for t in range(9):
        moved = conformer_block(_bump(x, slice(t + 1, None)), p, 0, mask, cfg.causality, 4).data
        assert np.abs(moved[: t + 1] - base[: t + 1]).max() <= 1e-12


def test_block_rejects_wrong_kernel_length():
    cfg, p = _setup(CausalitySpec.noncausal())
    with pytest.raises(ConfigError):
        conformer_block(_x(5, 32), p, 0, build_attention_mask(5, "C-A"), CausalitySpec.causal(), 4)


# --- whole encoder ------------------------------------------------------------------

def test_h_and_o_same_length_as_tokens():
    cfg, p = _setup(mels=80)
    x = _x(1203, 80)[:203]
    res = encode(cfg, p, x)
    q = init_quantizer(0, np.random.default_rng(0).normal(size=(1000, 320)))
    assert res.H.shape[0] == res.O.shape[0] == len(quantize(q, x)) == 50


def test_batched_matches_single():
    cfg, p = _setup()
    xs = np.stack([_x(24, seed=s) for s in range(3)])
    batched = encode(cfg, p, xs).O.data
    for i in range(3):
        np.testing.assert_allclose(batched[i], encode(cfg, p, xs[i]).O.data, atol=1e-12)


def test_fully_causal_future_receptive_field_zero():
    cfg, p = _setup()
    x = _x(48)
    base = encode(cfg, p, x).O.data
    for t in range(11):
        moved = encode(cfg, p, _bump(x, slice(4 * (t + 1), None))).O.data
        assert np.abs(moved[: t + 1] - base[: t + 1]).max() <= 1e-12


def test_lookahead_three_blocks():
    cfg, p = _setup(CausalitySpec.streaming(3), blocks=4)
    x = _x(64)
    base = encode(cfg, p, x).O.data
    t = 5
    beyond = encode(cfg, p, _bump(x, slice(4 * (t + 4), None))).O.data
    assert np.abs(beyond[t] - base[t]).max() <= 1e-12
    at = encode(cfg, p, _bump(x, slice(4 * (t + 3), 4 * (t + 4)))).O.data
    assert np.abs(at[t] - base[t]).max() > 1e-9


def test_noncausal_sees_last_frame():
    cfg, p = _setup(CausalitySpec.noncausal())
    x = _x(32)
    a = encode(cfg, p, x).O.data
    b = encode(cfg, p, _bump(x, slice(31, 32))).O.data
    assert np.abs(a[0] - b[0]).max() > 1e-9


def test_feature_dim_checked():
    cfg, p = _setup()
    with pytest.raises(InputError):
        encode(cfg, p, _x(16, mels=8))


# --- adaptation ---------------------------------------------------------------------

def test_truncate_31_to_16_and_by_hand():
    _, p = _setup(CausalitySpec.noncausal(15))
    t = truncate_conv_kernels(p)
    name = "blocks.0.conv.depthwise"
    assert p[name].shape[0] == 31 and t[name].shape[0] == 16
    np.testing.assert_array_equal(t[name].data, p[name].data[:16])
    abc = {"blocks.0.conv.depthwise": Tensor(np.array([[1.0], [2.0], [3.0]]))}
    np.testing.assert_array_equal(truncate_conv_kernels(abc)["blocks.0.conv.depthwise"].data, [[1.0], [2.0]])


def test_truncate_even_kernel_rejected():
    with pytest.raises(ConfigError):
        truncate_conv_kernels({"blocks.0.conv.depthwise": Tensor(np.ones((4, 2)))})


def test_expand_16_to_31_bounded_and_reproducible():
    _, p = _setup(CausalitySpec.causal(15))
    a = expand_conv_kernels(p, Rng(7).fork("adapt"))
    b = expand_conv_kernels(p, Rng(7).fork("adapt"))
    name = "blocks.1.conv.depthwise"
    assert a[name].shape == (31, 32)
    np.testing.assert_array_equal(a[name].data[:16], p[name].data)
    assert a[name].data.tobytes() == b[name].data.tobytes()
    limit = np.sqrt(6.0 / (31 + 31))
    assert np.abs(a[name].data[16:]).max() <= limit


def test_round_trip_keeps_shared_taps():
    _, p = _setup(CausalitySpec.causal(3))
    back = truncate_conv_kernels(expand_conv_kernels(p, Rng(1)))
    for k in p:
        assert back[k].data.tobytes() == p[k].data.tobytes()


def test_set_attention_mode_round_trip():
    cfg, p = _setup(CausalitySpec("NC-A", "C-C"))
    x = _x(24)
    before = encode(cfg, p, x).O.data
    sum0 = parameter_checksum(p)
    c2 = set_attention_mode(cfg, "C-A")
    assert not np.array_equal(encode(c2, p, x).O.data, before)
    c3 = set_attention_mode(c2, "NC-A")
    assert encode(c3, p, x).O.data.tobytes() == before.tobytes()
    assert parameter_checksum(p) == sum0


def test_lookahead_zero_equals_plain_causal():
    cfg = EncoderConfig(num_blocks=3, causality=CausalitySpec("C-A-lookahead", "C-C", 0))
    plain = EncoderConfig(num_blocks=3)
    for a, b in zip(block_masks(cfg, 6), block_masks(plain, 6)):
        np.testing.assert_array_equal(a, b)


def test_set_attention_mode_too_many_blocks():
    cfg, _ = _setup(blocks=2)
    with pytest.raises(ConfigError):
        set_attention_mode(cfg, "C-A-lookahead", 3)


def test_adapt_encoder_moves_both_axes():
    cfg, p = _setup(CausalitySpec.noncausal())
    c2, p2 = adapt_encoder(cfg, p, CausalitySpec.causal(), Rng(0))
    assert c2.causality == CausalitySpec.causal()
    assert p2["blocks.0.conv.depthwise"].shape[0] == 4
    encode(c2, p2, _x(16))
    with pytest.raises(ConfigError):
        adapt_encoder(cfg, p, CausalitySpec.causal(5), Rng(0))
