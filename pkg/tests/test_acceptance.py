"""Acceptance criteria A1-A7.

Test names carry the criterion id (``test_a3_...``); the conftest hook folds
every test of a criterion into one PASS/FAIL line at the end of the session.
"""

import json
import math

import numpy as np
import pytest

from nestrq.cli import main as cli
from nestrq.encoder import (
    CausalitySpec,
    EncoderConfig,
    build_attention_mask,
    conformer_block,
    encode,
    expand_conv_kernels,
    init_encoder_params,
    truncate_conv_kernels,
)
from nestrq.numcore import (
    PaddingSpec,
    Rng,
    Tensor,
    add,
    concat,
    conv1d,
    conv1d_depthwise,
    cross_entropy,
    div,
    exp,
    getitem,
    glu,
    gradcheck,
    layer_norm,
    linear,
    log,
    log_softmax,
    masked_softmax,
    matmul,
    mean,
    mul,
    neg,
    power,
    reshape,
    sigmoid,
    softmax_rows,
    sub,
    swap_last,
    swish,
    tanh,
    transpose,
    tsum,
)
from nestrq.objectives import MaskConfig, NtpConfig, init_ntp_heads, nestrq_loss, sample_mask, valid_pair_count
from nestrq.quantizer import init_quantizer, load_quantizer, quantize, stack_frames
from nestrq.serialization import dir_digest, file_digest
from nestrq.training import (
    TrainConfig,
    adapt_and_probe,
    init_train_state,
    linear_probe,
    load_checkpoint,
    make_batch,
    PretrainData,
    pretrain,
    train_step,
)

H = 1e-5
TOL = 1e-4
COORDS = 100


# --- A1 gradients -----------------------------------------------------------------

def _leaf(shape, seed, low=None, high=None):
    g = np.random.default_rng(seed)
    data = g.uniform(low, high, size=shape) if low is not None else g.normal(size=shape)
    return Tensor(data, requires_grad=True)


def _weighted(out, seed=99):
    # a fixed random projection turns any output into a scalar with a generic gradient
    w = np.random.default_rng(seed).normal(size=out.shape)
    return tsum(mul(out, w))


def _primitive_cases():
    a, b = _leaf((10, 12), 1), _leaf((10, 12), 2)
    pos = _leaf((10, 12), 3, 0.5, 2.0)
    m1, m2 = _leaf((10, 12), 4), _leaf((12, 9), 5)
    bias = _leaf((9,), 6)
    g12, b12 = _leaf((12,), 7), _leaf((12,), 8)
    x3 = _leaf((3, 8, 6), 9)
    k3 = _leaf((5, 6), 10)
    wconv, bconv = _leaf((4, 6, 5), 11), _leaf((5,), 12)
    causal = np.tril(np.ones((10, 12), dtype=bool), 2)
    targets = np.random.default_rng(13).integers(0, 12, size=10)
    return {
        "add": (lambda: _weighted(add(a, b)), [a, b]),
        "sub": (lambda: _weighted(sub(a, b)), [a, b]),
        "mul": (lambda: _weighted(mul(a, b)), [a, b]),
        "div": (lambda: _weighted(div(a, pos)), [a, pos]),
        "neg": (lambda: _weighted(neg(a)), [a]),
        "power": (lambda: _weighted(power(pos, 1.7)), [pos]),
        "exp": (lambda: _weighted(exp(a)), [a]),
        "log": (lambda: _weighted(log(pos)), [pos]),
        "sigmoid": (lambda: _weighted(sigmoid(a)), [a]),
        "tanh": (lambda: _weighted(tanh(a)), [a]),
        "swish": (lambda: _weighted(swish(a)), [a]),
        "glu": (lambda: _weighted(glu(a)), [a]),
        "reshape": (lambda: _weighted(reshape(a, (4, 30))), [a]),
        "transpose": (lambda: _weighted(transpose(x3, (2, 0, 1))), [x3]),
        "swap_last": (lambda: _weighted(swap_last(x3)), [x3]),
        "getitem": (lambda: _weighted(getitem(a, (slice(1, 8), [0, 3, 3, 11]))), [a]),
        "concat": (lambda: _weighted(concat([a, b], axis=0)), [a, b]),
        "sum": (lambda: _weighted(tsum(a, axis=1)), [a]),
        "mean": (lambda: _weighted(mean(a, axis=0, keepdims=True)), [a]),
        "matmul": (lambda: _weighted(matmul(m1, m2)), [m1, m2]),
        "linear": (lambda: _weighted(linear(m1, m2, bias)), [m1, m2, bias]),
        "softmax_rows": (lambda: _weighted(softmax_rows(a)), [a]),
        "masked_softmax": (lambda: _weighted(masked_softmax(a, causal)), [a]),
        "log_softmax": (lambda: _weighted(log_softmax(a)), [a]),
        "layer_norm": (lambda: _weighted(layer_norm(a, g12, b12)), [a, g12, b12]),
        "cross_entropy": (lambda: cross_entropy(a, targets), [a]),
        "conv1d_depthwise_symmetric": (lambda: _weighted(conv1d_depthwise(x3, k3, PaddingSpec.symmetric(2))),
                                       [x3, k3]),
        "conv1d_depthwise_causal": (lambda: _weighted(conv1d_depthwise(x3, k3, PaddingSpec.causal(4))),
                                    [x3, k3]),
        "conv1d_strided": (lambda: _weighted(conv1d(x3, wconv, bconv, stride=2, pad_left=3)),
                           [x3, wconv, bconv]),
    }


@pytest.mark.parametrize("name", sorted(_primitive_cases()))
def test_a1_primitive_gradients(name):
    fn, inputs = _primitive_cases()[name]
    assert sum(t.size for t in inputs) >= COORDS
    err = gradcheck(fn, inputs, h=H, num_coords=COORDS)
    assert err < TOL, f"{name}: max relative error {err:.2e}"


def test_a1_conformer_block_with_nestrq_loss():
    cfg = EncoderConfig(num_mels=8, num_blocks=1, model_dim=16, num_heads=2,
                        causality=CausalitySpec.causal(2))
    params = init_encoder_params(cfg, Rng(0))
    block = {k: v for k, v in params.items() if k.startswith("blocks.0.")}
    x = _leaf((12, 16), 21)
    ntp = NtpConfig(3, 20)
    heads = init_ntp_heads(Rng(1), 16, ntp)
    tokens = np.random.default_rng(22).integers(0, 20, size=12)
    mask = build_attention_mask(12, "C-A")

    def fn():
        o = conformer_block(x, params, 0, mask, cfg.causality, cfg.num_heads)
        return nestrq_loss(o, tokens, ntp, heads)

    inputs = [x, *block.values(), *[t for h in heads for t in h]]
    err = gradcheck(fn, inputs, h=H, num_coords=300)
    assert err < TOL, f"composite max relative error {err:.2e}"


# --- A2 causality -------------------------------------------------------------------

def test_a2_fully_causal_invariance():
    cfg = EncoderConfig(num_mels=16, num_blocks=4, model_dim=32, num_heads=4,
                        causality=CausalitySpec("C-A", "C-C", 0, 3))
    params = init_encoder_params(cfg, Rng(3))
    g = np.random.default_rng(0)
    x = g.normal(size=(96, 16))
    base = encode(cfg, params, x).O.data
    for t in range(base.shape[0] - 1):
        y = x.copy()
        y[4 * (t + 1):] = g.normal(size=y[4 * (t + 1):].shape) * 10
        moved = encode(cfg, params, y).O.data
        assert np.abs(moved[: t + 1] - base[: t + 1]).max() <= 1e-12


def _future_receptive_field(cfg, params, x, t, max_k):
    base = encode(cfg, params, x).O.data[t]
    seen = []
    for k in range(max_k + 1):
        y = x.copy()
        y[4 * (t + k):4 * (t + k + 1)] += 5.0
        diff = np.abs(encode(cfg, params, y).O.data[t] - base).max()
        seen.append(diff > 1e-12)
    return max(k for k, s in enumerate(seen) if s), seen


@pytest.mark.parametrize("M", [0, 1, 3, 5, 7])
def test_a2_lookahead_receptive_field(M):
    spec = CausalitySpec("C-A-lookahead" if M else "C-A", "C-C", M, 2)
    cfg = EncoderConfig(num_mels=8, num_blocks=8, model_dim=16, num_heads=2, causality=spec)
    params = init_encoder_params(cfg, Rng(M))
    x = np.random.default_rng(M).normal(size=(4 * 24, 8))
    t = 6
    rf, seen = _future_receptive_field(cfg, params, x, t, max_k=M + 4)
    assert rf == M, seen
    assert all(seen[: M + 1])  # every position inside the window is actually used


# --- A3 quantizer -------------------------------------------------------------------

def test_a3_exhaustive_nearest_neighbour(desk_quantizer):
    q = desk_quantizer
    frames = np.random.default_rng(11).normal(size=(4000, 80)) * 3.0
    tokens = quantize(q, frames).tokens
    rows = stack_frames(frames, 4)
    assert rows.shape[0] == 1000
    z = ((rows - q.mean) / q.std) @ q.projection
    z /= np.sqrt((z * z).sum(1, keepdims=True))
    matches = 0
    for i in range(1000):
        d = ((q.codebook - z[i]) ** 2).sum(1)
        best = 0
        for j in range(1, q.vocab_size):
            if d[j] < d[best]:
                best = j
        matches += int(tokens[i] == best)
    assert matches == 1000


def test_a3_token_length_floor(desk_quantizer):
    g = np.random.default_rng(12)
    for t in g.integers(4, 2000, size=100):
        assert len(quantize(desk_quantizer, np.zeros((int(t), 80)))) == int(t) // 4


def test_a3_frozen_quantizer_across_500_steps(a7_runs):
    first = a7_runs[0]
    saved = load_quantizer(first["q"])
    trained = load_checkpoint(first["ckpt"]).quantizer
    assert load_checkpoint(first["ckpt"]).step == 500
    for name in ("projection", "codebook", "mean", "std"):
        assert getattr(saved, name).tobytes() == getattr(trained, name).tobytes()
    rows = [json.loads(l) for l in first["metrics"].read_text().splitlines()]
    assert len({r["codebook_snapshot"] for r in rows}) == 1


# --- A4 objectives ------------------------------------------------------------------

def test_a4_n1_bit_equal_reference():
    g = np.random.default_rng(31)
    O = g.normal(size=(40, 16))
    tokens = g.integers(0, 64, size=40)
    heads = [(Tensor(g.normal(size=(16, 64)) * 0.3), Tensor(g.normal(size=64)))]
    logits = O[:-1] @ heads[0][0].data + heads[0][1].data
    m = logits.max(-1, keepdims=True)
    lse = (np.log(np.exp(logits - m).sum(-1, keepdims=True)) + m)[:, 0]
    ref = (lse - logits[np.arange(39), tokens[1:]]).sum() / 39.0
    assert nestrq_loss(O, tokens, NtpConfig(1, 64), heads).item() == ref


def test_a4_uniform_logits_ln_v():
    heads = [(Tensor(np.zeros((8, 1024))), Tensor(np.zeros(1024))) for _ in range(5)]
    O = np.random.default_rng(0).normal(size=(2, 30, 8))
    tokens = np.random.default_rng(1).integers(0, 1024, size=(2, 30))
    assert abs(nestrq_loss(O, tokens, NtpConfig(5, 1024), heads).item() - math.log(1024)) < 1e-12


def test_a4_mask_coverage_monte_carlo():
    cfg = MaskConfig(start_prob=0.012, span_ms=400.0)
    assert cfg.span_frames == 40
    plan = sample_mask(1_000_000, cfg, Rng(2024))
    oracle = 1 - (1 - 0.012) ** 40
    assert abs(plan.frames.mean() - oracle) <= 0.01


def test_a4_pair_count_enumeration():
    for length in range(0, 11):
        for n in range(1, 8):
            pairs = [(l, k) for l in range(1, length + 1) for k in range(1, n + 1) if l + k <= length]
            assert valid_pair_count(length, n) == len(pairs)


@pytest.mark.parametrize("N", [1, 3, 5, 7, 10, 20, 50])
def test_a4_num_future_sweep_runs(N, small_corpus, small_quantizer, small_encoder_cfg):
    cfg = TrainConfig(steps=3, batch_utterances=2, crop_frames=128, num_future=N, warmup_steps=5)
    state, records = pretrain(cfg, [u.features for u in small_corpus], small_quantizer, small_encoder_cfg)
    assert len(state.heads()) == N
    assert all(np.isfinite(r.loss) for r in records)


# --- A5 learning -----------------------------------------------------------------------

def test_a5a_single_utterance_overfit(desk_features, desk_quantizer):
    utt = desk_features[0]
    cfg = TrainConfig(steps=2000, batch_utterances=1, crop_frames=utt.num_frames, num_future=2, seed=0)
    state = init_train_state(cfg, EncoderConfig(), desk_quantizer)
    data = PretrainData.build([utt], desk_quantizer)
    batch = make_batch(state, data)
    assert batch.tokens.shape[-1] == len(quantize(desk_quantizer, utt))  # whole utterance, every step
    best = 0.0
    while state.step < cfg.steps and best <= 0.9:
        state, rec = train_step(state, batch)
        best = rec.head_accuracy[0]
    print(f"A5a head-1 accuracy {best:.3f} at step {state.step}")
    assert best > 0.9


def test_a5b_probe_beats_random_init(desk_run, desk_features, desk_labels):
    init, trained, _ = desk_run
    rand = linear_probe(init, desk_features, desk_labels, num_classes=8)
    pre = linear_probe(trained, desk_features, desk_labels, num_classes=8)
    print(f"A5b probe accuracy random-init {rand.accuracy:.3f} pretrained {pre.accuracy:.3f}")
    assert pre.accuracy - rand.accuracy >= 0.05


# --- A6 adaptation ---------------------------------------------------------------------

def test_a6_truncate_expand_bit_exact():
    for m in (1, 3, 15):
        cfg = EncoderConfig(num_mels=8, num_blocks=2, model_dim=16, num_heads=2,
                            causality=CausalitySpec.causal(m))
        p = init_encoder_params(cfg, Rng(m))
        back = truncate_conv_kernels(expand_conv_kernels(p, Rng(100 + m)))
        assert all(back[k].data.tobytes() == p[k].data.tobytes() for k in p)


def test_a6_kernel_sizes_31_16_31():
    cfg = EncoderConfig(num_mels=8, num_blocks=2, model_dim=16, num_heads=2,
                        causality=CausalitySpec.noncausal(15))
    p = init_encoder_params(cfg, Rng(0))
    name = "blocks.0.conv.depthwise"
    assert p[name].shape[0] == 31
    t = truncate_conv_kernels(p)
    assert t[name].shape[0] == 16
    e = expand_conv_kernels(t, Rng(1))
    assert e[name].shape[0] == 31
    np.testing.assert_array_equal(e[name].data[:16], p[name].data[:16])


@pytest.fixture(scope="module")
def a6_pretrained(desk_features, desk_quantizer):
    out = {}
    for label, spec in (("NC", CausalitySpec.noncausal()), ("C", CausalitySpec.causal())):
        cfg = TrainConfig(steps=100, batch_utterances=4, crop_frames=128, seed=0)
        state, _ = pretrain(cfg, desk_features, desk_quantizer, EncoderConfig(causality=spec))
        out[label] = state
    return out


@pytest.mark.parametrize("ssl", ["NC", "C"])
@pytest.mark.parametrize("probe_mode", ["NC", "C"])
def test_a6_ssl_causality_by_probe_mode(ssl, probe_mode, a6_pretrained, desk_features, desk_labels):
    target = CausalitySpec.noncausal() if probe_mode == "NC" else CausalitySpec.causal()
    res, adapted = adapt_and_probe(a6_pretrained[ssl], target, desk_features, desk_labels,
                                   adapt_seed=0, num_classes=8)
    assert adapted.encoder_cfg.causality == target
    print(f"A6 SSL {ssl} / probe {probe_mode}: accuracy {res.accuracy:.3f}")
    assert 0.0 <= res.accuracy <= 1.0 and res.num_test_frames > 0


# --- A7 reproducibility ----------------------------------------------------------------

A7_CONFIG = {"training": {"batch_utterances": 4, "crop_frames": 128}}


def _pipeline(root):
    root.mkdir()
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(A7_CONFIG))
    man = root / "corpus" / "manifest.jsonl"
    steps = [
        ["gen-corpus", "--config", cfg, "--out", root / "corpus"],
        ["quantize", "--config", cfg, "--manifest", man, "--quantizer-out", root / "q.bin",
         "--tokens-out", root / "tokens.jsonl"],
        ["pretrain", "--config", cfg, "--manifest", man, "--quantizer", root / "q.bin",
         "--tokens", root / "tokens.jsonl", "--out", root / "run", "--steps", 500],
        ["probe", "--config", cfg, "--checkpoint", root / "run" / "checkpoint", "--manifest", man],
    ]
    for argv in steps:
        assert cli([str(a) for a in argv]) == 0, argv
    return {"q": root / "q.bin", "ckpt": root / "run" / "checkpoint",
            "metrics": root / "run" / "metrics.jsonl", "manifest": man}


@pytest.fixture(scope="module")
def a7_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("a7")
    return _pipeline(base / "one"), _pipeline(base / "two")


def test_a7_identical_digests(a7_runs, capsys):
    capsys.readouterr()
    a, b = a7_runs
    assert file_digest(a["manifest"]) == file_digest(b["manifest"])
    assert file_digest(a["q"]) == file_digest(b["q"])
    assert file_digest(a["metrics"]) == file_digest(b["metrics"])
    assert dir_digest(a["ckpt"]) == dir_digest(b["ckpt"])
    assert len(a["metrics"].read_text().splitlines()) == 500


def test_a7_identical_probe_output(a7_runs, capsys):
    outs = []
    for run in a7_runs:
        capsys.readouterr()
        assert cli(["probe", "--checkpoint", str(run["ckpt"]), "--manifest", str(run["manifest"])]) == 0
        outs.append(json.loads(capsys.readouterr().out))
    assert outs[0] == outs[1]
