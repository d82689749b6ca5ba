"""
From waveform to tokens
=======================

Synthesize a few utterances, look at their filterbank frames, and turn them
into discrete targets with a frozen random-projection quantizer.
"""

import numpy as np

from nestrq.features import SyntheticCorpusConfig, generate_corpus
from nestrq.quantizer import init_quantizer, quantize, token_stats

corpus = generate_corpus(SyntheticCorpusConfig(num_utterances=16, seed=5))
utt = corpus[0]
print(f"{utt.utterance_id}: {utt.duration_s:.2f} s, {utt.features.num_frames} frames x {utt.features.num_mels} mels")
print("hidden states in the first 40 frames:", utt.labels[:40].tolist())

# The quantizer stacks 4 frames, standardizes, projects to 16 dims and picks
# the nearest of 1024 unit-norm codewords. Nothing here is ever trained.
feats = [u.features for u in corpus]
q = init_quantizer(0, feats)
tokens = quantize(q, utt.features)
print(f"{len(tokens)} tokens (= {utt.features.num_frames} // 4):", tokens.tokens[:20].tolist(), "...")

# Frames from the same hidden state should land on a small set of codes.
pooled = utt.labels[: 4 * len(tokens)].reshape(-1, 4)[:, 0]
for s in np.unique(pooled)[:4]:
    codes = np.unique(tokens.tokens[pooled == s])
    print(f"state {s}: {len(codes)} distinct codes")

stats = token_stats([quantize(q, f) for f in feats], q.vocab_size)
print(f"codebook utilization {stats.utilization:.3f}, entropy {stats.entropy_bits:.2f} bits")
