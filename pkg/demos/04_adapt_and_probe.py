"""
Switching causality after pre-training
======================================

Pre-train once non-causally and once causally, then probe each encoder in
both modes. Going non-causal to causal truncates the depthwise kernels to
their past taps; the other direction appends freshly initialized future taps.
"""

import sys

from nestrq.encoder import CausalitySpec, EncoderConfig
from nestrq.features import SyntheticCorpusConfig, generate_corpus
from nestrq.quantizer import init_quantizer
from nestrq.training import TrainConfig, adapt_and_probe, pretrain

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 100

corpus = generate_corpus(SyntheticCorpusConfig(seed=5))
feats = [u.features for u in corpus]
labels = [u.labels for u in corpus]
q = init_quantizer(0, feats)
modes = {"NC": CausalitySpec.noncausal(), "C": CausalitySpec.causal()}

cfg = TrainConfig(steps=steps, batch_utterances=4, crop_frames=128)
for ssl_name, ssl_spec in modes.items():
    state, recs = pretrain(cfg, feats, q, EncoderConfig(causality=ssl_spec))
    for probe_name, probe_spec in modes.items():
        res, adapted = adapt_and_probe(state, probe_spec, feats, labels, num_classes=8)
        kernels = adapted.meta["adaptations"][-1]["kernels"]
        print(f"SSL {ssl_name:2s} -> probe {probe_name:2s}  kernels {kernels:8s}  accuracy {res.accuracy:.3f}")
