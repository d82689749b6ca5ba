"""
Next-token pre-training
=======================

Pre-train a small causal conformer to predict the next N quantizer tokens,
then compare a linear probe against the same encoder at initialization.

    python demos/02_pretrain_nestrq.py [steps]
"""

import math
import sys

from nestrq.encoder import EncoderConfig
from nestrq.features import SyntheticCorpusConfig, generate_corpus
from nestrq.quantizer import init_quantizer
from nestrq.training import TrainConfig, init_train_state, linear_probe, pretrain

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300

corpus = generate_corpus(SyntheticCorpusConfig(seed=5))
feats = [u.features for u in corpus]
labels = [u.labels for u in corpus]
q = init_quantizer(0, feats)

enc = EncoderConfig()  # 4 blocks, d=144, fully causal
cfg = TrainConfig(steps=steps, num_future=5, log_every=max(1, steps // 10))
start = init_train_state(cfg, enc, q)


def show(rec):
    acc = " ".join(f"{a:.2f}" for a in rec.head_accuracy)
    print(f"step {rec.step:5d}  loss {rec.loss:.3f}  lr {rec.lr:.2e}  head acc [{acc}]")


print(f"uniform-guess loss is ln {q.vocab_size} = {math.log(q.vocab_size):.3f}")
state, _ = pretrain(cfg, feats, q, enc, on_metrics=show)

before = linear_probe(start, feats, labels, num_classes=8)
after = linear_probe(state, feats, labels, num_classes=8)
print(f"probe accuracy: random init {before.accuracy:.3f}, pre-trained {after.accuracy:.3f} "
      f"(chance {after.chance:.3f})")
