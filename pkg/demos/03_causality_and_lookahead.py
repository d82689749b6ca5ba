"""
Measuring the future receptive field
====================================

Perturb one group of four input frames at a time and see which encoder
positions move. With M lookahead blocks, position t should react to groups
t, t+1, ..., t+M and nothing later.
"""

import numpy as np

from nestrq.encoder import CausalitySpec, EncoderConfig, encode, init_encoder_params
from nestrq.numcore import Rng

x = np.random.default_rng(0).normal(size=(96, 16))
t = 5

for M in (0, 1, 3, 5):
    spec = CausalitySpec("C-A-lookahead" if M else "C-A", "C-C", M, 3)
    cfg = EncoderConfig(num_mels=16, num_blocks=6, model_dim=32, num_heads=4, causality=spec)
    params = init_encoder_params(cfg, Rng(1))
    base = encode(cfg, params, x).O.data[t]
    row = []
    for k in range(8):
        y = x.copy()
        y[4 * (t + k):4 * (t + k + 1)] += 1.0
        row.append(np.abs(encode(cfg, params, y).O.data[t] - base).max() > 1e-12)
    print(f"M={M}: output {t} reacts to groups t+" + "".join("x" if r else "." for r in row))

# A non-causal encoder reacts to everything, including the very last frame.
cfg = EncoderConfig(num_mels=16, num_blocks=2, model_dim=32, num_heads=4,
                    causality=CausalitySpec.noncausal(3))
params = init_encoder_params(cfg, Rng(1))
y = x.copy()
y[-1] += 1.0
moved = np.abs(encode(cfg, params, y).O.data[0] - encode(cfg, params, x).O.data[0]).max()
print(f"non-causal: position 0 moves by {moved:.2e} when the last frame changes")
