"""Rolled-vs-unrolled cosine for several untrained encoders, raw and mean-centered.

Shows why the raw cosine of an untrained ReLU encoder is far from zero: every
chip maps near one shared non-negative direction, so an unrolled pair looks
alike and rolling the source only breaks that alignment.

    python3 scripts/untrained_consistency.py runs/default/data/rls-train.rlsc
"""
import sys

import numpy as np

from rls.config import ProtocolConfig
from rls.data import read_chips
from rls.networks import init_weights
from rls.training import encode_means, latent_consistency

chips = read_chips(sys.argv[1])
net = ProtocolConfig().net()
print("seed    raw delta   centered delta   |mean latent| / mean |latent|")
for seed in range(5):
    enc = init_weights("encoder", net, np.random.default_rng([seed, 1]))
    raw = latent_consistency(enc, chips, 500)
    cen = latent_consistency(enc, chips, 500, center=True)
    z = encode_means(enc, chips.pixels[:200])
    share = np.linalg.norm(z.mean(axis=0)) / np.linalg.norm(z, axis=1).mean()
    print(f"{seed:>4}   {raw.delta:+.4f}     {cen.delta:+.4f}          {share:.3f}")
