"""A factory floor, a moving blocker, and the labels we want to predict.

Ten sensors sit near the bottom wall and talk to an access point near the
top. A forklift-sized box drives between them and cuts line-of-sight links
as it passes. Each node only ever sees its own AP channel, yet its
neighbours' channels carry early warning about where the box is heading.
"""
from __future__ import annotations

import numpy as np

from airgnn.dataset import EnvConfig, generate_dataset

env = EnvConfig()
ep = generate_dataset(env, 1, "train", seed=0)[0]
print(f"{ep.num_nodes} nodes, {ep.num_steps} steps, window L={ep.window}")

# labels: 1 = AP link blocked at that step
print("\nblockage timeline (# = NLOS)")
for n in range(ep.num_nodes):
    print(f"node {n:2d} " + "".join("#" if b else "." for b in ep.labels[n]))

# a node's feature row is its last L AP magnitudes, newest first
t = 20
db = 20 * np.log10(ep.features[0, t])
print(f"\nnode 0 features at t={t} (dB):", np.round(db, 1))

# blocked links lose about 20 dB on top of distance loss
ap = 20 * np.log10(np.abs(ep.channels.ap_gains))
print(f"mean AP gain LOS {ap[ep.labels == 0].mean():.1f} dB, NLOS {ap[ep.labels == 1].mean():.1f} dB")
print(f"NLOS fraction {ep.labels.mean():.2f}")
