"""How many channel uses does one round of neighbour aggregation cost?

A digital scheme needs every transmitter that shares a receiver to use its
own resource, so the round length is set by the conflict graph. Over the
air, every neighbour transmits at once and the channel adds the signals
for free: one slot regardless of network size.
"""
from __future__ import annotations

import numpy as np

from airgnn import topology
from airgnn.cli import latency_table
from airgnn.config import ExperimentConfig

cfg = ExperimentConfig()
rows = latency_table(cfg, nodes=[5, 10, 20, 30, 40, 50], ks=[1, 4, 16], seed=0)
print(f"{'N':>3} {'K':>3} {'max in-deg':>10} {'greedy colors':>13} {'digital >=':>10} {'air':>4}")
for r in rows:
    print(f"{r['N']:>3} {r['K']:>3} {r['delta']:>10} {r['colors_greedy']:>13} {r['digital_lower']:>10} {r['air']:>4}")

# a star with four leaves: four transmitters collide at the hub
star = np.zeros((1, 5, 5), bool)
star[0, 1:, 0] = True
cg = topology.build_conflict_graph(star)
print("\nstar conflict graph colors:", topology.exact_coloring(cg).num_colors)
for K in (1, 2, 4):
    print(f"  K={K}: digital slots {topology.digital_latency(4, K)}, air slots {topology.air_latency()}")
