"""Does listening to neighbours help predict your own blockage?

Train the analog model and a purely local LSTM on the same small dataset
and compare test accuracy one step ahead. This is a reduced version of
the acceptance experiment and takes a few minutes on one core.
"""
from __future__ import annotations

import time

from airgnn.dataset import EnvConfig, generate_dataset
from airgnn.model import ModelConfig
from airgnn.trainer import TrainConfig, run_model

env = EnvConfig()
train = generate_dataset(env, 100, "train", seed=0)
test = generate_dataset(env, 50, "test", seed=0)
tcfg = TrainConfig(epochs=10)

for kind in ("local", "airgnn", "stgcn"):
    t0 = time.time()
    _, rec, _ = run_model(train, test, ModelConfig(kind=kind, lstm_hidden=32), tcfg, tau=1, seed=0)
    m = rec.metrics
    print(f"{kind:>7}: accuracy {m.accuracy:.3f}  F1 {m.f1:.3f}  ({time.time() - t0:.0f} s)")
    print("         loss by epoch", " ".join(f"{x:.3f}" for x in rec.loss_curve))
