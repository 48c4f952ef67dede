"""End-to-end training, evaluation metrics and the experiment runners.

Training is centralised: one parameter store holds transmitter and receiver
networks and Adam updates them jointly from the mean BCE over episodes and
valid (node, time) pairs. Every forward draws fresh receiver noise.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .diffcore import ParameterStore, Tape, adam_step, bce_loss, no_tape
from .envsim import Episode, config_hash
from .model import PARAM_GROUPS, EpisodeBatch, ModelConfig, calibrate, forward, init_params

__all__ = [
    "ADAPTATION_MODES",
    "TrainConfig",
    "Metrics",
    "RunRecord",
    "TrainingDivergedError",
    "dbm_to_watts",
    "train",
    "evaluate",
    "export_power_heatmap",
    "run_model",
    "run_ablation_allocation",
    "run_budget_sweep",
    "run_transfer",
    "adapt_and_compare",
    "spearman",
    "write_metrics_csv",
    "write_summary_json",
    "write_curves_csv",
    "write_heatmap_csv",
]

ADAPTATION_MODES = ("zero_shot", "transfer", "full")


def dbm_to_watts(dbm) -> np.ndarray | float:
    return 10.0 ** ((np.asarray(dbm, float) - 30.0) / 10.0)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    taus: tuple = (1, 2, 3, 4, 5)
    K_list: tuple = (4,)
    seeds: tuple = tuple(range(10))
    ptot_dbm: tuple = (-20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0)
    adaptation_mode: str = "full"
    threshold: float = 0.5
    eval_noise_seeds: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if any(int(t) < 1 for t in self.taus):
            raise ValueError("every tau must be >= 1")
        if self.adaptation_mode not in ADAPTATION_MODES:
            raise ValueError(f"unknown adaptation mode {self.adaptation_mode!r}")
        if list(self.ptot_dbm) != sorted(self.ptot_dbm):
            raise ValueError("ptot_dbm must be sorted")
        self.taus = tuple(int(t) for t in self.taus)
        self.K_list = tuple(int(k) for k in self.K_list)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.ptot_dbm = tuple(float(p) for p in self.ptot_dbm)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


@dataclass
class Metrics:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    bce: float = float("nan")
    breakdown: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, pred, labels, threshold: float = 0.5, bce: float | None = None) -> "Metrics":
        pred = np.asarray(pred, float)
        y = np.asarray(labels).astype(bool)
        if pred.shape != y.shape:
            raise ValueError(f"shape mismatch {pred.shape} vs {y.shape}")
        yhat = pred >= threshold
        if bce is None:
            p = np.clip(pred, 1e-7, 1 - 1e-7)
            bce = float(-np.mean(np.where(y, np.log(p), np.log(1 - p)))) if p.size else float("nan")
        return cls(
            int(np.sum(yhat & y)),
            int(np.sum(yhat & ~y)),
            int(np.sum(~yhat & ~y)),
            int(np.sum(~yhat & y)),
            float(bce),
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else float("nan")

    @property
    def f1(self) -> float:
        den = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / den if den else 0.0

    def merge(self, other: "Metrics") -> "Metrics":
        n1, n2 = self.total, other.total
        bce = (self.bce * n1 + other.bce * n2) / (n1 + n2) if n1 + n2 else float("nan")
        if n1 == 0:
            bce = other.bce
        return Metrics(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn, bce)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "bce": self.bce,
            **({"breakdown": self.breakdown} if self.breakdown else {}),
        }


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    tau: int
    mode: str
    loss_curve: list = field(default_factory=list)
    accuracy_curve: list = field(default_factory=list)
    metrics: Metrics | None = None
    power_heatmap: np.ndarray | None = None
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "tau": self.tau,
            "mode": self.mode,
            "loss_curve": list(self.loss_curve),
            "accuracy_curve": list(self.accuracy_curve),
            "metrics": None if self.metrics is None else self.metrics.to_dict(),
            "power_heatmap": None if self.power_heatmap is None else self.power_heatmap.tolist(),
            "wall_time": self.wall_time,
        }


class TrainingDivergedError(FloatingPointError):
    """Raised on a non-finite loss; ``params`` holds the last finite checkpoint."""

    def __init__(self, msg: str, params: ParameterStore, epoch: int):
        super().__init__(msg)
        self.params = params
        self.epoch = epoch


def _batches(episodes: Sequence[Episode], batch_size: int, order: np.ndarray) -> list[list[Episode]]:
    # episodes of different size cannot share a batch
    groups: dict[tuple, list[Episode]] = {}
    for i in order:
        ep = episodes[i]
        groups.setdefault((ep.num_nodes, ep.num_steps), []).append(ep)
    out = []
    for eps in groups.values():
        out.extend(eps[s : s + batch_size] for s in range(0, len(eps), batch_size))
    return out


def frozen_prefixes(mode: str) -> tuple:
    if mode == "transfer":
        return PARAM_GROUPS["encoder"]
    return ()


def train(
    episodes: Sequence[Episode],
    params: ParameterStore,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    tau: int,
    rng: np.random.Generator,
    monitor: Callable | None = None,
    on_epoch: Callable | None = None,
) -> tuple[ParameterStore, RunRecord]:
    """Fit ``params`` in place by Adam on the mean BCE.

    ``cfg.adaptation_mode`` selects what moves: ``full`` updates everything,
    ``transfer`` only the receiver decoder, ``zero_shot`` nothing (curves
    then record the untouched model's loss).
    """
    if not episodes:
        raise ValueError("training set is empty")
    if tau < 1:
        raise ValueError("tau must be >= 1")
    min_T = min(ep.num_steps for ep in episodes)
    if tau >= min_T:
        raise ValueError(f"tau={tau} must be smaller than T={min_T}")
    mode = cfg.adaptation_mode
    frozen = frozen_prefixes(mode)
    record = RunRecord(config_hash(model_cfg.to_dict(), cfg.to_dict()), -1, tau, mode)
    t0 = time.perf_counter()
    last_good = params.copy()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(episodes))
        losses, weights = [], []
        agg = Metrics()
        for chunk in _batches(episodes, cfg.batch_size, order):
            batch = EpisodeBatch.from_episodes(chunk)
            if mode == "zero_shot":
                with no_tape():
                    res = forward(batch, params, model_cfg, tau, rng, monitor=monitor)
                    loss = bce_loss(res.pred, res.targets)
            else:
                with Tape() as tape:
                    res = forward(batch, params, model_cfg, tau, rng, monitor=monitor)
                    loss = bce_loss(res.pred, res.targets)
                if not np.isfinite(loss.data):
                    params.load_values(last_good.values())
                    raise TrainingDivergedError(f"loss became {float(loss.data)} in epoch {epoch}", params, epoch)
                tape.backward(loss)
                adam_step(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, frozen=frozen)
            losses.append(float(loss.data))
            weights.append(res.targets.size)
            agg = agg.merge(Metrics.from_predictions(res.pred.data, res.targets, cfg.threshold, float(loss.data)))
        record.loss_curve.append(float(np.average(losses, weights=weights)))
        record.accuracy_curve.append(agg.accuracy)
        last_good = params.copy()
        if on_epoch is not None:
            on_epoch(epoch, record)
    record.wall_time = time.perf_counter() - t0
    return params, record


def evaluate(
    episodes: Sequence[Episode],
    params: ParameterStore,
    model_cfg: ModelConfig,
    tau: int,
    threshold: float = 0.5,
    noise_seeds: int = 1,
    seed: int = 0,
    batch_size: int = 16,
) -> Metrics:
    """Confusion counts over all nodes and valid times, pooled over noise draws."""
    if not episodes:
        raise ValueError("evaluation set is empty")
    total = Metrics()
    for s in range(noise_seeds):
        rng = np.random.default_rng([int(seed), 7919, s])
        for chunk in _batches(episodes, batch_size, np.arange(len(episodes))):
            with no_tape():
                res = forward(EpisodeBatch.from_episodes(chunk), params, model_cfg, tau, rng)
            total = total.merge(Metrics.from_predictions(res.pred.data, res.targets, threshold))
    return total


def export_power_heatmap(
    params: ParameterStore, episodes: Sequence[Episode], model_cfg: ModelConfig, tau: int = 1, seed: int = 0
) -> np.ndarray:
    """Mean transmit power per node and subcarrier over a dataset, shape (N, K)."""
    if model_cfg.kind != "airgnn":
        raise ValueError("power heatmaps exist only for the over-the-air model")
    rng = np.random.default_rng([int(seed), 104729])
    acc, count = None, 0
    for chunk in _batches(episodes, 16, np.arange(len(episodes))):
        with no_tape():
            res = forward(EpisodeBatch.from_episodes(chunk), params, model_cfg, tau, rng)
        p = res.powers.sum(axis=(0, 1))
        acc = p if acc is None else acc + p
        count += res.powers.shape[0] * res.powers.shape[1]
    return acc / count


# ---------------------------------------------------------------------------
# experiment runners


def run_model(
    train_eps: Sequence[Episode],
    test_eps: Sequence[Episode] | None,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    tau: int,
    seed: int,
    monitor: Callable | None = None,
    calibrated: bool = False,
) -> tuple[ParameterStore, RunRecord, ModelConfig]:
    """Calibrate, initialise, train and (optionally) test one model for one seed."""
    if not calibrated:
        model_cfg = calibrate(model_cfg, train_eps)
    params = init_params(model_cfg, np.random.default_rng([int(seed), 1]))
    params, rec = train(train_eps, params, model_cfg, cfg.with_(adaptation_mode="full"), tau, np.random.default_rng([int(seed), 2]), monitor)
    rec.seed = int(seed)
    if test_eps:
        rec.metrics = evaluate(test_eps, params, model_cfg, tau, cfg.threshold, cfg.eval_noise_seeds, seed)
        if model_cfg.kind == "airgnn":
            rec.power_heatmap = export_power_heatmap(params, test_eps, model_cfg, tau, seed)
    return params, rec, model_cfg


def _pool_map(fn, items: list, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(jobs) as pool:
        return list(pool.map(fn, *zip(*items)))


def _ablation_job(train_eps, test_eps, model_cfg, cfg, strategy, K, seed, tau):
    mc = model_cfg.with_(K=K, allocation_mode=strategy, kind="airgnn")
    _, rec, _ = run_model(train_eps, test_eps, mc, cfg, tau, seed)
    return {"strategy": strategy, "K": K, "seed": seed, "tau": tau, "accuracy": rec.metrics.accuracy, "f1": rec.metrics.f1}


def run_ablation_allocation(
    train_eps: Sequence[Episode],
    test_eps: Sequence[Episode],
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    jobs: int = 1,
) -> tuple[list[dict], list[dict]]:
    """Learned vs. uniform vs. random power allocation for each K in ``cfg.K_list``.

    Fixed strategies retrain the encoder and decoder around the fixed
    allocation. Returns (per-run rows, summary rows); the summary holds one
    row per (strategy, K) with accuracy averaged over horizons, then over
    seeds, and the across-seed standard deviation.
    """
    jobs_list = [
        (train_eps, test_eps, model_cfg, cfg, strategy, K, seed, tau)
        for K in cfg.K_list
        for strategy in ("learned", "uniform", "random")
        for seed in cfg.seeds
        for tau in cfg.taus
    ]
    rows = _pool_map(_ablation_job, jobs_list, jobs)
    summary = []
    for K in cfg.K_list:
        for strategy in ("learned", "uniform", "random"):
            per_seed = [
                np.mean([r["accuracy"] for r in rows if r["K"] == K and r["strategy"] == strategy and r["seed"] == s])
                for s in cfg.seeds
            ]
            summary.append(
                {
                    "strategy": strategy,
                    "K": K,
                    "accuracy": float(np.mean(per_seed)),
                    "accuracy_std": float(np.std(per_seed)),
                    "seeds": len(per_seed),
                }
            )
    return rows, summary


def _sweep_job(train_eps, test_eps, model_cfg, cfg, dbm, seed, tau):
    mc = model_cfg.with_(P_tot=float(dbm_to_watts(dbm)))
    _, rec, _ = run_model(train_eps, test_eps, mc, cfg, tau, seed)
    return {"ptot_dbm": dbm, "seed": seed, "tau": tau, "accuracy": rec.metrics.accuracy, "f1": rec.metrics.f1}


def run_budget_sweep(
    train_eps: Sequence[Episode],
    test_eps: Sequence[Episode],
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    tau: int | None = None,
    jobs: int = 1,
) -> list[dict]:
    """Retrain and test at every budget in ``cfg.ptot_dbm``; one row per (budget, seed)."""
    tau = cfg.taus[0] if tau is None else tau
    items = [(train_eps, test_eps, model_cfg, cfg, dbm, seed, tau) for dbm in cfg.ptot_dbm for seed in cfg.seeds]
    return _pool_map(_sweep_job, items, jobs)


def spearman(x, y) -> float:
    rho = stats.spearmanr(x, y).statistic
    return float(rho)


def run_transfer(
    source_train: Sequence[Episode],
    adapt_eps: Sequence[Episode],
    shift_test: Sequence[Episode],
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    tau: int,
    seed: int,
    adapt_epochs: int | None = None,
) -> dict:
    """Train on the source domain, then compare the three adaptation modes on the shifted one.

    Normalisation constants stay those of the source domain for every mode, so
    only parameters differ between the three results.
    """
    params, _, mc = run_model(source_train, None, model_cfg, cfg, tau, seed)
    return adapt_and_compare(params, mc, adapt_eps, shift_test, cfg, tau, seed, adapt_epochs)


def adapt_and_compare(
    params: ParameterStore,
    model_cfg: ModelConfig,
    adapt_eps: Sequence[Episode],
    shift_test: Sequence[Episode],
    cfg: TrainConfig,
    tau: int,
    seed: int,
    adapt_epochs: int | None = None,
) -> dict:
    """Adapt copies of a source-trained model in each mode and test on the shifted domain."""
    mc = model_cfg
    out = {"seed": seed, "tau": tau}
    acfg = cfg.with_(epochs=adapt_epochs or cfg.epochs)
    for i, mode in enumerate(ADAPTATION_MODES):
        p = params.copy()
        p.reset_moments()
        if mode != "zero_shot":
            train(adapt_eps, p, mc, acfg.with_(adaptation_mode=mode), tau, np.random.default_rng([int(seed), 3, i]))
        out[mode] = evaluate(shift_test, p, mc, tau, cfg.threshold, cfg.eval_noise_seeds, seed).accuracy
    return out


# ---------------------------------------------------------------------------
# writers


def write_metrics_csv(path, rows: Sequence[dict]) -> Path:
    """One row per run; columns are the union of keys in first-seen order."""
    path = Path(path)
    keys: list[str] = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in keys})
    return path


def write_summary_json(path, summary: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Metrics):
        return o.to_dict()
    raise TypeError(f"not serialisable: {type(o)}")


def write_curves_csv(path, records: Sequence[RunRecord]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "tau", "mode", "epoch", "loss", "accuracy"])
        for r in records:
            for e, (lo, ac) in enumerate(zip(r.loss_curve, r.accuracy_curve)):
                w.writerow([r.seed, r.tau, r.mode, e + 1, repr(lo), repr(ac)])
    return path


def write_heatmap_csv(path, heatmap: np.ndarray) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node"] + [f"k{k}" for k in range(heatmap.shape[1])])
        for i, row in enumerate(heatmap):
            w.writerow([i] + [repr(float(v)) for v in row])
    return path
