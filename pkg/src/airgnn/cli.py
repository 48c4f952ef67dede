"""Experiment commands: ``python -m airgnn <command> ...``.

Every command writes the exact configuration (INI and JSON) and the seed
into its output directory. With ``--check`` a command also verifies its own
acceptance properties and exits with status 1 if any fails; missing inputs
exit with status 2 and say what to generate first.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import topology
from .config import ConfigError, ExperimentConfig, load_config
from .dataset import generate_dataset, load_dataset, node_position_sets, save_dataset
from .diffcore import load_checkpoint, save_checkpoint
from .envsim import TrajectoryConfig, generate_episode, random_layout
from .expressivity import AGGREGATORS, analog_mpnn, assign_frequencies, digital_mpnn, emulate_mpnn, random_mpnn
from .model import ConstraintMonitor, ModelConfig, calibrate, init_params
from .trainer import (
    dbm_to_watts,
    evaluate,
    export_power_heatmap,
    run_ablation_allocation,
    run_budget_sweep,
    spearman,
    train,
    write_curves_csv,
    write_heatmap_csv,
    write_metrics_csv,
    write_summary_json,
)

log = logging.getLogger("airgnn")


class MissingInput(RuntimeError):
    pass


def _ints(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v.strip()]


def _floats(text: str) -> list[float]:
    return [float(v) for v in str(text).split(",") if v.strip()]


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seeds=(args.seed,), train=cfg.train.with_(seeds=(args.seed,)))
    return cfg


def _out(args, cfg: ExperimentConfig, name: str) -> Path:
    out = Path(args.out) if args.out else Path(cfg.out_dir) / name
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out, cfg.seeds[0])
    return out


def _need(path: Path, hint: str) -> Path:
    if not path.exists():
        raise MissingInput(f"missing {path}; generate it first with: {hint}")
    return path


def _model_cfg(cfg: ExperimentConfig, args) -> ModelConfig:
    mc = cfg.model
    if getattr(args, "k", None):
        mc = mc.with_(K=_ints(args.k)[0])
    if getattr(args, "ptot_dbm", None) is not None:
        mc = mc.with_(P_tot=float(dbm_to_watts(_floats(args.ptot_dbm)[0])))
    if getattr(args, "kind", None):
        mc = mc.with_(kind=args.kind)
    return mc


def _check(results: dict[str, bool]) -> int:
    for name, ok in results.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if all(results.values()) else 1


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    seed = cfg.seeds[0]
    out = _out(args, cfg, "data")
    episodes = generate_dataset(cfg.env_for(args.split), args.count, args.split, seed, jobs=args.jobs)
    path = save_dataset(out / f"{args.split}.jsonl", episodes, {"config": cfg.to_dict(), "seed": seed, "split": args.split})
    print(path)
    if not args.check:
        return 0
    mine = node_position_sets(episodes)
    checks = {f"{args.split}: {args.count} episodes": len(episodes) == args.count}
    for other in sorted(out.glob("*.jsonl")):
        if other.stem != args.split:
            _, eps = load_dataset(other)
            checks[f"node positions disjoint from {other.stem}"] = not (mine & node_position_sets(eps))
    return _check(checks)


def cmd_train(args) -> int:
    cfg = _config(args)
    seed = cfg.seeds[0]
    data = Path(args.data)
    mode = args.mode or cfg.train.adaptation_mode
    split = args.split or ("train" if mode == "full" and not args.init else "adapt")
    _, episodes = load_dataset(_need(data / f"{split}.jsonl", f"python -m airgnn gen-data --split {split} --out {data}"))
    tau = args.tau if args.tau is not None else cfg.train.taus[0]
    tcfg = cfg.train.with_(adaptation_mode=mode)
    if args.init:
        params, meta = load_checkpoint(_need(Path(args.init), "python -m airgnn train"))
        mc = ModelConfig(**meta["model"])
    else:
        if mode != "full":
            raise MissingInput(f"--mode {mode} adapts an existing model; pass --init CHECKPOINT")
        mc = calibrate(_model_cfg(cfg, args), episodes)
        params = init_params(mc, np.random.default_rng([seed, 1]))
    monitor = ConstraintMonitor(mc.P_tot) if mc.kind == "airgnn" else None
    params, rec = train(episodes, params, mc, tcfg, tau, np.random.default_rng([seed, 2]), monitor)
    rec.seed = seed
    out = _out(args, cfg, f"train_{mc.kind}_tau{tau}_seed{seed}")
    meta = {"model": mc.to_dict(), "tau": tau, "seed": seed, "mode": mode, "config": cfg.to_dict()}
    save_checkpoint(out / "model.npz", params, meta)
    write_curves_csv(out / "curves.csv", [rec])
    summary = rec.to_dict()
    if monitor is not None:
        summary["constraints"] = {
            "forward_passes": monitor.forward_passes,
            "max_budget_error": monitor.max_budget_error,
            "min_power": monitor.min_power,
            "max_norm_error": monitor.max_norm_error,
            "violations": monitor.violations[:20],
        }
    write_summary_json(out / "record.json", summary)
    print(out / "model.npz")
    if not args.check:
        return 0
    checks = {"finite loss curve": bool(np.all(np.isfinite(rec.loss_curve)))}
    if monitor is not None:
        checks["power budget and unit-norm messages"] = monitor.ok
    return _check(checks)


def cmd_eval(args) -> int:
    if not args.checkpoint:
        raise MissingInput("no checkpoint given; train one first with: python -m airgnn train")
    params, meta = load_checkpoint(_need(Path(args.checkpoint), "python -m airgnn train"))
    cfg = ExperimentConfig.from_dict(meta["config"]) if "config" in meta else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    seed = cfg.seeds[0]
    mc = ModelConfig(**meta["model"])
    tau = args.tau if args.tau is not None else meta.get("tau", 1)
    data = Path(args.data)
    path = data if data.suffix == ".jsonl" else data / f"{args.split}.jsonl"
    _, episodes = load_dataset(_need(path, f"python -m airgnn gen-data --split {args.split}"))
    m = evaluate(episodes, params, mc, tau, cfg.train.threshold, cfg.train.eval_noise_seeds, seed)
    out = _out(args, cfg, f"eval_{mc.kind}_tau{tau}_seed{seed}")
    row = {"kind": mc.kind, "K": mc.K, "seed": seed, "tau": tau, "config_hash": cfg.hash(), **m.to_dict()}
    write_metrics_csv(out / "metrics.csv", [row])
    summary = {"metrics": row, "dataset": str(path)}
    if mc.kind == "airgnn":
        hm = export_power_heatmap(params, episodes, mc, tau, seed)
        write_heatmap_csv(out / "power_heatmap.csv", hm)
        summary["power_concentration"] = float(hm.mean(axis=0).max() / (mc.P_tot / mc.K))
    write_summary_json(out / "summary.json", summary)
    print(json.dumps({"accuracy": m.accuracy, "f1": m.f1}))
    if not args.check:
        return 0
    return _check({"metrics within [0, 1]": 0 <= m.accuracy <= 1 and 0 <= m.f1 <= 1})


def latency_table(cfg: ExperimentConfig, nodes: list[int], ks: list[int], seed: int, samples: int = 1) -> list[dict]:
    """Slots per aggregation round against network size, one row per (N, sample, K).

    Graphs are snapshot neighbourhoods of random layouts at uniform power
    ``P_tot / K_ref`` with ``K_ref`` the model's subcarrier count.
    """
    env, mc = cfg.env, cfg.model
    rows = []
    for n in nodes:
        for s in range(samples):
            rng = np.random.default_rng([seed, 17, n, s])
            layout = random_layout(
                n, rng, env.width, env.height, tuple(env.ap_position), tuple(env.node_region),
                env.min_separation, tuple(env.blocker_size), tuple(env.blocker_region) if env.blocker_region else None,
            )
            ep = generate_episode(layout, TrajectoryConfig(env.trajectory.speed, env.trajectory.dt, 1), env.channel, 1, rng)
            gexp = ep.channels.expected_sq_magnitude[..., 0].transpose(2, 0, 1)[: mc.K]
            p = np.full((n, gexp.shape[0]), mc.P_tot / mc.K)
            graphs = topology.SubcarrierGraphs(topology.edge_masks(p, gexp, env.channel.noise_power_sigma2, mc.gamma_min))
            delta = topology.max_degree(graphs)
            cg = topology.build_conflict_graph(graphs)
            greedy = topology.greedy_coloring(cg).num_colors
            for K in ks:
                rows.append(
                    {
                        "N": n,
                        "sample": s,
                        "K": K,
                        "delta": delta,
                        "colors_greedy": greedy,
                        "air": topology.air_latency(),
                        "digital_lower": topology.digital_latency(delta, K),
                        "digital_greedy": topology.digital_latency(greedy, K),
                    }
                )
    return rows


def cmd_latency(args) -> int:
    cfg = _config(args)
    seed = cfg.seeds[0]
    out = _out(args, cfg, "latency")
    rows = latency_table(cfg, _ints(args.nodes), _ints(args.k or "1,2,4,8,16"), seed, args.samples)
    write_metrics_csv(out / "latency.csv", rows)
    print(out / "latency.csv")
    if not args.check:
        return 0
    return _check(
        {
            "air column constant at 1": all(r["air"] == 1 for r in rows),
            "digital lower bound equals ceil(delta/K)": all(r["digital_lower"] == math.ceil(r["delta"] / r["K"]) for r in rows),
            "greedy schedule never beats the bound": all(r["digital_greedy"] >= r["digital_lower"] for r in rows),
        }
    )


def _random_digraph(n: int, p: float, rng) -> np.ndarray:
    adj = rng.random((n, n)) < p
    np.fill_diagonal(adj, False)
    return adj


def cmd_expressivity(args) -> int:
    cfg = _config(args)
    seed = cfg.seeds[0]
    out = _out(args, cfg, "expressivity")
    rng = np.random.default_rng([seed, 23])
    exact_rows = []
    for g in range(args.graphs):
        n = int(rng.integers(3, 11))
        adj = _random_digraph(n, 0.4, rng)
        fa = assign_frequencies(adj)
        h = rng.uniform(0.1, 1.0, (n, n))
        u = rng.normal(size=(n, 4))
        for agg in AGGREGATORS:
            spec = random_mpnn(4, 3, 8, agg, rng)
            ref = digital_mpnn(adj, spec, u)
            ana = analog_mpnn(adj, spec, u, fa, h, P_rx=0.1).outputs[0]
            rel = float(np.linalg.norm(ana - ref) / max(np.linalg.norm(ref), 1e-300))
            exact_rows.append({"graph": g, "N": n, "aggregator": agg, "K_prime": fa.num_subcarriers, "rel_error": rel})
    write_metrics_csv(out / "noiseless.csv", exact_rows)

    star = np.zeros((5, 5), bool)
    star[1:, 0] = True
    fa = assign_frequencies(star)
    collision_rows = []
    folded_fa = fa.fold(fa.num_subcarriers - 1)
    for agg in AGGREGATORS:
        spec = random_mpnn(4, 3, 8, agg, rng)
        # a collision is only visible for some inputs (max hides it when the pair is not the maximum)
        diffs = []
        for _ in range(20):
            u = rng.normal(size=(5, 4))
            folded = analog_mpnn(star, spec, u, folded_fa).outputs[0]
            diffs.append(float(np.abs(folded - digital_mpnn(star, spec, u)).max()))
        collision_rows.append(
            {
                "aggregator": agg,
                "K": folded_fa.num_subcarriers,
                "max_abs_diff": max(diffs),
                "frac_inputs_differing": float(np.mean(np.array(diffs) > 1e-9)),
            }
        )
    write_metrics_csv(out / "collision.csv", collision_rows)

    P_rx = 1.0
    spec = random_mpnn(4, 3, 8, "sum", rng)
    adj = _random_digraph(8, 0.4, rng)
    rep = emulate_mpnn(adj, spec, rng.normal(size=(8, 4)), [1e-1, 1e-2, 1e-3, 1e-4], P_rx=P_rx, rng=rng, trials=args.trials)
    rep.write_csv(out / "emulation.csv")
    print(out / "emulation.csv")
    if not args.check:
        return 0
    ratio = np.asarray(rep.msg_mse) / rep.predicted_msg_mse()
    return _check(
        {
            "noiseless emulation exact (rel < 1e-10)": all(r["rel_error"] < 1e-10 for r in exact_rows),
            "K = K'-1 on the star changes mean and max outputs": all(
                r["max_abs_diff"] > 1e-9 for r in collision_rows if r["aggregator"] != "sum"
            ),
            "message MSE within 10% of sigma2/P_rx^2": bool(np.all(np.abs(ratio - 1) < 0.1)),
            "message MSE strictly decreasing": bool(np.all(np.diff(rep.msg_mse) < 0)),
        }
    )


def _load_splits(data: Path, *splits: str):
    out = []
    for s in splits:
        _, eps = load_dataset(_need(data / f"{s}.jsonl", f"python -m airgnn gen-data --split {s} --out {data}"))
        out.append(eps)
    return out


def cmd_ablate(args) -> int:
    cfg = _config(args)
    tcfg = cfg.train
    if args.k:
        tcfg = tcfg.with_(K_list=tuple(_ints(args.k)))
    if args.tau:
        tcfg = tcfg.with_(taus=tuple(_ints(args.tau)))
    train_eps, test_eps = _load_splits(Path(args.data), "train", "test")
    rows, summary = run_ablation_allocation(train_eps, test_eps, cfg.model, tcfg, jobs=args.jobs)
    out = _out(args, cfg, "ablation")
    write_metrics_csv(out / "ablation_runs.csv", rows)
    write_metrics_csv(out / "ablation.csv", summary)
    print(out / "ablation.csv")
    if not args.check:
        return 0
    acc = {(r["strategy"], r["K"]): r["accuracy"] for r in summary}
    return _check({f"learned >= uniform at K={K}": acc[("learned", K)] >= acc[("uniform", K)] for K in tcfg.K_list})


def sweep_summary(rows: list[dict]) -> dict:
    dbm = sorted({r["ptot_dbm"] for r in rows})
    mean = {b: float(np.mean([r["accuracy"] for r in rows if r["ptot_dbm"] == b])) for b in dbm}
    out = {"mean_accuracy": mean, "spearman": spearman([r["ptot_dbm"] for r in rows], [r["accuracy"] for r in rows])}
    if {-20.0, -5.0, 10.0} <= set(dbm):
        out["gain_low"] = mean[-5.0] - mean[-20.0]
        out["gain_high"] = mean[10.0] - mean[-5.0]
    return out


def cmd_sweep(args) -> int:
    cfg = _config(args)
    tcfg = cfg.train
    if args.ptot_dbm:
        tcfg = tcfg.with_(ptot_dbm=tuple(_floats(args.ptot_dbm)))
    train_eps, test_eps = _load_splits(Path(args.data), "train", "test")
    rows = run_budget_sweep(train_eps, test_eps, cfg.model, tcfg, tau=args.tau, jobs=args.jobs)
    out = _out(args, cfg, "sweep")
    write_metrics_csv(out / "sweep.csv", rows)
    summ = sweep_summary(rows)
    write_summary_json(out / "summary.json", summ)
    print(out / "sweep.csv")
    if not args.check:
        return 0
    checks = {"Spearman(P_tot, accuracy) > 0": summ["spearman"] > 0}
    if "gain_low" in summ:
        checks["plateau above -5 dBm"] = summ["gain_high"] < 0.5 * summ["gain_low"]
    return _check(checks)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI or JSON experiment config")
    common.add_argument("--seed", type=int, help="override the config's seed list with one seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--check", action="store_true", help="verify acceptance properties; exit 1 on failure")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="airgnn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate a seeded dataset split")
    g.add_argument("--split", default="train", choices=["train", "test", "adapt", "shift_test", "val"])
    g.add_argument("--count", type=int, default=200)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train or adapt one model")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--split", help="split to train on (default: train, or adapt with --init)")
    t.add_argument("--tau", type=int)
    t.add_argument("--k")
    t.add_argument("--ptot-dbm")
    t.add_argument("--kind", choices=["airgnn", "local", "stgcn", "stgat"])
    t.add_argument("--mode", choices=["full", "transfer", "zero_shot"])
    t.add_argument("--init", help="checkpoint to adapt")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--checkpoint")
    e.add_argument("--data", required=True, help="dataset directory or .jsonl file")
    e.add_argument("--split", default="test")
    e.add_argument("--tau", type=int)
    e.set_defaults(func=cmd_eval)

    la = sub.add_parser("latency", parents=[common], help="slots per round: air vs digital")
    la.add_argument("--k", help="comma list of subcarrier counts")
    la.add_argument("--nodes", default="5,10,20,30,40,50")
    la.add_argument("--samples", type=int, default=1)
    la.set_defaults(func=cmd_latency)

    x = sub.add_parser("expressivity", parents=[common], help="analog emulation of a digital MPNN")
    x.add_argument("--graphs", type=int, default=50)
    x.add_argument("--trials", type=int, default=10000)
    x.set_defaults(func=cmd_expressivity)

    a = sub.add_parser("ablate", parents=[common], help="learned / uniform / random allocation")
    a.add_argument("--data", required=True)
    a.add_argument("--k", help="comma list of K")
    a.add_argument("--tau", help="comma list of horizons")
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("sweep", parents=[common], help="accuracy against the power budget")
    s.add_argument("--data", required=True)
    s.add_argument("--tau", type=int)
    s.add_argument("--ptot-dbm", help="comma list in dBm")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (MissingInput, FileNotFoundError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
