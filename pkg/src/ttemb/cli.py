"""Command-line entry point: ``ttemb {sbm,partition,report,train,bench,matrix}``.

Settings come from flags and, optionally, a JSON file given with
``--config``; flags that are set explicitly win over file values. Every
command writes or prints its resolved configuration.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import experiments as ex
from .autodiff import backward_lookup
from .gnn import FullEmbedding, TrainConfig, train
from .graph import generate_sbm, load_edge_list, write_edge_list, write_labels, write_permutation
from .initializer import InitSpec, initialize
from .partition import build_hierarchy, edge_cut, hierarchy_stats, random_balanced_cut
from .tt_format import compression_ratio, count_params, lookup_batch, plan_factorization, save_cores


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _resolve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    """Merge ``--config`` JSON under explicitly given flags."""
    defaults = {a.dest: a.default for a in parser._actions}
    resolved = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    if getattr(args, "config", None):
        file_cfg = json.loads(Path(args.config).read_text())
        for k, v in file_cfg.items():
            key = k.replace("-", "_")
            if key in resolved and resolved[key] == defaults.get(key):
                resolved[key] = v
    return resolved


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, default=ex._json_default)


# ----------------------------------------------------------------- commands


def cmd_sbm(cfg: dict) -> int:
    g = generate_sbm(cfg["nodes"], cfg["blocks"], cfg["p_in"], cfg["p_out"], cfg["seed"])
    prefix = Path(cfg["out"])
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_edge_list(g, f"{prefix}.edges")
    write_labels(g, f"{prefix}.labels")
    Path(f"{prefix}.config.json").write_text(_dump(cfg) + "\n")
    print(_dump({"num_nodes": g.num_nodes, "num_edges": g.num_edges, "files": [f"{prefix}.edges", f"{prefix}.labels"]}))
    return 0


def cmd_partition(cfg: dict) -> int:
    g = load_edge_list(cfg["graph"], cfg.get("labels"))
    if cfg["parts"] is not None and cfg["branching"] is not None:
        raise SystemExit("give either --parts or --branching, not both")
    branching = cfg["branching"] if cfg["branching"] is not None else [cfg["parts"] or 1]
    h = build_hierarchy(g, branching, seed=cfg["seed"], imbalance=cfg["imbalance"])
    stats = hierarchy_stats(g, h)
    leaf = h.assignments[-1]
    sizes = np.bincount(leaf, minlength=math.prod(branching))
    stats["edge_cut"] = edge_cut(g, leaf)
    stats["balance"] = float(sizes.max() / (g.num_nodes / sizes.size))
    if cfg["random_baseline"]:
        stats["random_baseline_cut"] = random_balanced_cut(g, int(sizes.size), seed=cfg["seed"])
        stats["cut_vs_random"] = stats["edge_cut"] / stats["random_baseline_cut"] if stats["random_baseline_cut"] else 0.0
    if cfg["perm_out"]:
        write_permutation(h.permutation, cfg["perm_out"])
    stats["config"] = cfg
    print(_dump(stats))
    return 0


def _rank_lists(ranks: list[int], d: int) -> list:
    if len(ranks) == d + 1:
        return [tuple(ranks)]
    if len(ranks) == d - 1:
        return [(1, *ranks, 1)]
    return list(ranks)


def report_rows(cfg: dict) -> list[dict]:
    rows = []
    for r in _rank_lists(cfg["ranks"], cfg["d"]):
        tc = plan_factorization(
            cfg["nodes"],
            cfg["dim"],
            cfg["d"],
            r,
            row_factors=cfg.get("row_factors"),
            col_factors=cfg.get("col_factors"),
            ortho_friendly=cfg.get("ortho_friendly", False),
        )
        rows.append(
            {
                "ranks": list(tc.ranks),
                "row_factors": list(tc.row_factors),
                "col_factors": list(tc.col_factors),
                "core_shapes": [list(s) for s in tc.core_shapes],
                "num_params": count_params(tc),
                "dense_params": tc.num_nodes * tc.emb_dim,
                "compression_ratio": compression_ratio(tc),
            }
        )
    return rows


def cmd_report(cfg: dict) -> int:
    rows = report_rows(cfg)
    if cfg["json"]:
        print(_dump({"config": cfg, "reports": rows}))
        return 0
    print(f"table {cfg['nodes']} x {cfg['dim']}, d = {cfg['d']}")
    for row in rows:
        print(f"ranks {row['ranks']}  m = {row['row_factors']}  n = {row['col_factors']}")
        for k, s in enumerate(row["core_shapes"]):
            print(f"  G{k + 1}: {tuple(s)}")
        print(f"  TT parameters: {row['num_params']}")
        print(f"  compression:   {row['compression_ratio']:.2f}x")
    return 0


def _train_config(cfg: dict) -> TrainConfig:
    names = {f.name for f in fields(TrainConfig)}
    return TrainConfig(**{k: v for k, v in cfg.items() if k in names and v is not None})


def cmd_train(cfg: dict) -> int:
    tcfg = _train_config(cfg)
    gspec = ex.GraphSpec(
        num_nodes=cfg["nodes"], num_blocks=cfg["blocks"], p_in=cfg["p_in"], p_out=cfg["p_out"],
        edge_list=cfg.get("edges"), labels=cfg.get("labels"),
    )
    branching = cfg["branching"]
    if branching is not None and len(branching) == 0:
        branching = "auto"
    g, _ = ex.prepare_graph(gspec, cfg["graph_seed"], branching, cfg["perm_level"], tcfg)
    state = train(g, tcfg)
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    cols = ["epoch", "loss", "train_acc", "val_acc", "val_loss", "test_acc", "test_loss"]
    with open(out / "metrics.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols)
        w.writeheader()
        for h in state.history:
            w.writerow({k: h[k] for k in cols})
    (out / "config.json").write_text(_dump(cfg) + "\n")
    if tcfg.backend == "tt":
        save_cores(state.backend.emb, out / "cores.tte")
    summary = {"final": state.history[-1], "best_val": state.best(), "num_params": state.backend.num_params}
    (out / "summary.json").write_text(_dump(summary) + "\n")
    print(_dump(summary))
    return 0


def bench_rows(cfg: dict) -> list[dict]:
    rng = np.random.default_rng(cfg["seed"])
    idx = rng.integers(0, cfg["nodes"], cfg["batch"])
    rows = []

    def timed(fn):
        fn()
        t0 = time.perf_counter()
        for _ in range(cfg["repeats"]):
            fn()
        return cfg["batch"] * cfg["repeats"] / (time.perf_counter() - t0)

    for r in cfg["ranks"]:
        tc = plan_factorization(cfg["nodes"], cfg["dim"], cfg["d"], r, ortho_friendly=True)
        emb = initialize(tc, InitSpec("gaussian", cfg["seed"]))
        up = rng.standard_normal((cfg["batch"], cfg["dim"]))
        rows.append(
            {
                "backend": "tt",
                "rank": r,
                "num_params": count_params(tc),
                "lookup_rows_per_sec": timed(lambda: lookup_batch(emb, idx)),
                "backward_rows_per_sec": timed(lambda: backward_lookup(emb, idx, up)),
            }
        )
    full = FullEmbedding(rng.standard_normal((cfg["nodes"], cfg["dim"])))
    up = rng.standard_normal((cfg["batch"], cfg["dim"]))
    rows.append(
        {
            "backend": "full",
            "rank": "",
            "num_params": full.num_params,
            "lookup_rows_per_sec": timed(lambda: full.lookup(idx)),
            "backward_rows_per_sec": timed(lambda: full.backward(idx, up)),
        }
    )
    return rows


def cmd_bench(cfg: dict) -> int:
    rows = bench_rows(cfg)
    if cfg["out"]:
        with open(cfg["out"], "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    print(_dump({"config": cfg, "results": rows}))
    return 0


def cmd_matrix(cfg: dict) -> int:
    if not cfg.get("spec"):
        raise SystemExit("matrix needs --spec (a JSON experiment grid)")
    spec = ex.ExperimentSpec.from_dict(json.loads(Path(cfg["spec"]).read_text()))
    if cfg["seeds"]:
        spec.seeds = cfg["seeds"]
    report = ex.run_experiment_matrix(spec, n_jobs=cfg["threads"])
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    ex.write_report(report, out / "report.csv", out / "report.json")
    for row in report["rows"]:
        print(
            f"{row['backend']:>4} rank={row['rank']!s:>3} init={row['init']:<12} "
            f"branching={row['branching']:<9} perm={row['perm_level']:<6} "
            f"acc={row['test_acc_mean']:.4f}+-{row['test_acc_std']:.4f} params={row['num_params']}"
        )
    if report["failed"]:
        print(f"{report['failed']} run(s) failed; see {out / 'report.json'}", file=sys.stderr)
        return 1
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ttemb", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with settings; explicit flags override it")
        sp.add_argument("--threads", type=int, default=1, help="worker processes where parallelism applies")
        return sp

    s = common(sub.add_parser("sbm", help="write an SBM edge list and label file"))
    s.add_argument("--nodes", type=int, default=1000)
    s.add_argument("--blocks", type=int, default=10)
    s.add_argument("--p-in", type=float, default=0.08)
    s.add_argument("--p-out", type=float, default=0.002)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="sbm", help="output prefix")
    s.set_defaults(func=cmd_sbm)

    s = common(sub.add_parser("partition", help="hierarchical partition and permutation file"))
    s.add_argument("graph", help="edge list")
    s.add_argument("--labels")
    s.add_argument("--parts", type=int)
    s.add_argument("--branching", type=_ints)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--imbalance", type=float, default=0.05)
    s.add_argument("--perm-out")
    s.add_argument("--random-baseline", action="store_true")
    s.set_defaults(func=cmd_partition)

    s = common(sub.add_parser("report", help="factorization, core shapes and compression"))
    s.add_argument("--nodes", type=int, required=True)
    s.add_argument("--dim", type=int, required=True)
    s.add_argument("--d", type=int, default=3)
    s.add_argument("--ranks", type=_ints, default=[16])
    s.add_argument("--row-factors", type=_ints)
    s.add_argument("--col-factors", type=_ints)
    s.add_argument("--ortho-friendly", action="store_true")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_report)

    s = common(sub.add_parser("train", help="train one GNN and write metrics"))
    s.add_argument("--edges")
    s.add_argument("--labels")
    s.add_argument("--nodes", type=int, default=1000)
    s.add_argument("--blocks", type=int, default=10)
    s.add_argument("--p-in", type=float, default=0.08)
    s.add_argument("--p-out", type=float, default=0.002)
    s.add_argument("--graph-seed", type=int, default=0)
    s.add_argument("--branching", type=_ints, help="partition branching; empty string for the TT row factors")
    s.add_argument("--perm-level", choices=["none", "first", "second"], default="none")
    s.add_argument("--backend", choices=["tt", "full"], default="tt")
    s.add_argument("--layer-type", choices=["graphsage_mean", "gcn"], default="graphsage_mean")
    s.add_argument("--num-layers", type=int, default=2)
    s.add_argument("--hidden-dim", type=int, default=16)
    s.add_argument("--emb-dim", type=int, default=16)
    s.add_argument("--d", type=int, default=3)
    s.add_argument("--rank", type=int, default=4)
    s.add_argument("--init", choices=["gaussian", "ortho-core", "decomp-ortho"], default="gaussian")
    s.add_argument("--epochs", type=int, default=300)
    s.add_argument("--learning-rate", type=float, default=1e-3)
    s.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", default="run")
    s.set_defaults(func=cmd_train)

    s = common(sub.add_parser("bench", help="lookup/backward throughput per rank"))
    s.add_argument("--nodes", type=int, default=100_000)
    s.add_argument("--dim", type=int, default=64)
    s.add_argument("--d", type=int, default=3)
    s.add_argument("--ranks", type=_ints, default=[2, 4, 8])
    s.add_argument("--batch", type=int, default=4096)
    s.add_argument("--repeats", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="CSV output path")
    s.set_defaults(func=cmd_bench)

    s = common(sub.add_parser("matrix", help="run an experiment grid"))
    s.add_argument("--spec", help="JSON experiment grid")
    s.add_argument("--seeds", type=_ints)
    s.add_argument("--out-dir", default="matrix")
    s.set_defaults(func=cmd_matrix)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    cfg = _resolve(args, sub)
    if "init" in cfg and cfg["init"]:
        cfg["init"] = cfg["init"].replace("-", "_")
    try:
        return args.func(cfg)
    except (ValueError, IndexError, FloatingPointError, OSError) as exc:
        print(f"ttemb {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
