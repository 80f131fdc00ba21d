"""Grid runner over embedding backend, TT rank, init, partition branching and
permutation level, with mean/std over seeds."""
from __future__ import annotations

import csv
import json
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import product
from pathlib import Path

import numpy as np

from .gnn import TrainConfig, train, tt_config_for
from .graph import CsrGraph, generate_sbm, load_edge_list, relabel, shuffle_nodes
from .partition import build_hierarchy, permute_level

__all__ = [
    "GraphSpec",
    "ExperimentSpec",
    "subseed",
    "prepare_graph",
    "default_branching",
    "run_cell",
    "run_experiment_matrix",
    "write_report",
    "REPORT_COLUMNS",
]

REPORT_COLUMNS = [
    "backend",
    "rank",
    "init",
    "branching",
    "perm_level",
    "n_seeds",
    "n_failed",
    "test_acc_mean",
    "test_acc_std",
    "final_test_acc_mean",
    "final_test_acc_std",
    "val_acc_mean",
    "num_params",
    "sec_per_epoch",
]


def subseed(seed: int, tag: str) -> int:
    """Independent stream seed for one pipeline stage."""
    return int(np.random.SeedSequence([seed, zlib.crc32(tag.encode())]).generate_state(1)[0])


@dataclass
class GraphSpec:
    num_nodes: int = 1000
    num_blocks: int = 10
    p_in: float = 0.08
    p_out: float = 0.002
    edge_list: str | None = None
    labels: str | None = None


@dataclass
class ExperimentSpec:
    """Grid axes plus the shared training settings.

    ``branchings`` entries are ``None`` (shuffled order, no reordering),
    ``"auto"`` (the first ``d - 1`` TT row factors) or explicit lists.
    """

    graph: GraphSpec = field(default_factory=GraphSpec)
    backends: list[str] = field(default_factory=lambda: ["tt"])
    ranks: list[int] = field(default_factory=lambda: [4])
    inits: list[str] = field(default_factory=lambda: ["gaussian"])
    branchings: list = field(default_factory=lambda: ["auto"])
    perm_levels: list[str] = field(default_factory=lambda: ["none"])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        data = dict(data)
        graph = GraphSpec(**data.pop("graph", {}))
        tcfg = TrainConfig(**data.pop("train", {}))
        return cls(graph=graph, train=tcfg, **data)

    def cells(self) -> list[dict]:
        out = []
        seen = set()
        for backend, rank, init, branching, level in product(
            self.backends, self.ranks, self.inits, self.branchings, self.perm_levels
        ):
            if branching is None and level != "none":
                continue
            key = (
                backend,
                rank if backend == "tt" else None,
                init,
                None if branching is None else (branching if isinstance(branching, str) else tuple(branching)),
                level,
            )
            if key in seen:
                continue
            seen.add(key)
            out.append(dict(zip(("backend", "rank", "init", "branching", "perm_level"), key)))
        return out


def default_branching(num_nodes: int, cfg: TrainConfig) -> tuple[int, ...]:
    """The first ``d - 1`` TT row factors, so leaves line up with core slices."""
    return tt_config_for(num_nodes, cfg).row_factors[:-1]


def _base_graph(spec: GraphSpec, seed: int) -> CsrGraph:
    if spec.edge_list is not None:
        return load_edge_list(spec.edge_list, spec.labels, seed=subseed(seed, "masks"))
    return generate_sbm(spec.num_nodes, spec.num_blocks, spec.p_in, spec.p_out, seed=subseed(seed, "sbm"))


def prepare_graph(spec: GraphSpec, seed: int, branching=None, perm_level: str = "none", cfg: TrainConfig | None = None):
    """Build, pre-shuffle and optionally hierarchically reorder the graph.

    Returns ``(graph, hierarchy)``; ``hierarchy`` is ``None`` without reordering.
    """
    g = shuffle_nodes(_base_graph(spec, seed), subseed(seed, "shuffle"))
    if branching is None:
        return g, None
    if branching == "auto":
        branching = default_branching(g.num_nodes, cfg or TrainConfig())
    h = build_hierarchy(g, branching, seed=subseed(seed, "partition"))
    perm = permute_level(h, perm_level, seed=subseed(seed, "perm"))
    return relabel(g, perm), h


def run_cell(spec: ExperimentSpec, cell: dict, seed: int) -> dict:
    cfg = replace(
        spec.train,
        backend=cell["backend"],
        rank=cell["rank"] if cell["rank"] is not None else spec.train.rank,
        init=cell["init"],
        seed=subseed(seed, "train"),
    )
    branching = cell["branching"]
    g, _ = prepare_graph(spec.graph, seed, branching, cell["perm_level"], cfg)
    state = train(g, cfg)
    best = state.best()
    last = state.history[-1]
    return {
        **cell,
        "seed": seed,
        "test_acc": best["test_acc"],
        "val_acc": best["val_acc"],
        "best_epoch": best["epoch"],
        "final_test_acc": last["test_acc"],
        "num_params": state.backend.num_params,
        "sec_per_epoch": float(np.mean(state.epoch_seconds)) if state.epoch_seconds else 0.0,
        "history": state.history,
    }


def _run_one(args):
    spec, cell, seed = args
    try:
        return run_cell(spec, cell, seed)
    except Exception as exc:  # a failed cell is recorded and the grid continues
        return {**cell, "seed": seed, "error": f"{type(exc).__name__}: {exc}"}


def _fmt_branching(b):
    if b is None:
        return "shuffled"
    return b if isinstance(b, str) else "x".join(str(p) for p in b)


def run_experiment_matrix(spec: ExperimentSpec, n_jobs: int = 1) -> dict:
    """Train every cell for every seed and aggregate test accuracy.

    ``test_acc`` is the test accuracy at the epoch with the best validation
    accuracy; ``final_test_acc`` is taken after the last epoch.
    """
    cells = spec.cells()
    jobs = [(spec, c, s) for c in cells for s in spec.seeds]
    t0 = time.perf_counter()
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            runs = list(pool.map(_run_one, jobs))
    else:
        runs = [_run_one(j) for j in jobs]
    rows = []
    for c in cells:
        mine = [r for r in runs if all(r[k] == c[k] for k in c)]
        ok = [r for r in mine if "error" not in r]
        acc = np.array([r["test_acc"] for r in ok])
        fin = np.array([r["final_test_acc"] for r in ok])
        row = {
            "backend": c["backend"],
            "rank": c["rank"] if c["rank"] is not None else "",
            "init": c["init"],
            "branching": _fmt_branching(c["branching"]),
            "perm_level": c["perm_level"],
            "n_seeds": len(ok),
            "n_failed": len(mine) - len(ok),
            "test_acc_mean": float(acc.mean()) if ok else math.nan,
            "test_acc_std": float(acc.std(ddof=1)) if len(ok) > 1 else 0.0,
            "final_test_acc_mean": float(fin.mean()) if ok else math.nan,
            "final_test_acc_std": float(fin.std(ddof=1)) if len(ok) > 1 else 0.0,
            "val_acc_mean": float(np.mean([r["val_acc"] for r in ok])) if ok else math.nan,
            "num_params": ok[0]["num_params"] if ok else "",
            "sec_per_epoch": float(np.mean([r["sec_per_epoch"] for r in ok])) if ok else math.nan,
        }
        rows.append(row)
    return {
        "config": spec.to_dict(),
        "rows": rows,
        "runs": runs,
        "failed": sum(r["n_failed"] for r in rows),
        "wall_seconds": time.perf_counter() - t0,
    }


def write_report(report: dict, csv_path, json_path=None) -> None:
    """One CSV row per grid cell; the JSON keeps config, rows and full histories."""
    with open(csv_path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for row in report["rows"]:
            w.writerow(row)
    if json_path is not None:
        Path(json_path).write_text(json.dumps(report, indent=1, default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"not serializable: {type(x)}")
