import csv
import json

import numpy as np
import pytest

from ttemb.cli import main
from ttemb.graph import from_edges, write_edge_list
from ttemb.gnn import TrainConfig, tt_config_for
from ttemb.tt_format import count_params, load_cores, plan_factorization


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, out


def two_clique_file(tmp_path):
    edges = [(u, v) for u in range(5) for v in range(u + 1, 5)]
    edges += [(u + 5, v + 5) for u, v in edges]
    path = tmp_path / "cliques.edges"
    write_edge_list(from_edges(10, edges), path)
    return path


class TestReport:
    def test_arxiv_r64(self, capsys):
        code, out = run(capsys, "report", "--nodes", 169363, "--dim", 128, "--ranks", 64,
                        "--row-factors", "55,55,56", "--col-factors", "8,4,4", "--json")
        assert code == 0
        row = json.loads(out)["reports"][0]
        assert row["num_params"] == 943616
        assert int(row["compression_ratio"]) == 22  # dense / TT, before any rounding convention
        assert row["core_shapes"] == [[1, 55, 8, 64], [64, 55, 4, 64], [64, 56, 4, 1]]

    def test_products_r16(self, capsys):
        code, out = run(capsys, "report", "--nodes", 2449029, "--dim", 100, "--ranks", 16,
                        "--row-factors", "125,140,140", "--col-factors", "4,5,5", "--json")
        assert code == 0 and json.loads(out)["reports"][0]["num_params"] == 198400

    def test_degenerate(self, capsys):
        # d >= 2 is required, so the smallest table has one parameter per core
        code, out = run(capsys, "report", "--nodes", 1, "--dim", 1, "--d", 2, "--ranks", 1, "--json")
        row = json.loads(out)["reports"][0]
        assert code == 0 and row["num_params"] == 2

    def test_rank_grid_and_text(self, capsys):
        code, out = run(capsys, "report", "--nodes", 1000, "--dim", 16, "--ranks", "2,4,8")
        assert code == 0
        assert out.count("TT parameters") == 3

    def test_invalid_shape_exits_nonzero(self, capsys):
        code = main(["report", "--nodes", "0", "--dim", "4"])
        assert code == 2
        assert "error" in capsys.readouterr().err


class TestPartition:
    def test_two_cliques_cut_zero(self, capsys, tmp_path):
        code, out = run(capsys, "partition", two_clique_file(tmp_path), "--parts", 2)
        assert code == 0 and json.loads(out)["edge_cut"] == 0

    def test_branching_one_is_identity(self, capsys, tmp_path):
        perm = tmp_path / "perm.txt"
        code, _ = run(capsys, "partition", two_clique_file(tmp_path), "--branching", "1", "--perm-out", perm)
        assert code == 0
        assert np.loadtxt(perm, dtype=int).tolist() == list(range(10))

    def test_sbm_random_baseline(self, capsys, tmp_path):
        run(capsys, "sbm", "--nodes", 300, "--blocks", 3, "--p-in", 0.1, "--p-out", 0.005, "--out", tmp_path / "g")
        code, out = run(capsys, "partition", tmp_path / "g.edges", "--branching", "3", "--random-baseline")
        stats = json.loads(out)
        assert code == 0
        assert stats["edge_cut"] < stats["random_baseline_cut"]
        assert stats["config"]["branching"] == [3]

    def test_missing_file(self, capsys, tmp_path):
        assert main(["partition", str(tmp_path / "nope.edges"), "--parts", "2"]) == 2

    def test_malformed_file(self, capsys, tmp_path):
        bad = tmp_path / "bad.edges"
        bad.write_text("0 1\n2\n")
        assert main(["partition", str(bad), "--parts", "2"]) == 2
        assert ":2:" in capsys.readouterr().err


class TestSbm:
    def test_deterministic(self, capsys, tmp_path):
        run(capsys, "sbm", "--nodes", 100, "--blocks", 2, "--seed", 4, "--out", tmp_path / "a")
        run(capsys, "sbm", "--nodes", 100, "--blocks", 2, "--seed", 4, "--out", tmp_path / "b")
        for ext in ("edges", "labels"):
            assert (tmp_path / f"a.{ext}").read_bytes() == (tmp_path / f"b.{ext}").read_bytes()
        cfg = json.loads((tmp_path / "a.config.json").read_text())
        assert cfg["seed"] == 4

    def test_config_file_with_override(self, capsys, tmp_path):
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"nodes": 60, "blocks": 3, "seed": 9}))
        _, out = run(capsys, "sbm", "--config", conf, "--blocks", 2, "--out", tmp_path / "x")
        assert json.loads(out)["num_nodes"] == 60
        cfg = json.loads((tmp_path / "x.config.json").read_text())
        assert (cfg["nodes"], cfg["blocks"], cfg["seed"]) == (60, 2, 9)
        labels = np.loadtxt(tmp_path / "x.labels", dtype=int)
        assert set(labels[:, 1]) == {0, 1}


class TestTrain:
    def test_zero_epochs(self, capsys, tmp_path):
        out_dir = tmp_path / "run"
        code, _ = run(capsys, "train", "--nodes", 100, "--blocks", 2, "--epochs", 0, "--out-dir", out_dir)
        assert code == 0
        with open(out_dir / "metrics.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 1 and rows[0]["epoch"] == "0"
        emb = load_cores(out_dir / "cores.tte")
        assert emb.config == tt_config_for(100, TrainConfig())
        assert json.loads((out_dir / "config.json").read_text())["epochs"] == 0

    def test_short_run_with_branching(self, capsys, tmp_path):
        code, out = run(capsys, "train", "--nodes", 120, "--blocks", 3, "--epochs", 3, "--branching", "3",
                        "--perm-level", "first", "--init", "ortho-core", "--rank", 2, "--out-dir", tmp_path / "r")
        assert code == 0
        summary = json.loads(out)
        assert summary["final"]["epoch"] == 3
        assert summary["num_params"] == count_params(tt_config_for(120, TrainConfig(rank=2)))


class TestBench:
    def test_param_counts_match(self, capsys, tmp_path):
        code, out = run(capsys, "bench", "--nodes", 2000, "--dim", 16, "--ranks", "2,4,8",
                        "--batch", 64, "--repeats", 1, "--out", tmp_path / "b.csv")
        assert code == 0
        results = json.loads(out)["results"]
        tt = [r for r in results if r["backend"] == "tt"]
        for r in tt:
            cfg = plan_factorization(2000, 16, 3, r["rank"], ortho_friendly=True)
            assert r["num_params"] == count_params(cfg)
            assert r["lookup_rows_per_sec"] > 0
        assert tt[0]["num_params"] < tt[1]["num_params"] < tt[2]["num_params"]
        assert results[-1]["backend"] == "full" and results[-1]["num_params"] == 32000
        assert (tmp_path / "b.csv").exists()


class TestMatrix:
    def _spec(self, tmp_path, **extra):
        spec = {
            "graph": {"num_nodes": 120, "num_blocks": 3, "p_in": 0.1, "p_out": 0.01},
            "seeds": [0],
            "train": {"epochs": 2},
        }
        spec.update(extra)
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(spec))
        return path

    def test_runs_and_writes(self, capsys, tmp_path):
        code, out = run(capsys, "matrix", "--spec", self._spec(tmp_path), "--out-dir", tmp_path / "m")
        assert code == 0
        assert (tmp_path / "m" / "report.csv").exists()
        assert "acc=" in out

    def test_failure_exits_nonzero(self, capsys, tmp_path):
        spec = self._spec(tmp_path, inits=["ortho_core"], ranks=[16])
        code = main(["matrix", "--spec", str(spec), "--out-dir", str(tmp_path / "m")])
        assert code == 1
        assert "failed" in capsys.readouterr().err

    def test_needs_spec(self):
        with pytest.raises(SystemExit):
            main(["matrix"])
