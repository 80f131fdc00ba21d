import math

import numpy as np
import pytest

from ttemb.tt_format import TTConfig, TTEmbedding


def random_embedding(rng, row_factors, col_factors, ranks, num_nodes=None, emb_dim=None):
    cfg = TTConfig(
        num_nodes or math.prod(row_factors),
        emb_dim or math.prod(col_factors),
        row_factors,
        col_factors,
        ranks,
    )
    return TTEmbedding(cfg, [rng.standard_normal(s) for s in cfg.core_shapes])


def scalar_entry(emb, i, j):
    """One table entry as a product of ``R x R`` slices, digits by repeated division."""
    cfg = emb.config
    ii, jj = [], []
    for m, n in zip(reversed(cfg.row_factors), reversed(cfg.col_factors)):
        ii.append(i % m)
        jj.append(j % n)
        i //= m
        j //= n
    ii.reverse()
    jj.reverse()
    acc = np.ones((1, 1))
    for k, core in enumerate(emb.cores):
        acc = acc @ core[:, ii[k], jj[k], :]
    return float(acc[0, 0])


def random_small_config(rng, d=None, max_rows=64, max_cols=16, max_rank=4):
    """Random (row_factors, col_factors, ranks) within the given bounds."""
    d = d or int(rng.integers(2, 4))
    while True:
        m = tuple(int(x) for x in rng.integers(1, 6, d))
        n = tuple(int(x) for x in rng.integers(1, 4, d))
        if math.prod(m) <= max_rows and math.prod(n) <= max_cols:
            break
    ranks = (1,) + tuple(int(x) for x in rng.integers(1, max_rank + 1, d - 1)) + (1,)
    return m, n, ranks


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria append (number, passed, detail); printed after the run
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
