"""Overhead sweeps over node count and node-miss rate."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

from semsim.config import SimConfig
from semsim.engine import overhead, run
from semsim.workload import SynthParams, gen_synthetic

DEFAULT_MISSES_PER_NODE = 60


def thread_cap(default: int | None = None) -> int:
    raw = os.environ.get("SEMSIM_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return default or min(8, os.cpu_count() or 1)


def instrs_for(miss_rate: float, misses_per_node: int = DEFAULT_MISSES_PER_NODE,
               mem_fraction: float = 0.5) -> int:
    """Trace length giving about ``misses_per_node`` planned node misses."""
    if miss_rate <= 0:
        return 2 * misses_per_node * 10
    return int(round(misses_per_node / (mem_fraction * miss_rate)))


def overhead_cell(base: SimConfig, nodes: int, miss_rate: float, schemes=("sdsm", "baseline16"),
                  misses_per_node: int = DEFAULT_MISSES_PER_NODE,
                  instrs_per_node: int | None = None) -> list[dict]:
    """Run scheme=none plus each scheme on one synthetic workload; one row per scheme."""
    params = SynthParams(nodes=nodes,
                         instrs_per_node=instrs_per_node or instrs_for(miss_rate, misses_per_node),
                         target_node_miss_rate=miss_rate, rng_seed=base.rng_seed)
    workload = gen_synthetic(params)
    ref = run(base.replace(nodes=nodes, scheme="none"), workload)
    rows = []
    for scheme in ("none",) + tuple(s for s in schemes if s != "none"):
        rep = ref if scheme == "none" else run(base.replace(nodes=nodes, scheme=scheme), workload)
        row = rep.as_row()
        row.update(nodes=nodes, miss_rate=miss_rate, scheme=scheme,
                   overhead_pct=overhead(rep, ref))
        rows.append(row)
    return rows


def overhead_sweep(base: SimConfig, node_counts, miss_rates, schemes=("sdsm", "baseline16"),
                   misses_per_node: int = DEFAULT_MISSES_PER_NODE,
                   instrs_per_node: int | None = None, threads: int | None = None) -> list[dict]:
    cells = [(n, m) for n in node_counts for m in miss_rates]
    workers = min(len(cells), threads or thread_cap()) or 1

    def one(cell):
        return overhead_cell(base, cell[0], cell[1], schemes, misses_per_node, instrs_per_node)

    if workers == 1:
        results = [one(c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, cells))
    rows = [r for chunk in results for r in chunk]
    rows.sort(key=lambda r: (r["nodes"], r["miss_rate"], r["scheme"]))
    return rows
