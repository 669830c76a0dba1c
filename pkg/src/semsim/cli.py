"""Command-line driver.

Every subcommand writes a CSV file into ``--out`` (default: current
directory) and echoes it to stdout. Exit codes: 0 success, 1 error,
2 an attack run where tampering was detected.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from semsim import report
from semsim.attack import SCENARIOS as ATTACK_SCENARIOS
from semsim.attack import run_campaign, run_scenario
from semsim.config import DIT_MODES, SCHEMES, SimConfig, load_config
from semsim.crypto import memory_overhead
from semsim.dit import AMAT_COLUMNS, amat_sweep, integrity_grid, coherence_grid, percent_range
from semsim.engine import run
from semsim.errors import SemsimError
from semsim.experiments import instrs_for, overhead_sweep, thread_cap
from semsim.scenarios import SCENARIOS as SMU_SCENARIOS
from semsim.smu.machine import run_program
from semsim.workload import SynthParams, gen_synthetic, parse_trace


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _base_config(args) -> SimConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else SimConfig()
    changes = {}
    for flag, key in (("scheme", "scheme"), ("dit", "dit"), ("rng_seed", "rng_seed")):
        value = getattr(args, flag, None)
        if value is not None:
            changes[key] = value
    return cfg.replace(**changes) if changes else cfg


def _emit(args, name: str, rows, columns=None, exact=()) -> str:
    out = Path(args.out)
    text = report.write_csv(out / f"{name}.csv", rows, columns, exact)
    sys.stdout.write(text)
    return text


def cmd_run(args) -> int:
    cfg = _base_config(args)
    if args.workload:
        workload = parse_trace(Path(args.workload).read_text())
        nodes = args.nodes or max(cfg.nodes, len(workload.threads))
    else:
        nodes = args.nodes or cfg.nodes
        rate = args.miss_rate[0] if args.miss_rate else 0.1
        ipn = args.instrs_per_node or instrs_for(rate)
        workload = gen_synthetic(SynthParams(nodes=nodes, instrs_per_node=ipn,
                                             target_node_miss_rate=rate, rng_seed=cfg.rng_seed))
    cfg = cfg.replace(nodes=nodes)
    rep = run(cfg, workload)
    row = rep.as_row()
    row.update(nodes=cfg.nodes, scheme=cfg.scheme, dit=cfg.dit)
    _emit(args, "run", [row])
    return 0


def cmd_sweep(args) -> int:
    cfg = _base_config(args)
    nodes = args.nodes_list or [cfg.nodes]
    rates = args.miss_rate or [0.1]
    schemes = tuple(args.schemes.split(",")) if args.schemes else ("sdsm", "baseline16")
    for s in schemes:
        if s not in SCHEMES:
            raise UsageError(f"--schemes: unknown scheme {s!r}")
    rows = overhead_sweep(cfg, nodes, rates, schemes, misses_per_node=args.misses_per_node,
                          instrs_per_node=args.instrs_per_node, threads=thread_cap())
    _emit(args, "sweep", rows)
    if args.plot:
        for rate in rates:
            sub = [r for r in rows if r["miss_rate"] == rate]
            report.plot_lines(Path(args.out) / f"sweep_miss{rate:g}.svg", sub, "nodes",
                              "overhead_pct", "scheme", f"node miss rate {rate:g}")
    return 0


def cmd_amat(args) -> int:
    if args.grid == "integrity":
        rows = integrity_grid(args.t_rem_mult)
    elif args.grid == "coherence":
        rows = coherence_grid()
    else:
        rows = amat_sweep(args.node_miss or percent_range(0.0, 1.0, 21),
                          args.int_miss or percent_range(0.0, 0.04, 5),
                          [args.t_rem_mult], t_coh_values=args.t_coh or [0.0], H=args.H)
    _emit(args, "amat", rows, AMAT_COLUMNS)
    if args.plot:
        key = "t_coh" if args.grid == "coherence" else "t_int_miss"
        report.plot_lines(Path(args.out) / "amat.svg", rows, "node_miss", "overhead_pct", key)
    return 0


def cmd_overhead(args) -> int:
    pos = args.sizes or []
    if pos and len(pos) != 4:
        raise UsageError("overhead takes four sizes: block counter mac hash")
    names = ("block", "counter", "mac", "hash")
    defaults = dict(zip(names, pos)) if pos else {"block": 64, "counter": 8, "mac": 2, "hash": 2}
    sizes = {}
    for name in names:
        flag = getattr(args, name)
        sizes[name] = flag if flag is not None else defaults[name]
    try:
        fraction = memory_overhead(sizes["block"], sizes["counter"], sizes["mac"], sizes["hash"])
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"overhead: {exc}")
    row = {k: (int(v) if float(v).is_integer() else v) for k, v in sizes.items()}
    row["fraction"] = fraction
    _emit(args, "overhead", [row], names + ("fraction",), exact=("fraction",))
    return 0


def cmd_attack(args) -> int:
    if args.scenario == "campaign":
        res = run_campaign(actions=args.actions, tcm=args.tcm, integrity=args.tcm,
                           seed=args.rng_seed or 0)
    else:
        res = run_scenario(args.scenario, tcm=args.tcm)
    _emit(args, "attack", [res.as_row()])
    return 2 if res.tamper_detections else 0


def cmd_smu_golden(args) -> int:
    names = sorted(SMU_SCENARIOS) if args.scenario in (None, "all") else [args.scenario]
    rows, ok = [], True
    for name in names:
        if name not in SMU_SCENARIOS:
            raise UsageError(f"--scenario: unknown SMU scenario {name!r}")
        prog = SMU_SCENARIOS[name]
        trace = run_program(prog.text)
        match = trace == list(prog.golden)
        ok &= match
        rows.append({"scenario": name, "events": len(trace), "match": match,
                     "last_event": trace[-1] if trace else ""})
        if args.verbose:
            sys.stderr.write(f"# {name}\n" + "\n".join(trace) + "\n")
    _emit(args, "smu_golden", rows)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="semsim", description="Secure shared-memory simulator")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp, sim=True):
        sp.add_argument("--out", default=".", help="output directory for CSV/plots")
        if sim:
            sp.add_argument("--config", help="YAML file with SimConfig keys")
            sp.add_argument("--scheme", choices=SCHEMES)
            sp.add_argument("--dit", choices=DIT_MODES)
            sp.add_argument("--rng-seed", type=int, dest="rng_seed")
            sp.add_argument("--miss-rate", type=_floats, dest="miss_rate",
                            help="node miss rate(s), comma separated")
            sp.add_argument("--instrs-per-node", type=int, dest="instrs_per_node")

    r = sub.add_parser("run", help="one simulation")
    common(r)
    r.add_argument("--workload", help="trace file; default: synthetic workload")
    r.add_argument("--nodes", type=int)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="overhead vs scheme=none over nodes x miss rates")
    common(s)
    s.add_argument("--nodes", type=_ints, dest="nodes_list", help="comma-separated node counts")
    s.add_argument("--schemes", help="comma-separated schemes (default sdsm,baseline16)")
    s.add_argument("--misses-per-node", type=int, default=60, dest="misses_per_node")
    s.add_argument("--plot", action="store_true")
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("amat", help="closed-form AMAT overhead grid")
    common(a, sim=False)
    a.add_argument("--grid", choices=("integrity", "coherence", "custom"), default="integrity")
    a.add_argument("--node-miss", type=_floats, dest="node_miss")
    a.add_argument("--int-miss", type=_floats, dest="int_miss")
    a.add_argument("--t-coh", type=_floats, dest="t_coh")
    a.add_argument("--t-rem-mult", type=float, default=5.0, dest="t_rem_mult")
    a.add_argument("--H", type=float, default=0.99)
    a.add_argument("--plot", action="store_true")
    a.set_defaults(func=cmd_amat)

    o = sub.add_parser("overhead", help="memory overhead of counters, MACs and tree hashes")
    common(o, sim=False)
    o.add_argument("sizes", nargs="*", type=float, help="block counter mac hash (bytes)")
    for name in ("block", "counter", "mac", "hash"):
        o.add_argument(f"--{name}", type=float)
    o.set_defaults(func=cmd_overhead)

    k = sub.add_parser("attack", help="adversary scenario or randomized campaign")
    common(k, sim=False)
    k.add_argument("--scenario", default="stale-read",
                   choices=sorted(ATTACK_SCENARIOS) + ["campaign"])
    k.add_argument("--tcm", type=_on_off, default=True, help="on|off")
    k.add_argument("--actions", type=int, default=1000)
    k.add_argument("--rng-seed", type=int, dest="rng_seed")
    k.add_argument("--config", help="accepted for symmetry; attack runs ignore SimConfig")
    k.set_defaults(func=cmd_attack)

    g = sub.add_parser("smu-golden", help="replay SMU scenario programs against golden traces")
    common(g, sim=False)
    g.add_argument("--scenario", default="all")
    g.add_argument("--verbose", action="store_true")
    g.set_defaults(func=cmd_smu_golden)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"semsim: usage error: {exc}\n")
        return 1
    except (SemsimError, OSError, ValueError) as exc:
        sys.stderr.write(f"semsim: error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
