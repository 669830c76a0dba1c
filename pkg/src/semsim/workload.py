"""Per-thread ALU/Load/Store traces: text format, layout and a synthetic generator.

Trace text::

    # layout nodes=4 private_blocks=64
    #thread 0
    A
    L 0x40
    S 0x40

The optional ``# layout`` comment tells the engine which addresses are
node-private and where shared blocks live; without it every address is
shared and homed by block interleaving.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import NamedTuple

from semsim.crypto import BLOCK_SIZE
from semsim.errors import ParseError
from semsim.scenarios import SCENARIOS, ScenarioProgram, gen_smu_program  # noqa: F401

PRIVATE_BASE = 0x1000_0000
SHARED_BASE = 0x4000_0000


class TraceInstr(NamedTuple):
    op: str        # "A", "L" or "S"
    va: int = 0


ALU = TraceInstr("A", 0)


def Load(va: int) -> TraceInstr:
    return TraceInstr("L", va & ~(BLOCK_SIZE - 1))


def Store(va: int) -> TraceInstr:
    return TraceInstr("S", va & ~(BLOCK_SIZE - 1))


@dataclass(frozen=True)
class Layout:
    """Address map. ``private_blocks`` = 0 means every address is shared."""

    nodes: int
    private_blocks: int = 0

    def home(self, va: int) -> int:
        if PRIVATE_BASE <= va < SHARED_BASE and self.private_blocks:
            return ((va - PRIVATE_BASE) // BLOCK_SIZE) // self.private_blocks % self.nodes
        return (va // BLOCK_SIZE) % self.nodes

    def is_private(self, va: int) -> bool:
        return bool(self.private_blocks) and PRIVATE_BASE <= va < SHARED_BASE

    def private_va(self, node: int, i: int) -> int:
        return PRIVATE_BASE + (node * self.private_blocks + i) * BLOCK_SIZE

    def render(self) -> str:
        return f"# layout nodes={self.nodes} private_blocks={self.private_blocks}"


@dataclass
class Workload:
    threads: list[list[TraceInstr]]
    layout: Layout | None = None
    meta: dict = field(default_factory=dict)

    def __eq__(self, other):
        return isinstance(other, Workload) and self.threads == other.threads \
            and self.layout == other.layout

    @property
    def instructions(self) -> int:
        return sum(len(t) for t in self.threads)


def parse_trace(text: str) -> Workload:
    threads: dict[int, list[TraceInstr]] = {}
    current: list[TraceInstr] | None = None
    layout = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("thread"):
                parts = body.split()
                if len(parts) != 2:
                    raise ParseError(lineno, "expected '#thread <n>'")
                try:
                    tid = int(parts[1], 0)
                except ValueError:
                    raise ParseError(lineno, f"bad thread number {parts[1]!r}") from None
                if tid in threads:
                    raise ParseError(lineno, f"duplicate thread {tid}")
                current = threads[tid] = []
            elif body.startswith("layout"):
                try:
                    kv = dict(p.split("=", 1) for p in body.split()[1:])
                    layout = Layout(int(kv["nodes"]), int(kv.get("private_blocks", 0)))
                except (ValueError, KeyError):
                    raise ParseError(lineno, f"bad layout line {line!r}") from None
            continue
        if current is None:
            raise ParseError(lineno, "instruction before any '#thread' header")
        parts = line.split()
        op = parts[0].upper()
        if op == "A" and len(parts) == 1:
            current.append(ALU)
        elif op in ("L", "S") and len(parts) == 2:
            try:
                va = int(parts[1], 16)
            except ValueError:
                raise ParseError(lineno, f"bad address {parts[1]!r}") from None
            if va < 0:
                raise ParseError(lineno, "negative address")
            current.append(Load(va) if op == "L" else Store(va))
        else:
            raise ParseError(lineno, f"malformed instruction {line!r}")
    if not threads and text.strip():
        raise ParseError(1, "no '#thread' sections")
    ordered = [threads[k] for k in sorted(threads)]
    return Workload(ordered, layout)


def render_trace(workload: Workload) -> str:
    out = []
    if workload.layout is not None:
        out.append(workload.layout.render())
    for tid, seq in enumerate(workload.threads):
        out.append(f"#thread {tid}")
        out.extend("A" if ins.op == "A" else f"{ins.op} {ins.va:#x}" for ins in seq)
    return "\n".join(out) + "\n"


@dataclass(frozen=True)
class SynthParams:
    nodes: int = 16
    instrs_per_node: int = 2000
    target_node_miss_rate: float = 0.1
    store_fraction: float = 0.3
    shared_region_blocks: int | None = None   # default max(2048, 4 * misses per node)
    private_region_blocks: int = 64
    rng_seed: int = 0
    mem_fraction: float = 0.5

    def validate(self):
        if self.nodes < 1 or self.instrs_per_node < 0:
            raise ValueError("nodes must be >= 1 and instrs_per_node >= 0")
        for name in ("target_node_miss_rate", "store_fraction", "mem_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.target_node_miss_rate > 0 and self.nodes < 2:
            raise ValueError("a node miss needs another node: target > 0 requires nodes >= 2")
        if self.private_region_blocks < 1:
            raise ValueError("private_region_blocks must be >= 1")
        if self.shared_region_blocks is not None and self.shared_region_blocks < self.nodes:
            raise ValueError("shared_region_blocks must be >= nodes")


def _plan(rng: random.Random, total: int, counts: dict[str, int]) -> list[str]:
    slots = []
    for kind, n in counts.items():
        slots.extend([kind] * n)
    slots.extend(["A"] * (total - len(slots)))
    rng.shuffle(slots)
    return slots


def gen_synthetic(p: SynthParams) -> Workload:
    """Ownership-tracking generator.

    Counts are fixed per node (memory ops, planned node misses, stores); only
    positions are random. Hits go to the node's private region. A planned miss
    targets a shared block that, in the generator's ownership model, the node
    does not hold and is not home for, so it has to come from another node.
    The shared region has a fixed size, so more nodes means more sharers per
    block and more misses served from other caches.
    """
    p.validate()
    rng = random.Random(p.rng_seed)
    n = p.nodes
    layout = Layout(n, p.private_region_blocks)
    n_mem = round(p.instrs_per_node * p.mem_fraction)
    n_miss = round(n_mem * p.target_node_miss_rate)
    n_hit = n_mem - n_miss
    shared_blocks = p.shared_region_blocks or max(2048, 4 * n_miss)

    plans = []
    for _ in range(n):
        miss_st = round(n_miss * p.store_fraction)
        hit_st = round(n_hit * p.store_fraction)
        counts = {"MS": miss_st, "ML": n_miss - miss_st, "HS": hit_st, "HL": n_hit - hit_st}
        plans.append(_plan(rng, p.instrs_per_node, counts))

    holders: dict[int, set[int]] = {}
    threads: list[list[TraceInstr]] = [[] for _ in range(n)]

    def pick_shared(node: int) -> int:
        for _ in range(64):
            b = rng.randrange(shared_blocks)
            if b % n != node and node not in holders.get(b, ()):
                return b
        free = [b for b in range(shared_blocks)
                if b % n != node and node not in holders.get(b, ())]
        if not free:
            raise ValueError("shared region exhausted; raise shared_region_blocks")
        return rng.choice(free)

    for i in range(p.instrs_per_node):
        for node in range(n):
            kind = plans[node][i]
            out = threads[node]
            if kind == "A":
                out.append(ALU)
            elif kind in ("HL", "HS"):
                va = layout.private_va(node, rng.randrange(p.private_region_blocks))
                out.append(TraceInstr("L" if kind == "HL" else "S", va))
            else:
                b = pick_shared(node)
                va = SHARED_BASE + b * BLOCK_SIZE
                if kind == "MS":
                    holders[b] = {node}
                    out.append(TraceInstr("S", va))
                else:
                    holders.setdefault(b, set()).add(node)
                    out.append(TraceInstr("L", va))
    return Workload(threads, layout, meta={"planned_node_misses": n_miss * n,
                                           "memory_ops": n_mem * n})


def planned_miss_rate(w: Workload) -> float:
    mem = w.meta.get("memory_ops", 0)
    return w.meta.get("planned_node_misses", 0) / mem if mem else 0.0
