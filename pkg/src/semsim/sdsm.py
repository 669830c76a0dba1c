"""Seed and keystream bookkeeping for secure block transfers.

SDSM: the TCM hands out per-process seeds; every sender keeps a FIFO of
pre-generated pads for the seeds it was granted; a miss routed through the
TCM names the sender's oldest seed, tells the requestor about it directly and
piggybacks a replacement seed on the forwarded request.

baseline16: pads are prepared per virtual address when a block is modified
and kept in a small buffer; everything else pays for a seed fetch and/or a
pad derivation on the critical path.
"""

from __future__ import annotations

from collections import OrderedDict, deque
from dataclasses import dataclass, field

from semsim.crypto import BLOCK_SIZE, Prf, SealedBlock, derive_pad, open_block, seal_block

DEFAULT_KB_CYCLES = 80
DEFAULT_FIFO_CAPACITY = 10


@dataclass
class KbEntry:
    seed: int
    ready_at: int
    pad: bytes | None = None


@dataclass
class OutstandingKbFifo:
    capacity: int = DEFAULT_FIFO_CAPACITY
    entries: deque = field(default_factory=deque)

    def push(self, entry: KbEntry):
        if len(self.entries) >= self.capacity:
            raise OverflowError("outstanding KB FIFO full")
        self.entries.append(entry)

    def take(self, seed: int) -> KbEntry | None:
        for i, e in enumerate(self.entries):
            if e.seed == seed:
                del self.entries[i]
                return e
        return None

    def __len__(self):
        return len(self.entries)


@dataclass
class RequestorKbSlot:
    seed: int | None = None
    ready_at: int = 0
    pad: bytes | None = None

    def load(self, seed: int, ready_at: int, pad: bytes | None = None):
        self.seed, self.ready_at, self.pad = seed, ready_at, pad


class TcmSeedLedger:
    """Per-pid monotone seed counters and per-sender queues of granted, unspent seeds."""

    def __init__(self):
        self.counters: dict[int, int] = {}
        self.queues: dict[tuple[int, int], deque] = {}
        self.issued: dict[int, list[int]] = {}

    def queue(self, pid: int, sender: int) -> deque:
        q = self.queues.get((pid, sender))
        if q is None:
            q = self.queues[(pid, sender)] = deque()
        return q

    def issue(self, pid: int, sender: int, n: int) -> list[int]:
        if n < 1:
            raise ValueError("n must be >= 1")
        start = self.counters.get(pid, 1)
        seeds = list(range(start, start + n))
        self.counters[pid] = start + n
        self.queue(pid, sender).extend(seeds)
        self.issued.setdefault(pid, []).extend(seeds)
        return seeds


def tcm_issue_seeds(tcm: TcmSeedLedger, pid: int, sender: int, n: int) -> list[int]:
    return tcm.issue(pid, sender, n)


@dataclass(frozen=True)
class MissRoute:
    grant_seed: int          # goes to the requestor and is named in the forward
    replacement_seed: int    # piggybacks on the forward to refill the sender


def tcm_route_miss(tcm: TcmSeedLedger, pid: int, sender: int) -> MissRoute:
    q = tcm.queue(pid, sender)
    if not q:
        tcm.issue(pid, sender, 1)
    grant = q.popleft()
    replacement = tcm.issue(pid, sender, 1)[0]
    return MissRoute(grant, replacement)


class ProcessHeat:
    """Exponentially decayed count of recent remote requests per (node, pid)."""

    def __init__(self, window: int = 10_000):
        self.window = window
        self.heat: dict[tuple[int, int], float] = {}
        self.stamp: dict[tuple[int, int], int] = {}

    def _decayed(self, key, now: int) -> float:
        h = self.heat.get(key, 0.0)
        if h:
            h *= 0.5 ** ((now - self.stamp[key]) / self.window)
        return h

    def bump(self, node: int, pid: int, now: int, amount: float = 1.0):
        key = (node, pid)
        self.heat[key] = self._decayed(key, now) + amount
        self.stamp[key] = now

    def value(self, node: int, pid: int, now: int) -> float:
        return self._decayed((node, pid), now)

    def pids(self, node: int) -> list[int]:
        return sorted(p for (n, p) in self.heat if n == node)


def allocate_slots(heats: dict[int, float], slots: int) -> dict[int, int]:
    """Largest-remainder split of ``slots`` proportional to heat; ties go to the lower pid."""
    if not heats:
        return {}
    pids = sorted(heats)
    total = sum(max(0.0, heats[p]) for p in pids)
    if total <= 0:
        weights = {p: 1.0 for p in pids}
        total = float(len(pids))
    else:
        weights = {p: max(0.0, heats[p]) for p in pids}
    quotas = {p: slots * weights[p] / total for p in pids}
    alloc = {p: int(quotas[p]) for p in pids}
    left = slots - sum(alloc.values())
    order = sorted(pids, key=lambda p: (-(quotas[p] - alloc[p]), p))
    for p in order[:left]:
        alloc[p] += 1
    return alloc


@dataclass
class SenderState:
    """One node's outstanding-KB FIFOs (per pid) plus delay statistics."""

    node: int
    capacity: int = DEFAULT_FIFO_CAPACITY
    fifos: dict[int, OutstandingKbFifo] = field(default_factory=dict)

    def fifo(self, pid: int) -> OutstandingKbFifo:
        f = self.fifos.get(pid)
        if f is None:
            f = self.fifos[pid] = OutstandingKbFifo(self.capacity)
        return f


def refill_kbs(sender: SenderState, tcm: TcmSeedLedger, heat: ProcessHeat, now: int,
               kb_cycles: int = DEFAULT_KB_CYCLES) -> dict[int, int]:
    """Fill spare FIFO capacity, split across the node's pids by heat."""
    pids = heat.pids(sender.node) or sorted(sender.fifos)
    used = sum(len(sender.fifo(p)) for p in pids)
    spare = sender.capacity - used
    if spare <= 0 or not pids:
        return {}
    alloc = allocate_slots({p: heat.value(sender.node, p, now) for p in pids}, spare)
    for pid, n in alloc.items():
        if n:
            for seed in tcm.issue(pid, sender.node, n):
                sender.fifo(pid).push(KbEntry(seed, now + kb_cycles))
    return alloc


@dataclass(frozen=True)
class ServeResult:
    send_at: int
    kb_delay: int
    sealed: SealedBlock | None = None


def sender_serve(sender: SenderState, pid: int, seed: int, data_ready_at: int,
                 prf: Prf | None = None, va: int = 0, clear: bytes | None = None) -> ServeResult:
    """Encrypt with the pre-generated pad for ``seed``. A pad that is not ready yet delays the send."""
    entry = sender.fifo(pid).take(seed)
    ready = entry.ready_at if entry is not None else data_ready_at
    send_at = max(data_ready_at, ready)
    sealed = seal_block(prf, seed, va, clear) if prf is not None and clear is not None else None
    return ServeResult(send_at, send_at - data_ready_at, sealed)


def requestor_complete(slot: RequestorKbSlot, data_arrival: int, sealed: SealedBlock | None = None,
                       prf: Prf | None = None) -> tuple[bytes | None, int]:
    """Returns (clear block, stall cycles). Raises IntegrityError on a bad MAC."""
    stall = max(0, slot.ready_at - data_arrival)
    clear = None
    if sealed is not None and prf is not None:
        clear = open_block(prf, sealed, slot.seed)
    return clear, stall


class Baseline16Buffer:
    """Per-VA pads for recently modified blocks, LRU, fixed size."""

    def __init__(self, capacity: int = DEFAULT_FIFO_CAPACITY):
        self.capacity = capacity
        self.entries: OrderedDict[int, int] = OrderedDict()
        self.hits = 0
        self.misses = 0

    def on_modify(self, va: int, ready_at: int):
        if va in self.entries:
            self.entries.move_to_end(va)
            return
        self.entries[va] = ready_at
        if len(self.entries) > self.capacity:
            self.entries.popitem(last=False)

    def take(self, va: int) -> int | None:
        ready = self.entries.pop(va, None)
        if ready is None:
            self.misses += 1
        else:
            self.hits += 1
        return ready


@dataclass(frozen=True)
class Baseline16Cost:
    send_at: int            # when the sender can put data on the wire
    requestor_ready: int    # when the requestor's pad is ready (absolute), -1 = on data arrival + kb
    evict_delay: int        # sender-side KB wait
    port_cycles: int        # extra memory-port time used at the sender


def baseline16_serve(buffer: Baseline16Buffer, va: int, modified: bool, from_cache: bool,
                     t_forward: int, hop: int, kb: int, mem: int) -> Baseline16Cost:
    """Cost of one transfer under the comparison scheme.

    modified + buffer hit: like an SDSM hit. modified + miss: the sender derives
    a pad (kb) and sends the seed ahead so the requestor derives in parallel.
    unmodified: data and seed come from memory together; the requestor derives
    its pad after arrival.
    """
    if modified and from_cache:
        ready = buffer.take(va)
        if ready is not None:
            send = max(t_forward, ready)
            return Baseline16Cost(send, 0, send - t_forward, 0)
        send = t_forward + kb
        return Baseline16Cost(send, t_forward + hop + kb, kb, 0)
    port = mem if from_cache else 0
    return Baseline16Cost(t_forward + port, -1, 0, port)


def pad_for(prf: Prf, seed: int) -> bytes:
    # SDSM pads are VA independent for runtime seeds
    return derive_pad(prf, seed, 0)


__all__ = [
    "BLOCK_SIZE", "KbEntry", "OutstandingKbFifo", "RequestorKbSlot", "TcmSeedLedger",
    "tcm_issue_seeds", "MissRoute", "tcm_route_miss", "ProcessHeat", "allocate_slots",
    "SenderState", "refill_kbs", "ServeResult", "sender_serve", "requestor_complete",
    "Baseline16Buffer", "Baseline16Cost", "baseline16_serve", "pad_for",
]
