"""Message-level adversary model for the coherent shared memory.

A small network of nodes with caches, per-home memories and a directory.
With ``tcm`` off the directory is a plain one: messages are unauthenticated,
invalidations are fire-and-forget and a sharer stays listed until its InvAck
arrives. With ``tcm`` on, every control message carries a sequence number and
a keyed tag, invalidations must be acknowledged, and block data travels
sealed under a seed the TCM sends to the requestor. ``integrity`` puts each
home memory behind counter-mode sealing and a Bonsai tree.

Adversary actions only touch messages in flight and untrusted memory.
"""

from __future__ import annotations

import random
import struct
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Union

from semsim.coherence import CoherenceMsg, MsgKind
from semsim.crypto import (BLOCK_SIZE, HASHES_PER_BLOCK, Prf, SealedBlock, SecureMemory,
                           open_block, seal_block)
from semsim.errors import IntegrityError, TamperDetected


@dataclass(frozen=True)
class DropInvalidate:
    va: int
    dst: int


@dataclass(frozen=True)
class ReplayMsg:
    msg: CoherenceMsg


@dataclass(frozen=True)
class ForgeData:
    va: int
    data: bytes


@dataclass(frozen=True)
class MemorySnapshot:
    va: int
    plain_value: int | None = None
    sealed: SealedBlock | None = None
    counter_block: bytes | None = None
    leaf_hash_block: bytes | None = None


@dataclass(frozen=True)
class RevertMemory:
    node: int
    va: int
    old_state: MemorySnapshot
    parts: tuple[str, ...] = ("data", "mac", "counter", "leaf_hash")


AdversaryAction = Union[DropInvalidate, ReplayMsg, ForgeData, RevertMemory]
REVERT_PARTS = ("data", "mac", "counter", "leaf_hash")


def _encode(value: int) -> bytes:
    return value.to_bytes(BLOCK_SIZE, "little")


def _decode(block: bytes) -> int:
    return int.from_bytes(block, "little")


def _payload_bytes(payload) -> bytes:
    if payload is None:
        return b""
    if isinstance(payload, SealedBlock):
        return payload.cipher + struct.pack("<HQ", payload.mac, payload.seed)
    if isinstance(payload, bytes):
        return payload
    return struct.pack("<Q", payload & (2**64 - 1))


@dataclass
class _DirEntry:
    state: str = "I"
    owners: set[int] = field(default_factory=set)


class SharedMemoryNet:
    def __init__(self, nodes: int = 4, tcm: bool = True, integrity: bool = True,
                 cache_lines: int = 2, key_seed: int = 7):
        if nodes < 2:
            raise ValueError("need at least two nodes")
        self.n = nodes
        self.tcm = tcm
        self.integrity = integrity
        self.cache_lines = cache_lines
        self.prf = Prf.from_seed(key_seed)
        self.caches: list[OrderedDict[int, list]] = [OrderedDict() for _ in range(nodes)]
        self.memory = [SecureMemory(self.prf) if integrity else {} for _ in range(nodes)]
        self.dir: dict[int, _DirEntry] = {}
        self.seq_out: dict[tuple[int, int], int] = {}
        self.seq_in: dict[tuple[int, int], int] = {}
        self.next_seed = 1
        self.captured: list[CoherenceMsg] = []
        self.armed: list[AdversaryAction] = []
        self.triggered = 0
        self.oracle: dict[int, int] = {}
        self.wrong_reads = 0
        self.reads = 0

    def home(self, va: int) -> int:
        return (va // BLOCK_SIZE) % self.n

    # -- messages ----------------------------------------------------------

    def _tag(self, msg: CoherenceMsg) -> int:
        header = struct.pack("<BIIQQ", list(MsgKind).index(msg.kind), msg.src, msg.dst,
                             msg.va, msg.seq)
        return self.prf.tag16(header + _payload_bytes(msg.payload), b"msg")

    def _send(self, kind: MsgKind, src: int, dst: int, va: int, payload=None) -> CoherenceMsg | None:
        chan = (src, dst)
        seq = self.seq_out.get(chan, 0)
        self.seq_out[chan] = seq + 1
        msg = CoherenceMsg(kind, src, dst, va, payload, seq=seq, timestamp=seq)
        if self.tcm:
            msg.mac = self._tag(msg)
        self.captured.append(msg)
        for action in list(self.armed):
            if isinstance(action, DropInvalidate) and kind is MsgKind.INVALIDATE \
                    and action.va == va and action.dst == dst:
                self.armed.remove(action)
                self.triggered += 1
                if self.tcm:
                    raise TamperDetected(f"no ack for Invalidate {va:#x} to node {dst}")
                return None
            if isinstance(action, ForgeData) and kind is MsgKind.DATA_RESP and action.va == va:
                self.armed.remove(action)
                self.triggered += 1
                if isinstance(payload, SealedBlock):
                    msg = replace(msg, payload=replace(payload, cipher=action.data))
                else:
                    msg = replace(msg, payload=_decode(action.data))
        return self._deliver(msg)

    def _deliver(self, msg: CoherenceMsg) -> CoherenceMsg:
        if self.tcm:
            chan = (msg.src, msg.dst)
            if msg.mac is None or msg.mac != self._tag(msg):
                raise TamperDetected(f"bad tag on {msg.kind.value} {msg.src}->{msg.dst}")
            expected = self.seq_in.get(chan, 0)
            if msg.seq != expected:
                raise TamperDetected(f"{msg.kind.value} {msg.src}->{msg.dst} seq {msg.seq}, "
                                     f"expected {expected}")
            self.seq_in[chan] = expected + 1
        return msg

    def inject(self, msg: CoherenceMsg):
        """An adversary-originated message (replay). Plain receivers act on it."""
        msg = self._deliver(msg)
        if msg.kind is MsgKind.DATA_RESP:
            line = self.caches[msg.dst].get(msg.va)
            if line is not None and not isinstance(msg.payload, SealedBlock):
                line[1] = msg.payload
        elif msg.kind is MsgKind.INVALIDATE:
            self.caches[msg.dst].pop(msg.va, None)

    # -- memory ------------------------------------------------------------

    def _mem_read(self, va: int) -> int:
        mem = self.memory[self.home(va)]
        if self.integrity:
            return _decode(mem.load(va))
        return mem.get(va, 0)

    def _mem_write(self, va: int, value: int):
        mem = self.memory[self.home(va)]
        if self.integrity:
            mem.store(va, _encode(value))
        else:
            mem[va] = value

    def snapshot(self, va: int) -> MemorySnapshot:
        mem = self.memory[self.home(va)]
        if not self.integrity:
            return MemorySnapshot(va, plain_value=mem.get(va))
        idx = va // BLOCK_SIZE
        cb = mem.bmt.counter_block_of(idx)[0]
        tree = mem.bmt.tree
        return MemorySnapshot(va, sealed=mem.blocks.get(idx),
                              counter_block=tree.untrusted.get((0, cb)),
                              leaf_hash_block=tree.untrusted.get((1, cb // HASHES_PER_BLOCK)))

    def revert(self, action: RevertMemory):
        snap = action.old_state
        va = snap.va
        mem = self.memory[self.home(va)]
        if not self.integrity:
            if snap.plain_value is None:
                mem.pop(va, None)
            else:
                mem[va] = snap.plain_value
            return
        idx = va // BLOCK_SIZE
        tree = mem.bmt.tree
        tree.flush()
        tree.cache.clear()  # counters come back from off-chip memory next time
        cur = mem.blocks.get(idx)
        old = snap.sealed
        if "data" in action.parts or "mac" in action.parts:
            if old is None:
                if {"data", "mac"} <= set(action.parts):
                    mem.blocks.pop(idx, None)
            elif cur is None:
                mem.blocks[idx] = old
            else:
                mem.blocks[idx] = SealedBlock(
                    va,
                    old.cipher if "data" in action.parts else cur.cipher,
                    old.mac if "mac" in action.parts else cur.mac,
                    old.seed if "data" in action.parts else cur.seed)
        cb = mem.bmt.counter_block_of(idx)[0]
        for part, node, content in (("counter", (0, cb), snap.counter_block),
                                    ("leaf_hash", (1, cb // HASHES_PER_BLOCK), snap.leaf_hash_block)):
            if part in action.parts:
                if content is None:
                    tree.untrusted.pop(node, None)
                else:
                    tree.untrusted[node] = content

    # -- caches ------------------------------------------------------------

    def _insert(self, node: int, va: int, state: str, value: int):
        cache = self.caches[node]
        cache[va] = [state, value]
        cache.move_to_end(va)
        while len(cache) > self.cache_lines:
            victim, (vstate, vvalue) = cache.popitem(last=False)
            if vstate == "M":
                self._mem_write(victim, vvalue)
                e = self.dir.get(victim)
                if e is not None:
                    e.owners.discard(node)
                    if not e.owners:
                        e.state = "I"

    # -- operations --------------------------------------------------------

    def read(self, node: int, va: int) -> int:
        self.reads += 1
        line = self.caches[node].get(va)
        if line is not None:
            self.caches[node].move_to_end(va)
            value = line[1]
        else:
            value = self._read_miss(node, va)
        if value != self.oracle.get(va, 0):
            self.wrong_reads += 1
        return value

    def _read_miss(self, node: int, va: int) -> int:
        home = self.home(va)
        self._send(MsgKind.READ_REQ, node, home, va)
        e = self.dir.setdefault(va, _DirEntry())
        seed = None
        if self.tcm:
            seed = self.next_seed
            self.next_seed += 1
            self._send(MsgKind.SEED_GRANT, home, node, va, seed)
        value = None
        sender = home
        for holder in sorted(e.owners - {node}):
            self._send(MsgKind.READ_REQ, home, holder, va)
            line = self.caches[holder].get(va)
            if line is None:
                e.owners.discard(holder)   # evicted clean copy: redirected to memory
                continue
            sender = holder
            value = line[1]
            if line[0] == "M":
                self._mem_write(va, value)
            line[0] = "S"
            break
        if value is None:
            value = self._mem_read(va)
        payload = seal_block(self.prf, seed, va, _encode(value)) if self.tcm else value
        msg = self._send(MsgKind.DATA_RESP, sender, node, va, payload)
        if self.tcm:
            value = _decode(open_block(self.prf, msg.payload, seed))
        else:
            value = msg.payload
        e.owners.add(node)
        e.state = "S" if len(e.owners) > 1 else "E"
        self._insert(node, va, "S" if len(e.owners) > 1 else "E", value)
        return value

    def write(self, node: int, va: int, value: int):
        line = self.caches[node].get(va)
        e = self.dir.setdefault(va, _DirEntry())
        if line is None or line[0] == "S":
            home = self.home(va)
            self._send(MsgKind.WRITE_REQ, node, home, va)
            for other in sorted(e.owners - {node}):
                inv = self._send(MsgKind.INVALIDATE, home, other, va)
                if inv is None:
                    continue   # plain directory: sharer stays listed until it acks
                self.caches[other].pop(va, None)
                self._send(MsgKind.INV_ACK, other, node, va)
                e.owners.discard(other)
            e.owners.add(node)
        e.state = "M"
        self.oracle[va] = value
        self._insert(node, va, "M", value)


# -- scenarios ----------------------------------------------------------------

@dataclass
class AttackResult:
    scenario: str
    tcm: bool
    integrity: bool
    actions: int = 0
    triggered: int = 0
    tamper_detections: int = 0
    detected: int = 0
    inert: int = 0
    silent_corruption: int = 0
    wrong_reads: int = 0
    reads: int = 0

    def as_row(self) -> dict:
        return dict(self.__dict__)


def _stale_read(tcm: bool, integrity: bool) -> SharedMemoryNet:
    """Nodes 0 and 1 share a block; node 1 writes it while the Invalidate to
    node 0 is dropped; node 2 then reads it."""
    net = SharedMemoryNet(nodes=4, tcm=tcm, integrity=integrity, cache_lines=4)
    va = 0x40 * 3
    net.write(1, va, 1)
    net.read(0, va)
    net.read(1, va)
    net.armed.append(DropInvalidate(va, 0))
    net.write(1, va, 2)
    net.read(2, va)
    return net


def _replay_seed(tcm: bool, integrity: bool) -> SharedMemoryNet:
    net = SharedMemoryNet(nodes=4, tcm=tcm, integrity=integrity, cache_lines=4)
    va = 0x40 * 5
    net.write(1, va, 10)
    net.read(2, va)
    old = next((m for m in net.captured if m.kind is MsgKind.SEED_GRANT), None) or net.captured[0]
    net.write(1, va, 11)
    net.inject(old)
    net.read(2, va)
    return net


def _forge_data(tcm: bool, integrity: bool) -> SharedMemoryNet:
    net = SharedMemoryNet(nodes=4, tcm=tcm, integrity=integrity, cache_lines=4)
    va = 0x40 * 6
    net.write(1, va, 5)
    net.armed.append(ForgeData(va, _encode(0xBAD)))
    net.read(3, va)
    return net


def _revert_memory(tcm: bool, integrity: bool) -> SharedMemoryNet:
    net = SharedMemoryNet(nodes=4, tcm=tcm, integrity=integrity, cache_lines=1)
    va, other = 0x40 * 2, 0x40 * 9
    net.write(1, va, 1)
    net.write(1, other, 0)      # evicts va: memory now holds 1
    snap = net.snapshot(va)
    net.read(1, va)
    net.write(1, va, 2)
    net.write(1, other, 0)      # memory now holds 2
    net.revert(RevertMemory(net.home(va), va, snap))
    net.read(3, va)
    return net


SCENARIOS = {
    "stale-read": _stale_read,
    "replay-seed": _replay_seed,
    "forge-data": _forge_data,
    "revert-memory": _revert_memory,
}


def run_scenario(name: str, tcm: bool = True, integrity: bool | None = None) -> AttackResult:
    if name == "campaign":
        return run_campaign(tcm=tcm, integrity=tcm if integrity is None else integrity)
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; choose from "
                         f"{', '.join(sorted(SCENARIOS) + ['campaign'])}")
    integrity = tcm if integrity is None else integrity
    res = AttackResult(name, tcm, integrity, actions=1)
    try:
        net = SCENARIOS[name](tcm, integrity)
    except (TamperDetected, IntegrityError):
        res.tamper_detections = res.detected = res.triggered = 1
        return res
    res.triggered = 1
    res.wrong_reads, res.reads = net.wrong_reads, net.reads
    if net.wrong_reads:
        res.silent_corruption = 1
    else:
        res.inert = 1
    return res


def _random_action(rng: random.Random, net: SharedMemoryNet, blocks: list[int],
                   snaps: list[MemorySnapshot]) -> AdversaryAction:
    kind = rng.choice(("drop", "replay", "forge", "revert"))
    va = rng.choice(blocks)
    if kind == "drop":
        return DropInvalidate(va, rng.randrange(net.n))
    if kind == "replay" and net.captured:
        return ReplayMsg(rng.choice(net.captured))
    if kind == "forge":
        return ForgeData(va, rng.randbytes(BLOCK_SIZE))
    snap = rng.choice(snaps) if snaps else net.snapshot(va)
    k = rng.randint(1, len(REVERT_PARTS))
    parts = tuple(sorted(rng.sample(REVERT_PARTS, k)))
    return RevertMemory(net.home(snap.va), snap.va, snap, parts)


def run_campaign(actions: int = 1000, tcm: bool = True, integrity: bool = True,
                 seed: int = 0, nodes: int = 4, ops_per_episode: int = 40) -> AttackResult:
    """One randomized adversary action per episode on a fresh network.

    An episode ends in detection (an exception), silent corruption (a read
    disagreed with the reference map and nothing was flagged) or is inert.
    """
    rng = random.Random(seed)
    res = AttackResult("campaign", tcm, integrity)
    blocks = [i * BLOCK_SIZE for i in range(8)]
    for _ in range(actions):
        net = SharedMemoryNet(nodes=nodes, tcm=tcm, integrity=integrity, cache_lines=2,
                              key_seed=rng.randrange(1 << 30))
        when = rng.randrange(5, ops_per_episode - 5)
        snaps: list[MemorySnapshot] = []
        value = 0
        res.actions += 1
        try:
            for step in range(ops_per_episode):
                if step == when:
                    action = _random_action(rng, net, blocks, snaps)
                    if isinstance(action, ReplayMsg):
                        res.triggered += 1
                        net.inject(action.msg)
                    elif isinstance(action, RevertMemory):
                        res.triggered += 1
                        net.revert(action)
                    else:
                        net.armed.append(action)
                node = rng.randrange(nodes)
                va = rng.choice(blocks)
                if rng.random() < 0.4:
                    value += 1
                    net.write(node, va, value)
                else:
                    net.read(node, va)
                if step < when and rng.random() < 0.3:
                    snaps.append(net.snapshot(rng.choice(blocks)))
        except (TamperDetected, IntegrityError):
            res.tamper_detections += 1
            res.detected += 1
            res.triggered += net.triggered
            continue
        res.triggered += net.triggered
        res.reads += net.reads
        res.wrong_reads += net.wrong_reads
        if net.wrong_reads:
            res.silent_corruption += 1
        else:
            res.inert += 1
    return res
