"""Discrete-event multi-node simulator.

Each node runs one trace thread with blocking instructions. A memory
instruction is processed atomically at its issue time; the time it takes is
computed from hop/memory/keystream latencies and from per-block and per-port
reservations, so later requests queue behind earlier ones. Events are ordered
by (time, node id, sequence number).
"""

from __future__ import annotations

import dataclasses
import heapq
from collections import OrderedDict
from dataclasses import dataclass, field

from semsim.coherence import (HEADER_BYTES, MAC_BYTES, SEED_BYTES, CoherenceMsg, Directory,
                              MesiState, MsgKind)
from semsim.config import SimConfig
from semsim.crypto import BLOCK_SIZE, Prf, open_block, seal_block
from semsim.dit import IvlcsTree
from semsim.errors import HaltReason, IntegrityError
from semsim.sdsm import (Baseline16Buffer, KbEntry, SenderState, TcmSeedLedger, baseline16_serve,
                         tcm_route_miss)
from semsim.workload import Layout, Workload

M, E, S = MesiState.MODIFIED, MesiState.EXCLUSIVE, MesiState.SHARED
PID = 1
DATA_BYTES = HEADER_BYTES + BLOCK_SIZE
CTRL_BYTES = HEADER_BYTES


@dataclass
class StatsReport:
    total_cycles: int = 0
    instructions: int = 0
    per_core_instr_avg: float = 0.0
    alu_instr_avg: float = 0.0
    load_instr_avg: float = 0.0
    store_instr_avg: float = 0.0
    memory_ops: int = 0
    node_misses: int = 0
    node_miss_rate: float = 0.0
    wrong_state_hits: int = 0
    requests_forwarded: int = 0
    requests_served: int = 0
    requests_redirected: int = 0
    served_immediately: int = 0
    evict_kb_waits: int = 0
    avg_evict_kb_delay: float = 0.0
    fetch_kb_waits: int = 0
    avg_fetch_kb_delay: float = 0.0
    directory_messages: int = 0
    traffic_bytes: int = 0
    tamper_detections: int = 0
    halts: dict = field(default_factory=dict)
    completed: bool = True

    def as_row(self) -> dict:
        row = dataclasses.asdict(self)
        halts = row.pop("halts")
        for reason in HaltReason:
            row[f"halts_{reason.value}"] = halts.get(reason.value, 0)
        return row


class _Node:
    __slots__ = ("id", "cache", "port_free", "trace", "pc", "time", "sender", "b16",
                 "counts", "busy", "dit")

    def __init__(self, nid: int, trace, capacity: int):
        self.id = nid
        self.cache: OrderedDict[int, list] = OrderedDict()
        self.port_free = 0
        self.trace = trace
        self.pc = 0
        self.time = 0
        self.sender = SenderState(nid, capacity)
        self.b16 = Baseline16Buffer(capacity)
        self.counts = {"A": 0, "L": 0, "S": 0}
        self.dit = None


class Simulator:
    def __init__(self, config: SimConfig, workload: Workload):
        config.__post_init__()
        if len(workload.threads) > config.nodes:
            raise ValueError(f"{len(workload.threads)} threads need at least as many nodes "
                             f"(config has {config.nodes})")
        self.cfg = config
        self.layout = workload.layout or Layout(config.nodes)
        if self.layout.nodes != config.nodes:
            self.layout = dataclasses.replace(self.layout, nodes=config.nodes)
        self.nodes = [_Node(i, workload.threads[i] if i < len(workload.threads) else [],
                            config.fifo_capacity) for i in range(config.nodes)]
        self.memory: dict[int, int] = {}
        self.directory = Directory()
        self.busy: dict[int, int] = {}
        self.tcm = TcmSeedLedger()
        self.stats = StatsReport()
        self.evict_delay = 0
        self.fetch_delay = 0
        self.store_counter = 0
        self.log: list[tuple] | None = [] if config.check_values else None
        self.prf = Prf.from_seed(config.rng_seed) if config.functional_crypto else None
        self.dit_slots: dict[int, int] = {}
        if config.dit != "off":
            for n in self.nodes:
                n.dit = IvlcsTree(Prf.from_seed(1000 + n.id), config.dit)
        if config.scheme == "sdsm":
            for n in self.nodes:
                for seed in self.tcm.issue(PID, n.id, config.fifo_capacity):
                    n.sender.fifo(PID).push(KbEntry(seed, 0))

    # -- helpers ---------------------------------------------------------

    def _port(self, node: _Node, at: int) -> int:
        start = max(at, node.port_free)
        node.port_free = start + self.cfg.mem_cycles
        return node.port_free

    def _dit(self, node: _Node, event: str, va: int, write: bool = False):
        if node.dit is None or self.layout.is_private(va):
            return
        slot = self.dit_slots.setdefault(va, len(self.dit_slots) * BLOCK_SIZE)
        node.dit.apply(event, slot, write=write)

    def _insert(self, node: _Node, va: int, state: MesiState, value: int, now: int):
        node.cache[va] = [state, value]
        node.cache.move_to_end(va)
        if len(node.cache) > self.cfg.cache_lines:
            victim, (vstate, vvalue) = node.cache.popitem(last=False)
            if vstate is M:
                self.memory[victim] = vvalue
                self.stats.traffic_bytes += DATA_BYTES
                if not self.layout.is_private(victim):
                    self.directory.evict(node.id, victim, dirty=True)
                    self._dit(node, "evict_dirty", victim)

    def _modified(self, node: _Node, va: int, done: int):
        if self.cfg.scheme == "baseline16" and not self.layout.is_private(va):
            node.b16.on_modify(va, done + self.cfg.kb_cycles)

    def _new_value(self) -> int:
        self.store_counter += 1
        return self.store_counter

    # -- one memory instruction ------------------------------------------

    def _access(self, node: _Node, op: str, va: int, t: int) -> int:
        cfg = self.cfg
        st = self.stats
        st.memory_ops += 1
        line = node.cache.get(va)
        if line is not None and (op == "L" or line[0] is not S):
            node.cache.move_to_end(va)
            if op == "S":
                if line[0] is E and not self.layout.is_private(va):
                    self.directory.entry(va).state = M
                line[0] = M
                line[1] = self._new_value()
                self._modified(node, va, t + cfg.alu_cycles)
            self._record(node.id, op, va, line[1])
            return t + cfg.alu_cycles

        if self.layout.is_private(va):
            done = self._port(node, t)
            value = self._new_value() if op == "S" else self.memory.get(va, 0)
            self._insert(node, va, M if op == "S" else E, value, done)
            self._record(node.id, op, va, value)
            return done

        return self._shared(node, op, va, t, line)

    def _shared(self, node: _Node, op: str, va: int, t: int, line) -> int:
        cfg, st = self.cfg, self.stats
        hop = cfg.hop_cycles
        req = node.id
        home = self.layout.home(va)
        kind = MsgKind.READ_REQ if op == "L" else MsgKind.WRITE_REQ
        before = self.directory.messages
        plan = self.directory.handle_request(CoherenceMsg(kind, req, home, va))
        st.traffic_bytes += CTRL_BYTES * (self.directory.messages - before)

        # the directory/TCM is one hop away unless the block is homed here and
        # no other node holds it
        local = home == req and plan.supplier is None
        t1 = max(t + (0 if local else hop), self.busy.get(va, 0))
        acks = t
        for victim in plan.invalidate:
            if victim != plan.supplier:
                vnode = self.nodes[victim]
                if vnode.cache.pop(va, None) is not None:
                    self._dit(vnode, "invalidate", va)
                acks = max(acks, t1 + 2 * hop)
        if plan.invalidate:
            st.traffic_bytes += 2 * CTRL_BYTES * len(plan.invalidate)

        if plan.upgrade and line is not None:
            st.wrong_state_hits += 1
            done = max(t1 + hop, acks)
            line[0] = M
            line[1] = self._new_value()
            node.cache.move_to_end(va)
            self._dit(node, "arrival", va, write=True)
            self._modified(node, va, done)
            self.busy[va] = done
            self._record(req, op, va, line[1])
            return done
        if line is not None:
            # store on a Shared copy the directory no longer lists: refetch
            st.wrong_state_hits += 1
            node.cache.pop(va, None)

        supplier = plan.supplier
        value = None
        modified = False
        from_cache = False
        if supplier is not None:
            st.requests_forwarded += 1
            snode = self.nodes[supplier]
            t_fwd = t1 + hop
            sline = snode.cache.get(va)
            if sline is None:
                self.directory.drop_sharer(supplier, va)
                st.requests_redirected += 1
                st.traffic_bytes += CTRL_BYTES
                sender = home
                data_ready = self._port(self.nodes[home], t_fwd + hop)
                value = self.memory.get(va, 0)
            else:
                st.requests_served += 1
                sender = supplier
                from_cache = True
                modified = sline[0] is M
                data_ready = t_fwd
                value = sline[1]
                if op == "L":
                    if modified:
                        self.memory[va] = value
                    sline[0] = S
                    self._dit(snode, "revoke_write", va)
                else:
                    del snode.cache[va]
                    self._dit(snode, "invalidate", va)
        else:
            sender = home
            t_fwd = t1 if local else t1 + hop
            data_ready = self._port(self.nodes[home], t_fwd)
            value = self.memory.get(va, 0)

        remote = sender != req
        stall = 0
        send = data_ready
        if remote:
            st.node_misses += 1
            send, stall = self._secure_transfer(node, self.nodes[sender], va, t1, t_fwd,
                                                data_ready, modified, from_cache)
            st.traffic_bytes += DATA_BYTES
            if from_cache and send == data_ready:
                st.served_immediately += 1
            value = self._transport(value, va)
        t3 = send + (hop if remote else 0)
        done = max(t3 + stall, acks)
        if op == "S" or plan.prior_state in (M, E):
            # ownership changes serialize; extra readers of a Shared block do not
            self.busy[va] = done

        if op == "S":
            value = self._new_value()
            self._insert(node, va, M, value, done)
            self._modified(node, va, done)
        else:
            self._insert(node, va, plan.new_state, value, done)
        self._dit(node, "arrival", va, write=op == "S" or plan.new_state is E)
        self._record(req, op, va, value)
        return done

    def _secure_transfer(self, req: _Node, sender: _Node, va: int, t1: int, t_fwd: int,
                         data_ready: int, modified: bool, from_cache: bool) -> tuple[int, int]:
        cfg, st = self.cfg, self.stats
        hop, kb = cfg.hop_cycles, cfg.kb_cycles
        if cfg.scheme == "sdsm":
            route = tcm_route_miss(self.tcm, PID, sender.id)
            fifo = sender.sender.fifo(PID)
            entry = fifo.take(route.grant_seed)
            ready = entry.ready_at if entry is not None else t_fwd + kb
            fifo.push(KbEntry(route.replacement_seed, t_fwd + kb))
            st.traffic_bytes += HEADER_BYTES + SEED_BYTES + 2 * SEED_BYTES + MAC_BYTES
            send = max(data_ready, ready)
            if send > data_ready:
                st.evict_kb_waits += 1
                self.evict_delay += send - data_ready
            pad_ready = t1 + hop + kb
            stall = max(0, pad_ready - (send + hop))
            if stall:
                st.fetch_kb_waits += 1
                self.fetch_delay += stall
            self._seed = route.grant_seed
            return send, stall
        if cfg.scheme == "baseline16":
            cost = baseline16_serve(sender.b16, va, modified, from_cache, t_fwd, hop, kb,
                                    cfg.mem_cycles)
            send = max(data_ready, cost.send_at)
            if cost.port_cycles:
                send = max(data_ready, self._port(sender, t_fwd))
            st.traffic_bytes += SEED_BYTES + MAC_BYTES
            if cost.evict_delay:
                st.evict_kb_waits += 1
                self.evict_delay += cost.evict_delay
            arrival = send + hop
            pad_ready = arrival + kb if cost.requestor_ready < 0 else cost.requestor_ready
            stall = max(0, pad_ready - arrival)
            if stall:
                st.fetch_kb_waits += 1
                self.fetch_delay += stall
            self._seed = self.store_counter + 1
            return send, stall
        return data_ready, 0

    def _transport(self, value: int, va: int) -> int:
        if self.prf is None or self.cfg.scheme == "none":
            return value
        seed = self._seed
        sealed = seal_block(self.prf, seed, va, value.to_bytes(BLOCK_SIZE, "little"))
        if self.cfg.adversary == "flip-data":
            flipped = bytearray(sealed.cipher)
            flipped[0] ^= 1
            sealed = dataclasses.replace(sealed, cipher=bytes(flipped))
        elif self.cfg.adversary == "replay-seed":
            sealed = dataclasses.replace(sealed, seed=max(0, seed - 1))
        clear = open_block(self.prf, sealed, seed)
        return int.from_bytes(clear, "little")

    def _record(self, nid: int, op: str, va: int, value: int):
        if self.log is not None:
            self.log.append((nid, op, va, value))

    # -- driver ----------------------------------------------------------

    def run(self) -> StatsReport:
        cfg, st = self.cfg, self.stats
        heap = []
        seq = 0
        for n in self.nodes:
            if n.trace:
                heap.append((0, n.id, seq))
                seq += 1
        heapq.heapify(heap)
        clock = 0
        try:
            while heap:
                t, nid, _ = heapq.heappop(heap)
                assert t >= clock, "event processed in the past"
                clock = t
                n = self.nodes[nid]
                trace = n.trace
                pc = n.pc
                alus = 0
                while pc < len(trace) and trace[pc][0] == "A":
                    pc += 1
                    alus += 1
                if alus:
                    n.counts["A"] += alus
                    n.pc = pc
                    t += alus * cfg.alu_cycles
                    n.time = t
                    if pc < len(trace):
                        heapq.heappush(heap, (t, nid, seq))
                        seq += 1
                    continue
                op, va = trace[pc]
                n.counts[op] += 1
                n.pc = pc + 1
                t = self._access(n, op, va, t)
                n.time = t
                if n.pc < len(trace):
                    heapq.heappush(heap, (t, nid, seq))
                    seq += 1
        except IntegrityError:
            st.tamper_detections += 1
            st.halts[HaltReason.INTEGRITY_ERROR.value] = st.halts.get(
                HaltReason.INTEGRITY_ERROR.value, 0) + 1
            st.completed = False
        return self._finish()

    def _finish(self) -> StatsReport:
        st = self.stats
        active = [n for n in self.nodes if n.trace]
        st.total_cycles = max((n.time for n in self.nodes), default=0)
        st.instructions = sum(sum(n.counts.values()) for n in self.nodes)
        if active:
            k = len(active)
            st.per_core_instr_avg = st.instructions / k
            st.alu_instr_avg = sum(n.counts["A"] for n in active) / k
            st.load_instr_avg = sum(n.counts["L"] for n in active) / k
            st.store_instr_avg = sum(n.counts["S"] for n in active) / k
        st.node_miss_rate = st.node_misses / st.memory_ops if st.memory_ops else 0.0
        st.avg_evict_kb_delay = self.evict_delay / st.evict_kb_waits if st.evict_kb_waits else 0.0
        st.avg_fetch_kb_delay = self.fetch_delay / st.fetch_kb_waits if st.fetch_kb_waits else 0.0
        st.directory_messages = self.directory.messages
        return st


def run(config: SimConfig, workload: Workload) -> StatsReport:
    return Simulator(config, workload).run()


def run_with_log(config: SimConfig, workload: Workload) -> tuple[StatsReport, list[tuple]]:
    sim = Simulator(config.replace(check_values=True), workload)
    report = sim.run()
    return report, sim.log


def overhead(report_scheme: StatsReport, report_none: StatsReport) -> float:
    """Slowdown of ``report_scheme`` relative to the unprotected run, in percent."""
    if report_none.total_cycles == 0:
        raise ZeroDivisionError("baseline run has zero cycles")
    return (report_scheme.total_cycles / report_none.total_cycles - 1.0) * 100.0


def reference_values(log: list[tuple]) -> list[str]:
    """Replay an access log against one flat address space. Returns the mismatches."""
    mem: dict[int, int] = {}
    bad = []
    for i, (nid, op, va, value) in enumerate(log):
        if op == "S":
            mem[va] = value
        elif mem.get(va, 0) != value:
            bad.append(f"#{i} node {nid} L {va:#x}: got {value}, expected {mem.get(va, 0)}")
    return bad
