"""Per-node SMU state: table entries, sealed storage, Secure Access and the
special-instruction semantics.

The interpreter in :mod:`semsim.smu.machine` drives these methods; tests call
them directly too.
"""

from __future__ import annotations

import enum
import hashlib
import json
import random
import struct
from dataclasses import dataclass, field

from semsim.crypto import BLOCK_SIZE, BonsaiTree, Prf, SecureMemory, xor_bytes
from semsim.errors import (
    Halt,
    HaltReason,
    IntegrityError,
    SealedStorageFull,
    SmuError,
    TableFull,
)

ARG_REGS = tuple(f"ARG{i}" for i in range(6))
GP_REGS = tuple(f"GP{i}" for i in range(8))
REGISTERS = ARG_REGS + ("RETADDR", "RETVAL") + GP_REGS
MASK64 = (1 << 64) - 1

# toy ISA: NewThread and the following SMU syscall are one slot each
NEW_THREAD_LEP_OFFSET = 2
CONTEXT_BASE_VA = 0x1F00_0000  # inside the default 4-level tree capacity


class Mode(str, enum.Enum):
    TRUSTED = "Trusted"
    UNTRUSTED = "Untrusted"


def zero_registers() -> dict[str, int]:
    return dict.fromkeys(REGISTERS, 0)


@dataclass
class SmuTableEntry:
    pid: int | None
    prf: Prf
    process_hash: str
    first_lep: int
    sig_lep: int | None
    root_hash: int = 0
    error_status: int = 0

    def to_wire(self, with_root: bool = True) -> bytes:
        body = {
            "pid": self.pid,
            "key": self.prf.key.hex(),
            "process_hash": self.process_hash,
            "first_lep": self.first_lep,
            "sig_lep": self.sig_lep,
            "error_status": self.error_status,
        }
        if with_root:
            body["root_hash"] = self.root_hash
        return json.dumps(body, sort_keys=True).encode()

    @classmethod
    def from_wire(cls, raw: bytes) -> "SmuTableEntry":
        body = json.loads(raw)
        return cls(
            pid=body["pid"],
            prf=Prf(bytes.fromhex(body["key"])),
            process_hash=body["process_hash"],
            first_lep=body["first_lep"],
            sig_lep=body["sig_lep"],
            root_hash=body.get("root_hash", 0),
            error_status=body["error_status"],
        )


@dataclass
class SealedContext:
    """The SSS: hidden register snapshot, legal entry point and owner pid."""

    registers: dict[str, int]
    lep: int
    pid: int | None
    valid: bool = False
    syscall_pending: int | None = None
    # how the last exit happened: None, "syscall" or "nosec"; both skip RETVAL on return
    exit_kind: str | None = None
    first_entry: bool = False

    def copy(self) -> "SealedContext":
        return SealedContext(dict(self.registers), self.lep, self.pid, self.valid,
                             self.syscall_pending, self.exit_kind, self.first_entry)

    def to_bytes(self) -> bytes:
        body = [self.registers, self.lep, self.pid, self.valid, self.syscall_pending,
                self.exit_kind, self.first_entry]
        return json.dumps(body, sort_keys=True).encode()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SealedContext":
        regs, lep, pid, valid, pending, kind, first = json.loads(raw)
        return cls(regs, lep, pid, valid, pending, kind, first)


@dataclass
class ThreadSecretContext:
    scid: int
    registers: dict[str, int]
    lep: int
    parent_tid: int
    pid: int
    tid: int | None = None
    active: bool = False

    def to_bytes(self) -> bytes:
        return json.dumps([self.scid, self.registers, self.lep, self.parent_tid, self.pid],
                          sort_keys=True).encode()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ThreadSecretContext":
        scid, regs, lep, parent, pid = json.loads(raw)
        return cls(scid, regs, lep, parent, pid)


@dataclass
class CacheLineMeta:
    va: int
    owner_pid: int | None = None
    auth: bool = False
    dirty: bool = False
    value: int = 0


class OpKind(str, enum.Enum):
    LOAD = "load"
    STORE = "store"
    NA_LOAD = "na_load"
    NA_STORE = "na_store"
    INIT_A = "init_a"


def secure_access(line: CacheLineMeta, instr_auth: bool, cur_pid: int | None,
                  op_kind: OpKind | str) -> bool:
    """Cache gating. Returns True or raises Halt(SecureAccessViolation)."""
    op = OpKind(op_kind)
    if op in (OpKind.LOAD, OpKind.STORE):
        if line.auth:
            if instr_auth and line.owner_pid == cur_pid:
                return True
            raise Halt(HaltReason.SECURE_ACCESS_VIOLATION,
                       f"{op.value} of authentic line {line.va:#x}")
        if instr_auth:
            # trusted code must use the NA instructions for non-authentic data
            raise Halt(HaltReason.SECURE_ACCESS_VIOLATION,
                       f"trusted {op.value} of non-authentic line {line.va:#x}")
        return True
    if not instr_auth:
        raise Halt(HaltReason.SECURE_ACCESS_VIOLATION, f"untrusted {op.value}")
    if op is OpKind.NA_STORE:
        line.auth = False
        line.owner_pid = cur_pid
        return True
    if op is OpKind.NA_LOAD:
        if line.auth:
            raise Halt(HaltReason.SECURE_ACCESS_VIOLATION,
                       f"na_load of authentic line {line.va:#x}")
        return True
    # INIT_A
    line.value = 0
    line.auth = True
    line.owner_pid = cur_pid
    line.dirty = True
    return True


@dataclass
class ThreadState:
    """Architectural state of one hardware thread as seen by the SMU."""

    tid: int
    pid: int
    pc: int = 0
    mode: Mode = Mode.UNTRUSTED
    registers: dict[str, int] = field(default_factory=zero_registers)
    secure_stack: list[int] = field(default_factory=list)
    nonsecure_stack: list[int] = field(default_factory=list)
    signal_stack: list[int] | None = None
    pending: tuple[str, int] | None = None  # ("syscall", argnum) | ("nosec", i)
    in_signal: bool = False
    stashed_sss: SealedContext | None = None
    halted: HaltReason | None = None
    done: bool = False

    @property
    def active_stack(self) -> list[int]:
        if self.mode is Mode.UNTRUSTED:
            return self.nonsecure_stack
        if self.in_signal and self.signal_stack is not None:
            return self.signal_stack
        return self.secure_stack


class SecureChannel:
    """Untrusted medium between two SMUs; ``tamper`` models an in-transit attacker."""

    def __init__(self, tamper=None):
        self.tamper = tamper
        self.sent: list[bytes] = []

    def transmit(self, message: bytes) -> bytes:
        self.sent.append(message)
        return self.tamper(message) if self.tamper else message


_VENDOR_KEY = hashlib.sha256(b"semsim-vendor-root").digest()


def _session_keys(src_id: str, dst_id: str, nonce: int) -> tuple[bytes, bytes]:
    base = hashlib.blake2b(f"{src_id}->{dst_id}#{nonce}".encode(), key=_VENDOR_KEY).digest()
    return base[:32], base[32:]


def _enc_and_sign(payload: bytes, enc_key: bytes, sig_key: bytes) -> bytes:
    stream = b""
    counter = 0
    while len(stream) < len(payload):
        stream += hashlib.blake2b(struct.pack("<Q", counter), key=enc_key).digest()
        counter += 1
    cipher = xor_bytes(payload, stream[:len(payload)]) if payload else b""
    sig = hashlib.blake2b(cipher, key=sig_key, digest_size=16).digest()
    return struct.pack("<I", len(cipher)) + cipher + sig


def _verify_and_dec(message: bytes, enc_key: bytes, sig_key: bytes) -> bytes:
    try:
        (n,) = struct.unpack_from("<I", message)
        cipher, sig = message[4:4 + n], message[4 + n:]
    except struct.error as exc:
        raise Halt(HaltReason.MIGRATION_TAMPER, "malformed migration message") from exc
    if len(cipher) != n or hashlib.blake2b(cipher, key=sig_key, digest_size=16).digest() != sig:
        raise Halt(HaltReason.MIGRATION_TAMPER, "signature validation failed")
    stream = b""
    counter = 0
    while len(stream) < n:
        stream += hashlib.blake2b(struct.pack("<Q", counter), key=enc_key).digest()
        counter += 1
    return xor_bytes(cipher, stream[:n]) if n else b""


class SmuState:
    """One node's Security Management Unit."""

    def __init__(self, node_id: str = "smu0", table_size: int = 100,
                 sealed_storage_size: int = 10, rng_seed: int = 0):
        self.node_id = node_id
        self.table_size = table_size
        self.sealed_storage_size = sealed_storage_size
        self.table: dict[int, SmuTableEntry] = {}
        self._next_entry = 0
        self.tscs: dict[int, ThreadSecretContext] = {}
        self._next_scid = 1
        self.known_tids: set[int] = set()
        self.lines: dict[int, CacheLineMeta] = {}
        self.sss = SealedContext(zero_registers(), 0, None, valid=False)
        self.secure_memory: dict[int, SecureMemory] = {}
        self.rng = random.Random(rng_seed)
        self._migration_nonce = 0

    # -- table management -------------------------------------------------

    def install_entry(self, keys: Prf | bytes, process_hash: str, first_lep: int,
                      sig_lep: int | None = None) -> int:
        if len(self.table) >= self.table_size:
            raise TableFull(f"SMU table holds {self.table_size} entries")
        prf = keys if isinstance(keys, Prf) else Prf(keys)
        entry_id = self._next_entry
        self._next_entry += 1
        self.table[entry_id] = SmuTableEntry(None, prf, process_hash, first_lep, sig_lep)
        return entry_id

    def entry_for_pid(self, pid: int | None) -> SmuTableEntry | None:
        if pid is None:
            return None
        for entry in self.table.values():
            if entry.pid == pid:
                return entry
        return None

    def _entry_id_for_phash(self, phash: str) -> int | None:
        for eid, entry in self.table.items():
            if entry.process_hash == phash:
                return eid
        return None

    def set_pid(self, phash: str, pid: int) -> int:
        eid = self._entry_id_for_phash(phash)
        if eid is None:
            raise SmuError(f"no table entry for process hash {phash!r}")
        for other_id, other in list(self.table.items()):
            if other_id != eid and other.pid == pid:
                del self.table[other_id]
                self.purge_pid(pid)
        entry = self.table[eid]
        entry.pid = pid
        self.secure_memory[pid] = SecureMemory(entry.prf)
        entry.root_hash = self.secure_memory[pid].bmt.root
        return eid

    def purge_pid(self, pid: int):
        for va in [va for va, ln in self.lines.items() if ln.auth and ln.owner_pid == pid]:
            del self.lines[va]

    def get_results(self, pid: int) -> bytes:
        entry = self.entry_for_pid(pid)
        if entry is None:
            raise SmuError(f"no entry for pid {pid}")
        rand = self.rng.getrandbits(64)
        clear = struct.pack("<qQ", entry.error_status, rand).ljust(BLOCK_SIZE, b"\0")
        sealed = SecureMemory(entry.prf).store(0, clear, seed=1)
        return sealed.cipher + struct.pack("<H", sealed.mac)

    def initial_context(self, pid: int) -> SealedContext:
        """Empty secret context carrying the first LEP, created at launch."""
        entry = self.entry_for_pid(pid)
        if entry is None:
            raise SmuError(f"no entry for pid {pid}")
        return SealedContext(zero_registers(), entry.first_lep, pid, valid=True, first_entry=True)

    # -- mode switching -----------------------------------------------------

    def switch_to_untrusted(self, t: ThreadState, next_lep: int):
        if t.mode is not Mode.TRUSTED:
            raise SmuError("switch_to_untrusted requires Trusted mode")
        if t.in_signal:
            # leaving the signal handler: wipe and hand back the interrupted context
            t.registers = zero_registers()
            self.sss = t.stashed_sss if t.stashed_sss is not None else SealedContext(
                zero_registers(), 0, t.pid, valid=False)
            t.stashed_sss = None
            t.in_signal = False
            t.signal_stack = None
            t.mode = Mode.UNTRUSTED
            return
        kind, count = t.pending if t.pending else (None, 0)
        self.sss = SealedContext(dict(t.registers), next_lep, t.pid, valid=True,
                                 syscall_pending=count if kind == "syscall" else None,
                                 exit_kind=kind)
        keep: set[str] = set(ARG_REGS[:count])
        if kind == "syscall":
            keep.add("RETADDR")
        t.registers = {r: (v if r in keep else 0) for r, v in t.registers.items()}
        t.pending = None
        t.mode = Mode.UNTRUSTED

    def switch_to_trusted(self, t: ThreadState, inst_addr: int, via_call: bool = False) -> str:
        """Returns the entry kind ("first", "signal", "resume") or raises Halt."""
        if t.mode is not Mode.UNTRUSTED:
            raise SmuError("switch_to_trusted requires Untrusted mode")
        entry = self.entry_for_pid(t.pid)
        sss = self.sss
        if entry is not None and entry.sig_lep is not None and inst_addr == entry.sig_lep:
            t.stashed_sss = sss.copy()
            sss.valid = False
            t.in_signal = True
            t.signal_stack = []
            t.mode = Mode.TRUSTED
            return "signal"
        ok = sss.valid and inst_addr == sss.lep and sss.pid == t.pid and entry is not None
        sss.valid = False
        if not ok:
            raise Halt(HaltReason.ILLEGAL_ENTRY, f"entry at {inst_addr:#x}")
        t.mode = Mode.TRUSTED
        if sss.first_entry:
            if via_call and t.nonsecure_stack:
                t.secure_stack.append(t.nonsecure_stack.pop())
            return "first"
        restored = dict(sss.registers)
        if sss.exit_kind in ("syscall", "nosec"):
            restored["RETVAL"] = t.registers["RETVAL"]
        t.registers = restored
        return "resume"

    # -- special instructions ------------------------------------------------

    def mark_syscall(self, t: ThreadState, argnum: int):
        if t.mode is not Mode.TRUSTED:
            raise Halt(HaltReason.SECURE_ACCESS_VIOLATION, "SMU_syscall from untrusted code")
        if not 0 <= argnum <= 6:
            raise SmuError(f"argnum {argnum} outside 0..6")
        t.pending = ("syscall", argnum)

    def call_nosec(self, t: ThreadState, i: int, return_addr: int):
        if t.mode is not Mode.TRUSTED:
            raise Halt(HaltReason.SECURE_ACCESS_VIOLATION, "SMU_CallNoSec from untrusted code")
        if not 1 <= i <= 6:
            raise SmuError(f"CallNoSec register count {i} outside 1..6")
        t.nonsecure_stack.append(return_addr)
        t.pending = ("nosec", i)

    def na_stack_op(self, t: ThreadState, kind: str, value: int | None = None) -> int | None:
        if t.mode is not Mode.TRUSTED:
            raise Halt(HaltReason.SECURE_ACCESS_VIOLATION, f"{kind}_na from untrusted code")
        if kind == "push":
            t.nonsecure_stack.append(value if value is not None else 0)
            return None
        if kind == "pop":
            if not t.nonsecure_stack:
                raise SmuError("pop from empty non-secure stack")
            return t.nonsecure_stack.pop()
        raise ValueError(kind)

    def line(self, va: int) -> CacheLineMeta:
        va &= ~(BLOCK_SIZE - 1)
        ln = self.lines.get(va)
        if ln is None:
            ln = self.lines[va] = CacheLineMeta(va)
        return ln

    def init_a(self, t: ThreadState, addr: int, size: int):
        if t.mode is not Mode.TRUSTED:
            raise Halt(HaltReason.SECURE_ACCESS_VIOLATION, "InitA from untrusted code")
        start = addr & ~(BLOCK_SIZE - 1)
        for va in range(start, addr + max(size, 1), BLOCK_SIZE):
            secure_access(self.line(va), True, t.pid, OpKind.INIT_A)

    # -- threads ---------------------------------------------------------------

    def thread_create(self, t: ThreadState) -> int:
        if t.mode is not Mode.TRUSTED:
            raise Halt(HaltReason.SECURE_ACCESS_VIOLATION, "NewThread from untrusted code")
        if len(self.tscs) >= self.sealed_storage_size:
            raise SealedStorageFull(f"{self.sealed_storage_size} TSCs in sealed storage")
        scid = self._next_scid
        self._next_scid += 1
        regs = dict(t.registers)
        regs["RETVAL"] = 0
        self.tscs[scid] = ThreadSecretContext(scid, regs, t.pc + NEW_THREAD_LEP_OFFSET,
                                              t.tid, t.pid)
        return scid

    def thread_attach(self, tid: int, addr: int) -> int:
        for scid in sorted(self.tscs):
            tsc = self.tscs[scid]
            if not tsc.active and tsc.lep == addr:
                tsc.tid = tid
                tsc.active = True
                self.known_tids.add(tid)
                return scid
        raise Halt(HaltReason.BAD_ATTACH, f"no inactive TSC at {addr:#x}")

    def thread_discard(self, *, scid: int | None = None, tid: int | None = None,
                       caller_trusted: bool = False):
        if (scid is None) == (tid is None):
            raise ValueError("discard by exactly one of scid / tid")
        if scid is not None:
            if not caller_trusted:
                raise Halt(HaltReason.SECURE_ACCESS_VIOLATION,
                           "NewThreadDelete(SCID) requires trusted code")
            tsc = self.tscs.get(scid)
            if tsc is None or tsc.active:
                raise Halt(HaltReason.BAD_ATTACH, f"no inactive TSC with scid {scid}")
            del self.tscs[scid]
            return
        for key in [k for k, v in self.tscs.items() if v.tid == tid]:
            del self.tscs[key]

    def register_thread(self, tid: int, pid: int):
        """The main thread's context, created with the table entry at launch."""
        scid = self._next_scid
        self._next_scid += 1
        self.tscs[scid] = ThreadSecretContext(scid, zero_registers(), -1, 0, pid, tid, True)
        self.known_tids.add(tid)

    def schedule(self, tid: int) -> ThreadSecretContext | None:
        """Look up the active TSC for ``tid``; a known tid with no TSC halts."""
        for tsc in self.tscs.values():
            if tsc.active and tsc.tid == tid:
                return tsc
        if tid in self.known_tids:
            raise Halt(HaltReason.MISSING_TSC, f"thread {tid} has no TSC")
        return None

    # -- context switch ------------------------------------------------------

    def _context_va(self, tid: int, part: int) -> int:
        return CONTEXT_BASE_VA + (tid * 8 + part) * BLOCK_SIZE

    def context_evict(self, tid: int = 0) -> bool:
        """Seal the SSS into its process's memory; no-op for non-secure pids."""
        pid = self.sss.pid
        mem = self.secure_memory.get(pid) if pid is not None else None
        if mem is None:
            return False
        raw = self.sss.to_bytes()
        raw = struct.pack("<I", len(raw)) + raw
        raw = raw.ljust(-(-len(raw) // BLOCK_SIZE) * BLOCK_SIZE, b"\0")
        for part in range(len(raw) // BLOCK_SIZE):
            mem.store(self._context_va(tid, part), raw[part * BLOCK_SIZE:(part + 1) * BLOCK_SIZE])
        self.table_entry_root(pid)
        self.sss = SealedContext(zero_registers(), 0, None, valid=False)
        return True

    def context_restore(self, pid: int, tid: int = 0) -> bool:
        mem = self.secure_memory.get(pid)
        if mem is None:
            return False
        first = mem.load(self._context_va(tid, 0))
        (n,) = struct.unpack_from("<I", first)
        raw = first
        part = 1
        while len(raw) < n + 4:
            raw += mem.load(self._context_va(tid, part))
            part += 1
        self.sss = SealedContext.from_bytes(raw[4:4 + n])
        return True

    def table_entry_root(self, pid: int):
        entry = self.entry_for_pid(pid)
        if entry is not None and pid in self.secure_memory:
            entry.root_hash = self.secure_memory[pid].bmt.root

    # -- migration -----------------------------------------------------------

    def _open_channel(self, dst: "SmuState") -> tuple[bytes, bytes]:
        self._migration_nonce += 1
        return _session_keys(self.node_id, dst.node_id, self._migration_nonce)

    def migrate_entry(self, process_hash: str, dst: "SmuState", channel: SecureChannel) -> int:
        eid = self._entry_id_for_phash(process_hash)
        if eid is None:
            raise SmuError(f"no entry for process hash {process_hash!r}")
        enc_key, sig_key = self._open_channel(dst)
        message = channel.transmit(_enc_and_sign(self.table[eid].to_wire(), enc_key, sig_key))
        new_id = dst.receive_entry(message, enc_key, sig_key)
        del self.table[eid]
        return new_id

    def receive_entry(self, message: bytes, enc_key: bytes, sig_key: bytes,
                      fresh_root: bool = False) -> int:
        entry = SmuTableEntry.from_wire(_verify_and_dec(message, enc_key, sig_key))
        existing = self.entry_for_pid(entry.pid)
        if existing is not None and existing.prf.key == entry.prf.key:
            return next(k for k, v in self.table.items() if v is existing)
        if len(self.table) >= self.table_size:
            raise TableFull(f"SMU table holds {self.table_size} entries")
        eid = self._next_entry
        self._next_entry += 1
        self.table[eid] = entry
        if fresh_root and entry.pid is not None:
            self.secure_memory[entry.pid] = SecureMemory(entry.prf)
            entry.root_hash = BonsaiTree(entry.prf).root
        return eid

    def migrate_thread(self, pid: int, dst: "SmuState", channel: SecureChannel,
                       tid: int | None = None, addr: int | None = None) -> int:
        """Ship the entry without its root hash; an inactive TSC travels with it."""
        entry = self.entry_for_pid(pid)
        if entry is None:
            raise SmuError(f"no entry for pid {pid}")
        enc_key, sig_key = self._open_channel(dst)
        message = channel.transmit(_enc_and_sign(entry.to_wire(with_root=False), enc_key, sig_key))
        eid = dst.receive_entry(message, enc_key, sig_key, fresh_root=True)
        if tid is None:
            if addr is None:
                raise ValueError("inactive thread migration needs the TSC address")
            scid = next((k for k, v in sorted(self.tscs.items())
                         if not v.active and v.lep == addr and v.pid == pid), None)
            if scid is None:
                raise Halt(HaltReason.BAD_ATTACH, f"no inactive TSC at {addr:#x}")
            raw = channel.transmit(_enc_and_sign(self.tscs[scid].to_bytes(), enc_key, sig_key))
            dst.receive_tsc(raw, enc_key, sig_key)
            del self.tscs[scid]
        return eid

    def receive_tsc(self, message: bytes, enc_key: bytes, sig_key: bytes) -> int:
        if len(self.tscs) >= self.sealed_storage_size:
            raise SealedStorageFull(f"{self.sealed_storage_size} TSCs in sealed storage")
        tsc = ThreadSecretContext.from_bytes(_verify_and_dec(message, enc_key, sig_key))
        tsc.scid = self._next_scid
        self._next_scid += 1
        self.tscs[tsc.scid] = tsc
        return tsc.scid


def tamper_flip_bit(bit: int):
    """Channel tamper hook flipping one bit of every message."""

    def flip(message: bytes) -> bytes:
        b = bytearray(message)
        b[(bit // 8) % len(b)] ^= 1 << (bit % 8)
        return bytes(b)

    return flip


__all__ = [
    "ARG_REGS", "GP_REGS", "REGISTERS", "Mode", "SmuTableEntry", "SealedContext",
    "ThreadSecretContext", "CacheLineMeta", "OpKind", "secure_access", "ThreadState",
    "SecureChannel", "SmuState", "tamper_flip_bit", "IntegrityError",
]
