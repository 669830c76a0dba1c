"""Step interpreter binding the SMU to instruction fetch.

Mode switches happen on fetch: when the next instruction's region differs
from the thread's mode, the SMU switches before the instruction executes.
Threads are scheduled cooperatively (``SMU yield``, ``EXIT``).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from semsim.crypto import Prf
from semsim.errors import Halt, HaltReason, IntegrityError
from semsim.smu.isa import ToyProgram, parse_program
from semsim.smu.state import (
    MASK64,
    Mode,
    OpKind,
    SealedContext,
    SmuState,
    ThreadState,
    secure_access,
    zero_registers,
)


@dataclass(frozen=True)
class Event:
    tid: int
    addr: int
    kind: str
    detail: str = ""

    def __str__(self):
        text = f"t{self.tid} @{self.addr} {self.kind}"
        return f"{text} {self.detail}" if self.detail else text


def _fmt(value: int) -> str:
    return hex(value & MASK64) if value >= 0 else str(value)


class Machine:
    def __init__(self, program: ToyProgram | str, smu: SmuState | None = None, key_seed: int = 1):
        self.program = parse_program(program) if isinstance(program, str) else program
        self.smu = smu if smu is not None else SmuState()
        self.pid = self.program.pid
        self.events: list[Event] = []
        self.threads: dict[int, ThreadState] = {}
        self.contexts: dict[int, SealedContext] = {}
        self.ready: deque[int] = deque()
        self.current: int | None = None
        self.halted: HaltReason | None = None
        self._via_call: dict[int, bool] = {}
        self._last_pc: dict[int, int] = {}
        self.secure = self.program.first_lep is not None
        if self.secure:
            self.smu.install_entry(Prf.from_seed(key_seed), self.program.process_hash,
                                   self.program.first_lep, self.program.sig_lep)
            self.smu.set_pid(self.program.process_hash, self.pid)
        main = self._new_thread(1, self.program.entry)
        if self.secure:
            self.smu.register_thread(main.tid, self.pid)
            self.contexts[main.tid] = self.smu.initial_context(self.pid)

    def _new_thread(self, tid: int, pc: int) -> ThreadState:
        t = ThreadState(tid=tid, pid=self.pid, pc=pc)
        self.threads[tid] = t
        self.ready.append(tid)
        return t

    def emit(self, t: ThreadState, kind: str, detail: str = ""):
        self.events.append(Event(t.tid, t.pc, kind, detail))

    # -- scheduling ----------------------------------------------------------

    def _switch_in(self, tid: int):
        if self.current == tid:
            return
        if self.current is not None:
            self.contexts[self.current] = self.smu.sss
        self.current = tid
        tsc = self.smu.schedule(tid) if self.secure else None
        if tid in self.contexts:
            self.smu.sss = self.contexts.pop(tid)
        elif tsc is not None and tsc.lep >= 0:
            self.smu.sss = SealedContext(dict(tsc.registers), tsc.lep, tsc.pid, valid=True,
                                         exit_kind="syscall")
        else:
            self.smu.sss = SealedContext(zero_registers(), 0, self.pid, valid=False)

    def run(self, max_steps: int = 100_000) -> list[Event]:
        steps = 0
        while self.ready and self.halted is None and steps < max_steps:
            tid = self.ready[0]
            t = self.threads[tid]
            try:
                self._switch_in(tid)
            except Halt as exc:
                self._halt(t, exc.reason)
                break
            while steps < max_steps and self.halted is None:
                steps += 1
                outcome = self.step(t)
                if outcome in ("done", "halt"):
                    if self.ready and self.ready[0] == tid:
                        self.ready.popleft()
                    break
                if outcome == "yield":
                    self.ready.rotate(-1)
                    break
        return self.events

    def trace(self) -> list[str]:
        return [str(e) for e in self.events]

    def _halt(self, t: ThreadState, reason: HaltReason):
        t.halted = reason
        self.halted = reason
        self.emit(t, "halt", reason.value)
        for other in self.threads.values():
            other.halted = other.halted or reason

    # -- one instruction ------------------------------------------------------

    def step(self, t: ThreadState) -> str:
        if t.halted is not None:
            raise RuntimeError("halted thread stepped")
        ins = self.program.at(t.pc)
        if ins is None:
            t.done = True
            self.emit(t, "done")
            return "done"
        try:
            if ins.auth and t.mode is Mode.UNTRUSTED:
                how = self.smu.switch_to_trusted(t, ins.addr, via_call=self._via_call.get(t.tid, False))
                self.emit(t, "enter", how)
            elif not ins.auth and t.mode is Mode.TRUSTED:
                self.smu.switch_to_untrusted(t, self._last_pc.get(t.tid, t.pc) + 1)
                self.emit(t, "exit")
            self._via_call[t.tid] = False
            self._last_pc[t.tid] = t.pc
            return self._execute(t, ins)
        except Halt as exc:
            self._halt(t, exc.reason)
            return "halt"
        except IntegrityError:
            self._halt(t, HaltReason.INTEGRITY_ERROR)
            return "halt"

    def _val(self, t: ThreadState, operand) -> int:
        return t.registers[operand] if isinstance(operand, str) else operand

    def _execute(self, t: ThreadState, ins) -> str:
        op, a = ins.op, ins.args
        nxt = t.pc + 1
        if op == "ALU":
            if a:
                t.registers[a[0]] = a[1] if len(a) > 1 else 0
        elif op == "MOV":
            t.registers[a[0]] = self._val(t, a[1])
        elif op in ("LD", "ST"):
            reg = a[1] if len(a) > 1 else "GP0"
            line = self.smu.line(a[0])
            secure_access(line, ins.auth, t.pid, OpKind.LOAD if op == "LD" else OpKind.STORE)
            if op == "LD":
                t.registers[reg] = line.value
            else:
                line.value = t.registers[reg]
                line.dirty = True
            self.emit(t, op.lower(), f"{a[0]:#x}={_fmt(line.value)}")
        elif op == "CALL":
            t.active_stack.append(nxt)
            self._via_call[t.tid] = True
            nxt = a[0]
        elif op == "RET":
            stack = t.active_stack
            if not stack:
                t.done = True
                self.emit(t, "done")
                return "done"
            nxt = stack.pop()
        elif op == "JMP":
            nxt = a[0]
        elif op == "BR":
            cond, reg, target = a
            v = t.registers[reg]
            taken = {"z": v == 0, "nz": v != 0, "pos": v > 0, "neg": v < 0}[cond]
            if taken:
                nxt = target
        elif op == "SYSRET":
            nxt = t.registers["RETADDR"]
        elif op == "PUSH":
            t.active_stack.append(self._val(t, a[0]))
        elif op == "POP":
            t.registers[a[0]] = t.active_stack.pop() if t.active_stack else 0
        elif op == "EXIT":
            t.done = True
            self.emit(t, "done")
            return "done"
        elif op == "PROBE":
            if a[0] == "TSCS":
                inactive = sum(1 for c in self.smu.tscs.values() if not c.active)
                self.emit(t, "probe", f"inactive_tscs={inactive}")
            else:
                self.emit(t, "probe", f"{a[0]}={_fmt(t.registers[a[0]])}")
        elif op == "SMU":
            result = self._smu_op(t, ins, nxt)
            if result in ("yield",):
                t.pc = nxt
                return result
            if isinstance(result, int):
                nxt = result
        t.pc = nxt
        return "ok"

    def _smu_op(self, t: ThreadState, ins, nxt: int):
        sub, *a = ins.args
        smu = self.smu
        if not ins.auth and sub in ("syscall", "callnosec", "pushna", "popna", "storena",
                                    "loadna", "inita", "newthread"):
            raise Halt(HaltReason.SECURE_ACCESS_VIOLATION, f"untrusted SMU {sub}")
        if sub == "syscall":
            smu.mark_syscall(t, a[0])
            t.registers["RETADDR"] = nxt
            self.emit(t, "smu", f"syscall {a[0]}")
            return a[1]
        if sub == "callnosec":
            smu.call_nosec(t, a[0], nxt)
            self.emit(t, "smu", f"callnosec {a[0]}")
            return a[1]
        if sub == "pushna":
            smu.na_stack_op(t, "push", self._val(t, a[0]))
        elif sub == "popna":
            t.registers[a[0]] = smu.na_stack_op(t, "pop")
        elif sub in ("storena", "loadna"):
            reg = a[1] if len(a) > 1 else "GP0"
            line = smu.line(a[0])
            secure_access(line, True, t.pid, OpKind.NA_STORE if sub == "storena" else OpKind.NA_LOAD)
            if sub == "storena":
                line.value = t.registers[reg]
                line.dirty = True
            else:
                t.registers[reg] = line.value
            self.emit(t, sub, f"{a[0]:#x}={_fmt(line.value)}")
        elif sub == "inita":
            va, size = self._val(t, a[0]), self._val(t, a[1])
            smu.init_a(t, va, size)
            self.emit(t, "smu", f"inita {va:#x} {size}")
        elif sub == "newthread":
            scid = smu.thread_create(t)
            t.registers[a[0] if a else "RETVAL"] = scid
            self.emit(t, "smu", f"newthread scid={scid} lep={smu.tscs[scid].lep}")
        elif sub == "newthreaddelete":
            reg = a[0] if a else "GP0"
            scid = t.registers[reg]
            smu.thread_discard(scid=scid, caller_trusted=ins.auth)
            self.emit(t, "smu", f"newthreaddelete scid={scid}")
        elif sub == "attach":
            tid, addr = a
            scid = smu.thread_attach(tid, addr)
            self.emit(t, "smu", f"attach tid={tid} scid={scid}")
            self._new_thread(tid, addr)
        elif sub == "threaddelete":
            smu.thread_discard(tid=a[0])
            self.emit(t, "smu", f"threaddelete tid={a[0]}")
        elif sub == "spawn":
            tid, addr = a
            self.emit(t, "smu", f"spawn tid={tid}")
            if tid in self.threads and not self.threads[tid].done:
                self.ready.append(tid)
            else:
                self._new_thread(tid, addr)
        elif sub == "yield":
            return "yield"
        elif sub == "evict":
            smu.context_evict(t.tid)
            self.emit(t, "smu", "evict")
        elif sub == "restore":
            smu.context_restore(t.pid, t.tid)
            self.emit(t, "smu", "restore")
        return None


def run_program(text: str, smu: SmuState | None = None, max_steps: int = 100_000) -> list[str]:
    m = Machine(text, smu)
    m.run(max_steps)
    return m.trace()
