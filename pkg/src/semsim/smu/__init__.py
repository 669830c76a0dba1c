from semsim.smu.isa import ToyInstr, ToyProgram, parse_program
from semsim.smu.machine import Event, Machine, run_program
from semsim.smu.state import (
    ARG_REGS,
    REGISTERS,
    CacheLineMeta,
    Mode,
    OpKind,
    SealedContext,
    SecureChannel,
    SmuState,
    SmuTableEntry,
    ThreadSecretContext,
    ThreadState,
    secure_access,
    tamper_flip_bit,
)

__all__ = [
    "ARG_REGS", "REGISTERS", "CacheLineMeta", "Event", "Machine", "Mode", "OpKind",
    "SealedContext", "SecureChannel", "SmuState", "SmuTableEntry", "ThreadSecretContext",
    "ThreadState", "ToyInstr", "ToyProgram", "parse_program", "run_program",
    "secure_access", "tamper_flip_bit",
]
