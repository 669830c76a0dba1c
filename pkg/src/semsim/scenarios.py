"""Canned toy programs exercising the SMU, each with its expected event trace.

The expected traces were worked out by hand from the SMU rules, not captured
from the interpreter.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ScenarioProgram:
    name: str
    text: str
    golden: tuple[str, ...]


SYSCALL_ROUNDTRIP = """\
.pid 7
.first_lep main
.untrusted
start:  CALL main
        EXIT
write:  PROBE ARG0
        PROBE ARG2
        PROBE ARG3
        PROBE GP1
        PROBE RETADDR
        ALU RETVAL 0x40
        SYSRET
evil:   PROBE ARG0
        PROBE RETADDR
        JMP skip            ; one past the legal entry point
.trusted
main:   ALU ARG0 0xa
        ALU ARG1 0xb
        ALU ARG2 0xc
        ALU ARG3 0xd
        ALU GP1 0x5ec
        SMU syscall 3 write
back:   PROBE RETVAL
        PROBE ARG3
        PROBE GP1
        SMU syscall 0 evil
        RET
skip:   RET
"""

SYSCALL_ROUNDTRIP_GOLDEN = (
    "t1 @12 enter first",
    "t1 @17 smu syscall 3",
    "t1 @2 exit",
    "t1 @2 probe ARG0=0xa",
    "t1 @3 probe ARG2=0xc",
    "t1 @4 probe ARG3=0x0",
    "t1 @5 probe GP1=0x0",
    "t1 @6 probe RETADDR=0x12",
    "t1 @18 enter resume",
    "t1 @18 probe RETVAL=0x40",
    "t1 @19 probe ARG3=0xd",
    "t1 @20 probe GP1=0x5ec",
    "t1 @21 smu syscall 0",
    "t1 @9 exit",
    "t1 @9 probe ARG0=0x0",
    "t1 @10 probe RETADDR=0x16",
    "t1 @23 halt IllegalEntry",
)

MALLOC_INITA = """\
.pid 7
.first_lep main
.untrusted
start:  CALL main
        EXIT
malloc: ALU RETVAL 0x1000
        SYSRET
peek:   LD 0x1040 GP3       ; untrusted read of an authentic line
        EXIT
.trusted
main:   ALU ARG0 0x80
        SMU syscall 1 malloc
        SMU inita RETVAL ARG0
        ALU GP0 0x77
        ST 0x1040
        LD 0x1040 GP4
        PROBE GP4
        JMP peek
"""

MALLOC_INITA_GOLDEN = (
    "t1 @6 enter first",
    "t1 @7 smu syscall 1",
    "t1 @2 exit",
    "t1 @8 enter resume",
    "t1 @8 smu inita 0x1000 128",
    "t1 @10 st 0x1040=0x77",
    "t1 @11 ld 0x1040=0x77",
    "t1 @12 probe GP4=0x77",
    "t1 @4 exit",
    "t1 @4 halt SecureAccessViolation",
)

_CLONE_TEMPLATE = """\
.pid 7
.first_lep main
.untrusted
start:  CALL main
        EXIT
clone:  {h0}
        {h1}
        SYSRET
late:   SMU attach 2 after
        EXIT
.trusted
main:   ALU GP1 0x1111
        SMU newthread GP0
        SMU syscall 2 clone
after:  BR neg RETVAL fail
        BR z RETVAL child
        PROBE RETVAL
        SMU yield
        PROBE TSCS
        RET
child:  PROBE GP1
        PROBE GP0
        EXIT
fail:   SMU newthreaddelete GP0
        PROBE TSCS
        RET
"""

_CLONE_PREFIX = (
    "t1 @7 enter first",
    "t1 @8 smu newthread scid=2 lep=10",
    "t1 @9 smu syscall 2",
    "t1 @2 exit",
)

CLONE_HAPPY = _CLONE_TEMPLATE.format(h0="SMU attach 2 after", h1="ALU RETVAL 2")
CLONE_HAPPY_GOLDEN = _CLONE_PREFIX + (
    "t1 @2 smu attach tid=2 scid=2",
    "t1 @10 enter resume",
    "t1 @12 probe RETVAL=0x2",
    "t2 @10 enter resume",
    "t2 @16 probe GP1=0x1111",
    "t2 @17 probe GP0=0x0",
    "t2 @18 done",
    "t1 @14 probe inactive_tscs=0",
    "t1 @1 exit",
    "t1 @1 done",
)

# clone failed but the OS reports success: the pending context lingers, nothing leaks
CLONE_CASE1 = _CLONE_TEMPLATE.format(h0="ALU", h1="ALU RETVAL 2")
CLONE_CASE1_GOLDEN = _CLONE_PREFIX + (
    "t1 @10 enter resume",
    "t1 @12 probe RETVAL=0x2",
    "t1 @14 probe inactive_tscs=1",
    "t1 @1 exit",
    "t1 @1 done",
)

# clone succeeded, OS reports failure, the parent deletes before the attach
CLONE_CASE2A = _CLONE_TEMPLATE.format(h0="SMU spawn 3 late", h1="ALU RETVAL -1")
CLONE_CASE2A_GOLDEN = _CLONE_PREFIX + (
    "t1 @2 smu spawn tid=3",
    "t1 @10 enter resume",
    "t1 @19 smu newthreaddelete scid=2",
    "t1 @20 probe inactive_tscs=0",
    "t1 @1 exit",
    "t1 @1 done",
    "t3 @5 halt BadAttach",
)

# clone succeeded, OS reports failure, the attach wins the race
CLONE_CASE2B = _CLONE_TEMPLATE.format(h0="SMU attach 2 after", h1="ALU RETVAL -1")
CLONE_CASE2B_GOLDEN = _CLONE_PREFIX + (
    "t1 @2 smu attach tid=2 scid=2",
    "t1 @10 enter resume",
    "t1 @19 halt BadAttach",
)

SIGNAL_ENTRY = """\
.pid 7
.first_lep main
.sig_lep shef
.untrusted
start:  CALL main
        EXIT
os:     ALU ARG0 0xb        ; signal number
        JMP shef
osret:  PROBE GP1
        JMP back
.trusted
main:   ALU GP1 0x5ec
        SMU syscall 0 os
back:   PROBE GP1
        RET
shef:   PROBE ARG0
        PROBE GP1
        JMP osret
"""

SIGNAL_ENTRY_GOLDEN = (
    "t1 @6 enter first",
    "t1 @7 smu syscall 0",
    "t1 @2 exit",
    "t1 @10 enter signal",
    "t1 @10 probe ARG0=0xb",
    "t1 @11 probe GP1=0x0",
    "t1 @4 exit",
    "t1 @4 probe GP1=0x0",
    "t1 @8 enter resume",
    "t1 @8 probe GP1=0x5ec",
    "t1 @1 exit",
    "t1 @1 done",
)

CALLNOSEC_STACKARGS = """\
.pid 7
.first_lep main
.untrusted
start:  CALL main
        EXIT
f:      PROBE ARG5
        PROBE GP1
        POP GP3             ; return address
        POP GP2             ; seventh argument
        PROBE GP2
        ALU RETVAL 0x99
        PUSH GP3
        RET
.trusted
main:   ALU ARG0 1
        ALU ARG5 6
        ALU GP1 0x5ec
        SMU pushna 7
        SMU callnosec 6 f
        PROBE RETVAL
        PROBE GP1
        RET
"""

CALLNOSEC_STACKARGS_GOLDEN = (
    "t1 @10 enter first",
    "t1 @14 smu callnosec 6",
    "t1 @2 exit",
    "t1 @2 probe ARG5=0x6",
    "t1 @3 probe GP1=0x0",
    "t1 @6 probe GP2=0x7",
    "t1 @15 enter resume",
    "t1 @15 probe RETVAL=0x99",
    "t1 @16 probe GP1=0x5ec",
    "t1 @1 exit",
    "t1 @1 done",
)

ROP_PROBE = """\
.pid 7
.first_lep main
.untrusted
start:  CALL main
        EXIT
gadget: PROBE GP1
        PROBE RETVAL
        JMP inner
.trusted
main:   ALU GP1 0x5ec
        ALU RETVAL 0x77
        JMP gadget
        RET
inner:  RET
"""

ROP_PROBE_GOLDEN = (
    "t1 @5 enter first",
    "t1 @2 exit",
    "t1 @2 probe GP1=0x0",
    "t1 @3 probe RETVAL=0x0",
    "t1 @9 halt IllegalEntry",
)

SCENARIOS = {
    "syscall_roundtrip": ScenarioProgram("syscall_roundtrip", SYSCALL_ROUNDTRIP, SYSCALL_ROUNDTRIP_GOLDEN),
    "malloc_inita": ScenarioProgram("malloc_inita", MALLOC_INITA, MALLOC_INITA_GOLDEN),
    "clone_happy": ScenarioProgram("clone_happy", CLONE_HAPPY, CLONE_HAPPY_GOLDEN),
    "clone_case1": ScenarioProgram("clone_case1", CLONE_CASE1, CLONE_CASE1_GOLDEN),
    "clone_case2a": ScenarioProgram("clone_case2a", CLONE_CASE2A, CLONE_CASE2A_GOLDEN),
    "clone_case2b": ScenarioProgram("clone_case2b", CLONE_CASE2B, CLONE_CASE2B_GOLDEN),
    "signal_entry": ScenarioProgram("signal_entry", SIGNAL_ENTRY, SIGNAL_ENTRY_GOLDEN),
    "callnosec_stackargs": ScenarioProgram("callnosec_stackargs", CALLNOSEC_STACKARGS,
                                           CALLNOSEC_STACKARGS_GOLDEN),
    "rop_probe": ScenarioProgram("rop_probe", ROP_PROBE, ROP_PROBE_GOLDEN),
}


def gen_smu_program(scenario: str) -> ScenarioProgram:
    try:
        return SCENARIOS[scenario]
    except KeyError:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}") from None


def preservation_program(kind: str, n: int) -> str:
    """Trusted code fills every register, exits via syscall(n) or CallNoSec(n),
    and the untrusted side probes all of them."""
    from semsim.smu.state import REGISTERS

    fills = "\n".join(f"        ALU {r} {0x100 + i:#x}" for i, r in enumerate(REGISTERS))
    probes = "\n".join(f"        PROBE {r}" for r in REGISTERS)
    if kind == "syscall":
        exit_op, back = f"SMU syscall {n} callee", "SYSRET"
    elif kind == "nosec":
        exit_op, back = f"SMU callnosec {n} callee", "RET"
    else:
        raise ValueError(kind)
    return f""".pid 7
.first_lep main
.untrusted
start:  CALL main
        EXIT
callee:
{probes}
        ALU RETVAL 0x42
        {back}
.trusted
main:
{fills}
        {exit_op}
{probes}
        RET
"""
