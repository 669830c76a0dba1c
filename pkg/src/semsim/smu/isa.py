"""Toy program format.

One instruction per line, one address per instruction::

    .pid 7
    .first_lep main
    .untrusted
    start:  CALL main
            EXIT
    .trusted
    main:   ALU GP1 0x11
            SMU syscall 2 write
            ...

``;`` starts a comment. Operands that are not registers or numbers are
label references and are resolved after the whole text is read.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from semsim.errors import ParseError

REGISTER_NAMES = frozenset(
    [f"ARG{i}" for i in range(6)] + ["RETADDR", "RETVAL"] + [f"GP{i}" for i in range(8)]
)

# opcode -> (min operands, max operands)
OPCODES = {
    "ALU": (0, 2),
    "LD": (1, 2),
    "ST": (1, 2),
    "CALL": (1, 1),
    "RET": (0, 0),
    "JMP": (1, 1),
    "BR": (3, 3),
    "SYSRET": (0, 0),
    "MOV": (2, 2),
    "PUSH": (1, 1),
    "POP": (1, 1),
    "EXIT": (0, 0),
    "PROBE": (1, 1),
    "SMU": (1, 4),
}

SMU_OPS = {
    "syscall": (2, 2),        # argnum, handler label
    "callnosec": (2, 2),      # i, target label
    "pushna": (1, 1),         # register or immediate
    "popna": (1, 1),          # register
    "storena": (1, 2),        # va [reg]
    "loadna": (1, 2),         # va [reg]
    "inita": (2, 2),          # va size
    "newthread": (0, 1),      # [destination register], default RETVAL
    "newthreaddelete": (0, 1),  # [reg holding scid], default GP0
    "attach": (2, 2),         # tid, label
    "threaddelete": (1, 1),   # tid
    "spawn": (2, 2),          # tid, label: OS starts a thread in untrusted code
    "yield": (0, 0),
    "evict": (0, 0),
    "restore": (0, 0),
}

BRANCH_CONDS = ("z", "nz", "pos", "neg")


@dataclass(frozen=True)
class ToyInstr:
    op: str
    args: tuple = ()
    auth: bool = False
    addr: int = 0
    line: int = 0

    def __str__(self):
        return " ".join([self.op, *(hex(a) if isinstance(a, int) else str(a) for a in self.args)])


@dataclass
class ToyProgram:
    instrs: list[ToyInstr]
    labels: dict[str, int]
    pid: int = 7
    process_hash: str = "prog"
    first_lep: int | None = None
    sig_lep: int | None = None
    entry: int = 0
    text: str = field(default="", repr=False)

    def at(self, addr: int) -> ToyInstr | None:
        if 0 <= addr < len(self.instrs):
            return self.instrs[addr]
        return None


def _operand(tok: str):
    up = tok.upper()
    if up in REGISTER_NAMES or up == "TSCS":
        return up
    try:
        return int(tok, 0)
    except ValueError:
        return tok  # label, resolved later


def parse_program(text: str) -> ToyProgram:
    raw: list[tuple[int, str, list, bool]] = []
    labels: dict[str, int] = {}
    directives: dict[str, tuple[int, str]] = {}
    auth = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split(";", 1)[0].strip()
        while line and ":" in line.split()[0]:
            head, _, rest = line.partition(":")
            name = head.strip()
            if not name.isidentifier():
                raise ParseError(lineno, f"bad label {name!r}")
            if name in labels:
                raise ParseError(lineno, f"duplicate label {name!r}")
            labels[name] = len(raw)
            line = rest.strip()
        if not line:
            continue
        toks = line.split()
        if toks[0].startswith("."):
            d = toks[0][1:].lower()
            if d in ("trusted", "untrusted"):
                auth = d == "trusted"
            elif d in ("pid", "process", "first_lep", "sig_lep", "entry") and len(toks) == 2:
                directives[d] = (lineno, toks[1])
            else:
                raise ParseError(lineno, f"unknown directive {toks[0]}")
            continue
        op = toks[0].upper()
        if op not in OPCODES:
            raise ParseError(lineno, f"unknown opcode {toks[0]!r}")
        lo, hi = OPCODES[op]
        args = toks[1:]
        if not lo <= len(args) <= hi:
            raise ParseError(lineno, f"{op} takes {lo}..{hi} operands")
        if op == "SMU":
            sub = args[0].lower()
            if sub not in SMU_OPS:
                raise ParseError(lineno, f"unknown SMU op {args[0]!r}")
            slo, shi = SMU_OPS[sub]
            if not slo <= len(args) - 1 <= shi:
                raise ParseError(lineno, f"SMU {sub} takes {slo}..{shi} operands")
            ops = [sub] + [_operand(a) for a in args[1:]]
        elif op == "BR":
            if args[0].lower() not in BRANCH_CONDS:
                raise ParseError(lineno, f"bad branch condition {args[0]!r}")
            ops = [args[0].lower()] + [_operand(a) for a in args[1:]]
        else:
            ops = [_operand(a) for a in args]
        raw.append((lineno, op, ops, auth))

    def resolve(lineno, v):
        if isinstance(v, str) and v not in REGISTER_NAMES and v != "TSCS" and v not in SMU_OPS \
                and v not in BRANCH_CONDS:
            if v not in labels:
                raise ParseError(lineno, f"undefined label {v!r}")
            return labels[v]
        return v

    instrs = [
        ToyInstr(op, tuple(resolve(lineno, a) for a in ops), a_flag, addr, lineno)
        for addr, (lineno, op, ops, a_flag) in enumerate(raw)
    ]
    prog = ToyProgram(instrs, labels, text=text)
    for key, (lineno, val) in directives.items():
        if key == "pid":
            try:
                prog.pid = int(val, 0)
            except ValueError as exc:
                raise ParseError(lineno, f"bad pid {val!r}") from exc
        elif key == "process":
            prog.process_hash = val
        else:
            addr = resolve(lineno, _operand(val))
            if not isinstance(addr, int):
                raise ParseError(lineno, f"bad address {val!r}")
            setattr(prog, key, addr)
    if "entry" not in directives and "start" in labels:
        prog.entry = labels["start"]
    return prog
