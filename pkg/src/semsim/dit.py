"""Distributed integrity trees and the closed-form AMAT model.

Each node keeps its own IvlcsTree: a hash tree whose leaf slots record
whether a shared block is resident locally (with its hash, counter or
version and a write-permission bit) or not resident (NR). Roots are never
exchanged between nodes.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field

from semsim.crypto import BLOCK_SIZE, HashTree, Prf


class DitVariant(str, enum.Enum):
    DMT = "dmt"      # leaf meta: 16-bit data hash
    DBMT = "dbmt"    # leaf meta: 64-bit counter
    DMEE = "dmee"    # leaf meta: 64-bit version


# bytes per leaf slot: DMT packs hash16 + flags into 4 bytes, the others use 8
SLOT_BYTES = {DitVariant.DMT: 4, DitVariant.DBMT: 8, DitVariant.DMEE: 8}


@dataclass(frozen=True)
class Resident:
    meta: int
    write_perm: bool


class _NotResident:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NR"


NR = _NotResident()


def encode_leaf(variant: DitVariant, leaf) -> int:
    bits = SLOT_BYTES[variant] * 8
    nr = (1 << bits) - 1
    if leaf is NR:
        return nr
    if variant is DitVariant.DMT:
        # bit 17 marks resident, bit 16 is write permission; NR is all ones
        return (1 << 17) | (int(leaf.write_perm) << 16) | (leaf.meta & 0xFFFF)
    meta_max = (1 << (bits - 1)) - 1
    if not 0 <= leaf.meta < meta_max:
        raise ValueError(f"meta {leaf.meta:#x} collides with the NR encoding")
    return (int(leaf.write_perm) << (bits - 1)) | leaf.meta


def decode_leaf(variant: DitVariant, raw: int):
    bits = SLOT_BYTES[variant] * 8
    if raw == (1 << bits) - 1:
        return NR
    if variant is DitVariant.DMT:
        if not raw >> 17 & 1:
            raise ValueError(f"malformed DMT leaf {raw:#x}")
        return Resident(raw & 0xFFFF, bool(raw >> 16 & 1))
    return Resident(raw & ((1 << (bits - 1)) - 1), bool(raw >> (bits - 1)))


@dataclass
class IvlcsTree:
    """Integrity-verified local coherence state for one node."""

    prf: Prf
    variant: DitVariant = DitVariant.DBMT
    levels: int = 4
    dirty: set[int] = field(default_factory=set)

    def __post_init__(self):
        self.variant = DitVariant(self.variant)
        self.slot = SLOT_BYTES[self.variant]
        self.per_block = BLOCK_SIZE // self.slot
        self.tree = HashTree(self.prf, levels=self.levels, leaf_default=b"\xff" * BLOCK_SIZE)
        self.permission_requests = 0
        self.tree_messages_sent = 0  # stays 0: roots and tree blocks are node-local

    @classmethod
    def fresh(cls, variant: DitVariant | str, seed: int = 0) -> "IvlcsTree":
        return cls(Prf.from_seed(seed), DitVariant(variant))

    @property
    def root(self) -> int:
        return self.tree.root

    def _locate(self, va: int) -> tuple[int, int]:
        block = va // BLOCK_SIZE
        return divmod(block, self.per_block)

    def lookup(self, va: int):
        leaf_block, slot = self._locate(va)
        content = self.tree.verify(leaf_block)
        raw = int.from_bytes(content[slot * self.slot:(slot + 1) * self.slot], "little")
        return decode_leaf(self.variant, raw)

    def _write(self, va: int, leaf):
        leaf_block, slot = self._locate(va)
        content = bytearray(self.tree.verify(leaf_block))
        content[slot * self.slot:(slot + 1) * self.slot] = \
            encode_leaf(self.variant, leaf).to_bytes(self.slot, "little")
        self.tree.update(leaf_block, bytes(content))

    def apply(self, event: str, va: int, write: bool = False, meta: int | None = None):
        if event == "arrival":
            current = self.lookup(va)
            keep = current.meta if isinstance(current, Resident) else 0
            self._write(va, Resident(keep if meta is None else meta, write))
            if write:
                self.dirty.add(va // BLOCK_SIZE)
        elif event == "invalidate":
            self._write(va, NR)
            self.dirty.discard(va // BLOCK_SIZE)
        elif event == "revoke_write":
            current = self.lookup(va)
            if isinstance(current, Resident):
                self._write(va, Resident(current.meta, False))
        elif event == "evict_dirty":
            current = self.lookup(va)
            wp = current.write_perm if isinstance(current, Resident) else False
            self._write(va, Resident(meta if meta is not None else 0, wp))
            self.dirty.discard(va // BLOCK_SIZE)
        else:
            raise ValueError(f"unknown transfer event {event!r}")

    def request_write(self, va: int) -> str:
        """Local write attempt: "ok", "permission_request" (no tree change) or "miss"."""
        leaf = self.lookup(va)
        if leaf is NR:
            return "miss"
        if not leaf.write_perm:
            self.permission_requests += 1
            return "permission_request"
        self.dirty.add(va // BLOCK_SIZE)
        return "ok"


def ivlcs_lookup(tree: IvlcsTree, va: int):
    return tree.lookup(va)


def apply_transfer_event(tree: IvlcsTree, event: str, va: int, write: bool = False,
                         meta: int | None = None):
    tree.apply(event, va, write=write, meta=meta)


# -- AMAT ---------------------------------------------------------------------


@dataclass(frozen=True)
class AmatParams:
    H: float
    t_c: float
    t_coh: float
    t_fetch: float
    t_int: float
    t_rem: float
    LE: float

    def __post_init__(self):
        for name in ("t_c", "t_coh", "t_fetch", "t_int", "t_rem"):
            if getattr(self, name) < 0 or math.isnan(getattr(self, name)):
                raise ValueError(f"{name} must be >= 0")
        for name in ("H", "LE"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def amat(p: AmatParams, which: str) -> float:
    miss = 1.0 - p.H
    if which == "baseline":
        return p.t_c + miss * (p.t_coh + p.t_fetch + p.LE * p.t_int + (1.0 - p.LE) * p.t_rem)
    if which == "dit":
        return p.t_c + miss * (p.t_int + p.t_fetch + (1.0 - p.LE) * p.t_rem)
    raise ValueError(f"which must be 'baseline' or 'dit', got {which!r}")


def amat_delta(p: AmatParams) -> float:
    return (1.0 - p.H) * (-p.t_coh + (1.0 - p.LE) * p.t_int)


AMAT_COLUMNS = ("variant", "H", "t_c", "t_coh", "t_fetch", "t_int_miss", "t_rem_mult",
                "node_miss", "amat_baseline", "amat_dit", "overhead_pct")


def amat_sweep(node_miss_rates, integrity_miss_rates, t_rem_mults, t_coh_values=(0.0,),
               H: float = 0.99, t_c: float = 1.0, t_fetch: float = 100.0,
               variant: str = "dbmt") -> list[dict]:
    """Grid of overhead percentages.

    t_int is one tree-block fetch per integrity miss (t_fetch * rate); a node
    miss is a block not present locally, so LE = 1 - node_miss.
    """
    grid = list(itertools.product(t_rem_mults, t_coh_values, integrity_miss_rates, node_miss_rates))
    if not grid:
        raise ValueError("empty sweep grid")
    rows = []
    for mult, t_coh, int_miss, node_miss in grid:
        p = AmatParams(H=H, t_c=t_c, t_coh=t_coh, t_fetch=t_fetch, t_int=t_fetch * int_miss,
                       t_rem=mult * t_fetch, LE=1.0 - node_miss)
        base, dit = amat(p, "baseline"), amat(p, "dit")
        rows.append({
            "variant": variant, "H": H, "t_c": t_c, "t_coh": t_coh, "t_fetch": t_fetch,
            "t_int_miss": int_miss, "t_rem_mult": mult, "node_miss": node_miss,
            "amat_baseline": base, "amat_dit": dit, "overhead_pct": (dit / base - 1.0) * 100.0,
        })
    return rows


def percent_range(lo: float, hi: float, steps: int) -> list[float]:
    return [lo + (hi - lo) * i / (steps - 1) for i in range(steps)] if steps > 1 else [lo]


def integrity_grid(t_rem_mult: float = 5.0) -> list[dict]:
    return amat_sweep(percent_range(0.0, 1.0, 21), percent_range(0.0, 0.04, 5), [t_rem_mult])


def coherence_grid() -> list[dict]:
    # baseline coherence check = one memory access at 0-4% miss; DIT integrity miss fixed at 2%
    return amat_sweep(percent_range(0.0, 1.0, 21), [0.02], [5.0],
                      t_coh_values=[100.0 * m for m in percent_range(0.0, 0.04, 5)])
