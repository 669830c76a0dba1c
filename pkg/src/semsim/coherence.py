"""MESI directory with deterministic owner choice.

``Directory.handle_request`` returns a plan (who supplies the data, who gets
invalidated, what the new state is) and applies the state transition. Timing
is the engine's business.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field


class MesiState(str, enum.Enum):
    MODIFIED = "M"
    EXCLUSIVE = "E"
    SHARED = "S"
    INVALID = "I"


class MsgKind(str, enum.Enum):
    READ_REQ = "ReadReq"
    WRITE_REQ = "WriteReq"
    INVALIDATE = "Invalidate"
    INV_ACK = "InvAck"
    DATA_RESP = "DataResp"
    SEED_GRANT = "SeedGrant"
    SEED_BATCH = "SeedBatch"
    ACK = "Ack"


HEADER_BYTES = 16
PAYLOAD_BYTES = {
    MsgKind.READ_REQ: 0,
    MsgKind.WRITE_REQ: 0,
    MsgKind.INVALIDATE: 0,
    MsgKind.INV_ACK: 0,
    MsgKind.DATA_RESP: 64,
    MsgKind.SEED_GRANT: 8,
    MsgKind.SEED_BATCH: 8,
    MsgKind.ACK: 0,
}
SEED_BYTES = 8
MAC_BYTES = 2


@dataclass
class CoherenceMsg:
    kind: MsgKind
    src: int
    dst: int
    va: int
    payload: object = None
    mac: int | None = None
    timestamp: int = 0
    seq: int = 0

    def size(self, extra: int = 0) -> int:
        n = HEADER_BYTES + PAYLOAD_BYTES[self.kind] + extra
        return n + (MAC_BYTES if self.mac is not None else 0)


@dataclass
class DirectoryEntry:
    va: int
    state: MesiState = MesiState.INVALID
    owners: set[int] = field(default_factory=set)
    pending: deque = field(default_factory=deque)

    def check(self):
        if self.state in (MesiState.MODIFIED, MesiState.EXCLUSIVE):
            assert len(self.owners) == 1, (self.va, self.state, self.owners)
        elif self.state is MesiState.SHARED:
            assert self.owners, (self.va, self.state)
        else:
            assert not self.owners, (self.va, self.state, self.owners)


@dataclass(frozen=True)
class ForwardPlan:
    requester: int
    supplier: int | None          # node whose cache supplies the data; None = home memory
    invalidate: tuple[int, ...]   # sharers that must drop their copy (and ack)
    new_state: MesiState          # requester's state after the transaction
    prior_state: MesiState        # directory state before the request
    supplier_state: MesiState     # supplier's copy state before the request (I if memory)
    upgrade: bool = False         # requester already had a Shared copy


class Directory:
    """Per-block MESI directory. Reads of Shared blocks are served by the lowest-id sharer."""

    def __init__(self):
        self.entries: dict[int, DirectoryEntry] = {}
        self.redirected = 0
        self.messages = 0

    def entry(self, va: int) -> DirectoryEntry:
        e = self.entries.get(va)
        if e is None:
            e = self.entries[va] = DirectoryEntry(va)
        return e

    def handle_request(self, msg: CoherenceMsg) -> ForwardPlan:
        if msg.kind not in (MsgKind.READ_REQ, MsgKind.WRITE_REQ):
            raise ValueError(f"directory handles read/write requests, not {msg.kind}")
        e = self.entry(msg.va)
        req = msg.src
        prior = e.state
        others = sorted(e.owners - {req})
        self.messages += 1
        if msg.kind is MsgKind.READ_REQ:
            if prior in (MesiState.MODIFIED, MesiState.EXCLUSIVE) and others:
                supplier = others[0]
                e.state = MesiState.SHARED
                e.owners = {supplier, req}
                plan = ForwardPlan(req, supplier, (), MesiState.SHARED, prior, prior)
            elif prior is MesiState.SHARED and others:
                e.owners.add(req)
                plan = ForwardPlan(req, others[0], (), MesiState.SHARED, prior, MesiState.SHARED)
            elif req in e.owners:
                # directory thinks the requester already holds it (silently evicted copy)
                plan = ForwardPlan(req, None, (), e.state, prior, MesiState.INVALID)
            else:
                e.state = MesiState.EXCLUSIVE
                e.owners = {req}
                plan = ForwardPlan(req, None, (), MesiState.EXCLUSIVE, prior, MesiState.INVALID)
        else:
            upgrade = req in e.owners and prior is MesiState.SHARED
            supplier = None
            supplier_state = MesiState.INVALID
            if others and not upgrade:
                supplier = others[0]
                supplier_state = prior
            e.state = MesiState.MODIFIED
            e.owners = {req}
            plan = ForwardPlan(req, supplier, tuple(others), MesiState.MODIFIED, prior,
                               supplier_state, upgrade)
        self.messages += 1 + len(plan.invalidate)
        return plan

    def evict(self, node: int, va: int, dirty: bool):
        """Writeback of a Modified copy; clean copies are evicted silently and never reach here."""
        e = self.entries.get(va)
        if e is None or node not in e.owners:
            return
        if dirty:
            e.owners.discard(node)
            e.state = MesiState.INVALID if not e.owners else e.state
            self.messages += 1

    def drop_sharer(self, node: int, va: int):
        """A forwarded request found no copy at ``node``: count it and fix the directory."""
        e = self.entries.get(va)
        self.redirected += 1
        if e is None:
            return
        e.owners.discard(node)
        if not e.owners:
            e.state = MesiState.INVALID
        elif e.state in (MesiState.MODIFIED, MesiState.EXCLUSIVE):
            e.state = MesiState.SHARED if len(e.owners) > 1 else e.state
