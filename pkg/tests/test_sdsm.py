import pytest
from hypothesis import given
from hypothesis import strategies as st

from semsim.crypto import Prf, seal_block
from semsim.errors import IntegrityError
from semsim.sdsm import (Baseline16Buffer, KbEntry, OutstandingKbFifo, ProcessHeat,
                         RequestorKbSlot, SenderState, TcmSeedLedger, allocate_slots,
                         baseline16_serve, pad_for, refill_kbs, requestor_complete, sender_serve,
                         tcm_issue_seeds, tcm_route_miss)

PRF = Prf.from_seed(4)


def test_issue_seeds_is_monotone_from_one():
    tcm = TcmSeedLedger()
    assert tcm_issue_seeds(tcm, 1, 0, 3) == [1, 2, 3]
    assert tcm_issue_seeds(tcm, 1, 0, 2) == [4, 5]
    assert list(tcm.queue(1, 0)) == [1, 2, 3, 4, 5]


def test_pids_have_independent_counters():
    tcm = TcmSeedLedger()
    assert tcm_issue_seeds(tcm, 1, 0, 1) == [1]
    assert tcm_issue_seeds(tcm, 2, 0, 1) == [1]
    assert tcm_issue_seeds(tcm, 1, 3, 1) == [2]


def test_issue_rejects_zero():
    with pytest.raises(ValueError):
        tcm_issue_seeds(TcmSeedLedger(), 1, 0, 0)


def test_route_miss_grants_oldest_and_piggybacks_replacement():
    tcm = TcmSeedLedger()
    tcm.issue(1, 0, 3)
    tcm.queue(1, 0).popleft()
    tcm.queue(1, 0).popleft()
    tcm.queue(1, 0).popleft()
    tcm.issue(1, 0, 3)  # queue [4, 5, 6]
    route = tcm_route_miss(tcm, 1, 0)
    assert route.grant_seed == 4
    assert list(tcm.queue(1, 0)) == [5, 6, route.replacement_seed]
    # a simultaneous second request gets the next seed, never the same pad
    assert tcm_route_miss(tcm, 1, 0).grant_seed == 5


def test_route_miss_on_empty_queue_issues():
    tcm = TcmSeedLedger()
    route = tcm_route_miss(tcm, 1, 2)
    assert route.grant_seed == 1 and route.replacement_seed == 2


@given(st.lists(st.tuples(st.integers(1, 3), st.integers(0, 3), st.integers(1, 5)), max_size=40))
def test_seeds_never_repeat_and_never_zero(calls):
    tcm = TcmSeedLedger()
    for pid, sender, n in calls:
        if n == 5:
            tcm_route_miss(tcm, pid, sender)
        else:
            tcm.issue(pid, sender, n)
    for seeds in tcm.issued.values():
        assert 0 not in seeds
        assert len(seeds) == len(set(seeds))


@pytest.mark.parametrize("heats,expected", [
    ({1: 5.0}, {1: 10}),
    ({1: 80.0, 2: 20.0}, {1: 8, 2: 2}),
    ({1: 1.0, 2: 1.0, 3: 1.0}, {1: 4, 2: 3, 3: 3}),
    ({1: 0.0, 2: 0.0}, {1: 5, 2: 5}),
])
def test_allocate_slots(heats, expected):
    assert allocate_slots(heats, 10) == expected


@given(st.dictionaries(st.integers(1, 50), st.floats(0, 1e6), min_size=1, max_size=8),
       st.integers(0, 40))
def test_allocation_sums_to_slots(heats, slots):
    alloc = allocate_slots(heats, slots)
    assert sum(alloc.values()) == slots
    assert all(v >= 0 for v in alloc.values())


def test_heat_halves_each_window():
    heat = ProcessHeat(window=100)
    heat.bump(0, 1, now=0, amount=8)
    assert heat.value(0, 1, 100) == pytest.approx(4)
    assert heat.value(0, 1, 300) == pytest.approx(1)


def test_refill_fills_spare_capacity_by_heat():
    tcm, heat = TcmSeedLedger(), ProcessHeat()
    sender = SenderState(node=2)
    heat.bump(2, 1, 0, 80)
    heat.bump(2, 2, 0, 20)
    assert refill_kbs(sender, tcm, heat, now=0, kb_cycles=80) == {1: 8, 2: 2}
    assert [e.ready_at for e in sender.fifo(1).entries] == [80] * 8
    assert refill_kbs(sender, tcm, heat, now=5) == {}


def test_fifo_take_and_capacity():
    fifo = OutstandingKbFifo(capacity=2)
    fifo.push(KbEntry(1, 0))
    fifo.push(KbEntry(2, 0))
    with pytest.raises(OverflowError):
        fifo.push(KbEntry(3, 0))
    assert fifo.take(2).seed == 2
    assert fifo.take(2) is None
    assert len(fifo) == 1


def test_sender_hit_adds_no_latency_when_pad_ready():
    sender = SenderState(node=0)
    sender.fifo(1).push(KbEntry(4, ready_at=80))
    res = sender_serve(sender, 1, 4, data_ready_at=200)
    assert (res.send_at, res.kb_delay) == (200, 0)


def test_sender_waits_for_pad_in_a_burst():
    sender = SenderState(node=0)
    sender.fifo(1).push(KbEntry(4, ready_at=250))
    res = sender_serve(sender, 1, 4, data_ready_at=200)
    assert (res.send_at, res.kb_delay) == (250, 50)


def test_requestor_stall_hidden_when_grant_is_early():
    slot = RequestorKbSlot()
    slot.load(4, ready_at=100 + 80)  # grant arrived at 100
    assert requestor_complete(slot, data_arrival=300)[1] == 0


def test_requestor_stall_with_slow_pad():
    slot = RequestorKbSlot()
    slot.load(4, ready_at=0 + 150)
    assert requestor_complete(slot, data_arrival=100)[1] == 50


def test_requestor_round_trip_and_tamper():
    sender = SenderState(node=0)
    sender.fifo(1).push(KbEntry(4, 0))
    clear = bytes(range(64))
    res = sender_serve(sender, 1, 4, 0, prf=PRF, va=0x40, clear=clear)
    slot = RequestorKbSlot()
    slot.load(4, 0, pad_for(PRF, 4))
    assert requestor_complete(slot, 10, res.sealed, PRF)[0] == clear
    bad = type(res.sealed)(res.sealed.va, bytes([res.sealed.cipher[0] ^ 1]) + res.sealed.cipher[1:],
                           res.sealed.mac, 4)
    with pytest.raises(IntegrityError):
        requestor_complete(slot, 10, bad, PRF)


def test_runtime_pad_is_address_independent():
    assert seal_block(PRF, 7, 0x40, bytes(64)).cipher == pad_for(PRF, 7)


# -- comparison scheme ---------------------------------------------------------

def test_baseline16_modified_buffer_hit_is_free():
    buf = Baseline16Buffer()
    buf.on_modify(0x40, ready_at=10)
    cost = baseline16_serve(buf, 0x40, True, True, t_forward=100, hop=100, kb=80, mem=200)
    assert (cost.send_at, cost.evict_delay, cost.port_cycles) == (100, 0, 0)
    assert buf.hits == 1


def test_baseline16_modified_buffer_miss_pays_kb_and_sends_seed_early():
    buf = Baseline16Buffer()
    cost = baseline16_serve(buf, 0x40, True, True, t_forward=100, hop=100, kb=80, mem=200)
    assert cost.send_at == 180 and cost.evict_delay == 80
    assert cost.requestor_ready == 100 + 100 + 80


def test_baseline16_unmodified_block_requestor_derives_after_arrival():
    buf = Baseline16Buffer()
    cached = baseline16_serve(buf, 0x40, False, True, t_forward=100, hop=100, kb=80, mem=200)
    assert cached.requestor_ready == -1 and cached.send_at == 300 and cached.port_cycles == 200
    mem = baseline16_serve(buf, 0x40, False, False, t_forward=100, hop=100, kb=80, mem=200)
    assert mem.requestor_ready == -1 and mem.send_at == 100


def test_baseline16_buffer_thrashes():
    buf = Baseline16Buffer(capacity=2)
    for va in (0, 64, 128):
        buf.on_modify(va, 0)
    assert buf.take(0) is None
    assert buf.take(128) == 0
