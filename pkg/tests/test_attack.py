import pytest

from semsim.attack import (REVERT_PARTS, SCENARIOS, DropInvalidate, RevertMemory,
                           SharedMemoryNet, run_campaign, run_scenario)
from semsim.errors import IntegrityError, TamperDetected


def test_plain_directory_reproduces_stale_read():
    res = run_scenario("stale-read", tcm=False)
    assert res.silent_corruption == 1 and res.wrong_reads >= 1
    assert res.tamper_detections == 0


def test_stale_read_value_is_the_old_one():
    net = SharedMemoryNet(nodes=4, tcm=False, integrity=False, cache_lines=4)
    va = 0xC0
    net.write(1, va, 1)
    net.read(0, va)
    net.read(1, va)
    net.armed.append(DropInvalidate(va, 0))
    net.write(1, va, 2)
    assert net.read(2, va) == 1
    assert net.wrong_reads == 1


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_tcm_detects_every_scenario(name):
    res = run_scenario(name, tcm=True)
    assert res.detected == 1 and res.silent_corruption == 0


@pytest.mark.parametrize("name", ["stale-read", "forge-data", "revert-memory"])
def test_scenarios_are_silent_without_protection(name):
    assert run_scenario(name, tcm=False).silent_corruption == 1


def test_dropped_invalidate_raises_under_tcm():
    net = SharedMemoryNet(nodes=4, tcm=True, cache_lines=4)
    net.write(1, 0xC0, 1)
    net.read(0, 0xC0)
    net.armed.append(DropInvalidate(0xC0, 0))
    with pytest.raises(TamperDetected):
        net.write(1, 0xC0, 2)


def test_replayed_message_rejected():
    net = SharedMemoryNet(nodes=4, tcm=True, cache_lines=4)
    net.write(1, 0x140, 10)
    net.read(2, 0x140)
    old = net.captured[0]
    with pytest.raises(TamperDetected):
        net.inject(old)


@pytest.mark.parametrize("parts", [(p,) for p in REVERT_PARTS] + [REVERT_PARTS])
def test_memory_revert_detected_with_integrity(parts):
    net = SharedMemoryNet(nodes=2, tcm=True, integrity=True, cache_lines=1)
    va, other = 0x80, 0x280
    net.write(0, va, 1)
    net.write(0, other, 0)
    snap = net.snapshot(va)
    net.write(0, va, 2)
    net.write(0, other, 0)
    net.revert(RevertMemory(net.home(va), va, snap, parts))
    with pytest.raises(IntegrityError):
        net.read(1, va)


def test_unknown_scenario():
    with pytest.raises(ValueError):
        run_scenario("teleport")


def test_needs_two_nodes():
    with pytest.raises(ValueError):
        SharedMemoryNet(nodes=1)


def test_small_campaign_protected_has_no_silent_corruption():
    res = run_campaign(actions=120, tcm=True, integrity=True, seed=3)
    assert res.actions == 120
    assert res.silent_corruption == 0 and res.wrong_reads == 0
    assert res.detected + res.inert == 120
    assert res.detected > 0


def test_small_campaign_unprotected_goes_wrong():
    res = run_campaign(actions=120, tcm=False, integrity=False, seed=3)
    assert res.silent_corruption > 0


def test_campaign_is_deterministic():
    a = run_campaign(actions=30, seed=5)
    b = run_campaign(actions=30, seed=5)
    assert a.as_row() == b.as_row()
