import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from semsim.dit import (NR, AmatParams, DitVariant, IvlcsTree, Resident, amat, amat_delta,
                        amat_sweep, apply_transfer_event, coherence_grid, decode_leaf, encode_leaf,
                        integrity_grid, ivlcs_lookup, percent_range)
from semsim.errors import IntegrityError, IntegrityKind

VARIANTS = list(DitVariant)


@pytest.mark.parametrize("variant", VARIANTS)
def test_unallocated_is_nr(variant):
    assert ivlcs_lookup(IvlcsTree.fresh(variant), 0x4000) is NR


@pytest.mark.parametrize("variant", VARIANTS)
def test_arrival_with_write_intent(variant):
    tree = IvlcsTree.fresh(variant)
    apply_transfer_event(tree, "arrival", 0x40, write=True, meta=7)
    assert ivlcs_lookup(tree, 0x40) == Resident(7, True)
    assert 1 in tree.dirty


@pytest.mark.parametrize("variant", VARIANTS)
def test_invalidate_returns_nr(variant):
    tree = IvlcsTree.fresh(variant)
    apply_transfer_event(tree, "arrival", 0x40, meta=3)
    apply_transfer_event(tree, "invalidate", 0x40)
    assert ivlcs_lookup(tree, 0x40) is NR


def test_write_without_permission_is_a_request_not_a_tree_change():
    tree = IvlcsTree.fresh("dbmt")
    apply_transfer_event(tree, "arrival", 0x40, write=False, meta=3)
    root = tree.root
    assert tree.request_write(0x40) == "permission_request"
    assert tree.root == root and tree.permission_requests == 1
    assert tree.request_write(0x80) == "miss"
    apply_transfer_event(tree, "arrival", 0x40, write=True)
    assert tree.request_write(0x40) == "ok"
    apply_transfer_event(tree, "revoke_write", 0x40)
    assert ivlcs_lookup(tree, 0x40) == Resident(3, False)


def test_dirty_meta_updated_on_eviction():
    tree = IvlcsTree.fresh("dmee")
    apply_transfer_event(tree, "arrival", 0x40, write=True, meta=1)
    apply_transfer_event(tree, "evict_dirty", 0x40, meta=2)
    assert ivlcs_lookup(tree, 0x40) == Resident(2, True)
    assert not tree.dirty


def test_unknown_event():
    with pytest.raises(ValueError):
        apply_transfer_event(IvlcsTree.fresh("dmt"), "teleport", 0)


@pytest.mark.parametrize("variant", VARIANTS)
def test_flipping_nr_to_resident_is_detected(variant):
    tree = IvlcsTree.fresh(variant)
    apply_transfer_event(tree, "arrival", 0x40 * 100, meta=1)
    tree.tree.flush()
    leaf_block, slot = tree._locate(0)
    content = bytearray(tree.tree.untrusted.get((0, leaf_block), b"\xff" * 64))
    content[slot * tree.slot:(slot + 1) * tree.slot] = \
        encode_leaf(tree.variant, Resident(5, True)).to_bytes(tree.slot, "little")
    tree.tree.untrusted[(0, leaf_block)] = bytes(content)
    tree.tree.cache.clear()
    with pytest.raises(IntegrityError) as err:
        ivlcs_lookup(tree, 0)
    assert err.value.kind is IntegrityKind.TREE_MISMATCH


@pytest.mark.parametrize("variant", VARIANTS)
@given(meta=st.integers(0, 0xFFFF), wp=st.booleans())
def test_leaf_encoding_round_trip(variant, meta, wp):
    leaf = Resident(meta, wp)
    assert decode_leaf(variant, encode_leaf(variant, leaf)) == leaf
    assert encode_leaf(variant, leaf) != encode_leaf(variant, NR)


def test_nodes_keep_independent_roots():
    a, b = IvlcsTree.fresh("dbmt", 1), IvlcsTree.fresh("dbmt", 2)
    rb = b.root
    apply_transfer_event(a, "arrival", 0x40, meta=1)
    assert b.root == rb
    assert a.tree_messages_sent == b.tree_messages_sent == 0


def test_lookup_matches_shadow_ownership():
    rng = random.Random(5)
    tree = IvlcsTree.fresh("dmt")
    shadow = {}
    for _ in range(400):
        va = rng.randrange(32) * 64
        if rng.random() < 0.5:
            w = rng.random() < 0.5
            meta = rng.randrange(1 << 16)
            apply_transfer_event(tree, "arrival", va, write=w, meta=meta)
            shadow[va] = Resident(meta, w)
        else:
            apply_transfer_event(tree, "invalidate", va)
            shadow.pop(va, None)
        probe = rng.randrange(32) * 64
        assert ivlcs_lookup(tree, probe) == shadow.get(probe, NR)


# -- AMAT ----------------------------------------------------------------------

def test_amat_worked_example():
    p = AmatParams(H=0.99, t_c=1, t_coh=1, t_fetch=100, t_int=2, t_rem=500, LE=0.95)
    assert amat(p, "baseline") == pytest.approx(2.279, abs=1e-9)
    assert amat(p, "dit") == pytest.approx(2.270, abs=1e-9)


def test_all_hits_cost_t_c():
    p = AmatParams(H=1.0, t_c=3, t_coh=9, t_fetch=100, t_int=7, t_rem=500, LE=0.2)
    assert amat(p, "baseline") == amat(p, "dit") == 3


def test_amat_param_validation():
    with pytest.raises(ValueError):
        AmatParams(H=1.5, t_c=1, t_coh=0, t_fetch=1, t_int=0, t_rem=0, LE=0)
    with pytest.raises(ValueError):
        AmatParams(H=0.5, t_c=-1, t_coh=0, t_fetch=1, t_int=0, t_rem=0, LE=0)
    with pytest.raises(ValueError):
        amat(AmatParams(0.5, 1, 0, 1, 0, 0, 0), "other")


unit = st.floats(0, 1)
time = st.floats(0, 1e4)


@given(H=unit, t_c=time, t_coh=time, t_fetch=time, t_int=time, t_rem=time, LE=unit)
def test_delta_identity(H, t_c, t_coh, t_fetch, t_int, t_rem, LE):
    p = AmatParams(H, t_c, t_coh, t_fetch, t_int, t_rem, LE)
    direct = amat(p, "dit") - amat(p, "baseline")
    scale = max(1.0, amat(p, "dit"), amat(p, "baseline"))
    assert abs(amat_delta(p) - direct) <= 1e-12 * scale


def test_delta_identity_random_draws():
    rng = random.Random(0)
    for _ in range(10_000):
        p = AmatParams(rng.random(), rng.uniform(0, 10), rng.uniform(0, 50), rng.uniform(0, 500),
                       rng.uniform(0, 50), rng.uniform(0, 5000), rng.random())
        direct = amat(p, "dit") - amat(p, "baseline")
        assert abs(amat_delta(p) - direct) <= 1e-12 * max(1.0, amat(p, "baseline"))


@given(H=unit, LE=st.floats(0, 0.999), t_int=time)
def test_equal_when_coherence_cost_matches(H, LE, t_int):
    p = AmatParams(H, 1.0, (1 - LE) * t_int, 100.0, t_int, 500.0, LE)
    assert amat(p, "baseline") == pytest.approx(amat(p, "dit"), rel=1e-12, abs=1e-9)


def test_integrity_grid_overhead_below_one_percent():
    rows = integrity_grid()
    assert len(rows) == 21 * 5
    assert max(r["overhead_pct"] for r in rows) < 1.0


def test_overhead_grows_with_node_miss_without_coherence_cost():
    # with t_coh = 0 the overhead is a*x / (b + c*x), x = node miss, all of a, b, c > 0
    rows = integrity_grid()
    groups = {}
    for r in rows:
        groups.setdefault((r["variant"], r["t_int_miss"]), []).append((r["node_miss"], r["overhead_pct"]))
    for pts in groups.values():
        vals = [v for _, v in sorted(pts)]
        assert vals[0] == 0
        assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_coherence_cost_gives_negative_cells():
    rows = coherence_grid()
    assert any(r["overhead_pct"] < 0 for r in rows)


def test_percent_range():
    assert percent_range(0, 1, 3) == [0, 0.5, 1]
    assert percent_range(0.2, 1, 1) == [0.2]


def test_sweep_columns():
    rows = amat_sweep([0.5], [0.01], [5.0])
    assert set(rows[0]) >= {"variant", "overhead_pct", "amat_dit", "amat_baseline"}
