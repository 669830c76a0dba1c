import pytest
from hypothesis import given
from hypothesis import strategies as st

from semsim.errors import ParseError
from semsim.workload import (ALU, PRIVATE_BASE, SHARED_BASE, Layout, Load, Store, SynthParams,
                             TraceInstr, Workload, gen_synthetic, parse_trace, planned_miss_rate,
                             render_trace)


def test_parse_basic_thread():
    w = parse_trace("#thread 0\nA\nL 0x40\nS 0x40\n")
    assert w.threads == [[ALU, Load(0x40), Store(0x40)]]
    assert w.layout is None


def test_addresses_are_block_aligned():
    assert parse_trace("#thread 0\nL 0x41\n").threads[0] == [Load(0x40)]
    assert Load(0x7F).va == 0x40


@pytest.mark.parametrize("text,line", [
    ("L 0x40\n", 1),
    ("#thread 0\nA\nX 1\n", 3),
    ("#thread 0\nL zz\n", 2),
    ("#thread 0\n#thread 0\n", 2),
    ("#thread\n", 1),
    ("# layout nodes=x\n#thread 0\n", 1),
])
def test_parse_errors_report_line(text, line):
    with pytest.raises(ParseError) as err:
        parse_trace(text)
    assert err.value.line == line


def test_threads_ordered_by_id_and_layout_parsed():
    w = parse_trace("# layout nodes=4 private_blocks=8\n#thread 1\nA\n#thread 0\nL 0x80\n")
    assert w.threads == [[Load(0x80)], [ALU]]
    assert w.layout == Layout(4, 8)


instr = st.one_of(st.just(ALU),
                  st.builds(Load, st.integers(0, 2**40)),
                  st.builds(Store, st.integers(0, 2**40)))


@given(st.lists(st.lists(instr, max_size=20), min_size=1, max_size=4),
       st.one_of(st.none(), st.builds(Layout, st.integers(1, 8), st.integers(0, 16))))
def test_render_parse_round_trip(threads, layout):
    w = Workload(threads, layout)
    assert parse_trace(render_trace(w)) == w


def test_layout_homes():
    lay = Layout(4, private_blocks=8)
    assert lay.home(lay.private_va(2, 3)) == 2
    assert lay.is_private(lay.private_va(1, 0))
    assert not lay.is_private(SHARED_BASE)
    assert lay.home(SHARED_BASE + 5 * 64) == (SHARED_BASE // 64 + 5) % 4


def test_zero_target_stays_private():
    w = gen_synthetic(SynthParams(nodes=3, instrs_per_node=400, target_node_miss_rate=0.0))
    lay = w.layout
    for node, seq in enumerate(w.threads):
        for ins in seq:
            if ins.op != "A":
                assert lay.is_private(ins.va) and lay.home(ins.va) == node


def test_generator_is_deterministic():
    p = SynthParams(nodes=4, instrs_per_node=500, rng_seed=9)
    assert gen_synthetic(p) == gen_synthetic(p)
    assert gen_synthetic(p) != gen_synthetic(SynthParams(nodes=4, instrs_per_node=500, rng_seed=10))


def test_generator_counts():
    p = SynthParams(nodes=4, instrs_per_node=1000, target_node_miss_rate=0.2, store_fraction=0.5)
    w = gen_synthetic(p)
    assert planned_miss_rate(w) == pytest.approx(0.2)
    for node, seq in enumerate(w.threads):
        assert len(seq) == 1000
        mem = [i for i in seq if i.op != "A"]
        assert len(mem) == 500
        shared = [i for i in mem if i.va >= SHARED_BASE]
        assert len(shared) == 100
        # a planned miss never targets a block homed at the issuing node
        assert all(w.layout.home(i.va) != node for i in shared)


@pytest.mark.parametrize("kwargs", [
    dict(nodes=0),
    dict(target_node_miss_rate=1.5),
    dict(nodes=1, target_node_miss_rate=0.1),
    dict(private_region_blocks=0),
    dict(nodes=8, shared_region_blocks=4),
])
def test_invalid_params(kwargs):
    with pytest.raises(ValueError):
        gen_synthetic(SynthParams(**kwargs))


def test_exhausted_shared_region():
    with pytest.raises(ValueError):
        gen_synthetic(SynthParams(nodes=2, instrs_per_node=400, target_node_miss_rate=0.5,
                                  shared_region_blocks=4))


def test_private_base_below_shared():
    assert PRIVATE_BASE < SHARED_BASE
    assert TraceInstr("A") == ALU
