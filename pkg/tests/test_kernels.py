import pytest

from fireguard.models.kernel import GID_CALL, GID_HEAP, GID_LOAD, GID_RET, GID_STORE
from fireguard.models.packet import MessageTag
from fireguard.models.trace_record import Kind
from fireguard.models.verdict import ViolationClass
from fireguard.utils.filter import classify, default_table
from fireguard.utils.kernels import (
    AsanState, BlockSummary, HeapOwnership, PmcState, RegionState, ShadowMemory, ShadowStackState, UafState, asan_process,
    make_kernel_state, pack_summary_head, pmc_process, round_robin_share, shadowstack_process, uaf_process,
    unpack_summary_head,
)

TABLE = default_table([GID_LOAD, GID_STORE, GID_CALL, GID_RET, GID_HEAP])


def packet(record, block=0):
    return classify(TABLE, record).tagged(0, block)


def pump(states):
    """Deliver queued messages between engine states until the mesh would be empty."""
    verdicts = []
    while True:
        messages = [m for state in states.values() for m in state.drain_outbox()]
        if not messages:
            return verdicts
        for message in messages:
            verdicts.extend(states[message.dst].on_message(message))


# -- performance counters ---------------------------------------------------

def test_pmc_checks_bounds_when_a_window_closes(builder):
    state = PmcState(window=10, bounds={Kind.LOAD: (2, 3)})
    assert [pmc_process(state, packet(builder.load(0x8000))) for _ in range(5)] == [[]] * 5
    builder.tick(10)
    closer = packet(builder.load(0x8000, pc=0x1040))
    [verdict] = pmc_process(state, closer)
    assert verdict.violation is ViolationClass.COUNTER_BOUND
    assert (verdict.seq, verdict.pc) == (closer.seq, 0x1040)
    assert state.counters == {Kind.LOAD: 1}

    # one load is under the lower bound
    builder.tick(10)
    late = packet(builder.load(0x8000))
    assert [v.seq for v in pmc_process(state, late)] == [late.seq]


def test_pmc_skips_empty_windows(builder):
    state = PmcState(window=10, bounds={Kind.LOAD: (1, 3)})
    pmc_process(state, packet(builder.load(0x8000)))
    builder.tick(100)
    assert pmc_process(state, packet(builder.load(0x8000))) == []
    assert state.tallies.keys() == {10}


def test_pmc_windows_use_the_full_commit_cycle(builder):
    state = PmcState(window=1000, bounds={Kind.LOAD: (2, 3)})
    builder.tick((1 << 32) - 6)
    first = pmc_process(state, packet(builder.load(0x8000)))
    builder.tick(10)
    second = pmc_process(state, packet(builder.load(0x8000)))
    assert first == second == []
    assert state.counters == {Kind.LOAD: 2}


def test_pmc_flushes_the_last_window_at_the_end_of_the_stream(builder):
    state = PmcState(window=10, bounds={Kind.LOAD: (0, 2)})
    packets = [packet(builder.load(0x8000)) for _ in range(4)]
    for p in packets[:3]:
        pmc_process(state, p)
    assert state.on_idle({}) == []
    assert state.on_idle({0: 4}) == []      # one packet still on its way
    assert state.pending_work()
    pmc_process(state, packets[3])
    [verdict] = state.on_idle({0: 4})
    assert verdict.seq == packets[3].seq
    assert not state.pending_work()
    assert state.on_idle({0: 4}) == []


def test_sharded_pmc_merges_counts_before_checking(builder):
    states = {e: PmcState(window=10, bounds={Kind.LOAD: (0, 4)}, engine=e, shards=[0, 1]) for e in (0, 1)}
    packets = [packet(builder.load(0x8000)) for _ in range(6)]
    builder.tick(10)
    packets.append(packet(builder.load(0x8000)))

    verdicts = []
    for i, p in enumerate(packets):
        verdicts += states[i % 2].process(p)
        verdicts += pump(states)
    # three loads per shard stay under the bound locally; shard 1 has not left window 0 yet
    assert verdicts == []
    assert states[1].outbox == [] and states[0].tallies

    for engine in (1, 0):
        verdicts += states[engine].on_idle({0: 7})
        verdicts += pump(states)
    assert [(v.seq, v.violation) for v in verdicts] == [(6, ViolationClass.COUNTER_BOUND)]
    assert not any(s.pending_work() for s in states.values())


def test_pmc_shards_follow_the_dispatch_policy(make_config):
    fixed = make_config([{'kind': 'pmc', 'policy': 'FIXED', 'fixed_target': 2}], engines=4).kernels[0]
    assert make_kernel_state(fixed, 2).shards == [2]
    idle = make_kernel_state(fixed, 0)
    assert idle.position is None and idle.on_idle({0: 5}) == [] and not idle.pending_work()
    rotating = make_config([{'kind': 'pmc', 'engines': [1, 3]}], engines=4).kernels[0]
    state = make_kernel_state(rotating, 3)
    assert state.shards == [1, 3] and state.root == 1 and state.position == 1
    assert [round_robin_share(5, p, 2) for p in (0, 1)] == [3, 2]
    assert [round_robin_share(1, p, 3) for p in (0, 1, 2)] == [1, 0, 0]


def test_pmc_from_config(make_config):
    kernel = make_config([{'kind': 'pmc', 'params': {'window': 50, 'bounds': {'STORE': [1, 9]}}}]).kernels[0]
    state = make_kernel_state(kernel, 0)
    assert isinstance(state, PmcState)
    assert state.window == 50 and state.bounds == {Kind.STORE: (1, 9)}
    assert state.name == 'pmc#0'


# -- shadow stack -----------------------------------------------------------

def test_summary_head_packing():
    assert unpack_summary_head(pack_summary_head(3, 70, 2)) == (3, 70, 2)
    summary = BlockSummary(expected=(1, 1, 0), rets=[[4, 0x10, None]], entries=[0x20])
    assert not summary.complete
    summary.rets[0][2] = 0x99
    assert summary.complete


def test_single_engine_matches_calls_and_returns(builder):
    state = ShadowStackState(engine=0, ring=[0])
    assert shadowstack_process(state, packet(builder.call(0x1000))) is None
    assert shadowstack_process(state, packet(builder.call(0x2000))) is None
    assert shadowstack_process(state, packet(builder.ret(0x2004))) is None
    hijacked = packet(builder.ret(0x6666))
    verdict = shadowstack_process(state, hijacked)
    assert verdict.violation is ViolationClass.RET_MISMATCH and verdict.seq == hijacked.seq
    # an empty-stack return in block 0 has nothing to match
    assert shadowstack_process(state, packet(builder.ret(0x1004))) is not None


def test_underflow_in_a_later_block_is_checked_by_the_merge_engine(builder):
    states = {0: ShadowStackState(0, [0, 1]), 1: ShadowStackState(1, [0, 1])}
    for record in (builder.call(0x1000), builder.call(0x2000)):
        shadowstack_process(states[0], packet(record, block=0))
    good = packet(builder.ret(0x2004), block=1)
    bad = packet(builder.ret(0x9999), block=1)
    assert shadowstack_process(states[1], good) is None
    assert shadowstack_process(states[1], bad) is None
    assert states[1].unmatched and states[1].pending_work()

    # block 1 closes first; the root must wait for block 0
    states[1].on_idle({0: 2, 1: 2})
    assert pump(states) == []
    assert states[0].summaries[1].complete
    states[0].on_idle({0: 2, 1: 2})
    verdicts = pump(states)
    assert [(v.seq, v.violation) for v in verdicts] == [(bad.seq, ViolationClass.RET_MISMATCH)]
    assert states[0].merged == []
    assert not states[0].pending_work() and not states[1].pending_work()


def test_open_block_is_not_closed_before_it_is_sealed(builder):
    state = ShadowStackState(0, [0, 1])
    shadowstack_process(state, packet(builder.call(0x1000), block=0))
    state.on_idle({})
    state.on_idle({0: 5})
    assert not state.closed and state.outbox == []
    state.on_idle({0: 1})
    assert state.closed
    tags = [m.tag for m in state.drain_outbox()]
    assert tags == [MessageTag.SUMMARY_HEAD, MessageTag.SUMMARY_ENTRY]


def test_spilled_entries_are_recalled_from_the_neighbour(builder):
    states = {0: ShadowStackState(0, [0, 1], spill_threshold=2), 1: ShadowStackState(1, [0, 1])}
    root = states[0]
    for pc in (0x1000, 0x2000, 0x3000):
        shadowstack_process(root, packet(builder.call(pc)))
    assert root.stack == [0x2004, 0x3004] and root.spilled == 1

    shadowstack_process(root, packet(builder.ret(0x3004)))
    shadowstack_process(root, packet(builder.ret(0x2004)))
    hijacked = packet(builder.ret(0x7777))
    assert shadowstack_process(root, hijacked) is None
    assert root.blocked()

    verdicts = pump(states)
    assert not root.blocked()
    assert [v.seq for v in verdicts] == [hijacked.seq]
    assert states[1].stash == {(0, 0): []}


def test_spill_remnants_reach_the_merge_engine(builder):
    states = {0: ShadowStackState(0, [0, 1], spill_threshold=1), 1: ShadowStackState(1, [0, 1])}
    shadowstack_process(states[0], packet(builder.call(0x1000), block=0))
    shadowstack_process(states[0], packet(builder.call(0x2000), block=0))
    states[0].on_idle({0: 2})
    pump(states)
    assert states[0].merged == [0x1004, 0x2004]

    shadowstack_process(states[1], packet(builder.ret(0x2004), block=1))
    shadowstack_process(states[1], packet(builder.ret(0x1004), block=1))
    states[1].on_idle({0: 2, 1: 2})
    assert pump(states) == []
    assert states[0].merged == [] and states[0].next_block == 2


# -- heap checkers ----------------------------------------------------------

def test_shadow_memory_intervals():
    memory = ShadowMemory()
    memory.insert(0x100, 0x20, RegionState.LIVE)
    memory.insert(0x200, 0x10, RegionState.FREED)
    assert memory.find(0x11f)[0] == 0x100
    assert memory.find(0x120) is None
    assert memory.overlapping(0x110, 0x100) == [0x100, 0x200]
    assert [r[0] for r in memory.near(0x128, 16)] == [0x100]
    assert [r[0] for r in memory.near(0x1f8, 8)] == [0x200]
    assert memory.insert(0x118, 0x100, RegionState.LIVE) == [0x100, 0x200]
    assert len(memory) == 1 and memory.get(0x118) == (0x100, RegionState.LIVE)
    memory.remove(0x118)
    assert len(memory) == 0


@pytest.fixture
def heap(builder):
    builder.alloc(0x1000, 32)
    return builder


def test_asan_access_checks(heap):
    state = AsanState(redzone=16)
    asan_process(state, packet(heap.records[0]))
    assert asan_process(state, packet(heap.load(0x1018))) is None
    assert asan_process(state, packet(heap.store(0x1020))).violation is ViolationClass.OOB
    assert asan_process(state, packet(heap.load(0x0ff8))) is not None
    assert asan_process(state, packet(heap.load(0x5000))) is None
    assert asan_process(AsanState(strict=True), packet(heap.load(0x5000))) is not None


def test_asan_frees(heap):
    state = AsanState()
    asan_process(state, packet(heap.records[0]))
    assert asan_process(state, packet(heap.free(0x1000))) is None
    assert asan_process(state, packet(heap.load(0x1008))).violation is ViolationClass.OOB
    assert asan_process(state, packet(heap.free(0x1000))) is not None
    assert asan_process(state, packet(heap.free(0x4000))) is not None


def test_uaf_quarantine_is_fifo_under_a_byte_budget(builder):
    state = UafState(budget=64)
    for base in (0x1000, 0x2000, 0x3000):
        uaf_process(state, packet(builder.alloc(base, 32)))
    uaf_process(state, packet(builder.free(0x1000)))
    assert uaf_process(state, packet(builder.load(0x1010))).violation is ViolationClass.UAF

    uaf_process(state, packet(builder.free(0x2000)))
    uaf_process(state, packet(builder.free(0x3000)))
    assert state.quarantined_bytes == 64
    assert list(state.quarantine) == [(0x2000, 32), (0x3000, 32)]
    assert uaf_process(state, packet(builder.load(0x1010))) is None
    assert uaf_process(state, packet(builder.store(0x2008))) is not None
    assert uaf_process(state, packet(builder.free(0x2000))).violation is ViolationClass.UAF
    assert uaf_process(state, packet(builder.free(0x9000))) is None


def test_uaf_reallocation_releases_quarantined_space(builder):
    state = UafState()
    uaf_process(state, packet(builder.alloc(0x1000, 64)))
    uaf_process(state, packet(builder.free(0x1000)))
    uaf_process(state, packet(builder.alloc(0x1020, 16)))
    assert state.quarantined_bytes == 0 and not state.quarantine
    assert uaf_process(state, packet(builder.load(0x1000))) is None
    assert uaf_process(state, packet(builder.load(0x1024))) is None


@pytest.mark.parametrize('base', [0x8000, 0x8040, 0x80c0])
def test_broadcast_heap_errors_come_from_the_owning_engine_only(make_config, builder, base):
    config = make_config([{'kind': 'asan'}, {'kind': 'uaf'}], engines=4)
    asan = [make_kernel_state(config.kernels[0], e) for e in range(4)]
    uaf = [make_kernel_state(config.kernels[1], e) for e in range(4)]
    heap_events = [packet(builder.alloc(base, 16)), packet(builder.free(base)), packet(builder.free(base))]
    found = [(kernel, engine, v.seq) for kernel, states in (('asan', asan), ('uaf', uaf))
             for engine, state in enumerate(states) for p in heap_events for v in state.process(p)]
    owner = (base >> 6) % 4
    assert found == [('asan', owner, 2), ('uaf', owner, 2)]
    assert [e for e in range(4) if HeapOwnership(e, range(4), 6).owns(base)] == [owner]
    assert all(s.ownership.owns(base) == (e == owner) for states in (asan, uaf) for e, s in enumerate(states))
    # every engine still tracks the region
    assert all(state.memory.get(base) is not None for state in asan + uaf)


def test_make_kernel_state_per_kind(make_config):
    config = make_config([{'kind': 'shadow_stack', 'engines': [1, 3]}, {'kind': 'asan', 'params': {'strict': True}},
                          {'kind': 'uaf', 'params': {'quarantine_budget': 128}}])
    shadow = make_kernel_state(config.kernels[0], 3)
    assert isinstance(shadow, ShadowStackState)
    assert shadow.root == 1 and shadow.neighbour == 1
    assert make_kernel_state(config.kernels[1], 0).strict
    assert make_kernel_state(config.kernels[2], 0).budget == 128
