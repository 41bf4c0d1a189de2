import pytest

from fireguard.errors import ConfigError, InjectionError, TraceOrderError, TraceParseError
from fireguard.models.trace_record import AttackMode, AttackSpec, Kind, Trace
from fireguard.models.verdict import ViolationClass
from fireguard.utils.attacks import inject_attack, inject_attacks, plan_attacks
from fireguard.utils.trace_gen import HEAP_BASE, generate_synthetic, get_profile
from fireguard.utils.trace_io import (
    parse_trace, read_trace, read_truth, serialize_trace, validate_trace, write_truth,
)


def test_parse_load_line():
    trace = parse_trace("FGTRACE 1 4\nR 0 0 0x1000 0x03 0x0 0x2a 0x8000 - LOAD\n")
    record = trace[0]
    assert trace.commit_width == 4
    assert record.kind is Kind.LOAD
    assert record.pc == 0x1000
    assert record.mem_addr == 0x8000
    assert record.operand == 0x2a
    assert record.br_target is None


def test_parse_alloc_and_free_lines():
    trace = parse_trace("FGTRACE 1 4\nA 1 2 0x8000 16\nF 2 3 0x8000\n")
    alloc, free = trace.records
    assert alloc.kind is Kind.ALLOC and alloc.mem_addr == 0x8000 and alloc.operand == 16
    assert free.kind is Kind.FREE and free.mem_addr == 0x8000


def test_opcode_wider_than_seven_bits_names_the_line():
    with pytest.raises(TraceParseError) as excinfo:
        parse_trace("FGTRACE 1 4\nR 0 0 0x1000 0x03 0x0 0x0 0x8000 - LOAD\nR 1 0 0x1004 0x203 0x0 0x0 0x8000 - LOAD\n")
    assert excinfo.value.line_number == 3
    assert 'line 3' in str(excinfo.value)


def test_seq_regression_is_an_ordering_error():
    text = "FGTRACE 1 4\nA 5 1 0x8000 16\nA 4 2 0x9000 16\n"
    with pytest.raises(TraceOrderError):
        parse_trace(text)


def test_too_many_records_in_one_cycle():
    lines = ["FGTRACE 1 2"] + [f"A {i} 7 {0x8000 + 0x100 * i:#x} 16" for i in range(3)]
    with pytest.raises(TraceOrderError):
        parse_trace('\n'.join(lines))


def test_missing_header_and_heap_kind_on_r_line():
    with pytest.raises(TraceParseError):
        parse_trace("A 0 1 0x8000 16\n")
    with pytest.raises(TraceParseError):
        parse_trace("FGTRACE 1 4\nR 0 0 0x0 0x0b 0x0 0x10 0x8000 - ALLOC\n")


def test_branch_kind_requires_target():
    with pytest.raises(TraceParseError):
        parse_trace("FGTRACE 1 4\nR 0 0 0x1000 0x67 0x0 0x0 - - RET\n")


def test_serialized_trace_parses_back():
    trace = generate_synthetic(get_profile('baseline'), seed=1, length=500)
    assert parse_trace(serialize_trace(trace)) == trace


def test_generation_is_deterministic_and_valid():
    profile = get_profile('asan-heavy')
    first = generate_synthetic(profile, seed=7, length=3000)
    second = generate_synthetic(profile, seed=7, length=3000)
    assert serialize_trace(first) == serialize_trace(second)
    assert serialize_trace(first).startswith("FGTRACE 1 4\n")
    validate_trace(first)
    assert [r.seq for r in first] == list(range(3000))


def test_generated_calls_and_returns_balance():
    trace = generate_synthetic(get_profile('call-heavy'), seed=2, length=4000)
    stack = []
    for record in trace:
        if record.kind is Kind.CALL:
            stack.append(record.pc + 4)
        elif record.kind is Kind.RET:
            assert stack.pop() == record.br_target
    assert stack == []


def test_generated_accesses_stay_inside_live_regions():
    trace = generate_synthetic(get_profile('uaf-heavy'), seed=4, length=4000)
    live = {}
    for record in trace:
        if record.kind is Kind.ALLOC:
            live[record.mem_addr] = record.operand
        elif record.kind is Kind.FREE:
            del live[record.mem_addr]
        elif record.kind in (Kind.LOAD, Kind.STORE) and record.mem_addr >= HEAP_BASE \
                and record.mem_addr < 0x7FFE00000000:
            assert any(b <= record.mem_addr < b + s for b, s in live.items())


def test_unknown_profile_and_bad_mix():
    with pytest.raises(ConfigError):
        get_profile('parsec')
    with pytest.raises(ConfigError):
        get_profile('baseline', load=0.9, store=0.5)


def test_hijack_changes_only_the_target(builder):
    builder.call(0x1000)
    builder.tick().ret(0x1004)
    trace = builder.trace()
    attacked, truth = inject_attack(trace, AttackSpec(1, AttackMode.HIJACK_RET, 0x4444))
    assert attacked[1].br_target == 0x4444
    assert attacked[0] == trace[0]
    assert truth.seq == 1 and truth.expected_class is ViolationClass.RET_MISMATCH


def test_hijack_needs_a_ret_and_a_new_target(builder):
    builder.call(0x1000)
    builder.tick().ret(0x1004)
    trace = builder.trace()
    with pytest.raises(InjectionError):
        inject_attack(trace, AttackSpec(0, AttackMode.HIJACK_RET, 0x4444))
    with pytest.raises(InjectionError):
        inject_attack(trace, AttackSpec(1, AttackMode.HIJACK_RET, 0x1004))
    with pytest.raises(InjectionError):
        inject_attack(trace, AttackSpec(9, AttackMode.HIJACK_RET, 0x4444))


def test_flood_inserts_payload_records_and_shifts_the_rest(builder):
    builder.load(0x8000)
    builder.tick().alu()
    trace = builder.trace()
    attacked, truth = inject_attack(trace, AttackSpec(0, AttackMode.COUNTER_FLOOD, 10))
    assert len(attacked) == 12
    assert [r.seq for r in attacked] == list(range(12))
    assert all(r.kind is Kind.LOAD for r in attacked.records[1:11])
    assert attacked[11].kind is Kind.ALU
    assert truth.seq == 1 and truth.span == 10
    validate_trace(attacked)


def test_multiple_injections_keep_truth_in_new_seqs(builder):
    builder.load(0x8000)
    builder.tick().call(0x1000)
    builder.tick().ret(0x1004)
    trace = builder.trace()
    attacked, truths = inject_attacks(trace, [AttackSpec(0, AttackMode.COUNTER_FLOOD, 5),
                                              AttackSpec(2, AttackMode.HIJACK_RET, 0x9999)])
    by_mode = {t.mode: t for t in truths}
    assert by_mode[AttackMode.HIJACK_RET].seq == 7
    assert attacked[7].br_target == 0x9999
    with pytest.raises(InjectionError):
        inject_attacks(trace, [AttackSpec(2, AttackMode.HIJACK_RET, 1), AttackSpec(2, AttackMode.HIJACK_RET, 2)])


def test_plan_attacks_yields_injectable_specs(heap_trace):
    specs = plan_attacks(heap_trace, count=8, seed=9)
    attacked, truths = inject_attacks(heap_trace, specs)
    assert len(truths) == len(specs) == 8
    validate_trace(attacked)


def test_truth_file_round_trip(tmp_path, builder):
    builder.call(0x1000)
    builder.tick().ret(0x1004)
    _, truths = inject_attacks(builder.trace(), [AttackSpec(1, AttackMode.HIJACK_RET, 0x4444)])
    path = tmp_path / 't.truth.json'
    write_truth(truths, path)
    assert read_truth(path) == truths


def test_empty_trace():
    trace = parse_trace("FGTRACE 1 4\n")
    assert isinstance(trace, Trace) and len(trace) == 0


def test_undecodable_bytes_name_the_line(tmp_path):
    data = b"FGTRACE 1 4\nA 0 1 0x8000 16\n\xffF 1 2 0x8000\n"
    with pytest.raises(TraceParseError) as excinfo:
        parse_trace(data)
    assert excinfo.value.line_number == 3
    path = tmp_path / 'broken.fgt'
    path.write_bytes(b"FGTRACE 1 4\n\xff\n")
    with pytest.raises(TraceParseError) as excinfo:
        read_trace(path)
    assert excinfo.value.line_number == 2


@pytest.mark.parametrize('seq', ['²', '٣', '１'])
def test_decimal_fields_are_ascii_only(seq):
    with pytest.raises(TraceParseError):
        parse_trace(f"FGTRACE 1 4\nA {seq} 1 0x8000 16\n")


def test_undecodable_truth_file(tmp_path):
    path = tmp_path / 't.truth.json'
    path.write_bytes(b'[{"seq": 1\xff}]')
    with pytest.raises(TraceParseError):
        read_truth(path)
