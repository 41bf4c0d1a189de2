# IMPORTANT: Read instructions/architecture before making changes to this file
"""
FGTRACE text format: parsing, validation and normalized serialization, plus the
ground-truth sidecar files written next to attacked traces.
See instructions/architecture for development guidelines.

    FGTRACE 1 <commit_width>
    R <seq> <cycle> <pc> <opcode> <funct3> <operand> <mem_addr|-> <br_target|-> <kind>
    A <seq> <cycle> <addr> <size>
    F <seq> <cycle> <addr>
"""

import io
import json
from pathlib import Path
from typing import IO, Iterable, List, Optional, Union

from fireguard.errors import TraceOrderError, TraceParseError
from fireguard.models.trace_record import (
    HEAP_KINDS, GroundTruth, Kind, Trace, TraceRecord, alloc_record, free_record,
)

FORMAT_VERSION = 1
HEADER_TAG = 'FGTRACE'

Source = Union[bytes, str, IO]


def _hex(token: str, what: str, line_number: int) -> int:
    if not token.lower().startswith('0x'):
        raise TraceParseError(f"{what} {token!r} must be hex with 0x prefix", line_number)
    try:
        return int(token, 16)
    except ValueError:
        raise TraceParseError(f"{what} {token!r} is not a hex number", line_number) from None


def _dec(token: str, what: str, line_number: int) -> int:
    if not (token.isascii() and token.isdigit()):
        raise TraceParseError(f"{what} {token!r} must be a decimal integer", line_number)
    return int(token)


def _optional_hex(token: str, what: str, line_number: int) -> Optional[int]:
    return None if token == '-' else _hex(token, what, line_number)


def _lines(source: Source) -> Iterable[Union[bytes, str]]:
    if isinstance(source, bytes):
        return io.BytesIO(source)
    if isinstance(source, str):
        return io.StringIO(source)
    return source


def parse_record(line: str, line_number: int) -> TraceRecord:
    """Parse one R/A/F line."""
    tokens = line.split()
    tag = tokens[0]
    if tag == 'R':
        if len(tokens) != 10:
            raise TraceParseError(f"R line needs 10 fields, got {len(tokens)}", line_number)
        kind_name = tokens[9]
        if kind_name not in Kind.__members__:
            raise TraceParseError(f"unknown kind {kind_name!r}", line_number)
        kind = Kind[kind_name]
        if kind in HEAP_KINDS:
            raise TraceParseError(f"{kind_name} events must use A/F lines", line_number)
        record = TraceRecord(
            seq=_dec(tokens[1], 'seq', line_number),
            cycle=_dec(tokens[2], 'cycle', line_number),
            pc=_hex(tokens[3], 'pc', line_number),
            opcode=_hex(tokens[4], 'opcode', line_number),
            funct3=_hex(tokens[5], 'funct3', line_number),
            kind=kind,
            operand=_hex(tokens[6], 'operand', line_number),
            mem_addr=_optional_hex(tokens[7], 'mem_addr', line_number),
            br_target=_optional_hex(tokens[8], 'br_target', line_number),
        )
    elif tag == 'A':
        if len(tokens) != 5:
            raise TraceParseError(f"A line needs 5 fields, got {len(tokens)}", line_number)
        record = alloc_record(_dec(tokens[1], 'seq', line_number), _dec(tokens[2], 'cycle', line_number),
                              _hex(tokens[3], 'addr', line_number), _dec(tokens[4], 'size', line_number))
    elif tag == 'F':
        if len(tokens) != 4:
            raise TraceParseError(f"F line needs 4 fields, got {len(tokens)}", line_number)
        record = free_record(_dec(tokens[1], 'seq', line_number), _dec(tokens[2], 'cycle', line_number),
                             _hex(tokens[3], 'addr', line_number))
    else:
        raise TraceParseError(f"unknown record tag {tag!r}", line_number)

    problem = record.field_problem()
    if problem:
        raise TraceParseError(problem, line_number)
    return record


def validate_trace(trace: Trace) -> None:
    """Check every record invariant of an in-memory trace (generated or attacked)."""
    records = trace.records
    commit_width = trace.commit_width
    same_cycle = 0
    for i, record in enumerate(records):
        problem = record.field_problem()
        if problem:
            raise TraceParseError(f"seq {record.seq}: {problem}")
        if i:
            previous = records[i - 1]
            if record.seq <= previous.seq:
                raise TraceOrderError(f"seq {record.seq} does not increase (after {previous.seq})")
            if record.cycle < previous.cycle:
                raise TraceOrderError(f"cycle {record.cycle} regresses (after {previous.cycle})")
            same_cycle = same_cycle + 1 if record.cycle == previous.cycle else 1
        else:
            same_cycle = 1
        if same_cycle > commit_width:
            raise TraceOrderError(f"more than {commit_width} records commit in cycle {record.cycle}")


def parse_trace(source: Source) -> Trace:
    """
    Parse an FGTRACE document.

    Args:
        source: bytes, text or a readable text or binary stream (bytes are decoded line by line)

    Returns:
        Trace with records in file order

    Raises:
        TraceParseError: malformed line (the message names the line number)
        TraceOrderError: seq regression, cycle regression or commit-width overflow
    """
    commit_width = None
    records: List[TraceRecord] = []
    same_cycle = 0
    for line_number, raw in enumerate(_lines(source), start=1):
        if isinstance(raw, bytes):
            try:
                raw = raw.decode('utf-8')
            except UnicodeDecodeError as e:
                raise TraceParseError(f"not UTF-8 text ({e.reason} at byte {e.start})", line_number) from None
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        if commit_width is None:
            tokens = line.split()
            if len(tokens) != 3 or tokens[0] != HEADER_TAG:
                raise TraceParseError(f"expected header '{HEADER_TAG} {FORMAT_VERSION} <commit_width>'", line_number)
            if tokens[1] != str(FORMAT_VERSION):
                raise TraceParseError(f"unsupported format version {tokens[1]}", line_number)
            commit_width = _dec(tokens[2], 'commit_width', line_number)
            if commit_width < 1:
                raise TraceParseError("commit_width must be >= 1", line_number)
            continue

        record = parse_record(line, line_number)
        if records:
            previous = records[-1]
            if record.seq <= previous.seq:
                raise TraceOrderError(f"seq {record.seq} does not increase (after {previous.seq})", line_number)
            if record.cycle < previous.cycle:
                raise TraceOrderError(f"cycle {record.cycle} regresses (after {previous.cycle})", line_number)
            same_cycle = same_cycle + 1 if record.cycle == previous.cycle else 1
        else:
            same_cycle = 1
        if same_cycle > commit_width:
            raise TraceOrderError(f"more than {commit_width} records commit in cycle {record.cycle}", line_number)
        records.append(record)

    if commit_width is None:
        raise TraceParseError("missing FGTRACE header")
    return Trace(commit_width=commit_width, records=records)


def format_record(record: TraceRecord) -> str:
    if record.kind is Kind.ALLOC:
        return f"A {record.seq} {record.cycle} {record.mem_addr:#x} {record.operand}"
    if record.kind is Kind.FREE:
        return f"F {record.seq} {record.cycle} {record.mem_addr:#x}"
    mem = '-' if record.mem_addr is None else f"{record.mem_addr:#x}"
    target = '-' if record.br_target is None else f"{record.br_target:#x}"
    return (f"R {record.seq} {record.cycle} {record.pc:#x} 0x{record.opcode:02x} {record.funct3:#x} "
            f"{record.operand:#x} {mem} {target} {record.kind.name}")


def serialize_trace(trace: Trace) -> str:
    """Normalized FGTRACE text; parse_trace(serialize_trace(t)) reproduces t."""
    lines = [f"{HEADER_TAG} {FORMAT_VERSION} {trace.commit_width}"]
    lines.extend(format_record(r) for r in trace.records)
    return '\n'.join(lines) + '\n'


def read_trace(path: Path) -> Trace:
    with open(path, 'rb') as f:
        return parse_trace(f)


def write_trace(trace: Trace, path: Path) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        f.write(serialize_trace(trace))


def write_truth(truths: List[GroundTruth], path: Path) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump([t.to_dict() for t in truths], f, indent=2, sort_keys=True)
        f.write('\n')


def read_truth(path: Path) -> List[GroundTruth]:
    with open(path, 'r', encoding='utf-8') as f:
        try:
            data = json.load(f)
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise TraceParseError(f"{path}: ground truth is not valid JSON ({e})") from e
    try:
        return [GroundTruth.from_dict(item) for item in data]
    except (KeyError, TypeError, ValueError) as e:
        raise TraceParseError(f"{path}: malformed ground truth entry ({e})") from e
