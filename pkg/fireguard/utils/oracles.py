# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Timing-free reference checkers.

Each oracle makes one pass over the trace records a kernel subscribes to and
reports (seq, class) pairs. They share no state machinery with the engine-side
kernels, so the full pipeline can be compared against them.
See instructions/architecture for development guidelines.
"""

from collections import deque
from typing import Dict, List, Optional, Sequence, Set, Tuple

from fireguard.config import KernelConfig, RunConfig
from fireguard.models.kernel import KernelKind
from fireguard.models.trace_record import ACCESS_KINDS, MASK64, Kind, Trace, TraceRecord
from fireguard.models.verdict import ViolationClass
from fireguard.utils.filter import FilterTable, classify, configured_table

VerdictKey = Tuple[int, ViolationClass]


def sensitive_seqs(trace: Trace, table: FilterTable) -> List[int]:
    """Seqs of the records the filter turns into valid packets, in commit order."""
    return [r.seq for r in trace.records if table[r.table_index].gid != 0]


def subscribed(trace: Trace, table: FilterTable, kernel: KernelConfig) -> List[TraceRecord]:
    gids = set(kernel.gids)
    return [r for r in trace.records if table[r.table_index].gid in gids]


def _address(table: FilterTable, record: TraceRecord) -> int:
    return classify(table, record).address


def pmc_oracle(records: Sequence[TraceRecord], window: int,
               bounds: Dict[Kind, Tuple[int, int]]) -> Set[VerdictKey]:
    """
    Window counters over the whole subscribed stream. A window is checked when the
    first record of a later window arrives, and that record is reported; the last
    window is checked against the last record.
    """
    def outside(counts: Dict[Kind, int]) -> bool:
        return any(counts.get(kind, 0) < lo or counts.get(kind, 0) > hi for kind, (lo, hi) in bounds.items())

    found: Set[VerdictKey] = set()
    counts: Dict[Kind, int] = {}
    current: Optional[int] = None
    for record in records:
        win = record.cycle // window
        if win != current:
            if current is not None and outside(counts):
                found.add((record.seq, ViolationClass.COUNTER_BOUND))
            counts, current = {}, win
        counts[record.kind] = counts.get(record.kind, 0) + 1
    if records and outside(counts):
        found.add((records[-1].seq, ViolationClass.COUNTER_BOUND))
    return found


def shadow_stack_oracle(records: Sequence[TraceRecord]) -> Set[VerdictKey]:
    """One unbounded stack over every CALL/RET in commit order."""
    stack: List[int] = []
    found: Set[VerdictKey] = set()
    for record in records:
        if record.kind is Kind.CALL:
            stack.append((record.pc + 4) & MASK64)
        elif record.kind is Kind.RET:
            if not stack or stack.pop() != record.br_target:
                found.add((record.seq, ViolationClass.RET_MISMATCH))
    return found


def nesting_depth(trace: Trace) -> int:
    """Deepest CALL nesting in the trace; unmatched RETs do not go below zero."""
    depth = deepest = 0
    for record in trace.records:
        if record.kind is Kind.CALL:
            depth += 1
            deepest = max(deepest, depth)
        elif record.kind is Kind.RET:
            depth = max(0, depth - 1)
    return deepest


def _containing(regions: Dict[int, int], addr: int) -> Optional[int]:
    for base, size in regions.items():
        if base <= addr < base + max(size, 1):
            return base
    return None


def _drop_overlaps(regions: Dict[int, int], base: int, size: int) -> List[Tuple[int, int]]:
    hit = [(b, s) for b, s in regions.items() if b < base + max(size, 1) and base < b + max(s, 1)]
    for b, _ in hit:
        del regions[b]
    return hit


def asan_oracle(records: Sequence[TraceRecord], table: FilterTable, redzone: int = 16,
                strict: bool = False) -> Set[VerdictKey]:
    live: Dict[int, int] = {}
    freed: Dict[int, int] = {}
    found: Set[VerdictKey] = set()
    for record in records:
        addr = _address(table, record)
        if record.kind is Kind.ALLOC:
            _drop_overlaps(live, addr, record.operand)
            _drop_overlaps(freed, addr, record.operand)
            live[addr] = record.operand
        elif record.kind is Kind.FREE:
            if addr not in live:
                found.add((record.seq, ViolationClass.OOB))
            else:
                freed[addr] = live.pop(addr)
        elif record.kind in ACCESS_KINDS:
            if _containing(live, addr) is not None:
                continue
            if _containing(freed, addr) is not None or strict:
                found.add((record.seq, ViolationClass.OOB))
                continue
            if any(base - redzone <= addr < base + max(size, 1) + redzone for base, size in live.items()):
                found.add((record.seq, ViolationClass.OOB))
    return found


def uaf_oracle(records: Sequence[TraceRecord], table: FilterTable, budget: int = 1 << 20) -> Set[VerdictKey]:
    live: Dict[int, int] = {}
    quarantined: Dict[int, int] = {}
    order: deque = deque()
    held = 0
    found: Set[VerdictKey] = set()
    for record in records:
        addr = _address(table, record)
        if record.kind is Kind.ALLOC:
            for base, size in _drop_overlaps(quarantined, addr, record.operand):
                order.remove(base)
                held -= size
            _drop_overlaps(live, addr, record.operand)
            live[addr] = record.operand
        elif record.kind is Kind.FREE:
            if addr in quarantined:
                found.add((record.seq, ViolationClass.UAF))
            elif addr in live:
                quarantined[addr] = live.pop(addr)
                order.append(addr)
                held += quarantined[addr]
                while held > budget and order:
                    held -= quarantined.pop(order.popleft())
        elif record.kind in ACCESS_KINDS and _containing(quarantined, addr) is not None:
            found.add((record.seq, ViolationClass.UAF))
    return found


def kernel_oracle(trace: Trace, table: FilterTable, kernel: KernelConfig) -> Set[VerdictKey]:
    """Expected verdicts of one deployed kernel."""
    records = subscribed(trace, table, kernel)
    params = kernel.params
    if kernel.kind is KernelKind.PMC:
        bounds = {Kind[name]: (int(lo), int(hi)) for name, (lo, hi) in params['bounds'].items()}
        return pmc_oracle(records, params['window'], bounds)
    if kernel.kind is KernelKind.SHADOW_STACK:
        return shadow_stack_oracle(records)
    if kernel.kind is KernelKind.ASAN:
        return asan_oracle(records, table, params['redzone'], params['strict'])
    return uaf_oracle(records, table, params['quarantine_budget'])


def expected_verdicts(trace: Trace, config: RunConfig,
                      table: Optional[FilterTable] = None) -> Set[Tuple[str, int, ViolationClass]]:
    """(kernel name, seq, class) for every kernel of a run configuration."""
    if table is None:
        table = configured_table(config)
    return {(kernel.name, seq, cls) for kernel in config.kernels
            for seq, cls in kernel_oracle(trace, table, kernel)}
