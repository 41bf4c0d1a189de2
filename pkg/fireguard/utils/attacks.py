# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Attack injection and planning over traces.
See instructions/architecture for development guidelines.
"""

import logging
from collections import deque
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from fireguard.errors import InjectionError
from fireguard.models.trace_record import (
    ACCESS_KINDS, EXPECTED_CLASS, MASK64, AttackMode, AttackSpec, GroundTruth, Kind, Trace, TraceRecord,
)
from fireguard.utils.trace_gen import LOAD_OPCODE, NOISE_BASE, NOISE_SPAN, TEXT_BASE, TEXT_SPAN

logger = logging.getLogger(__name__)

FLOOD_FUNCT3 = 3    # ld
DEFAULT_FLOOD = 256


def _flood_records(target: TraceRecord, count: int, commit_width: int) -> List[TraceRecord]:
    return [
        TraceRecord(seq=target.seq + 1 + k, cycle=target.cycle + 1 + k // commit_width, pc=target.pc,
                    opcode=LOAD_OPCODE, funct3=FLOOD_FUNCT3, kind=Kind.LOAD,
                    operand=0, mem_addr=NOISE_BASE + 8 * (k % (NOISE_SPAN // 8)))
        for k in range(count)
    ]


def inject_attack(trace: Trace, spec: AttackSpec) -> Tuple[Trace, GroundTruth]:
    """
    Apply one attack.

    Args:
        trace: Clean (or already attacked) trace
        spec: Target seq, mode and payload

    Returns:
        (new trace, ground truth). Exactly the targeted record changes, or for
        COUNTER_FLOOD exactly `payload` records are inserted after the target.

    Raises:
        InjectionError: unknown seq or a record kind incompatible with the mode
    """
    try:
        index = trace.index_of(spec.seq)
    except KeyError:
        raise InjectionError(f"no record with seq {spec.seq}") from None
    target = trace.records[index]
    records = list(trace.records)
    expected = EXPECTED_CLASS[spec.mode]

    if spec.mode is AttackMode.HIJACK_RET:
        if target.kind is not Kind.RET:
            raise InjectionError(f"HIJACK_RET needs a RET at seq {spec.seq}, found {target.kind.name}")
        if not 0 <= spec.payload <= MASK64 or spec.payload == target.br_target:
            raise InjectionError(f"HIJACK_RET payload {spec.payload:#x} must be a different 64-bit target")
        records[index] = replace(target, br_target=spec.payload)
        return Trace(trace.commit_width, records), GroundTruth(spec.seq, spec.mode, expected)

    if spec.mode in (AttackMode.OOB_ACCESS, AttackMode.UAF_ACCESS):
        if target.kind not in ACCESS_KINDS:
            raise InjectionError(f"{spec.mode.value} needs a LOAD or STORE at seq {spec.seq}, "
                                 f"found {target.kind.name}")
        if not 0 <= spec.payload <= MASK64:
            raise InjectionError(f"address {spec.payload:#x} does not fit in 64 bits")
        records[index] = replace(target, mem_addr=spec.payload)
        return Trace(trace.commit_width, records), GroundTruth(spec.seq, spec.mode, expected)

    if spec.payload < 1:
        raise InjectionError("COUNTER_FLOOD needs a positive record count")
    flood = _flood_records(target, spec.payload, trace.commit_width)
    # Later records move past the flood; +1 keeps the target's cycle-mates out of the last flood group
    cycle_shift = (spec.payload + trace.commit_width - 1) // trace.commit_width + 1
    shifted = [replace(r, seq=r.seq + spec.payload, cycle=r.cycle + cycle_shift) for r in records[index + 1:]]
    new_records = records[:index + 1] + flood + shifted
    truth = GroundTruth(target.seq + 1, spec.mode, expected, span=spec.payload)
    return Trace(trace.commit_width, new_records), truth


def inject_attacks(trace: Trace, specs: Sequence[AttackSpec]) -> Tuple[Trace, List[GroundTruth]]:
    """
    Apply several attacks; seqs in `specs` refer to the input trace.

    Returns:
        (new trace, ground truths sorted by seq, expressed in the new trace's seqs)
    """
    seqs = [s.seq for s in specs]
    if len(set(seqs)) != len(seqs):
        raise InjectionError("at most one attack per record")
    truths: List[GroundTruth] = []
    for spec in sorted(specs, key=lambda s: s.seq, reverse=True):
        trace, truth = inject_attack(trace, spec)
        if spec.mode is AttackMode.COUNTER_FLOOD:
            truths = [t.shifted(spec.payload) for t in truths]
        truths.append(truth)
    return trace, sorted(truths, key=lambda t: t.seq)


def _candidates(trace: Trace, quarantine_budget: int) -> Dict[AttackMode, List[Tuple[int, int, int]]]:
    """
    Replay heap events and collect (seq, region_base, region_size) targets per mode.

    OOB targets are accesses made while their region is live; UAF targets pair an
    access with the most recently freed region still inside the quarantine budget.
    """
    live: Dict[int, int] = {}
    quarantine: deque = deque()
    quarantined_bytes = 0
    found: Dict[AttackMode, List[Tuple[int, int, int]]] = {mode: [] for mode in AttackMode}

    for record in trace.records:
        if record.kind is Kind.ALLOC:
            live[record.mem_addr] = record.operand
        elif record.kind is Kind.FREE and record.mem_addr in live:
            size = live.pop(record.mem_addr)
            quarantine.append((record.mem_addr, size))
            quarantined_bytes += size
            while quarantined_bytes > quarantine_budget and quarantine:
                _, evicted = quarantine.popleft()
                quarantined_bytes -= evicted
        elif record.kind is Kind.RET:
            found[AttackMode.HIJACK_RET].append((record.seq, 0, 0))
        elif record.kind in ACCESS_KINDS:
            for base, size in live.items():
                if base <= record.mem_addr < base + size:
                    found[AttackMode.OOB_ACCESS].append((record.seq, base, size))
                    break
            if quarantine:
                base, size = quarantine[-1]
                found[AttackMode.UAF_ACCESS].append((record.seq, base, size))
        found[AttackMode.COUNTER_FLOOD].append((record.seq, 0, 0))
    return found


def plan_attacks(trace: Trace, count: int, seed: int, modes: Optional[Sequence[AttackMode]] = None,
                 flood_size: int = DEFAULT_FLOOD, quarantine_budget: int = 1 << 20) -> List[AttackSpec]:
    """
    Pick `count` valid attack targets, cycling through `modes`.

    Modes without any valid target in the trace are skipped with a warning.

    Returns:
        AttackSpecs sorted by seq, at most one per record
    """
    modes = list(modes or AttackMode)
    rng = np.random.default_rng(seed)
    pools = _candidates(trace, quarantine_budget)
    used = set()
    specs: List[AttackSpec] = []
    for i in range(count):
        mode = modes[i % len(modes)]
        pool = [c for c in pools[mode] if c[0] not in used]
        if not pool:
            logger.warning("No remaining %s target in trace; skipping", mode.value)
            continue
        seq, base, size = pool[int(rng.integers(len(pool)))]
        used.add(seq)
        if mode is AttackMode.HIJACK_RET:
            real = trace.records[trace.index_of(seq)].br_target
            payload = TEXT_BASE + 4 * int(rng.integers(TEXT_SPAN // 4))
            if payload == real:
                payload += 4
        elif mode is AttackMode.OOB_ACCESS:
            payload = base + size
        elif mode is AttackMode.UAF_ACCESS:
            payload = base + 8 * int(rng.integers(max(1, size // 8)))
        else:
            payload = flood_size
        specs.append(AttackSpec(seq, mode, payload))
    return sorted(specs, key=lambda s: s.seq)
