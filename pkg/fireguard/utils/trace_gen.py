# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Synthetic workload traces.
See instructions/architecture for development guidelines.

Each record field family draws from its own child of one numpy SeedSequence, so
changing e.g. the pacing model never perturbs addresses or operands.
"""

from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, List, Optional

import numpy as np

from fireguard.errors import ConfigError
from fireguard.models.trace_record import (
    MASK64, Kind, Trace, TraceRecord, alloc_record, free_record,
)

HEAP_BASE = 0x10000000
HEAP_GAP = 32
TEXT_BASE = 0x10000
TEXT_SPAN = 0x100000
NOISE_BASE = 0x7FFE00000000
NOISE_SPAN = 0x100000

LOAD_OPCODE = 0x03
STORE_OPCODE = 0x23
BRANCH_OPCODE = 0x63
JALR_OPCODE = 0x67
JAL_OPCODE = 0x6F
ALU_OPCODES = (0x33, 0x13)
SYSTEM_OPCODE = 0x73

LOAD_SIZES = (1, 2, 4, 8, 1, 2, 4)      # lb lh lw ld lbu lhu lwu
STORE_SIZES = (1, 2, 4, 8)              # sb sh sw sd
BRANCH_FUNCT3 = (0, 1, 4, 5, 6, 7)

# (opcode, funct3) pairs the generator emits per kind; the filter programs these
KIND_ENCODINGS = {
    Kind.LOAD: [(LOAD_OPCODE, f) for f in range(len(LOAD_SIZES))],
    Kind.STORE: [(STORE_OPCODE, f) for f in range(len(STORE_SIZES))],
    Kind.CALL: [(JAL_OPCODE, 0)],
    Kind.RET: [(JALR_OPCODE, 0)],
    Kind.JUMP: [(BRANCH_OPCODE, f) for f in BRANCH_FUNCT3],
    Kind.ALLOC: [(0x0B, 0)],
    Kind.FREE: [(0x0B, 1)],
}

STREAMS = ('mix', 'pacing', 'heap', 'address', 'values', 'control')


@dataclass(frozen=True)
class WorkloadProfile:
    """
    Instruction mix and shape of a synthetic workload.

    Mix fractions are per record; whatever they leave over becomes ALU work.
    """
    name: str = 'custom'
    commit_width: int = 4
    ipc: float = 2.0
    load: float = 0.25
    store: float = 0.10
    call_ret: float = 0.04
    jump: float = 0.12
    alloc: float = 0.004
    free: float = 0.003
    other: float = 0.01
    noise: float = 0.0
    max_depth: int = 32
    max_live: int = 64
    min_size: int = 16
    max_size: int = 256

    def validate(self) -> None:
        ratios = {k: getattr(self, k) for k in ('load', 'store', 'call_ret', 'jump', 'alloc', 'free', 'other')}
        if any(v < 0 for v in ratios.values()):
            raise ConfigError(f"profile {self.name}: mix ratios must be non-negative")
        if sum(ratios.values()) > 1.0 + 1e-12:
            raise ConfigError(f"profile {self.name}: mix ratios sum to {sum(ratios.values()):.3f} > 1")
        if self.commit_width < 1:
            raise ConfigError(f"profile {self.name}: commit_width must be >= 1")
        if not 0 < self.ipc <= self.commit_width:
            raise ConfigError(f"profile {self.name}: ipc must be in (0, commit_width]")
        if not 0.0 <= self.noise <= 1.0:
            raise ConfigError(f"profile {self.name}: noise must be a fraction")
        if self.min_size < 1 or self.max_size < self.min_size:
            raise ConfigError(f"profile {self.name}: need 1 <= min_size <= max_size")
        if self.max_depth < 1 or self.max_live < 1:
            raise ConfigError(f"profile {self.name}: max_depth and max_live must be >= 1")


PROFILES: Dict[str, WorkloadProfile] = {
    'baseline': WorkloadProfile(name='baseline'),
    'pmc-light': WorkloadProfile(name='pmc-light', ipc=1.5, load=0.15, store=0.05, call_ret=0.02, jump=0.10),
    'call-heavy': WorkloadProfile(name='call-heavy', load=0.20, store=0.08, call_ret=0.20, jump=0.10, max_depth=48),
    'asan-heavy': WorkloadProfile(name='asan-heavy', ipc=2.5, load=0.35, store=0.20, call_ret=0.03, jump=0.08,
                                  alloc=0.01, free=0.008),
    'uaf-heavy': WorkloadProfile(name='uaf-heavy', load=0.30, store=0.15, call_ret=0.03, jump=0.08,
                                 alloc=0.02, free=0.018),
    'x264-like': WorkloadProfile(name='x264-like', ipc=3.0, load=0.45, store=0.25, call_ret=0.02, jump=0.06,
                                 alloc=0.002, free=0.0015),
}


def get_profile(name: str, **overrides: Any) -> WorkloadProfile:
    """
    Look up a named profile, optionally overriding fields.

    Raises:
        ConfigError: unknown profile name or field
    """
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r} (choose from {', '.join(sorted(PROFILES))})")
    return profile_from_dict(overrides, base=PROFILES[name])


def profile_from_dict(data: Dict[str, Any], base: Optional[WorkloadProfile] = None) -> WorkloadProfile:
    base = base or WorkloadProfile()
    known = {f.name for f in fields(WorkloadProfile)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown profile fields: {', '.join(sorted(unknown))}")
    profile = replace(base, **data)
    profile.validate()
    return profile


def profile_to_dict(profile: WorkloadProfile) -> Dict[str, Any]:
    return asdict(profile)


def _streams(seed: int) -> Dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, children)}


def _commit_cycles(length: int, profile: WorkloadProfile, rng: np.random.Generator) -> List[int]:
    """Commit cycle per record: binomial group sizes around the profile's IPC, first cycle 1."""
    cycles: List[int] = []
    cycle = 1
    p = profile.ipc / profile.commit_width
    while len(cycles) < length:
        batch = rng.binomial(profile.commit_width, p, size=max(64, length // profile.commit_width + 1)).tolist()
        for group in batch:
            cycles.extend([cycle] * min(group, length - len(cycles)))
            cycle += 1
            if len(cycles) == length:
                break
    return cycles


def generate_synthetic(profile: WorkloadProfile, seed: int, length: int) -> Trace:
    """
    Generate a deterministic synthetic trace.

    CALL/RET pairs are balanced and properly nested, every LOAD/STORE address falls
    inside a live heap region unless it was drawn as a background noise address,
    and the heap is a bump allocator that never reuses addresses.

    Args:
        profile: Workload profile
        seed: Seed for the split PRNG streams
        length: Number of records

    Returns:
        Trace with seq 0..length-1

    Raises:
        ConfigError: invalid profile
    """
    profile.validate()
    if length < 0:
        raise ConfigError("length must be non-negative")
    streams = _streams(seed)

    mix = streams['mix'].random(length).tolist()
    control = streams['control'].random(length).tolist()
    call_targets = streams['control'].integers(0, TEXT_SPAN // 4, size=length).tolist()
    branch_offsets = streams['control'].integers(-64, 64, size=length).tolist()
    picks = streams['heap'].random(length).tolist()
    sizes = streams['heap'].integers(profile.min_size, profile.max_size + 1, size=length).tolist()
    offsets = streams['address'].random(length).tolist()
    noise_draws = streams['address'].random(length).tolist()
    noise_offsets = streams['address'].integers(0, NOISE_SPAN // 8, size=length).tolist()
    funct_draws = streams['values'].integers(0, 8, size=length).tolist()
    operands = streams['values'].integers(0, 1 << 63, size=length, dtype=np.int64).tolist()
    cycles = _commit_cycles(length, profile, streams['pacing'])

    thresholds = np.cumsum([profile.load, profile.store, profile.call_ret, profile.jump,
                            profile.alloc, profile.free, profile.other]).tolist()

    records: List[TraceRecord] = []
    live: List[tuple] = []          # (base, size) in allocation order
    next_base = HEAP_BASE
    calls: List[int] = []           # generator-side return addresses
    pc = TEXT_BASE

    for i in range(length):
        cycle = cycles[i]
        remaining = length - i
        u = mix[i]
        category = next((k for k, t in enumerate(thresholds) if u < t), len(thresholds))

        # Close open frames before the trace ends
        if calls and len(calls) >= remaining:
            category = 2
        if category == 2:
            can_call = profile.call_ret > 0 and len(calls) < profile.max_depth and len(calls) + 1 <= remaining - 1
            if calls and (not can_call or control[i] < 0.5):
                ret_addr = calls.pop()
                records.append(TraceRecord(i, cycle, pc, JALR_OPCODE, 0, Kind.RET,
                                           operand=0, br_target=ret_addr))
                pc = ret_addr
                continue
            if can_call:
                target = TEXT_BASE + 4 * call_targets[i]
                calls.append((pc + 4) & MASK64)
                records.append(TraceRecord(i, cycle, pc, JAL_OPCODE, 0, Kind.CALL,
                                           operand=(pc + 4) & MASK64, br_target=target))
                pc = target
                continue
            category = len(thresholds)

        if category in (0, 1):
            is_load = category == 0
            sizes_table = LOAD_SIZES if is_load else STORE_SIZES
            funct3 = funct_draws[i] % len(sizes_table)
            width = sizes_table[funct3]
            if noise_draws[i] < profile.noise:
                addr = NOISE_BASE + 8 * noise_offsets[i]
            elif live:
                base, size = live[int(picks[i] * len(live))]
                slots = size // width
                addr = base + width * int(offsets[i] * slots)
            else:
                addr = None
            if addr is not None:
                records.append(TraceRecord(i, cycle, pc, LOAD_OPCODE if is_load else STORE_OPCODE, funct3,
                                           Kind.LOAD if is_load else Kind.STORE,
                                           operand=operands[i], mem_addr=addr))
                pc += 4
                continue
        elif category == 3:
            funct3 = BRANCH_FUNCT3[funct_draws[i] % len(BRANCH_FUNCT3)]
            target = max(TEXT_BASE, pc + 4 * branch_offsets[i])
            records.append(TraceRecord(i, cycle, pc, BRANCH_OPCODE, funct3, Kind.JUMP,
                                       operand=0, br_target=target))
            pc = target
            continue
        elif category == 4 and len(live) < profile.max_live:
            size = (sizes[i] + 15) // 16 * 16
            base = next_base
            next_base = (base + size + HEAP_GAP + 15) // 16 * 16
            live.append((base, size))
            records.append(alloc_record(i, cycle, base, size))
            continue
        elif category == 5 and live:
            base, _ = live.pop(int(picks[i] * len(live)))
            records.append(free_record(i, cycle, base))
            continue
        elif category == 6:
            records.append(TraceRecord(i, cycle, pc, SYSTEM_OPCODE, funct_draws[i] % 4, Kind.OTHER,
                                       operand=operands[i]))
            pc += 4
            continue

        opcode = ALU_OPCODES[funct_draws[i] & 1]
        records.append(TraceRecord(i, cycle, pc, opcode, funct_draws[i], Kind.ALU, operand=operands[i]))
        pc += 4

    return Trace(commit_width=profile.commit_width, records=records)
