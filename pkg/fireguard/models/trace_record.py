# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Retired-instruction records and attack descriptions.
See instructions/architecture for development guidelines.
"""

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterator, List, Optional

from fireguard.models.verdict import ViolationClass

MASK64 = (1 << 64) - 1

# Allocator events ride the filter path on the RISC-V custom-0 opcode
ALLOC_OPCODE = 0x0B
ALLOC_FUNCT3 = 0
FREE_FUNCT3 = 1


class Kind(IntEnum):
    """Instruction class; the value is the 4-bit code carried in packet metadata."""
    ALU = 0
    LOAD = 1
    STORE = 2
    CALL = 3
    RET = 4
    JUMP = 5
    ALLOC = 6
    FREE = 7
    OTHER = 8


MEMORY_KINDS = frozenset({Kind.LOAD, Kind.STORE, Kind.ALLOC, Kind.FREE})
BRANCH_KINDS = frozenset({Kind.CALL, Kind.RET, Kind.JUMP})
ACCESS_KINDS = frozenset({Kind.LOAD, Kind.STORE})
HEAP_KINDS = frozenset({Kind.ALLOC, Kind.FREE})


@dataclass(frozen=True)
class TraceRecord:
    """One retired instruction (or allocator event) of the monitored core."""
    seq: int
    cycle: int
    pc: int
    opcode: int
    funct3: int
    kind: Kind
    operand: int = 0
    mem_addr: Optional[int] = None
    br_target: Optional[int] = None

    @property
    def table_index(self) -> int:
        """10-bit filter index: funct3 in the high bits, opcode in the low 7."""
        return ((self.funct3 & 0x7) << 7) | (self.opcode & 0x7F)

    def field_problem(self) -> Optional[str]:
        """Return a description of the first broken field invariant, or None."""
        if not 0 <= self.opcode < (1 << 7):
            return f"opcode {self.opcode:#x} exceeds 7 bits"
        if not 0 <= self.funct3 < (1 << 3):
            return f"funct3 {self.funct3:#x} exceeds 3 bits"
        for name in ('pc', 'operand', 'mem_addr', 'br_target'):
            value = getattr(self, name)
            if value is not None and not 0 <= value <= MASK64:
                return f"{name} does not fit in 64 bits"
        if (self.mem_addr is not None) != (self.kind in MEMORY_KINDS):
            return f"mem_addr presence does not match kind {self.kind.name}"
        if (self.br_target is not None) != (self.kind in BRANCH_KINDS):
            return f"br_target presence does not match kind {self.kind.name}"
        return None


def alloc_record(seq: int, cycle: int, base: int, size: int) -> TraceRecord:
    return TraceRecord(seq=seq, cycle=cycle, pc=0, opcode=ALLOC_OPCODE, funct3=ALLOC_FUNCT3,
                       kind=Kind.ALLOC, operand=size, mem_addr=base)


def free_record(seq: int, cycle: int, base: int) -> TraceRecord:
    return TraceRecord(seq=seq, cycle=cycle, pc=0, opcode=ALLOC_OPCODE, funct3=FREE_FUNCT3,
                       kind=Kind.FREE, operand=0, mem_addr=base)


@dataclass
class Trace:
    """An ordered record stream plus the commit width it was captured at."""
    commit_width: int
    records: List[TraceRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TraceRecord]:
        return iter(self.records)

    def __getitem__(self, index):
        return self.records[index]

    @property
    def last_cycle(self) -> int:
        return self.records[-1].cycle if self.records else 0

    def index_of(self, seq: int) -> int:
        """Position of the record with the given seq (records are seq-sorted)."""
        lo, hi = 0, len(self.records)
        while lo < hi:
            mid = (lo + hi) // 2
            if self.records[mid].seq < seq:
                lo = mid + 1
            else:
                hi = mid
        if lo == len(self.records) or self.records[lo].seq != seq:
            raise KeyError(seq)
        return lo


class AttackMode(Enum):
    HIJACK_RET = 'HIJACK_RET'
    OOB_ACCESS = 'OOB_ACCESS'
    UAF_ACCESS = 'UAF_ACCESS'
    COUNTER_FLOOD = 'COUNTER_FLOOD'


@dataclass(frozen=True)
class AttackSpec:
    """
    One injected fault.

    For COUNTER_FLOOD the payload is the number of records inserted after `seq`.
    """
    seq: int
    mode: AttackMode
    payload: int


EXPECTED_CLASS = {
    AttackMode.HIJACK_RET: ViolationClass.RET_MISMATCH,
    AttackMode.OOB_ACCESS: ViolationClass.OOB,
    AttackMode.UAF_ACCESS: ViolationClass.UAF,
    AttackMode.COUNTER_FLOOD: ViolationClass.COUNTER_BOUND,
}


@dataclass(frozen=True)
class GroundTruth:
    """Where an attack landed and which verdict class should report it."""
    seq: int
    mode: AttackMode
    expected_class: ViolationClass
    span: int = 1

    def covers(self, seq: int) -> bool:
        return self.seq <= seq < self.seq + self.span

    def shifted(self, delta: int) -> 'GroundTruth':
        return GroundTruth(self.seq + delta, self.mode, self.expected_class, self.span)

    def to_dict(self) -> dict:
        return {'seq': self.seq, 'mode': self.mode.value,
                'expected_class': self.expected_class.value, 'span': self.span}

    @classmethod
    def from_dict(cls, data: dict) -> 'GroundTruth':
        return cls(seq=int(data['seq']), mode=AttackMode(data['mode']),
                   expected_class=ViolationClass(data['expected_class']),
                   span=int(data.get('span', 1)))
