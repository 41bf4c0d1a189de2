# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Filter-table rows, filtered packets and inter-engine messages.
See instructions/architecture for development guidelines.

Packet layout (256 bits):
    [63:0]     pc
    [127:64]   mem_addr or br_target, whichever the select flags chose (zero if none)
    [191:128]  operand (register result; allocation size for ALLOC)
    [255:192]  metadata word, offsets relative to bit 192:
               [1:0] valid flag, [8:2] opcode, [11:9] funct3, [19:12] gid,
               [23:20] kind code, [63:32] low 32 bits of the commit cycle
"""

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

from fireguard.models.trace_record import MASK64, Kind

PACKET_BITS = 256
META_BASE = 192
VALID_FLAG = 0b01
TABLE_SIZE = 1024


@dataclass(frozen=True)
class FilterEntry:
    """Lookup-table row: gid 0 marks a non-sensitive instruction."""
    gid: int = 0
    sel_prf: bool = False
    sel_lsq: bool = False
    sel_ftq: bool = False

    @property
    def selects_any(self) -> bool:
        return self.sel_prf or self.sel_lsq or self.sel_ftq


def pack_metadata(opcode: int, funct3: int, gid: int, kind: Kind, cycle: int) -> int:
    return (VALID_FLAG
            | (opcode & 0x7F) << 2
            | (funct3 & 0x7) << 9
            | (gid & 0xFF) << 12
            | (int(kind) & 0xF) << 20
            | (cycle & 0xFFFFFFFF) << 32)


@dataclass(frozen=True)
class Packet:
    """
    Encapsulated filter output.

    `seq` is the source record's seq and `cycle` its full commit cycle (the
    metadata word only keeps the low 32 bits). `kernel` and `block` are side-band
    tags the allocator attaches on delivery. None of the three is part of the
    256-bit payload.
    """
    bits: int
    seq: int
    gid: int
    kernel: Optional[int] = None
    block: int = 0
    cycle: int = 0

    @classmethod
    def invalid(cls, seq: int) -> 'Packet':
        return cls(bits=0, seq=seq, gid=0)

    @property
    def valid(self) -> bool:
        return (self.bits >> META_BASE) & 0b11 != 0

    def field(self, bit_offset: int) -> int:
        """Bits [bit_offset+63 : bit_offset]."""
        return (self.bits >> bit_offset) & MASK64

    @property
    def pc(self) -> int:
        return self.field(0)

    @property
    def address(self) -> int:
        return self.field(64)

    @property
    def operand(self) -> int:
        return self.field(128)

    @property
    def metadata(self) -> int:
        return self.field(META_BASE)

    @property
    def opcode(self) -> int:
        return (self.metadata >> 2) & 0x7F

    @property
    def funct3(self) -> int:
        return (self.metadata >> 9) & 0x7

    @property
    def kind(self) -> Kind:
        return Kind((self.metadata >> 20) & 0xF)

    @property
    def commit_cycle(self) -> int:
        return (self.metadata >> 32) & 0xFFFFFFFF

    def tagged(self, kernel: int, block: int = 0) -> 'Packet':
        return replace(self, kernel=kernel, block=block)


class MessageTag(Enum):
    """Header tag of a single-flit inter-engine message."""
    DATA = 'DATA'
    SPILL = 'SPILL'
    RECALL = 'RECALL'
    RECALL_REPLY = 'RECALL_REPLY'
    FLUSH = 'FLUSH'
    REMNANT = 'REMNANT'
    SUMMARY_HEAD = 'SUMMARY_HEAD'
    SUMMARY_RET_TARGET = 'SUMMARY_RET_TARGET'
    SUMMARY_RET_PC = 'SUMMARY_RET_PC'
    SUMMARY_ENTRY = 'SUMMARY_ENTRY'
    WINDOW_COUNT = 'WINDOW_COUNT'
    WINDOW_OPEN = 'WINDOW_OPEN'
    WINDOW_END = 'WINDOW_END'


@dataclass(frozen=True)
class Message:
    """
    64-bit inter-engine message. Routing and the tag travel in the header, so a
    message is one flit on the mesh.
    """
    src: int
    dst: int
    value: int
    tag: MessageTag = MessageTag.DATA
    kernel: Optional[int] = None
    block: int = 0
    seq: int = -1

    flits = 1

    def field(self, bit_offset: int) -> int:
        return (self.value >> bit_offset) & MASK64 if bit_offset < 64 else 0
