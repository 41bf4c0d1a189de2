# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Event filter: lookup table, packet encapsulation, lane FIFOs and the in-order arbiter.
See instructions/architecture for development guidelines.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Deque, Iterable, List, Optional, Sequence, Tuple

from fireguard.config import RunConfig
from fireguard.errors import ConfigError
from fireguard.models.kernel import GID_ENTRIES, KIND_GID
from fireguard.models.packet import TABLE_SIZE, FilterEntry, Packet, pack_metadata
from fireguard.models.trace_record import TraceRecord
from fireguard.utils.trace_gen import KIND_ENCODINGS

logger = logging.getLogger(__name__)

EMPTY_ENTRY = FilterEntry()


@dataclass(frozen=True)
class FilterTable:
    """1024 rows indexed by {funct3[2:0], opcode[6:0]}."""
    entries: Tuple[FilterEntry, ...] = (EMPTY_ENTRY,) * TABLE_SIZE
    max_gids: int = 256

    def __getitem__(self, index: int) -> FilterEntry:
        return self.entries[index]

    def programmed(self) -> List[Tuple[int, FilterEntry]]:
        return [(i, e) for i, e in enumerate(self.entries) if e.gid != 0]


def table_index(opcode: int, funct3: int) -> int:
    return ((funct3 & 0x7) << 7) | (opcode & 0x7F)


def table_program(table: FilterTable, index: int, entry: FilterEntry) -> FilterTable:
    """
    Write one table row.

    Args:
        table: Current table
        index: 10-bit row index
        entry: New row

    Returns:
        New table; only the addressed row differs

    Raises:
        ConfigError: index outside 0..1023, gid >= max_gids, or a non-zero gid with no data path
    """
    if not 0 <= index < TABLE_SIZE:
        raise ConfigError(f"filter index {index:#x} outside 0..{TABLE_SIZE - 1:#x}")
    if not 0 <= entry.gid < table.max_gids:
        raise ConfigError(f"gid {entry.gid} outside 0..{table.max_gids - 1}")
    if entry.gid != 0 and not entry.selects_any:
        raise ConfigError(f"gid {entry.gid} at {index:#x} selects no data path")
    entries = list(table.entries)
    entries[index] = entry
    return FilterTable(tuple(entries), table.max_gids)


def default_table(gids: Iterable[int], max_gids: int = 256) -> FilterTable:
    """Program every encoding whose default GID is in `gids`."""
    wanted = set(gids)
    table = FilterTable(max_gids=max_gids)
    for kind, encodings in KIND_ENCODINGS.items():
        gid = KIND_GID.get(kind)
        if gid in wanted:
            for opcode, funct3 in encodings:
                table = table_program(table, table_index(opcode, funct3), GID_ENTRIES[gid])
    return table


def load_table_image(path: Path, max_gids: int = 256) -> FilterTable:
    """
    Read a filter-table image: one `<index_hex> <gid> <P|-> <L|-> <F|->` row per line.

    Raises:
        ConfigError: malformed row
    """
    table = FilterTable(max_gids=max_gids)
    with open(path, 'rb') as f:
        for line_number, raw in enumerate(f, start=1):
            try:
                line = raw.decode('utf-8').strip()
            except UnicodeDecodeError:
                raise ConfigError(f"{path}:{line_number}: not UTF-8 text") from None
            if not line or line.startswith('#'):
                continue
            tokens = line.split()
            if len(tokens) != 5 or tokens[2] not in ('P', '-') or tokens[3] not in ('L', '-') \
                    or tokens[4] not in ('F', '-'):
                raise ConfigError(f"{path}:{line_number}: expected '<index_hex> <gid> <P|-> <L|-> <F|->'")
            try:
                index = int(tokens[0], 16)
                gid = int(tokens[1])
            except ValueError:
                raise ConfigError(f"{path}:{line_number}: bad index or gid") from None
            entry = FilterEntry(gid, sel_prf=tokens[2] == 'P', sel_lsq=tokens[3] == 'L', sel_ftq=tokens[4] == 'F')
            table = table_program(table, index, entry)
    logger.info("Loaded %d filter rows from %s", len(table.programmed()), path)
    return table


def configured_table(config: RunConfig) -> FilterTable:
    """The image named by `filter_table`, else the default encodings of every deployed kernel."""
    if config.filter_table:
        return load_table_image(Path(config.filter_table), config.max_gids)
    return default_table({gid for k in config.kernels for gid in k.gids}, config.max_gids)


def format_table_image(table: FilterTable) -> str:
    rows = [f"{index:03x} {e.gid} {'P' if e.sel_prf else '-'} {'L' if e.sel_lsq else '-'} {'F' if e.sel_ftq else '-'}"
            for index, e in table.programmed()]
    return '\n'.join(rows) + ('\n' if rows else '')


def classify(table: FilterTable, record: TraceRecord) -> Packet:
    """
    Look up a record and encapsulate it.

    gid 0 yields an invalid packet that keeps the record's seq; otherwise only the
    selected channels are populated.
    """
    entry = table[record.table_index]
    if entry.gid == 0:
        return Packet.invalid(record.seq)
    address = 0
    if entry.sel_lsq and record.mem_addr is not None:
        address = record.mem_addr
    elif entry.sel_ftq and record.br_target is not None:
        address = record.br_target
    operand = record.operand if entry.sel_prf else 0
    bits = (record.pc
            | address << 64
            | operand << 128
            | pack_metadata(record.opcode, record.funct3, entry.gid, record.kind, record.cycle) << 192)
    return Packet(bits=bits, seq=record.seq, gid=entry.gid, cycle=record.cycle)


@dataclass
class ReorderFifo:
    """
    `width` lanes of depth `depth`, stored row-wise: one row holds one packet per lane,
    so every lane always has the same occupancy.
    """
    width: int = 4
    depth: int = 16
    rows: Deque[List[Packet]] = field(default_factory=deque)
    head: int = 0        # next lane to read in the oldest row

    @property
    def full(self) -> bool:
        return len(self.rows) >= self.depth

    @property
    def empty(self) -> bool:
        return not self.rows

    def lane_occupancy(self) -> List[int]:
        return [len(self.rows)] * self.width

    def valid_count(self) -> int:
        count = 0
        for r, row in enumerate(self.rows):
            start = self.head if r == 0 else 0
            count += sum(1 for p in row[start:] if p.valid)
        return count


def filter_step(fifo: ReorderFifo, commits: Sequence[Packet]) -> int:
    """
    Enqueue one commit group.

    A short group is padded with invalid packets so the lanes stay in step. If the
    lanes are full nothing is accepted and the caller records a filter-full stall.

    Returns:
        Number of commits accepted (all or none)
    """
    if not commits:
        return 0
    if len(commits) > fifo.width:
        raise ValueError(f"{len(commits)} commits exceed filter width {fifo.width}")
    if fifo.full:
        return 0
    row = list(commits)
    pad_seq = commits[-1].seq
    row.extend(Packet.invalid(pad_seq) for _ in range(fifo.width - len(row)))
    fifo.rows.append(row)
    return len(commits)


def arbiter_step(fifo: ReorderFifo) -> Tuple[Optional[Packet], int]:
    """
    Scan lanes in commit order from the oldest unconsumed slot.

    Invalid packets ahead of the first valid one are dropped within the call.

    Returns:
        (the oldest valid packet or None, number of invalid packets skipped)
    """
    skipped = 0
    while fifo.rows:
        row = fifo.rows[0]
        packet = row[fifo.head]
        fifo.head += 1
        if fifo.head == fifo.width:
            fifo.rows.popleft()
            fifo.head = 0
        if packet.valid:
            return packet, skipped
        skipped += 1
    return None, skipped
