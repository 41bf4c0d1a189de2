"""Shared fixtures: record builders, kernel configurations and small traces."""

import pytest

from fireguard.config import build_run_config
from fireguard.models.trace_record import Kind, Trace, TraceRecord, alloc_record, free_record
from fireguard.utils.trace_gen import (
    BRANCH_OPCODE, JAL_OPCODE, JALR_OPCODE, LOAD_OPCODE, STORE_OPCODE, generate_synthetic, get_profile,
)


class RecordBuilder:
    """Appends records with consecutive seqs; `cycle` advances only when asked."""

    def __init__(self, commit_width=4):
        self.commit_width = commit_width
        self.records = []
        self.cycle = 1

    @property
    def seq(self):
        return len(self.records)

    def tick(self, cycles=1):
        self.cycle += cycles
        return self

    def _add(self, record):
        self.records.append(record)
        return record

    def load(self, addr, pc=0x1000):
        return self._add(TraceRecord(self.seq, self.cycle, pc, LOAD_OPCODE, 3, Kind.LOAD, mem_addr=addr))

    def store(self, addr, pc=0x1004):
        return self._add(TraceRecord(self.seq, self.cycle, pc, STORE_OPCODE, 3, Kind.STORE, mem_addr=addr))

    def call(self, pc, target=0x20000):
        return self._add(TraceRecord(self.seq, self.cycle, pc, JAL_OPCODE, 0, Kind.CALL,
                                     operand=pc + 4, br_target=target))

    def ret(self, target, pc=0x20010):
        return self._add(TraceRecord(self.seq, self.cycle, pc, JALR_OPCODE, 0, Kind.RET, br_target=target))

    def jump(self, target, pc=0x1008):
        return self._add(TraceRecord(self.seq, self.cycle, pc, BRANCH_OPCODE, 0, Kind.JUMP, br_target=target))

    def alu(self, pc=0x100c):
        return self._add(TraceRecord(self.seq, self.cycle, pc, 0x33, 0, Kind.ALU, operand=7))

    def alloc(self, base, size):
        return self._add(alloc_record(self.seq, self.cycle, base, size))

    def free(self, base):
        return self._add(free_record(self.seq, self.cycle, base))

    def trace(self):
        return Trace(self.commit_width, list(self.records))


@pytest.fixture
def builder():
    return RecordBuilder()


@pytest.fixture
def make_config():
    """Build a RunConfig from keyword overrides of the defaults."""
    def _make(kernels=(), **overrides):
        raw = dict(overrides)
        raw['kernels'] = list(kernels)
        return build_run_config(raw)
    return _make


@pytest.fixture
def small_trace():
    return generate_synthetic(get_profile('baseline'), seed=3, length=2000)


@pytest.fixture
def heap_trace():
    return generate_synthetic(get_profile('uaf-heavy'), seed=5, length=3000)


@pytest.fixture
def call_trace():
    return generate_synthetic(get_profile('call-heavy'), seed=11, length=3000)
