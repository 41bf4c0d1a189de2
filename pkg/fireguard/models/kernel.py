# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Kernel bindings: guardian kernel kinds, scheduling policies, programming models,
ISAX modes and the default group-index assignment.
See instructions/architecture for development guidelines.
"""

from enum import Enum
from typing import Dict, FrozenSet

from fireguard.models.packet import FilterEntry
from fireguard.models.trace_record import Kind


class KernelKind(Enum):
    PMC = 'pmc'
    SHADOW_STACK = 'shadow_stack'
    ASAN = 'asan'
    UAF = 'uaf'


class Policy(Enum):
    FIXED = 'FIXED'
    ROUND_ROBIN = 'ROUND_ROBIN'
    BLOCK = 'BLOCK'
    ADDRESS_HASH = 'ADDRESS_HASH'


class ProgrammingModel(Enum):
    SINGLE_ITER = 'SINGLE_ITER'
    DUFF = 'DUFF'
    UNROLLED = 'UNROLLED'
    HYBRID = 'HYBRID'


class IsaxMode(Enum):
    MA_STAGE = 'MA_STAGE'
    POST_COMMIT = 'POST_COMMIT'


GID_LOAD = 1
GID_STORE = 2
GID_CALL = 3
GID_RET = 4
GID_HEAP = 5
GID_JUMP = 6

KIND_GID: Dict[Kind, int] = {
    Kind.LOAD: GID_LOAD,
    Kind.STORE: GID_STORE,
    Kind.CALL: GID_CALL,
    Kind.RET: GID_RET,
    Kind.ALLOC: GID_HEAP,
    Kind.FREE: GID_HEAP,
    Kind.JUMP: GID_JUMP,
}

GID_ENTRIES: Dict[int, FilterEntry] = {
    GID_LOAD: FilterEntry(GID_LOAD, sel_lsq=True),
    GID_STORE: FilterEntry(GID_STORE, sel_lsq=True),
    GID_CALL: FilterEntry(GID_CALL, sel_ftq=True),
    GID_RET: FilterEntry(GID_RET, sel_ftq=True),
    GID_HEAP: FilterEntry(GID_HEAP, sel_prf=True, sel_lsq=True),
    GID_JUMP: FilterEntry(GID_JUMP, sel_ftq=True),
}

ALLOWED_POLICIES: Dict[KernelKind, FrozenSet[Policy]] = {
    KernelKind.PMC: frozenset({Policy.FIXED, Policy.ROUND_ROBIN}),
    KernelKind.SHADOW_STACK: frozenset({Policy.FIXED, Policy.BLOCK}),
    KernelKind.ASAN: frozenset({Policy.FIXED, Policy.ADDRESS_HASH}),
    KernelKind.UAF: frozenset({Policy.FIXED, Policy.ADDRESS_HASH}),
}

DEFAULT_POLICY: Dict[KernelKind, Policy] = {
    KernelKind.PMC: Policy.ROUND_ROBIN,
    KernelKind.SHADOW_STACK: Policy.BLOCK,
    KernelKind.ASAN: Policy.ADDRESS_HASH,
    KernelKind.UAF: Policy.ADDRESS_HASH,
}
