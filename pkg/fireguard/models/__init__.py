# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Data models for the simulator.
See instructions/architecture for development guidelines.
"""

from fireguard.models.verdict import Verdict, ViolationClass
from fireguard.models.trace_record import (
    Kind, TraceRecord, Trace, AttackMode, AttackSpec, GroundTruth, EXPECTED_CLASS,
    alloc_record, free_record,
)
from fireguard.models.packet import FilterEntry, Packet, Message, MessageTag
from fireguard.models.metrics import Metrics, StallAccounting, EngineStats
from fireguard.models.kernel import KernelKind, Policy, ProgrammingModel, IsaxMode

__all__ = [
    'Verdict', 'ViolationClass',
    'Kind', 'TraceRecord', 'Trace', 'AttackMode', 'AttackSpec', 'GroundTruth', 'EXPECTED_CLASS',
    'alloc_record', 'free_record',
    'FilterEntry', 'Packet', 'Message', 'MessageTag',
    'Metrics', 'StallAccounting', 'EngineStats',
    'KernelKind', 'Policy', 'ProgrammingModel', 'IsaxMode',
]
