# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Run metrics: stall accounting, per-engine statistics and the serializable document.
See instructions/architecture for development guidelines.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from fireguard.models.verdict import Verdict

METRICS_SCHEMA = 'fireguard.metrics/1'
STALL_CAUSES = ('filter_full', 'cdc_full', 'mq_full', 'prf_conflict')
# Causes that delay the main core's commit stream
CORE_STALL_CAUSES = ('filter_full', 'cdc_full', 'prf_conflict')


@dataclass
class StallAccounting:
    baseline_cycles: int = 1
    causes: Dict[str, int] = field(default_factory=lambda: {c: 0 for c in STALL_CAUSES})

    def charge(self, cause: str, cycles: int = 1) -> None:
        self.causes[cause] += cycles

    @property
    def stalled_cycles(self) -> int:
        return sum(self.causes[c] for c in CORE_STALL_CAUSES)

    @property
    def slowdown(self) -> float:
        return (self.baseline_cycles + self.stalled_cycles) / self.baseline_cycles


@dataclass
class EngineStats:
    index: int
    packets: int = 0
    messages: int = 0
    busy_cycles: int = 0
    packet_cycles: int = 0
    queue_empty: int = 0
    out_stall: int = 0
    full_cycles: int = 0
    occupancy_histogram: List[int] = field(default_factory=list)

    @property
    def cycles_per_packet(self) -> float:
        return self.packet_cycles / self.packets if self.packets else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'index': self.index,
            'packets': self.packets,
            'messages': self.messages,
            'busy_cycles': self.busy_cycles,
            'cycles_per_packet': self.cycles_per_packet,
            'queue_empty': self.queue_empty,
            'out_stall': self.out_stall,
            'full_cycles': self.full_cycles,
            'occupancy_histogram': list(self.occupancy_histogram),
        }


@dataclass
class Metrics:
    """Everything a run reports; `to_dict` is the persisted document."""
    stalls: StallAccounting
    fast_cycles: int = 0
    slow_cycles: int = 0
    engines: List[EngineStats] = field(default_factory=list)
    counters: Dict[str, int] = field(default_factory=dict)
    queue_full_fraction: Dict[str, float] = field(default_factory=dict)
    verdicts: List[Verdict] = field(default_factory=list)
    latency: Optional[Dict[str, Any]] = None
    point: Dict[str, Any] = field(default_factory=dict)
    kernels: List[str] = field(default_factory=list)
    clock_ratio: int = 1
    slow_hz: float = 1.6e9
    # seq -> fast cycle of its simulated commit; not persisted
    commit_cycles: Dict[int, int] = field(default_factory=dict, repr=False)

    @property
    def slowdown(self) -> float:
        return self.stalls.slowdown

    def to_dict(self) -> Dict[str, Any]:
        return {
            'schema': METRICS_SCHEMA,
            'point': dict(self.point),
            'slowdown': self.slowdown,
            'baseline_cycles': self.stalls.baseline_cycles,
            'stalled_cycles': self.stalls.stalled_cycles,
            'stalls': dict(self.stalls.causes),
            'fast_cycles': self.fast_cycles,
            'clock_ratio': self.clock_ratio,
            'kernels': list(self.kernels),
            'slow_hz': self.slow_hz,
            'slow_cycles': self.slow_cycles,
            'counters': dict(self.counters),
            'queue_full_fraction': dict(self.queue_full_fraction),
            'engines': [e.to_dict() for e in self.engines],
            'verdicts': [{'seq': v.seq, 'class': v.violation.value, 'pc': v.pc,
                          'detect_cycle': v.detect_cycle, 'kernel': v.kernel, 'engine': v.engine}
                         for v in self.verdicts],
            'latency': self.latency,
        }
