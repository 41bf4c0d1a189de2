# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Verdicts emitted by guardian kernels.
See instructions/architecture for development guidelines.
"""

from dataclasses import dataclass
from enum import Enum


class ViolationClass(Enum):
    RET_MISMATCH = 'RET_MISMATCH'
    OOB = 'OOB'
    UAF = 'UAF'
    COUNTER_BOUND = 'COUNTER_BOUND'


@dataclass(frozen=True)
class Verdict:
    """A detected violation; `pc` is the offending packet's pc, `detect_cycle` a slow-domain cycle."""
    seq: int
    violation: ViolationClass
    pc: int
    detect_cycle: int = 0
    kernel: str = ''
    engine: int = -1

    @property
    def key(self):
        """Timing-free identity used when comparing against oracles."""
        return (self.seq, self.violation)

    def log_line(self, latency_ns: float) -> str:
        return f"V {self.seq} {self.violation.value} {self.pc:#x} {self.detect_cycle} {latency_ns:.3f}"
