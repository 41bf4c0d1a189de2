# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Detection latency: match verdicts to injected attacks and summarize.
See instructions/architecture for development guidelines.
"""

import logging
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from fireguard.models.metrics import Metrics
from fireguard.models.trace_record import AttackMode, GroundTruth
from fireguard.models.verdict import Verdict

logger = logging.getLogger(__name__)


def cycles_to_ns(cycles: float, slow_hz: float) -> float:
    """Slow-domain cycles to nanoseconds."""
    return cycles / slow_hz * 1e9


def verdict_latency(verdict: Verdict, metrics: Metrics) -> float:
    """Slow cycles from the offending record's simulated commit to the verdict."""
    committed = metrics.commit_cycles[verdict.seq]
    return verdict.detect_cycle - committed / metrics.clock_ratio


def match_truth(truth: GroundTruth, verdicts: Sequence[Verdict]) -> Optional[Verdict]:
    """
    Earliest verdict of the expected class inside the attack's seq span.

    A flood is matched by the first COUNTER_BOUND verdict at or after its first
    record: the window holding it is reported by a later packet.
    """
    if truth.mode is AttackMode.COUNTER_FLOOD:
        hits = [v for v in verdicts if v.violation is truth.expected_class and v.seq >= truth.seq]
        return min(hits, key=lambda v: (v.seq, v.detect_cycle)) if hits else None
    hits = [v for v in verdicts if v.violation is truth.expected_class and truth.covers(v.seq)]
    if not hits:
        return None
    return min(hits, key=lambda v: (v.detect_cycle, v.seq))


def measure_latency(metrics: Metrics, truths: Sequence[GroundTruth]) -> Dict[str, Any]:
    """
    Per-attack latency in slow cycles and ns, plus min/median/max over detected attacks.

    Undetected attacks are listed with status MISS. The report is also stored on
    `metrics.latency`.

    Args:
        metrics: Result of a run over the attacked trace
        truths: Ground truth written when the attacks were injected

    Returns:
        {'attacks': [...], 'detected', 'missed', 'summary': {...} or None}
    """
    attacks: List[Dict[str, Any]] = []
    values: List[float] = []
    for truth in sorted(truths, key=lambda t: t.seq):
        verdict = match_truth(truth, metrics.verdicts)
        if verdict is None:
            logger.warning("Attack %s at seq %d was not detected", truth.mode.value, truth.seq)
            attacks.append({'seq': truth.seq, 'mode': truth.mode.value, 'status': 'MISS',
                            'latency_cycles': None, 'latency_ns': None})
            continue
        cycles = verdict_latency(verdict, metrics)
        values.append(cycles)
        attacks.append({'seq': truth.seq, 'mode': truth.mode.value, 'status': 'DETECTED',
                        'verdict_seq': verdict.seq, 'detect_cycle': verdict.detect_cycle,
                        'latency_cycles': cycles, 'latency_ns': cycles_to_ns(cycles, metrics.slow_hz)})

    summary = None
    if values:
        lo, median, hi = (float(x) for x in np.percentile(np.asarray(values), [0, 50, 100]))
        summary = {
            'min_cycles': lo, 'median_cycles': median, 'max_cycles': hi,
            'min_ns': cycles_to_ns(lo, metrics.slow_hz),
            'median_ns': cycles_to_ns(median, metrics.slow_hz),
            'max_ns': cycles_to_ns(hi, metrics.slow_hz),
        }
    report = {
        'attacks': attacks,
        'detected': len(values),
        'missed': len(attacks) - len(values),
        'summary': summary,
    }
    metrics.latency = report
    return report


def verdict_log(metrics: Metrics) -> str:
    """One `V <seq> <class> <pc> <detect_cycle> <latency_ns>` line per verdict."""
    lines = []
    for verdict in metrics.verdicts:
        latency = cycles_to_ns(verdict_latency(verdict, metrics), metrics.slow_hz)
        lines.append(verdict.log_line(latency))
    return '\n'.join(lines) + ('\n' if lines else '')
