# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Two-clock world: main-core commit, filter and allocator on the fast clock; CDC
drain, multicast, mesh and analysis engines on the slow clock.
See instructions/architecture for development guidelines.
"""

import logging
from collections import Counter, deque
from dataclasses import dataclass
from typing import Deque, Dict, List, Optional, Tuple

import numpy as np

from fireguard.config import RunConfig
from fireguard.errors import ConfigError, SimulationError
from fireguard.models.metrics import Metrics, StallAccounting
from fireguard.models.packet import Packet
from fireguard.models.trace_record import Trace, TraceRecord
from fireguard.models.verdict import Verdict
from fireguard.utils.allocator import (
    Allocation, SchedulingEngine, allocate, build_distributor, commit_allocation, distribute,
    multicast_deliver,
)
from fireguard.utils.engine import CostModel, EngineState, engine_step
from fireguard.utils.fabric import FabricPacket, Mesh
from fireguard.utils.filter import FilterTable, ReorderFifo, arbiter_step, classify, configured_table, filter_step
from fireguard.utils.kernels import make_kernel_state

logger = logging.getLogger(__name__)

# Slow cycles an allocation spends in the clock-domain crossing
CDC_LATENCY = 1


@dataclass
class CdcEntry:
    allocation: Allocation
    visible_at: int     # first slow cycle that may drain it


class Simulator:
    """
    One simulated system. Build with `create_simulator`, then `run(trace)` once.

    Pipeline stages are evaluated back to front inside a fast cycle, so a packet
    advances at most one stage per cycle.
    """

    def __init__(self, config: RunConfig, table: Optional[FilterTable] = None, check: bool = False):
        self.config = config
        self.ratio = config.clock.ratio
        self.check = check
        self.table = table if table is not None else configured_table(config)
        self.distributor = build_distributor(config.kernels, config.max_gids)
        self.ses = [SchedulingEngine.for_kernel(k, config.block_full_threshold) for k in config.kernels]

        width, height = config.mesh
        self.mesh = Mesh(width, height, config.router_depth)
        self.engines = [EngineState(i, config.mq_capacity, self._block_status) for i in range(config.engines)]
        for kernel in config.kernels:
            costs = CostModel.for_kernel(kernel)
            for index in kernel.engines:
                self.engines[index].bind(kernel.index, make_kernel_state(kernel, index), costs)

        self.fifo = ReorderFifo(width=config.filter_width, depth=config.fifo_depth)
        self.cdc: Deque[CdcEntry] = deque()
        self.register: Optional[Tuple[Packet, int]] = None
        self.arbiter_free_at = 0
        self.holding: List[TraceRecord] = []
        self.rng = np.random.default_rng(config.seed)

        self.records: List[TraceRecord] = []
        self.pos = 0
        self.cycle = 0          # fast cycles elapsed
        self.slow = 0           # slow cycles elapsed
        self.delay = 0          # fast cycles the commit stream has been pushed back
        self.sealed = False
        self.stalls = StallAccounting()
        self.verdicts: List[Verdict] = []
        self.commit_cycles: Dict[int, int] = {}
        self.mapper_seqs: List[int] = []
        self.counters: Counter = Counter()
        self.full_cycles: Counter = Counter()

    def _block_status(self, kernel_id: int) -> Dict[int, int]:
        return self.ses[kernel_id].sealed

    # -- fast domain -------------------------------------------------------

    def _occupancy(self) -> List[int]:
        """Input-queue occupancy per engine, counting copies still crossing the CDC."""
        occupancy = [len(e.in_q) for e in self.engines]
        for entry in self.cdc:
            for engine, _, _ in entry.allocation.targets:
                occupancy[engine] += 1
        return occupancy

    def _allocator_step(self) -> None:
        if self.register is None:
            return
        packet, ready_at = self.register
        if self.cycle < ready_at:
            return
        if self.distributor.se_bitmap[packet.gid] == 0:
            distribute(self.distributor, packet.gid)
            self.register = None
            return
        if len(self.cdc) >= self.config.clock.cdc_depth:
            return
        allocation = allocate(self.distributor, self.ses, packet, self._occupancy())
        commit_allocation(self.ses, allocation)
        self.cdc.append(CdcEntry(allocation, self.slow + 1 + CDC_LATENCY))
        self.register = None

    def _arbiter_step(self) -> None:
        if self.register is not None or self.cycle < self.arbiter_free_at or self.fifo.empty:
            return
        packet, skipped = arbiter_step(self.fifo)
        self.counters['arbiter_skipped'] += skipped
        ready_at = self.cycle + skipped * self.config.skip_cost_cycles
        self.arbiter_free_at = ready_at
        if packet is not None:
            self.register = (packet, ready_at)
            self.mapper_seqs.append(packet.seq)

    def _filter_move(self) -> None:
        if not self.holding:
            return
        group = self.holding[:self.config.filter_width]
        packets = [classify(self.table, r) for r in group]
        if filter_step(self.fifo, packets):
            del self.holding[:len(group)]
            self.counters['classified_valid'] += sum(1 for p in packets if p.valid)

    def _commit(self) -> None:
        if self.pos >= len(self.records):
            return
        first = self.records[self.pos]
        if first.cycle + self.delay > self.cycle:
            return
        if self.holding:
            self.stalls.charge('filter_full')
            self.delay += 1
            return
        if len(self.cdc) >= self.config.clock.cdc_depth:
            self.stalls.charge('cdc_full')
            self.delay += 1
            return
        end = self.pos
        while end < len(self.records) and self.records[end].cycle == first.cycle:
            end += 1
        group = self.records[self.pos:end]
        self.pos = end
        self.holding = list(group)
        for record in group:
            self.commit_cycles[record.seq] = self.cycle
        self.counters['commits'] += len(group)

        if self.config.prf_conflict_p > 0.0:
            reads = sum(1 for r in group if self.table[r.table_index].sel_prf)
            conflicts = int(np.sum(self.rng.random(reads) < self.config.prf_conflict_p)) if reads else 0
            if conflicts:
                self.stalls.charge('prf_conflict', conflicts)
                self.delay += conflicts

    @property
    def upstream_empty(self) -> bool:
        return (self.pos >= len(self.records) and not self.holding and self.fifo.empty
                and self.register is None)

    # -- slow domain -------------------------------------------------------

    def _cdc_drain(self) -> None:
        queues = [e.in_q.slots for e in self.engines]
        moved = 0
        while self.cdc and moved < self.config.multicast_width and self.cdc[0].visible_at <= self.slow:
            allocation = self.cdc[0].allocation
            flags = multicast_deliver(allocation, queues, self.config.mq_capacity)
            if not all(flags.values()):
                self.stalls.charge('mq_full')
                break
            self.cdc.popleft()
            moved += 1
            self.counters['multicasts'] += 1
            self.counters['copies_delivered'] += len(allocation.targets)

    def _mesh_step(self) -> None:
        for engine in self.engines:
            if engine.out_q.slots and self.mesh.can_inject(engine.index):
                message = engine.out_q.slots.popleft()
                self.mesh.inject(engine.index, FabricPacket(message, message.src, message.dst, flits=message.flits))

        reserved: Counter = Counter()

        def can_eject(node: int) -> bool:
            if node >= len(self.engines):
                return False
            queue = self.engines[node].net_q
            if len(queue) + reserved[node] >= queue.capacity:
                return False
            reserved[node] += 1
            return True

        for delivered in self.mesh.step(can_eject):
            self.engines[delivered.dst].net_q.slots.append(delivered.payload)
            self.counters['mesh_messages'] += 1
            self.counters['mesh_hops'] += delivered.hops

    def _slow_step(self) -> None:
        self.slow += 1
        self._cdc_drain()
        self._mesh_step()
        before = len(self.verdicts)
        for engine in self.engines:
            engine_step(engine, self.slow, self.verdicts)
        for verdict in self.verdicts[before:]:
            logger.debug("Verdict %s seq=%d pc=%#x from %s on engine %d at slow cycle %d",
                         verdict.violation.value, verdict.seq, verdict.pc, verdict.kernel,
                         verdict.engine, verdict.detect_cycle)

    # -- driver ------------------------------------------------------------

    def load(self, trace: Trace) -> None:
        if trace.commit_width > self.config.commit_width:
            raise ConfigError(f"trace commit width {trace.commit_width} exceeds commit_width "
                              f"{self.config.commit_width}")
        self.records = trace.records
        self.stalls.baseline_cycles = max(1, trace.last_cycle)

    def tick(self) -> None:
        """Advance one fast cycle, and one slow cycle every `ratio` fast cycles."""
        self._allocator_step()
        self._arbiter_step()
        self._filter_move()
        self._commit()
        if self.fifo.full:
            self.full_cycles['filter_fifo'] += 1
        if len(self.cdc) >= self.config.clock.cdc_depth:
            self.full_cycles['cdc'] += 1
        if not self.sealed and self.upstream_empty:
            for se in self.ses:
                se.seal()
            self.sealed = True

        self.cycle += 1
        if self.cycle % self.ratio == 0:
            self._slow_step()
        if self.check:
            self.check_conservation()

    def quiescent(self) -> bool:
        return (self.upstream_empty and not self.cdc and self.mesh.empty()
                and all(e.quiescent() for e in self.engines))

    def conservation(self) -> Tuple[Tuple[int, int], Tuple[int, int]]:
        """
        Two packet balances:
        classified valid packets == in FIFO + allocator register + CDC + dropped + multicast;
        delivered copies == popped by engines + waiting in input queues.
        """
        upstream = (self.fifo.valid_count() + (1 if self.register is not None else 0) + len(self.cdc)
                    + self.distributor.no_subscriber + self.counters['multicasts'])
        consumed = sum(len(e.popped_seqs) + len(e.in_q) for e in self.engines)
        return ((self.counters['classified_valid'], upstream),
                (self.counters['copies_delivered'], consumed))

    def check_conservation(self) -> None:
        for expected, actual in self.conservation():
            if expected != actual:
                raise SimulationError(f"packet accounting off at fast cycle {self.cycle}: "
                                      f"{expected} in, {actual} accounted for")

    def run(self, trace: Trace) -> Metrics:
        """
        Simulate the whole trace and drain the fabric.

        Raises:
            SimulationError: work still outstanding after drain_limit slow cycles
        """
        self.load(trace)
        logger.info("Simulating %d records on %d engines (%d kernels)",
                    len(self.records), len(self.engines), len(self.config.kernels))
        drain_start: Optional[int] = None
        while not self.quiescent():
            self.tick()
            if drain_start is None and self.upstream_empty:
                drain_start = self.slow
            if drain_start is not None and self.slow - drain_start > self.config.drain_limit:
                logger.warning("Drain limit of %d slow cycles reached", self.config.drain_limit)
                raise SimulationError(f"fabric still busy {self.config.drain_limit} slow cycles after the trace ended")
        metrics = self.metrics()
        logger.info("Done: %d fast cycles, slowdown %.4f, %d verdicts",
                    self.cycle, metrics.slowdown, len(metrics.verdicts))
        return metrics

    def metrics(self) -> Metrics:
        fast = max(1, self.cycle)
        slow = max(1, self.slow)
        counters = dict(self.counters)
        counters['no_subscriber'] = self.distributor.no_subscriber
        counters['mapper_packets'] = len(self.mapper_seqs)
        counters['verdicts'] = len(self.verdicts)
        queue_full = {
            'filter_fifo': self.full_cycles['filter_fifo'] / fast,
            'cdc': self.full_cycles['cdc'] / fast,
            'message_queue': (sum(e.stats.full_cycles for e in self.engines) / (slow * len(self.engines))
                              if self.engines else 0.0),
        }
        return Metrics(
            stalls=self.stalls,
            fast_cycles=self.cycle,
            slow_cycles=self.slow,
            engines=[e.stats for e in self.engines],
            counters=dict(sorted(counters.items())),
            queue_full_fraction=queue_full,
            verdicts=sorted(self.verdicts, key=lambda v: (v.seq, v.violation.value, v.kernel)),
            kernels=[k.name for k in self.config.kernels],
            clock_ratio=self.ratio,
            slow_hz=self.config.clock.slow_hz,
            commit_cycles=self.commit_cycles,
        )


def run(trace: Trace, config: RunConfig, table: Optional[FilterTable] = None, check: bool = False) -> Metrics:
    """Simulate `trace` on a fresh system built from `config`."""
    return Simulator(config, table, check).run(trace)
