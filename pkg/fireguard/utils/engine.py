# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Analysis engine (μcore) model: message queues, the queue instructions, ISAX cycle
costs and the programming-model execution schedules.
See instructions/architecture for development guidelines.
"""

import logging
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Deque, Dict, List, Optional, Tuple

from fireguard.config import MAX_HAZARD, KernelConfig
from fireguard.errors import ProgramFault
from fireguard.models.kernel import IsaxMode, ProgrammingModel
from fireguard.models.metrics import EngineStats
from fireguard.models.packet import PACKET_BITS, Message, Packet
from fireguard.models.verdict import Verdict

logger = logging.getLogger(__name__)


class QueueOp(Enum):
    COUNT = 'count'
    TOP = 'top'
    POP = 'pop'
    RECENT = 'recent'
    PUSH = 'push'


def op_cost(isax: IsaxMode, op: QueueOp, dependent_next: bool, hazard: int = 4) -> int:
    """
    Cycles one queue instruction costs.

    MA_STAGE executes in the memory stage: 1 cycle plus a bubble when the next
    instruction uses the result. POST_COMMIT blocks for 3 cycles plus a hazard
    penalty (clamped to 10) when the result is used immediately.
    """
    if isax is IsaxMode.MA_STAGE:
        return 1 + (1 if dependent_next else 0)
    return 3 + (min(max(hazard, 0), MAX_HAZARD) if dependent_next else 0)


@dataclass(frozen=True)
class CostModel:
    """Per-kernel schedule parameters resolved to cycle counts."""
    count: int          # count, result feeds the loop bound
    pop: int            # pop, result used immediately
    pop_pipelined: int  # pop inside an unrolled body
    recent: int
    push: int
    work: int
    loop: int
    unroll: int
    message_work: int
    pm: ProgrammingModel
    accelerator: bool = False

    @classmethod
    def for_kernel(cls, kernel: KernelConfig) -> 'CostModel':
        isax, h = kernel.isax, kernel.hazard
        return cls(count=op_cost(isax, QueueOp.COUNT, True, h), pop=op_cost(isax, QueueOp.POP, True, h),
                   pop_pipelined=op_cost(isax, QueueOp.POP, False, h),
                   recent=op_cost(isax, QueueOp.RECENT, True, h), push=op_cost(isax, QueueOp.PUSH, False, h),
                   work=kernel.work, loop=kernel.loop, unroll=kernel.unroll,
                   message_work=kernel.message_work, pm=kernel.pm, accelerator=kernel.accelerator)


def plan_batch(pm: ProgrammingModel, available: int, unroll: int) -> Tuple[int, int]:
    """
    Packets one loop entry consumes given `available` queued packets.

    Returns:
        (packets in the batch, how many of them run in the software-pipelined unrolled body)
    """
    if available <= 0:
        return 0, 0
    if pm is ProgrammingModel.SINGLE_ITER:
        return 1, 0
    if pm is ProgrammingModel.DUFF:
        return available, 0
    if pm is ProgrammingModel.UNROLLED:
        return (unroll, unroll) if available >= unroll else (1, 0)
    # Duff entry covers the remainder, full groups run unrolled
    return available, available - available % unroll


def batch_cycles(pm: ProgrammingModel, available: int, count: int, pop: int, pop_pipelined: int,
                 work: int, loop: int, unroll: int) -> Tuple[int, int]:
    """(cycles, packets) for one loop entry with no verdicts or pushes."""
    packets, unrolled = plan_batch(pm, available, unroll)
    if packets == 0:
        return 0, 0
    cycles = count + loop + (packets - unrolled) * (pop + work) + unrolled * (pop_pipelined + work)
    return cycles, packets


def drain_cycles(pm: ProgrammingModel, occupancy: int, isax: IsaxMode = IsaxMode.MA_STAGE,
                 work: int = 4, loop: int = 2, unroll: int = 4, hazard: int = 4) -> int:
    """Cycles to empty a queue holding `occupancy` packets with no further arrivals."""
    count = op_cost(isax, QueueOp.COUNT, True, hazard)
    pop = op_cost(isax, QueueOp.POP, True, hazard)
    pop_pipelined = op_cost(isax, QueueOp.POP, False, hazard)
    total = 0
    remaining = occupancy
    while remaining > 0:
        cycles, packets = batch_cycles(pm, remaining, count, pop, pop_pipelined, work, loop, unroll)
        total += cycles
        remaining -= packets
    return total


class MessageQueue:
    """Bounded FIFO; the input queue also remembers the most recently removed element."""

    def __init__(self, capacity: int = 32):
        self.capacity = capacity
        self.slots: Deque = deque()
        self.recent: Optional[Packet] = None

    def __len__(self) -> int:
        return len(self.slots)

    @property
    def full(self) -> bool:
        return len(self.slots) >= self.capacity

    def free(self) -> int:
        return self.capacity - len(self.slots)


@dataclass
class WorkItem:
    cycles: int
    packet: bool = False
    verdicts: List[Verdict] = field(default_factory=list)
    messages: List[Message] = field(default_factory=list)


class EngineState:
    """
    One analysis engine stepped on the slow clock.

    Packets from the multicast channel land in `in_q`; mesh messages land in
    `net_q`, which is served first so a waiting kernel always sees its replies.
    """

    def __init__(self, index: int, capacity: int = 32,
                 block_status: Optional[Callable[[int], Dict[int, int]]] = None):
        self.index = index
        self.in_q = MessageQueue(capacity)
        self.net_q = MessageQueue(capacity)
        self.out_q = MessageQueue(capacity)
        self.kernels: Dict[int, object] = {}
        self.costs: Dict[int, CostModel] = {}
        self.block_status = block_status or (lambda kernel_id: {})
        self.stats = EngineStats(index=index, occupancy_histogram=[0] * (capacity + 1))
        self.item: Optional[WorkItem] = None
        self.batch_left = 0
        self.batch_pipelined = 0
        self.popped_seqs: List[int] = []

    def bind(self, kernel_id: int, runtime, costs: CostModel) -> None:
        self.kernels[kernel_id] = runtime
        self.costs[kernel_id] = costs

    @property
    def idle(self) -> bool:
        return self.item is None and self.batch_left == 0

    def quiescent(self) -> bool:
        return (self.idle and not self.in_q.slots and not self.net_q.slots and not self.out_q.slots
                and not any(k.pending_work() for k in self.kernels.values()))


def q_count(engine: EngineState, which: str = 'input') -> int:
    """Occupancy of the input or output queue."""
    return len(engine.in_q if which == 'input' else engine.out_q)


def _slice(packet: Packet, bit_offset: int) -> int:
    if bit_offset < 0 or bit_offset + 64 > PACKET_BITS:
        raise ProgramFault(f"bit offset {bit_offset} leaves the {PACKET_BITS}-bit packet")
    return packet.field(bit_offset)


def q_top(engine: EngineState, bit_offset: int) -> Optional[int]:
    """Bits [offset+63:offset] of the head packet; None (and a queue-empty stall) when empty."""
    if bit_offset < 0 or bit_offset + 64 > PACKET_BITS:
        raise ProgramFault(f"bit offset {bit_offset} leaves the {PACKET_BITS}-bit packet")
    if not engine.in_q.slots:
        engine.stats.queue_empty += 1
        return None
    return _slice(engine.in_q.slots[0], bit_offset)


def q_pop(engine: EngineState, bit_offset: int) -> Optional[int]:
    """As q_top, and the head moves into `recent`."""
    value = q_top(engine, bit_offset)
    if value is None:
        return None
    packet = engine.in_q.slots.popleft()
    engine.in_q.recent = packet
    engine.popped_seqs.append(packet.seq)
    return value


def q_recent(engine: EngineState, bit_offset: int) -> int:
    if engine.in_q.recent is None:
        raise ProgramFault("recent read before any pop")
    return _slice(engine.in_q.recent, bit_offset)


def q_push(engine: EngineState, message: Message) -> bool:
    """Queue a message for mesh injection; False when the output queue is full."""
    if engine.out_q.full:
        return False
    engine.out_q.slots.append(message)
    return True


def _finish(engine: EngineState, item: WorkItem, cycle: int, sink: List[Verdict]) -> bool:
    # Pushes drain into whatever output space there is; the item ends with its last push
    while item.messages and q_push(engine, item.messages[0]):
        item.messages.pop(0)
    if item.messages:
        return False
    sink.extend(replace(v, detect_cycle=cycle) for v in item.verdicts)
    return True


def _packet_item(engine: EngineState, cycle: int) -> WorkItem:
    head = engine.in_q.slots[0]
    kernel_id = head.kernel
    costs = engine.costs[kernel_id]
    runtime = engine.kernels[kernel_id]
    pipelined = engine.batch_left <= engine.batch_pipelined
    engine.batch_left -= 1
    q_pop(engine, 0)
    packet = engine.in_q.recent
    verdicts = runtime.process(packet)
    messages = runtime.drain_outbox()
    stamped = [replace(v, pc=q_recent(engine, 0) if v.seq == packet.seq else v.pc, engine=engine.index)
               for v in verdicts]
    if costs.accelerator:
        cycles = 1
    else:
        cycles = (costs.pop_pipelined if pipelined else costs.pop) + costs.work
        cycles += costs.recent * len(stamped) + costs.push * len(messages)
    engine.stats.packets += 1
    engine.stats.packet_cycles += cycles
    return WorkItem(cycles, packet=True, verdicts=stamped, messages=messages)


def _next_item(engine: EngineState, cycle: int) -> Optional[WorkItem]:
    if engine.net_q.slots:
        message = engine.net_q.slots.popleft()
        runtime = engine.kernels[message.kernel]
        costs = engine.costs[message.kernel]
        verdicts = [replace(v, engine=engine.index) for v in runtime.on_message(message)]
        messages = runtime.drain_outbox()
        engine.stats.messages += 1
        if costs.accelerator:
            cycles = 1
        else:
            cycles = costs.pop + costs.message_work + costs.recent * len(verdicts) + costs.push * len(messages)
        return WorkItem(cycles, verdicts=verdicts, messages=messages)

    if any(k.blocked() for k in engine.kernels.values()):
        return None

    if engine.batch_left > 0 and engine.in_q.slots:
        return _packet_item(engine, cycle)

    if engine.in_q.slots:
        kernel_id = engine.in_q.slots[0].kernel
        costs = engine.costs[kernel_id]
        if costs.accelerator:
            engine.batch_left, engine.batch_pipelined = 1, 0
            return _packet_item(engine, cycle)
        available = q_count(engine, 'input')
        engine.batch_left, engine.batch_pipelined = plan_batch(costs.pm, available, costs.unroll)
        return WorkItem(costs.count + costs.loop)

    engine.batch_left = 0
    engine.stats.queue_empty += 1
    for kernel_id, runtime in engine.kernels.items():
        verdicts = [replace(v, engine=engine.index) for v in runtime.on_idle(engine.block_status(kernel_id))]
        messages = runtime.drain_outbox()
        if messages or verdicts:
            costs = engine.costs[kernel_id]
            cycles = costs.push * len(messages) + costs.recent * len(verdicts)
            return WorkItem(max(1, cycles), verdicts=verdicts, messages=messages)
    return None


def engine_step(engine: EngineState, cycle: int, sink: List[Verdict]) -> None:
    """
    Advance one slow-domain cycle.

    Verdicts and pushes of a work item take effect when its last cycle completes;
    an item whose pushes do not fit the output queue holds the engine until they do.
    """
    stats = engine.stats
    stats.occupancy_histogram[len(engine.in_q)] += 1
    if engine.in_q.full:
        stats.full_cycles += 1

    if engine.item is not None and engine.item.cycles == 0:
        if _finish(engine, engine.item, cycle, sink):
            engine.item = None
        else:
            stats.out_stall += 1
            return

    if engine.item is None:
        engine.item = _next_item(engine, cycle)
        if engine.item is None:
            return

    engine.item.cycles -= 1
    stats.busy_cycles += 1
    if engine.item.cycles == 0 and _finish(engine, engine.item, cycle, sink):
        engine.item = None
