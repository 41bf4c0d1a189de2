# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Guardian kernels: performance counters with bounds, shadow stack, an
AddressSanitizer-like heap checker and a use-after-free quarantine detector.
See instructions/architecture for development guidelines.

Each kernel has a pure `*_process(state, packet)` function plus a state class
that the engine drives through `process`, `on_message`, `on_idle`,
`drain_outbox`, `blocked` and `pending_work`.
"""

import logging
from bisect import bisect_right, insort
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, List, Optional, Sequence, Tuple

from fireguard.config import KernelConfig
from fireguard.models.kernel import KernelKind, Policy
from fireguard.models.packet import Message, MessageTag, Packet
from fireguard.models.trace_record import ACCESS_KINDS, MASK64, Kind
from fireguard.models.verdict import Verdict, ViolationClass

logger = logging.getLogger(__name__)

UNBOUNDED = 1 << 63


class KernelState:
    """Defaults shared by every kernel: no messages, never blocked."""
    name = ''

    def __init__(self):
        self.outbox: List[Message] = []

    def process(self, packet: Packet) -> List[Verdict]:
        raise NotImplementedError

    def on_message(self, message: Message) -> List[Verdict]:
        return []

    def on_idle(self, sealed: Dict[int, int]) -> List[Verdict]:
        return []

    def drain_outbox(self) -> List[Message]:
        out, self.outbox = self.outbox, []
        return out

    def blocked(self) -> bool:
        return False

    def pending_work(self) -> bool:
        return False


def _single(verdict: Optional[Verdict]) -> List[Verdict]:
    return [verdict] if verdict is not None else []


# -- performance counters ---------------------------------------------------

END_OF_STREAM = MASK64      # frontier of a shard that has seen its last packet


def pack_count(kind: Kind, count: int) -> int:
    return int(kind) << 56 | count


def unpack_count(value: int) -> Tuple[Kind, int]:
    return Kind(value >> 56), value & ((1 << 56) - 1)


def round_robin_share(total: int, position: int, shards: int) -> int:
    """Packets the shard at `position` receives when `total` are dealt out in turn."""
    return max(0, (total - position + shards - 1) // shards)


@dataclass
class WindowTally:
    """A window as the merge engine sees it: summed counts and each shard's first packet in it."""
    counts: Dict[Kind, int] = field(default_factory=dict)
    openers: List[Tuple[int, int]] = field(default_factory=list)    # (seq, pc)


class PmcState(KernelState):
    """
    Per-kind counters over fixed windows of commit cycles, one share per engine.

    Shards are the engines the kernel's packets are dispatched to; the lowest one
    also merges. A shard announces every window it enters with its first packet
    there, and reports the bounded counters of a window when it leaves it. The
    merge engine checks a window once every shard has moved past it, so the
    verdicts do not depend on how many engines share the kernel.
    """

    def __init__(self, window: int = 1000, bounds: Optional[Dict[Kind, Tuple[int, int]]] = None,
                 name: str = 'pmc', engine: int = 0, shards: Sequence[int] = (0,), kernel_id: int = 0):
        super().__init__()
        self.window = window
        self.bounds = dict(bounds or {})
        self.name = name
        self.engine = engine
        self.shards = list(shards)
        self.kernel_id = kernel_id
        self.root = self.shards[0]
        self.position = self.shards.index(engine) if engine in self.shards else None
        self.counters: Dict[Kind, int] = {}
        self.current_window: Optional[int] = None
        self.processed = 0
        self.last: Optional[Tuple[int, int]] = None
        self.finished = False
        # merge engine
        self.tallies: Dict[int, WindowTally] = {}
        self.frontier: Dict[int, int] = {shard: 0 for shard in self.shards}
        self.lasts: List[Tuple[int, int]] = []

    @classmethod
    def from_config(cls, kernel: KernelConfig, engine: int) -> 'PmcState':
        bounds = {Kind[name]: (int(lo), int(hi)) for name, (lo, hi) in kernel.params['bounds'].items()}
        shards = [kernel.fixed_target] if kernel.policy is Policy.FIXED else list(kernel.engines)
        return cls(kernel.params['window'], bounds, kernel.name, engine, shards, kernel.index)

    def _send(self, tag: MessageTag, value: int = 0, seq: int = -1, window: int = 0) -> List[Verdict]:
        message = Message(src=self.engine, dst=self.root, value=value & MASK64, tag=tag,
                          kernel=self.kernel_id, block=window, seq=seq)
        if self.engine == self.root:
            return self.on_message(message)
        self.outbox.append(message)
        return []

    def close_window(self) -> List[Verdict]:
        verdicts = []
        for kind, count in sorted(self.counters.items()):
            if kind in self.bounds:
                verdicts += self._send(MessageTag.WINDOW_COUNT, pack_count(kind, count), window=self.current_window)
        self.counters = {}
        return verdicts

    def process(self, packet: Packet) -> List[Verdict]:
        return pmc_process(self, packet)

    def on_message(self, message: Message) -> List[Verdict]:
        tag = message.tag
        if tag is MessageTag.WINDOW_COUNT:
            kind, count = unpack_count(message.value)
            counts = self.tallies.setdefault(message.block, WindowTally()).counts
            counts[kind] = counts.get(kind, 0) + count
            return []
        if tag is MessageTag.WINDOW_OPEN:
            self.tallies.setdefault(message.block, WindowTally()).openers.append((message.seq, message.value))
            self.frontier[message.src] = message.block
        elif tag is MessageTag.WINDOW_END:
            if message.seq >= 0:
                self.lasts.append((message.seq, message.value))
            self.frontier[message.src] = END_OF_STREAM
        return self._check_windows()

    def _outside(self, counts: Dict[Kind, int]) -> bool:
        return any(not lo <= counts.get(kind, 0) <= hi for kind, (lo, hi) in self.bounds.items())

    def _check_windows(self) -> List[Verdict]:
        """Check every window all shards have left; report the first packet of a later window."""
        horizon = min(self.frontier.values())
        verdicts = []
        for window in sorted(w for w in self.tallies if w < horizon):
            tally = self.tallies.pop(window)
            if not self._outside(tally.counts):
                continue
            later = [opener for w, t in self.tallies.items() if w > window for opener in t.openers]
            seq, pc = min(later) if later else max(self.lasts)
            logger.debug("%s: window %d out of bounds %s, reported at seq %d",
                         self.name, window, tally.counts, seq)
            verdicts.append(Verdict(seq, ViolationClass.COUNTER_BOUND, pc, kernel=self.name))
        return verdicts

    def on_idle(self, sealed: Dict[int, int]) -> List[Verdict]:
        """Once the stream has ended and this shard has its whole share, flush the last window."""
        if self.position is None or self.finished or not sealed:
            return []
        if self.processed != round_robin_share(sum(sealed.values()), self.position, len(self.shards)):
            return []
        self.finished = True
        verdicts = self.close_window() if self.current_window is not None else []
        seq, pc = self.last if self.last is not None else (-1, 0)
        return verdicts + self._send(MessageTag.WINDOW_END, pc, seq)

    def pending_work(self) -> bool:
        return (self.processed > 0 and not self.finished) or bool(self.tallies)


def pmc_process(state: PmcState, packet: Packet) -> List[Verdict]:
    """
    Count one packet.

    Windows come from the packet's full commit cycle. Entering a new window reports
    the bounded counters of the previous one, then announces the new window with
    this packet. Verdicts only come back when this engine is the merge engine.
    """
    window = packet.cycle // state.window
    state.processed += 1
    state.last = (packet.seq, packet.pc)
    verdicts: List[Verdict] = []
    if window != state.current_window:
        if state.current_window is not None:
            verdicts += state.close_window()
        state.current_window = window
        verdicts += state._send(MessageTag.WINDOW_OPEN, packet.pc, packet.seq, window)
    state.counters[packet.kind] = state.counters.get(packet.kind, 0) + 1
    return verdicts


# -- shadow stack -----------------------------------------------------------

def pack_summary_head(rets: int, entries: int, remnants: int) -> int:
    return rets | entries << 21 | remnants << 42


def unpack_summary_head(value: int) -> Tuple[int, int, int]:
    mask = (1 << 21) - 1
    return value & mask, (value >> 21) & mask, (value >> 42) & mask


@dataclass
class BlockSummary:
    """What one closed block did to the stack it inherited: pops to check, then pushes."""
    expected: Optional[Tuple[int, int, int]] = None
    rets: List[List[int]] = field(default_factory=list)      # [seq, target, pc]
    entries: List[int] = field(default_factory=list)
    remnants: List[int] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        if self.expected is None:
            return False
        rets, entries, remnants = self.expected
        return (len(self.rets) == rets and all(r[2] is not None for r in self.rets)
                and len(self.entries) == entries and len(self.remnants) == remnants)


class ShadowStackState(KernelState):
    """
    One engine's share of a shadow stack.

    Each BLOCK run of packets is checked against a fresh local stack. RETs that
    underflow it are deferred (except in block 0, which inherits an empty stack)
    and shipped with the block's surviving entries to the merge engine, the
    kernel's lowest engine, which replays the summaries in block order. Entries
    beyond `spill_threshold` spill to the next engine of the ring and come back
    on demand.
    """

    def __init__(self, engine: int, ring: Sequence[int], kernel_id: int = 0,
                 spill_threshold: int = 64, name: str = 'shadow_stack'):
        super().__init__()
        self.engine = engine
        self.ring = list(ring)
        self.kernel_id = kernel_id
        self.spill_threshold = spill_threshold
        self.name = name
        self.root = self.ring[0]
        self.neighbour = self.ring[(self.ring.index(engine) + 1) % len(self.ring)]
        self.stack: List[int] = []
        self.block: Optional[int] = None
        self.closed = True
        self.processed = 0
        self.unmatched: List[Tuple[int, int, int]] = []
        self.spilled = 0
        self.awaiting: Optional[Tuple[int, int, int]] = None
        self.stash: Dict[Tuple[int, int], List[int]] = {}
        self.merged: List[int] = []
        self.next_block = 0
        self.summaries: Dict[int, BlockSummary] = {}

    @classmethod
    def from_config(cls, kernel: KernelConfig, engine: int) -> 'ShadowStackState':
        return cls(engine, kernel.engines, kernel.index, kernel.params['spill_threshold'], kernel.name)

    def _send(self, dst: int, tag: MessageTag, value: int = 0, seq: int = -1, block: Optional[int] = None) -> None:
        self.outbox.append(Message(src=self.engine, dst=dst, value=value & MASK64, tag=tag,
                                   kernel=self.kernel_id, block=self.block if block is None else block, seq=seq))

    def _verdict(self, seq: int, pc: int) -> Verdict:
        return Verdict(seq, ViolationClass.RET_MISMATCH, pc, kernel=self.name)

    def open_block(self, block: int) -> None:
        self.block = block
        self.closed = False
        self.processed = 0
        self.stack = []
        self.unmatched = []
        self.spilled = 0

    def close_block(self) -> None:
        if self.spilled:
            self._send(self.neighbour, MessageTag.FLUSH)
        self._send(self.root, MessageTag.SUMMARY_HEAD,
                   pack_summary_head(len(self.unmatched), len(self.stack), self.spilled))
        for seq, target, pc in self.unmatched:
            self._send(self.root, MessageTag.SUMMARY_RET_TARGET, target, seq=seq)
            self._send(self.root, MessageTag.SUMMARY_RET_PC, pc, seq=seq)
        for entry in self.stack:
            self._send(self.root, MessageTag.SUMMARY_ENTRY, entry)
        logger.debug("engine %d closes block %s: %d deferred RETs, %d entries, %d spilled",
                     self.engine, self.block, len(self.unmatched), len(self.stack), self.spilled)
        self.closed = True
        self.stack = []
        self.unmatched = []
        self.spilled = 0

    def process(self, packet: Packet) -> List[Verdict]:
        return _single(shadowstack_process(self, packet))

    def on_message(self, message: Message) -> List[Verdict]:
        tag = message.tag
        key = (message.src, message.block)
        if tag is MessageTag.SPILL:
            self.stash.setdefault(key, []).append(message.value)
        elif tag is MessageTag.RECALL:
            value = self.stash[key].pop()
            self._send(message.src, MessageTag.RECALL_REPLY, value, block=message.block)
        elif tag is MessageTag.RECALL_REPLY:
            seq, target, pc = self.awaiting
            self.awaiting = None
            self.spilled -= 1
            if message.value != target:
                return [self._verdict(seq, pc)]
        elif tag is MessageTag.FLUSH:
            for value in self.stash.pop(key, []):
                self._send(self.root, MessageTag.REMNANT, value, block=message.block)
        else:
            summary = self.summaries.setdefault(message.block, BlockSummary())
            if tag is MessageTag.SUMMARY_HEAD:
                summary.expected = unpack_summary_head(message.value)
            elif tag is MessageTag.SUMMARY_RET_TARGET:
                summary.rets.append([message.seq, message.value, None])
            elif tag is MessageTag.SUMMARY_RET_PC:
                summary.rets[-1][2] = message.value
            elif tag is MessageTag.SUMMARY_ENTRY:
                summary.entries.append(message.value)
            elif tag is MessageTag.REMNANT:
                summary.remnants.append(message.value)
            return self._merge()
        return []

    def _merge(self) -> List[Verdict]:
        verdicts = []
        while self.next_block in self.summaries and self.summaries[self.next_block].complete:
            summary = self.summaries.pop(self.next_block)
            for seq, target, pc in summary.rets:
                if not self.merged or self.merged.pop() != target:
                    verdicts.append(self._verdict(seq, pc))
            self.merged.extend(summary.remnants)
            self.merged.extend(summary.entries)
            self.next_block += 1
        return verdicts

    def on_idle(self, sealed: Dict[int, int]) -> List[Verdict]:
        if not self.closed and self.awaiting is None and sealed.get(self.block) == self.processed:
            self.close_block()
        return []

    def blocked(self) -> bool:
        return self.awaiting is not None

    def pending_work(self) -> bool:
        return (not self.closed or self.awaiting is not None or bool(self.summaries)
                or any(self.stash.values()))


def shadowstack_process(state: ShadowStackState, packet: Packet) -> Optional[Verdict]:
    """
    CALL pushes pc+4; RET pops and compares with its target.

    A mismatch, or an empty-stack RET in block 0, is reported here. Other
    underflows either recall a spilled entry (the state then blocks until the
    reply arrives) or are deferred to the merge engine.
    """
    if state.closed or packet.block != state.block:
        if not state.closed:
            state.close_block()
        state.open_block(packet.block)
    state.processed += 1

    if packet.kind is Kind.CALL:
        state.stack.append((packet.pc + 4) & MASK64)
        if len(state.stack) > state.spill_threshold:
            oldest = state.stack.pop(0)
            state.spilled += 1
            state._send(state.neighbour, MessageTag.SPILL, oldest)
        return None
    if packet.kind is not Kind.RET:
        return None

    target = packet.address
    if state.stack:
        if state.stack.pop() != target:
            return state._verdict(packet.seq, packet.pc)
        return None
    if state.spilled:
        state.awaiting = (packet.seq, target, packet.pc)
        state._send(state.neighbour, MessageTag.RECALL)
        return None
    if state.block == 0:
        return state._verdict(packet.seq, packet.pc)
    state.unmatched.append((packet.seq, target, packet.pc))
    return None


# -- heap shadow memory -----------------------------------------------------

class RegionState(Enum):
    LIVE = 'live'
    FREED = 'freed'


class ShadowMemory:
    """Non-overlapping [base, base+size) regions kept sorted by base."""

    def __init__(self):
        self.bases: List[int] = []
        self.regions: Dict[int, Tuple[int, RegionState]] = {}

    def __len__(self) -> int:
        return len(self.bases)

    def find(self, addr: int) -> Optional[Tuple[int, int, RegionState]]:
        i = bisect_right(self.bases, addr) - 1
        if i >= 0:
            base = self.bases[i]
            size, state = self.regions[base]
            if addr < base + size:
                return base, size, state
        return None

    def overlapping(self, base: int, size: int) -> List[int]:
        i = max(0, bisect_right(self.bases, base) - 1)
        found = []
        while i < len(self.bases) and self.bases[i] < base + size:
            other = self.bases[i]
            if other + self.regions[other][0] > base:
                found.append(other)
            i += 1
        return found

    def insert(self, base: int, size: int, state: RegionState) -> List[int]:
        """Insert a region, dropping (and returning) any regions it overlaps."""
        dropped = self.overlapping(base, size)
        for other in dropped:
            self.remove(other)
        insort(self.bases, base)
        self.regions[base] = (max(size, 1), state)
        return dropped

    def remove(self, base: int) -> None:
        del self.regions[base]
        self.bases.pop(bisect_right(self.bases, base) - 1)

    def get(self, base: int) -> Optional[Tuple[int, RegionState]]:
        return self.regions.get(base)

    def set_state(self, base: int, state: RegionState) -> None:
        size, _ = self.regions[base]
        self.regions[base] = (size, state)

    def near(self, addr: int, margin: int) -> List[Tuple[int, int, RegionState]]:
        """Regions whose range widened by `margin` on both sides contains `addr`."""
        i = bisect_right(self.bases, addr)
        result = []
        j = i - 1
        while j >= 0:
            base = self.bases[j]
            size, state = self.regions[base]
            if base + size + margin <= addr:
                break
            result.append((base, size, state))
            j -= 1
        j = i
        while j < len(self.bases) and self.bases[j] - margin <= addr:
            base = self.bases[j]
            size, state = self.regions[base]
            result.append((base, size, state))
            j += 1
        return result


class HeapOwnership:
    """
    ALLOC/FREE reach every engine of an address-hashed kernel; only the engine that
    owns the base under the hash reports verdicts for them.
    """

    def __init__(self, engine: int = 0, engines: Sequence[int] = (0,), hash_shift: int = 6):
        self.engine = engine
        self.engines = list(engines)
        self.hash_shift = hash_shift

    @classmethod
    def for_kernel(cls, kernel: KernelConfig, engine: int) -> 'HeapOwnership':
        engines = [kernel.fixed_target] if kernel.policy is Policy.FIXED else list(kernel.engines)
        return cls(engine, engines, int(kernel.params['hash_shift']))

    def owns(self, base: int) -> bool:
        return self.engines[(base >> self.hash_shift) % len(self.engines)] == self.engine


class AsanState(KernelState):
    def __init__(self, strict: bool = False, redzone: int = 16, name: str = 'asan',
                 ownership: Optional[HeapOwnership] = None):
        super().__init__()
        self.strict = strict
        self.redzone = redzone
        self.memory = ShadowMemory()
        self.name = name
        self.ownership = ownership or HeapOwnership()

    @classmethod
    def from_config(cls, kernel: KernelConfig, engine: int = 0) -> 'AsanState':
        return cls(bool(kernel.params['strict']), int(kernel.params['redzone']), kernel.name,
                   HeapOwnership.for_kernel(kernel, engine))

    def process(self, packet: Packet) -> List[Verdict]:
        return _single(asan_process(self, packet))


def asan_process(state: AsanState, packet: Packet) -> Optional[Verdict]:
    """
    ALLOC/FREE maintain the shadow memory; accesses to freed regions or to a live
    region's redzone are OOB (strict mode: anything outside a live region).
    FREE of a base that is not live is an invalid free, also OOB.
    """
    kind = packet.kind
    addr = packet.address
    memory = state.memory
    if kind is Kind.ALLOC:
        memory.insert(addr, packet.operand, RegionState.LIVE)
        return None
    if kind is Kind.FREE:
        region = memory.get(addr)
        if region is None or region[1] is not RegionState.LIVE:
            if not state.ownership.owns(addr):
                return None
            return Verdict(packet.seq, ViolationClass.OOB, packet.pc, kernel=state.name)
        memory.set_state(addr, RegionState.FREED)
        return None
    if kind not in ACCESS_KINDS:
        return None

    hit = memory.find(addr)
    if hit is not None:
        if hit[2] is RegionState.LIVE:
            return None
        return Verdict(packet.seq, ViolationClass.OOB, packet.pc, kernel=state.name)
    if state.strict:
        return Verdict(packet.seq, ViolationClass.OOB, packet.pc, kernel=state.name)
    if any(region_state is RegionState.LIVE for _, _, region_state in memory.near(addr, state.redzone)):
        return Verdict(packet.seq, ViolationClass.OOB, packet.pc, kernel=state.name)
    return None


class UafState(KernelState):
    """Live and quarantined regions; quarantine is FIFO by free order under a byte budget."""

    def __init__(self, budget: int = 1 << 20, name: str = 'uaf', ownership: Optional[HeapOwnership] = None):
        super().__init__()
        self.budget = budget
        self.ownership = ownership or HeapOwnership()
        self.memory = ShadowMemory()
        self.quarantine: Deque[Tuple[int, int]] = deque()
        self.quarantined_bytes = 0
        self.name = name

    @classmethod
    def from_config(cls, kernel: KernelConfig, engine: int = 0) -> 'UafState':
        return cls(int(kernel.params['quarantine_budget']), kernel.name, HeapOwnership.for_kernel(kernel, engine))

    def release(self, base: int, size: int) -> None:
        self.quarantine.remove((base, size))
        self.quarantined_bytes -= size

    def process(self, packet: Packet) -> List[Verdict]:
        return _single(uaf_process(self, packet))


def uaf_process(state: UafState, packet: Packet) -> Optional[Verdict]:
    """
    FREE quarantines a live region, evicting the oldest entries while over budget.
    Accesses to quarantined regions and double frees are UAF. An ALLOC reusing
    quarantined space releases it; FREE of an unknown base is ignored.
    """
    kind = packet.kind
    addr = packet.address
    memory = state.memory
    if kind is Kind.ALLOC:
        for base in memory.overlapping(addr, max(packet.operand, 1)):
            size, region_state = memory.get(base)
            if region_state is RegionState.FREED:
                state.release(base, size)
        memory.insert(addr, packet.operand, RegionState.LIVE)
        return None
    if kind is Kind.FREE:
        region = memory.get(addr)
        if region is None:
            return None
        size, region_state = region
        if region_state is RegionState.FREED:
            if not state.ownership.owns(addr):
                return None
            return Verdict(packet.seq, ViolationClass.UAF, packet.pc, kernel=state.name)
        memory.set_state(addr, RegionState.FREED)
        state.quarantine.append((addr, size))
        state.quarantined_bytes += size
        while state.quarantined_bytes > state.budget and state.quarantine:
            old_base, old_size = state.quarantine.popleft()
            state.quarantined_bytes -= old_size
            memory.remove(old_base)
        return None
    if kind not in ACCESS_KINDS:
        return None
    hit = memory.find(addr)
    if hit is not None and hit[2] is RegionState.FREED:
        return Verdict(packet.seq, ViolationClass.UAF, packet.pc, kernel=state.name)
    return None


def make_kernel_state(kernel: KernelConfig, engine: int) -> KernelState:
    """Kernel state for one engine of a deployment."""
    if kernel.kind is KernelKind.PMC:
        return PmcState.from_config(kernel, engine)
    if kernel.kind is KernelKind.SHADOW_STACK:
        return ShadowStackState.from_config(kernel, engine)
    if kernel.kind is KernelKind.ASAN:
        return AsanState.from_config(kernel, engine)
    return UafState.from_config(kernel, engine)
