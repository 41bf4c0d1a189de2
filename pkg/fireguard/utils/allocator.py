# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Mapper allocator: GID distributor, per-kernel scheduling engines and the multicast channel.
See instructions/architecture for development guidelines.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Sequence, Tuple

from fireguard.config import KernelConfig
from fireguard.errors import ConfigError
from fireguard.models.kernel import Policy
from fireguard.models.packet import Packet
from fireguard.models.trace_record import HEAP_KINDS

logger = logging.getLogger(__name__)


def mask_bits(mask: int) -> List[int]:
    """Indices of the set bits of `mask`, ascending."""
    bits = []
    index = 0
    while mask:
        if mask & 1:
            bits.append(index)
        mask >>= 1
        index += 1
    return bits


def next_engine(ae_mask: int, after: int) -> int:
    """Next set bit of `ae_mask` strictly after `after`, wrapping around."""
    members = mask_bits(ae_mask)
    for engine in members:
        if engine > after:
            return engine
    return members[0]


@dataclass
class Distributor:
    """SE bitmask per GID."""
    se_bitmap: List[int]
    num_ses: int
    no_subscriber: int = 0


def build_distributor(kernels: Sequence[KernelConfig], max_gids: int) -> Distributor:
    se_bitmap = [0] * max_gids
    for se_index, kernel in enumerate(kernels):
        for gid in kernel.gids:
            se_bitmap[gid] |= 1 << se_index
    return Distributor(se_bitmap=se_bitmap, num_ses=len(kernels))


def distribute(distributor: Distributor, gid: int) -> int:
    """
    SE bitmask for a GID; an empty mask counts a no-subscriber drop.

    Raises:
        ConfigError: gid 0 or outside the bitmap
    """
    if not 1 <= gid < len(distributor.se_bitmap):
        raise ConfigError(f"gid {gid} outside 1..{len(distributor.se_bitmap) - 1}")
    mask = distributor.se_bitmap[gid]
    if mask == 0:
        distributor.no_subscriber += 1
    return mask


@dataclass
class SchedulingEngine:
    """
    Allocator state for one kernel.

    `block` numbers maximal runs of packets sent to one engine; `sealed` maps a
    finished block to its packet count (read by engines as a status register).
    """
    kernel_id: int
    policy: Policy
    ae_mask: int
    fixed_target: Optional[int] = None
    threshold: int = 32
    hash_shift: int = 6
    pt_reg: int = 0
    ct_reg: Optional[int] = None
    block: int = 0
    block_count: int = 0
    sealed: Dict[int, int] = field(default_factory=dict)

    @classmethod
    def for_kernel(cls, kernel: KernelConfig, threshold: int) -> 'SchedulingEngine':
        members = list(kernel.engines)
        pt_reg = members[-1] if kernel.policy is Policy.ROUND_ROBIN else members[0]
        return cls(kernel_id=kernel.index, policy=kernel.policy, ae_mask=kernel.ae_mask,
                   fixed_target=kernel.fixed_target, threshold=threshold,
                   hash_shift=kernel.params.get('hash_shift', 6), pt_reg=pt_reg)

    @property
    def members(self) -> List[int]:
        return mask_bits(self.ae_mask)

    def next_block(self, target: int) -> int:
        """Block tag a packet sent to `target` would carry."""
        if self.policy is Policy.BLOCK and target != self.pt_reg and self.block_count:
            return self.block + 1
        return self.block

    def seal(self) -> None:
        """Close the current block (the SE moved on, or the stream ended)."""
        if self.block_count and self.block not in self.sealed:
            self.sealed[self.block] = self.block_count


def schedule(se: SchedulingEngine, occupancy: Sequence[int], packet: Optional[Packet] = None) -> int:
    """
    Pick the target engine(s) for one packet and latch it in ct_reg.

    FIXED, ROUND_ROBIN and BLOCK always return exactly one bit. ADDRESS_HASH shards
    accesses by address and broadcasts ALLOC/FREE to every engine of the kernel.

    Raises:
        ConfigError: FIXED target outside ae_mask
    """
    if se.ae_mask == 0:
        raise ConfigError(f"SE {se.kernel_id} has no engines")
    if se.policy is Policy.FIXED:
        if se.fixed_target is None or not se.ae_mask >> se.fixed_target & 1:
            raise ConfigError(f"fixed target {se.fixed_target} is not in ae_mask {se.ae_mask:#b}")
        target = se.fixed_target
    elif se.policy is Policy.ROUND_ROBIN:
        target = next_engine(se.ae_mask, se.pt_reg)
    elif se.policy is Policy.BLOCK:
        target = se.pt_reg if occupancy[se.pt_reg] < se.threshold else next_engine(se.ae_mask, se.pt_reg)
    else:
        if packet is not None and packet.kind in HEAP_KINDS:
            se.ct_reg = None
            return se.ae_mask
        members = se.members
        address = packet.address if packet is not None else 0
        target = members[(address >> se.hash_shift) % len(members)]
    se.ct_reg = target
    return 1 << target


def commit_schedule(se: SchedulingEngine) -> None:
    """The transmission left the allocator: ct_reg moves to pt_reg."""
    if se.ct_reg is None:
        return
    if se.policy is Policy.BLOCK and se.ct_reg != se.pt_reg and se.block_count:
        se.seal()
        se.block += 1
        se.block_count = 0
        logger.debug("SE %d opens block %d on engine %d", se.kernel_id, se.block, se.ct_reg)
    se.block_count += 1
    se.pt_reg = se.ct_reg


@dataclass(frozen=True)
class Allocation:
    """One packet's routing decision: (engine, kernel, block) per delivered copy."""
    packet: Packet
    mask: int
    ses: Tuple[int, ...]
    targets: Tuple[Tuple[int, int, int], ...]

    def engine_counts(self) -> Counter:
        return Counter(engine for engine, _, _ in self.targets)


def allocate(distributor: Distributor, ses: Sequence[SchedulingEngine], packet: Packet,
             occupancy: Sequence[int]) -> Allocation:
    """
    OR together the choice of every SE subscribed to the packet's GID.

    Two kernels choosing the same engine yield two targets (one packet per kernel context).
    """
    se_mask = distribute(distributor, packet.gid)
    mask = 0
    targets: List[Tuple[int, int, int]] = []
    chosen = mask_bits(se_mask)
    for se_index in chosen:
        se = ses[se_index]
        engines = schedule(se, occupancy, packet)
        mask |= engines
        for engine in mask_bits(engines):
            block = se.next_block(engine) if se.ct_reg is not None else se.block
            targets.append((engine, se.kernel_id, block))
    return Allocation(packet=packet, mask=mask, ses=tuple(chosen), targets=tuple(targets))


def commit_allocation(ses: Sequence[SchedulingEngine], allocation: Allocation) -> None:
    for se_index in allocation.ses:
        commit_schedule(ses[se_index])


def multicast_deliver(allocation: Allocation, queues: Sequence[Deque[Packet]], capacity: int) -> Dict[int, bool]:
    """
    All-or-nothing delivery into engine input queues.

    Returns:
        Per-target-engine space flags; the packet was enqueued iff every flag is True
    """
    counts = allocation.engine_counts()
    flags = {engine: len(queues[engine]) + need <= capacity for engine, need in counts.items()}
    if all(flags.values()):
        for engine, kernel, block in allocation.targets:
            queues[engine].append(allocation.packet.tagged(kernel, block))
    return flags
