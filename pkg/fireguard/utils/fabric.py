# IMPORTANT: Read instructions/architecture before making changes to this file
"""
Inter-engine fabric: a Manhattan-grid NoC with XY routing, wormhole switching and
credit back-pressure. Filter-to-engine packets use the multicast channel in
allocator.py and never enter the mesh.
See instructions/architecture for development guidelines.
"""

import logging
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Deque, List, Optional, Tuple

logger = logging.getLogger(__name__)

NORTH, SOUTH, EAST, WEST, LOCAL = range(5)
PORT_NAMES = ('N', 'S', 'E', 'W', 'L')
OPPOSITE = {NORTH: SOUTH, SOUTH: NORTH, EAST: WEST, WEST: EAST}
STEP = {NORTH: (0, -1), SOUTH: (0, 1), EAST: (1, 0), WEST: (-1, 0)}


@dataclass
class FabricPacket:
    """A payload travelling the mesh; `flits` flits follow the header contiguously."""
    payload: Any
    src: int
    dst: int
    flits: int = 1
    injected_at: int = -1
    delivered_at: int = -1
    hops: int = 0

    @property
    def latency(self) -> int:
        return self.delivered_at - self.injected_at


@dataclass
class Flit:
    packet: FabricPacket
    head: bool
    tail: bool


class Router:
    """Five input buffers; output ports are reserved head-to-tail and granted round-robin."""

    def __init__(self, x: int, y: int, depth: int):
        self.coord = (x, y)
        self.depth = depth
        self.inputs: List[Deque[Flit]] = [deque() for _ in range(5)]
        self.reserved: List[Optional[int]] = [None] * 5
        self.last_grant: List[int] = [4] * 5

    def occupancy(self) -> int:
        return sum(len(q) for q in self.inputs)


class Mesh:
    """
    width x height routers; node n sits at (n % width, n // width).

    One step is one slow-domain cycle. Moves are decided on the start-of-cycle
    buffer state, so a flit advances at most one hop per step.
    """

    def __init__(self, width: int, height: int, depth: int = 4):
        self.width = width
        self.height = height
        self.depth = depth
        self.routers = [Router(n % width, n // width, depth) for n in range(width * height)]
        self.staging: List[Deque[Flit]] = [deque() for _ in range(width * height)]
        self.cycle = 0
        self.in_flight = 0
        self.delivered_total = 0

    @property
    def nodes(self) -> int:
        return len(self.routers)

    def coord(self, node: int) -> Tuple[int, int]:
        return node % self.width, node // self.width

    def manhattan(self, src: int, dst: int) -> int:
        (sx, sy), (dx, dy) = self.coord(src), self.coord(dst)
        return abs(sx - dx) + abs(sy - dy)

    def route(self, node: int, dst: int) -> int:
        """XY dimension order: correct x first, then y, then eject."""
        (x, y), (dx, dy) = self.coord(node), self.coord(dst)
        if dx > x:
            return EAST
        if dx < x:
            return WEST
        if dy > y:
            return SOUTH
        if dy < y:
            return NORTH
        return LOCAL

    def can_inject(self, node: int) -> bool:
        return not self.staging[node]

    def inject(self, node: int, packet: FabricPacket) -> bool:
        """Hand a packet to the node's network interface; False if it is still injecting another."""
        if self.staging[node]:
            return False
        packet.injected_at = self.cycle
        for k in range(packet.flits):
            self.staging[node].append(Flit(packet, head=k == 0, tail=k == packet.flits - 1))
        self.in_flight += 1
        return True

    def empty(self) -> bool:
        return self.in_flight == 0

    def step(self, can_eject: Optional[Callable[[int], bool]] = None) -> List[FabricPacket]:
        """
        Advance one cycle.

        Args:
            can_eject: Node -> whether its engine can take a packet this cycle

        Returns:
            Packets whose tail flit was delivered this cycle
        """
        self.cycle += 1
        can_eject = can_eject or (lambda node: True)
        delivered: List[FabricPacket] = []
        moves = []      # (router index, input port, output port)

        for index, router in enumerate(self.routers):
            requests = {}
            for port, buffer in enumerate(router.inputs):
                if not buffer:
                    continue
                flit = buffer[0]
                if flit.head:
                    out = self.route(index, flit.packet.dst)
                    if router.reserved[out] is not None:
                        continue
                else:
                    out = next((o for o, holder in enumerate(router.reserved) if holder == port), None)
                    if out is None:
                        continue
                requests.setdefault(out, []).append(port)

            for out, ports in requests.items():
                holder = router.reserved[out]
                if holder is not None:
                    winner = holder
                else:
                    start = router.last_grant[out]
                    winner = min(ports, key=lambda p: (p - start - 1) % 5)
                if out == LOCAL:
                    if not can_eject(index):
                        continue
                else:
                    dx, dy = STEP[out]
                    x, y = router.coord
                    neighbour = self.routers[(y + dy) * self.width + (x + dx)]
                    if len(neighbour.inputs[OPPOSITE[out]]) >= self.depth:
                        continue
                moves.append((index, winner, out))

        for index, port, out in moves:
            router = self.routers[index]
            flit = router.inputs[port].popleft()
            if flit.head:
                router.last_grant[out] = port
            router.reserved[out] = None if flit.tail else port
            if out == LOCAL:
                if flit.tail:
                    flit.packet.delivered_at = self.cycle
                    delivered.append(flit.packet)
            else:
                dx, dy = STEP[out]
                x, y = router.coord
                self.routers[(y + dy) * self.width + (x + dx)].inputs[OPPOSITE[out]].append(flit)
                if flit.head:
                    flit.packet.hops += 1

        # Network interfaces feed one flit per cycle; loopback skips the router
        for node, staged in enumerate(self.staging):
            if not staged:
                continue
            flit = staged[0]
            if flit.packet.dst == node:
                if flit.tail and not can_eject(node):
                    continue
                staged.popleft()
                if flit.tail:
                    flit.packet.delivered_at = self.cycle
                    delivered.append(flit.packet)
                continue
            local = self.routers[node].inputs[LOCAL]
            if len(local) < self.depth:
                local.append(staged.popleft())

        self.in_flight -= len(delivered)
        self.delivered_total += len(delivered)
        return delivered
