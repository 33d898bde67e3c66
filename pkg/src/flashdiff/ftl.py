"""Pieces every page-update driver shares: the driver contract, the free-page
allocator with its GC reserve block, and the statistics record."""

from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass, field

from .chip import FlashChip, PhysPageAddr


@dataclass
class DriverStats:
    driver: str
    reads: int = 0
    writes: int = 0
    erases: int = 0
    spare_writes: int = 0
    sim_time: int = 0
    gc_invocations: int = 0
    gc_reads: int = 0
    gc_writes: int = 0
    gc_erases: int = 0
    gc_time: int = 0
    max_block_erases: int = 0
    extra: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        row = asdict(self)
        row.update(row.pop("extra"))
        return row


class PageAllocator:
    """Round-robin allocation over erased blocks, one block held back for GC.

    ``allocate`` returns None once the active block is full and no erased
    block is left; the caller is expected to run garbage collection.
    """

    def __init__(self, n_blocks: int, pages_per_block: int, reserved: int | None = None):
        self.pages_per_block = pages_per_block
        self.reserved = n_blocks - 1 if reserved is None else reserved
        self.free_blocks = deque(b for b in range(n_blocks) if b != self.reserved)
        self.active: int | None = None
        self.cursor = pages_per_block

    def allocate(self) -> PhysPageAddr | None:
        if self.active is None or self.cursor >= self.pages_per_block:
            if not self.free_blocks:
                return None
            self.active = self.free_blocks.popleft()
            self.cursor = 0
        addr = PhysPageAddr(self.active, self.cursor)
        self.cursor += 1
        return addr

    def free_pages(self) -> int:
        room = 0 if self.active is None else self.pages_per_block - self.cursor
        return room + len(self.free_blocks) * self.pages_per_block

    def is_candidate(self, block: int) -> bool:
        """Whether ``block`` may be picked as a GC victim right now."""
        if block == self.reserved or block in self.free_blocks:
            return False
        return not (block == self.active and self.cursor < self.pages_per_block)

    def rotate(self, victim: int, used: int) -> None:
        """After GC: the filled reserve block becomes active, the victim the new reserve.

        GC normally runs with the active block full; if it was forced early,
        the rest of the old active block simply waits for its own GC turn.
        """
        self.active = self.reserved
        self.cursor = used
        self.reserved = victim


class GcDestination:
    """Sequential page cursor into the reserve block during one GC pass."""

    def __init__(self, block: int, pages_per_block: int):
        self.block = block
        self.pages_per_block = pages_per_block
        self.used = 0

    def next(self) -> PhysPageAddr:
        if self.used >= self.pages_per_block:
            raise AssertionError("GC relocation overflowed the reserve block")
        addr = PhysPageAddr(self.block, self.used)
        self.used += 1
        return addr


class Driver:
    """Common contract for PDL, OPU, IPU and IPL.

    ``write_logical`` reflects a whole updated logical page. Drivers that
    persist update logs instead (IPL) take the per-update change runs through
    ``logs``; page-based drivers ignore that argument.
    """

    name = "driver"
    uses_update_logs = False

    def __init__(self, chip: FlashChip):
        self.chip = chip
        self.gc_invocations = 0
        self.gc_counts = [0, 0, 0]  # reads, writes, erases spent inside GC/merging

    def load(self, pid: int, page: bytes) -> None:
        self.write_logical(pid, page)

    def read_logical(self, pid: int) -> bytes:
        raise NotImplementedError

    def write_logical(self, pid: int, page: bytes, logs=None) -> None:
        raise NotImplementedError

    def flush(self) -> None:
        """Write-through: push anything buffered in memory to flash."""

    def pids(self):
        raise NotImplementedError

    def extra_stats(self) -> dict:
        return {}

    def stats(self) -> DriverStats:
        led = self.chip.ledger
        gr, gw, ge = self.gc_counts
        return DriverStats(
            driver=self.name,
            reads=led.reads,
            writes=led.writes,
            erases=led.erases,
            spare_writes=led.spare_writes,
            sim_time=led.sim_time,
            gc_invocations=self.gc_invocations,
            gc_reads=gr,
            gc_writes=gw,
            gc_erases=ge,
            gc_time=self.chip.timing.cost(gr, gw, ge),
            max_block_erases=int(led.erase_count_per_block.max()),
            extra=self.extra_stats(),
        )

    def _charge_gc(self, before: tuple, after: tuple) -> None:
        for i in range(3):
            self.gc_counts[i] += after[i] - before[i]
