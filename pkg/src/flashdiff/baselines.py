"""Baseline page-update methods behind the common driver contract.

* OPU: page-level mapping, out-place update, obsolete-then-GC.
* IPU: static mapping, block read/erase/rewrite on every update.
* IPL: in-page logging; each block keeps a fixed log region, update logs of a
  page go only to log pages of its own block, and a full log region triggers
  a block merge.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from . import diffcodec
from .chip import FlashChip, PageType, PhysPageAddr, SpareArea
from .diffcodec import Differential, Run
from .errors import CapacityError, PageNotFound
from .ftl import Driver, PageAllocator
from .maintenance import collect_garbage


class OpuDriver(Driver):
    name = "OPU"

    def __init__(self, chip: FlashChip):
        super().__init__(chip)
        g = chip.geometry
        self.mapping: dict[int, PhysPageAddr] = {}
        self.owner: dict[PhysPageAddr, int] = {}
        self.allocator = PageAllocator(g.n_blocks, g.pages_per_block)
        self.clock = 0

    def pids(self):
        return self.mapping.keys()

    def _allocate(self) -> PhysPageAddr:
        while True:
            addr = self.allocator.allocate()
            if addr is not None:
                return addr
            collect_garbage(self)

    def opu_write(self, pid: int, page: bytes) -> None:
        q = self._allocate()
        self.clock += 1
        self.chip.write_page(q, page, SpareArea(PageType.DATA, pid, self.clock))
        old = self.mapping.get(pid)
        if old is not None:
            self.chip.set_obsolete(old)
            del self.owner[old]
        self.mapping[pid] = q
        self.owner[q] = pid

    def opu_read(self, pid: int) -> bytes:
        addr = self.mapping.get(pid)
        if addr is None:
            raise PageNotFound(pid)
        data, _ = self.chip.read_page(addr)
        return data

    read_logical = opu_read

    def write_logical(self, pid: int, page: bytes, logs=None) -> None:
        self.opu_write(pid, page)

    def relocate_block(self, victim: int, dest) -> None:
        for p in range(self.chip.geometry.pages_per_block):
            addr = PhysPageAddr(victim, p)
            pid = self.owner.pop(addr, None)
            if pid is None:
                continue
            data, spare = self.chip.read_page(addr)
            new = dest.next()
            self.chip.write_page(new, data, SpareArea(PageType.DATA, pid, spare.creation_timestamp))
            self.mapping[pid] = new
            self.owner[new] = pid


class IpuDriver(Driver):
    """Logical page ``pid`` always lives at physical page ``pid``."""

    name = "IPU"

    def __init__(self, chip: FlashChip):
        super().__init__(chip)
        self.loaded: set[int] = set()

    def pids(self):
        return self.loaded

    def _addr(self, pid: int) -> PhysPageAddr:
        g = self.chip.geometry
        if not 0 <= pid < g.n_pages:
            raise CapacityError(f"pid {pid} has no static home on this chip")
        return PhysPageAddr(pid // g.pages_per_block, pid % g.pages_per_block)

    def load(self, pid: int, page: bytes) -> None:
        self.chip.write_page(self._addr(pid), page, SpareArea(PageType.DATA, pid))
        self.loaded.add(pid)

    def ipu_write(self, pid: int, page: bytes) -> None:
        if pid not in self.loaded:
            self.load(pid, page)
            return
        chip = self.chip
        target = self._addr(pid)
        block = target.block
        saved = {}
        for p in range(chip.geometry.pages_per_block):  # (1) read the rest of the block
            if p != target.page:
                saved[p] = chip.read_page(PhysPageAddr(block, p))
        chip.erase_block(block)  # (2)
        chip.write_page(target, page, SpareArea(PageType.DATA, pid))  # (3)
        for p, (data, spare) in saved.items():  # (4) written back even if empty
            chip.write_page(PhysPageAddr(block, p), data, spare)

    def ipu_read(self, pid: int) -> bytes:
        if pid not in self.loaded:
            raise PageNotFound(pid)
        data, _ = self.chip.read_page(self._addr(pid))
        return data

    read_logical = ipu_read

    def write_logical(self, pid: int, page: bytes, logs=None) -> None:
        self.ipu_write(pid, page)


@dataclass(frozen=True)
class IplBlockLayout:
    originals_per_block: int
    log_pages_per_block: int
    sector_bytes: int  # size of the per-page in-memory log buffer
    sectors_per_log_page: int

    @classmethod
    def for_log_region(cls, log_region_bytes: int, geometry) -> IplBlockLayout:
        log_pages = log_region_bytes // geometry.data_bytes
        if not 0 < log_pages < geometry.pages_per_block:
            raise ValueError(f"log region of {log_region_bytes} bytes does not fit a block")
        sector = geometry.data_bytes // 16
        return cls(geometry.pages_per_block - log_pages, log_pages, sector, geometry.data_bytes // sector)

    @property
    def log_sectors_per_block(self) -> int:
        return self.log_pages_per_block * self.sectors_per_log_page


IPL_PRESETS = {"ipl18": 18 * 1024, "ipl64": 64 * 1024}
IPL_LABELS = {"ipl18": "IPL(18KB)", "ipl64": "IPL(64KB)"}


class IplDriver(Driver):
    """In-page logging.

    Each update log is one diff-codec record. A page's records form a byte
    stream that is cut into log-buffer-sized sectors; a sector is programmed
    into the next free sector slot of the block's log region (one chip write,
    the rest of the log page left erased). Reflecting a page writes out its
    partially filled buffer, so a reflection costs
    ceil(log bytes / buffer size) writes.
    """

    uses_update_logs = True

    def __init__(self, chip: FlashChip, log_region_bytes: int = 18 * 1024, name: str | None = None):
        super().__init__(chip)
        self.layout = IplBlockLayout.for_log_region(log_region_bytes, chip.geometry)
        self.name = name or f"IPL({log_region_bytes // 1024}KB)"
        self.free_blocks = deque(range(chip.geometry.n_blocks))
        self.phys: dict[int, int] = {}  # logical block -> physical block
        self.loaded: set[int] = set()
        self.next_sector: dict[int, int] = {}
        self.open_page: dict[int, bytearray] = {}
        self.sectors: dict[int, list[tuple[int, int]]] = {}  # pid -> [(sector index, valid bytes)]
        self.pending: dict[int, bytearray] = {}
        self.clock = 0
        self.merges = 0
        self.sector_writes = 0

    @classmethod
    def preset(cls, chip: FlashChip, key: str) -> IplDriver:
        return cls(chip, IPL_PRESETS[key], name=IPL_LABELS[key])

    def pids(self):
        return self.loaded

    def extra_stats(self) -> dict:
        return {"merges": self.merges, "sector_writes": self.sector_writes}

    def _home(self, pid: int) -> tuple[int, int]:
        return divmod(pid, self.layout.originals_per_block)

    def _phys_block(self, lb: int) -> int:
        b = self.phys.get(lb)
        if b is None:
            # keep one erased block back so merging always has a destination
            if len(self.free_blocks) < 2:
                raise CapacityError("no block left for IPL originals")
            b = self.phys[lb] = self.free_blocks.popleft()
            self.next_sector[lb] = 0
        return b

    def load(self, pid: int, page: bytes) -> None:
        lb, slot = self._home(pid)
        b = self._phys_block(lb)
        self.clock += 1
        self.chip.write_page(PhysPageAddr(b, slot), page, SpareArea(PageType.ORIGINAL, pid, self.clock))
        self.loaded.add(pid)
        self.sectors[pid] = []
        self.pending[pid] = bytearray()

    # -- write path ---------------------------------------------------------

    def ipl_write(self, pid: int, update_log) -> None:
        """Append one update log, an (offset, length, data) triple."""
        if pid not in self.loaded:
            raise PageNotFound(pid)
        self.clock += 1
        off, length, data = update_log
        self.pending[pid] += diffcodec.encode(Differential(pid, self.clock, (Run(off, length, bytes(data)),)))
        self._drain(pid, final=False)

    def reflect(self, pid: int) -> None:
        """Write out the page's log buffer, including a partly filled tail."""
        self._drain(pid, final=True)

    def _drain(self, pid: int, final: bool) -> None:
        buf = self.pending[pid]
        size = self.layout.sector_bytes
        while len(buf) >= size or (final and buf):
            lb, _ = self._home(pid)
            if self.next_sector[lb] >= self.layout.log_sectors_per_block:
                # merging may hand back the flushed head of a record cut at a sector boundary
                self.merge_block(lb)
            chunk = bytes(buf[:size])
            del buf[:size]
            self._write_sector(pid, chunk)

    def write_logical(self, pid: int, page: bytes, logs=None) -> None:
        if pid not in self.loaded:
            self.load(pid, page)
            return
        if logs is None:
            raise ValueError("IPL needs the update logs of the page, not just its image")
        for update_log in logs:
            self.ipl_write(pid, update_log)
        self.reflect(pid)

    def flush(self) -> None:
        # a merge can hand bytes back to a page already flushed, so loop to a fixpoint
        dirty = [pid for pid, buf in self.pending.items() if buf]
        while dirty:
            for pid in dirty:
                self.reflect(pid)
            dirty = [pid for pid, buf in self.pending.items() if buf]

    def _write_sector(self, pid: int, chunk: bytes) -> None:
        lay = self.layout
        lb, _ = self._home(pid)
        s = self.next_sector[lb]
        page_idx, slot = divmod(s, lay.sectors_per_log_page)
        addr = PhysPageAddr(self.phys[lb], lay.originals_per_block + page_idx)
        if slot == 0:
            img = self.open_page[lb] = bytearray(b"\xff" * self.chip.geometry.data_bytes)
            spare = SpareArea(PageType.LOG)
        else:
            img = self.open_page[lb]
            spare = None
        img[slot * lay.sector_bytes : slot * lay.sector_bytes + len(chunk)] = chunk
        self.chip.write_page(addr, bytes(img), spare)
        self.sectors[pid].append((s, len(chunk)))
        self.next_sector[lb] = s + 1
        self.sector_writes += 1

    # -- read path ----------------------------------------------------------

    def _log_stream(self, pid: int, b: int, pages: dict) -> bytes:
        lay = self.layout
        parts = []
        for s, length in self.sectors[pid]:
            page_idx, slot = divmod(s, lay.sectors_per_log_page)
            raw = pages.get(page_idx)
            if raw is None:
                raw, _ = self.chip.read_page(PhysPageAddr(b, lay.originals_per_block + page_idx))
                pages[page_idx] = raw
            parts.append(raw[slot * lay.sector_bytes : slot * lay.sector_bytes + length])
        return b"".join(parts)

    def ipl_read(self, pid: int) -> bytes:
        if pid not in self.loaded:
            raise PageNotFound(pid)
        lb, slot = self._home(pid)
        b = self.phys[lb]
        page, _ = self.chip.read_page(PhysPageAddr(b, slot))
        stream = self._log_stream(pid, b, {}) + bytes(self.pending[pid])
        for rec in diffcodec.decode(stream):
            page = diffcodec.apply_differential(page, rec)
        return page

    read_logical = ipl_read

    # -- merging ----------------------------------------------------------------

    def merge_block(self, lb: int) -> None:
        """Fold the block's log region into its originals, written to a new block."""
        if not self.free_blocks:
            raise CapacityError("IPL merge found no free block")
        before = self.chip.ledger.counters()
        lay = self.layout
        old = self.phys[lb]
        new = self.free_blocks.popleft()
        first = lb * lay.originals_per_block
        residents = [pid for pid in range(first, first + lay.originals_per_block) if pid in self.loaded]
        pages: dict[int, bytes] = {}
        n_log_pages = -(-self.next_sector[lb] // lay.sectors_per_log_page)
        for i in range(n_log_pages):
            pages[i], _ = self.chip.read_page(PhysPageAddr(old, lay.originals_per_block + i))
        for pid in residents:
            slot = pid - first
            page, spare = self.chip.read_page(PhysPageAddr(old, slot))
            stream = self._log_stream(pid, old, pages)
            records, used = diffcodec.decode_prefix(stream)
            for rec in records:
                page = diffcodec.apply_differential(page, rec)
            self.pending[pid][:0] = stream[used:]
            self.chip.write_page(PhysPageAddr(new, slot), page, SpareArea(PageType.ORIGINAL, pid, spare.creation_timestamp))
            self.sectors[pid] = []
        self.chip.erase_block(old)
        self.free_blocks.append(old)
        self.phys[lb] = new
        self.next_sector[lb] = 0
        self.open_page.pop(lb, None)
        self.merges += 1
        self.gc_invocations += 1
        self._charge_gc(before, self.chip.ledger.counters())


def make_driver(key: str, chip: FlashChip) -> Driver:
    """Build a driver from its CLI key: pdl256, pdl2k, opu, ipu, ipl18, ipl64."""
    from .pdl import PRESETS as PDL_PRESETS, PdlDriver

    key = key.lower()
    if key in PDL_PRESETS:
        return PdlDriver.preset(chip, key)
    if key in IPL_PRESETS:
        return IplDriver.preset(chip, key)
    if key == "opu":
        return OpuDriver(chip)
    if key == "ipu":
        return IpuDriver(chip)
    raise ValueError(f"unknown driver {key!r}")


DRIVER_KEYS = ("pdl256", "pdl2k", "opu", "ipu", "ipl18", "ipl64")
