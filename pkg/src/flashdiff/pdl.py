"""Page-differential logging driver.

A logical page lives in flash as a base page plus, optionally, one
differential stored in a shared differential page. Updated pages are diffed
against their base only when they are reflected to flash; the differential
goes into a one-page write buffer that is written out when full.
"""

from __future__ import annotations

from . import diffcodec
from .chip import FlashChip, PageType, PhysPageAddr, SpareArea
from .diffcodec import DiffBudget, Differential
from .errors import CapacityError, CorruptionError, PageNotFound
from .ftl import Driver, PageAllocator
from .maintenance import MappingEntry, collect_garbage

PRESETS = {"pdl2k": 2048, "pdl256": 256}
PRESET_LABELS = {"pdl2k": "PDL(2KB)", "pdl256": "PDL(256B)"}


class DifferentialWriteBuffer:
    """One page worth of pending differentials, at most one per pid."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.entries: dict[int, Differential] = {}
        self.used = 0

    def __len__(self):
        return len(self.entries)

    def __contains__(self, pid):
        return pid in self.entries

    def get(self, pid: int) -> Differential | None:
        return self.entries.get(pid)

    def free_space(self) -> int:
        return self.capacity - self.used

    def add(self, d: Differential) -> None:
        size = diffcodec.encoded_size(d)
        if d.pid in self.entries or size > self.free_space():
            raise AssertionError("differential does not fit the write buffer")
        self.entries[d.pid] = d
        self.used += size

    def remove(self, pid: int) -> bool:
        d = self.entries.pop(pid, None)
        if d is None:
            return False
        self.used -= diffcodec.encoded_size(d)
        return True

    def clear(self) -> None:
        self.entries.clear()
        self.used = 0


class PdlDriver(Driver):
    def __init__(self, chip: FlashChip, max_differential_size: int = 2048, name: str | None = None, check_tables: bool = False):
        super().__init__(chip)
        g = chip.geometry
        self.budget = DiffBudget(max_differential_size)
        self.budget.check(g.data_bytes)
        self.name = name or f"PDL({max_differential_size}B)"
        self.ppmt: dict[int, MappingEntry] = {}
        self.vdct: dict[PhysPageAddr, int] = {}
        self.base_owner: dict[PhysPageAddr, int] = {}
        self.buffer = DifferentialWriteBuffer(g.data_bytes)
        self.allocator = PageAllocator(g.n_blocks, g.pages_per_block)
        self.clock = 0
        self.check_tables = check_tables
        self.cases = {"fresh": 0, "unchanged": 0, "case1": 0, "case2": 0, "case3": 0}
        self.flushes = 0
        self._page_cache: dict[PhysPageAddr, tuple[bytes, dict]] = {}

    @classmethod
    def preset(cls, chip: FlashChip, key: str, **kw) -> PdlDriver:
        return cls(chip, PRESETS[key], name=PRESET_LABELS[key], **kw)

    # -- contract ---------------------------------------------------------

    def read_logical(self, pid: int) -> bytes:
        return self.pdl_read(pid)

    def write_logical(self, pid: int, page: bytes, logs=None) -> None:
        self.pdl_write(pid, page)

    def flush(self) -> None:
        self.write_through()

    def pids(self):
        return self.ppmt.keys()

    def extra_stats(self) -> dict:
        return {
            **self.cases,
            "flushes": self.flushes,
            "buffered": len(self.buffer),
            "differential_pages": len(self.vdct),
        }

    # -- algorithms -------------------------------------------------------

    def _next_ts(self) -> int:
        self.clock += 1
        return self.clock

    def _allocate(self) -> PhysPageAddr:
        while True:
            addr = self.allocator.allocate()
            if addr is not None:
                return addr
            collect_garbage(self)

    def pdl_write(self, pid: int, page: bytes) -> None:
        if len(page) != self.chip.geometry.data_bytes:
            raise ValueError("logical page size must equal the physical data area")
        e = self.ppmt.get(pid)
        if e is None:
            self.cases["fresh"] += 1
            self.write_new_base(pid, page)
            return
        base, _ = self.chip.read_page(e.base)
        d = diffcodec.compute_differential(base, page, pid, 0)
        if not d.runs and e.diff_page is None and pid not in self.buffer:
            self.cases["unchanged"] += 1
            return
        size = diffcodec.encoded_size(d)
        self.buffer.remove(pid)
        if size > self.budget.max_differential_size:
            self.cases["case3"] += 1
            self.write_new_base(pid, page)
        elif size <= self.buffer.free_space():
            self.cases["case1"] += 1
            self.buffer.add(d)
        else:
            self.cases["case2"] += 1
            self.flush_buffer()
            self.buffer.add(d)
        if self.check_tables:
            self.assert_consistent()

    def flush_buffer(self) -> None:
        if not self.buffer:
            return
        q = self._allocate()
        ts = self._next_ts()
        records = [d.with_timestamp(ts) for d in self.buffer.entries.values()]
        raw = diffcodec.pack_page(records, self.chip.geometry.data_bytes)
        self.chip.write_page(q, raw, SpareArea(PageType.DIFFERENTIAL, None, ts))
        self._page_cache[q] = (raw, {d.pid: d for d in records})
        for d in records:
            e = self.ppmt[d.pid]
            self.decrease_valid_count(e.diff_page, d.pid)
            e.diff_page, e.diff_ts = q, ts
            self.vdct[q] = self.vdct.get(q, 0) + 1
        self.buffer.clear()
        self.flushes += 1

    def write_new_base(self, pid: int, page: bytes) -> None:
        q = self._allocate()
        ts = self._next_ts()
        self.chip.write_page(q, page, SpareArea(PageType.BASE, pid, ts))
        self.buffer.remove(pid)
        # look the entry up only now: GC inside _allocate may have moved the old base
        e = self.ppmt.get(pid)
        if e is not None:
            self.chip.set_obsolete(e.base)
            del self.base_owner[e.base]
            self.decrease_valid_count(e.diff_page, pid)
        self.ppmt[pid] = MappingEntry(q, ts)
        self.base_owner[q] = pid

    def decrease_valid_count(self, dp: PhysPageAddr | None, pid: int) -> None:
        if dp is None:
            return
        n = self.vdct[dp] - 1
        assert n >= 0, f"valid differential count underflow at {dp} (pid {pid})"
        if n == 0:
            del self.vdct[dp]
            self._page_cache.pop(dp, None)
            self.chip.set_obsolete(dp)
        else:
            self.vdct[dp] = n

    def pdl_read(self, pid: int) -> bytes:
        e = self.ppmt.get(pid)
        if e is None:
            raise PageNotFound(pid)
        base, _ = self.chip.read_page(e.base)
        d = self.buffer.get(pid)
        if d is None and e.diff_page is not None:
            d = self._find_differential(e.diff_page, pid, e.diff_ts)
        return base if d is None else diffcodec.apply_differential(base, d)

    def _find_differential(self, dp: PhysPageAddr, pid: int, ts: int) -> Differential:
        raw, _ = self.chip.read_page(dp)
        cached = self._page_cache.get(dp)
        if cached is not None and cached[0] == raw:
            by_pid = cached[1]
        else:
            by_pid = {d.pid: d for d in diffcodec.decode(raw)}
            self._page_cache[dp] = (raw, by_pid)
        d = by_pid.get(pid)
        if d is None or d.ts != ts:
            raise CorruptionError(f"differential for pid {pid} (ts {ts}) missing from page {tuple(dp)}")
        return d

    def write_through(self) -> None:
        self.flush_buffer()

    # -- garbage collection hook -----------------------------------------

    def relocate_block(self, victim: int, dest) -> None:
        chip = self.chip
        moved: list[Differential] = []
        for p in range(chip.geometry.pages_per_block):
            addr = PhysPageAddr(victim, p)
            pid = self.base_owner.pop(addr, None)
            if pid is not None:
                data, spare = chip.read_page(addr)
                new = dest.next()
                chip.write_page(new, data, SpareArea(PageType.BASE, pid, spare.creation_timestamp))
                self.ppmt[pid].base = new
                self.base_owner[new] = pid
            elif addr in self.vdct:
                raw, _ = chip.read_page(addr)
                for d in diffcodec.decode(raw):
                    e = self.ppmt.get(d.pid)
                    if e is not None and e.diff_page == addr and e.diff_ts == d.ts:
                        moved.append(d)
                del self.vdct[addr]
                self._page_cache.pop(addr, None)
        # compaction: next-fit packing never needs more pages than it emptied
        limit = chip.geometry.data_bytes
        group: list[Differential] = []
        used = 0
        for d in moved:
            size = diffcodec.encoded_size(d)
            if used + size > limit:
                self._write_compacted(group, dest)
                group, used = [], 0
            group.append(d)
            used += size
        if group:
            self._write_compacted(group, dest)
        for p in range(chip.geometry.pages_per_block):
            self._page_cache.pop(PhysPageAddr(victim, p), None)

    def _write_compacted(self, records: list[Differential], dest) -> None:
        q = dest.next()
        raw = diffcodec.pack_page(records, self.chip.geometry.data_bytes)
        ts = max(d.ts for d in records)
        self.chip.write_page(q, raw, SpareArea(PageType.DIFFERENTIAL, None, ts))
        self._page_cache[q] = (raw, {d.pid: d for d in records})
        for d in records:
            self.ppmt[d.pid].diff_page = q
        self.vdct[q] = len(records)

    # -- checks and restart ----------------------------------------------

    def assert_consistent(self) -> None:
        counts: dict[PhysPageAddr, int] = {}
        for pid, e in self.ppmt.items():
            assert self.base_owner.get(e.base) == pid, f"base of pid {pid} not in reverse map"
            if e.diff_page is not None:
                counts[e.diff_page] = counts.get(e.diff_page, 0) + 1
        assert counts == self.vdct, "valid differential counts disagree with the mapping table"
        assert len(self.base_owner) == len(self.ppmt)
        assert self.buffer.used <= self.buffer.capacity

    @classmethod
    def attach(cls, chip: FlashChip, ppmt: dict, vdct: dict, max_differential_size: int = 2048, **kw) -> PdlDriver:
        """Resume on a recovered chip with tables from maintenance.recover."""
        drv = cls(chip, max_differential_size, **kw)
        drv.ppmt = ppmt
        drv.vdct = dict(vdct)
        drv.base_owner = {e.base: pid for pid, e in ppmt.items()}
        g = chip.geometry
        erased = [b for b in range(g.n_blocks) if chip.block_erased(b)]
        if not erased:
            raise CapacityError("no erased block left to serve as the GC reserve")
        alloc = drv.allocator
        alloc.reserved = erased[-1]
        alloc.free_blocks.clear()
        alloc.free_blocks.extend(erased[:-1])
        stamps = [e.base_ts for e in ppmt.values()] + [e.diff_ts or 0 for e in ppmt.values()]
        drv.clock = max(stamps, default=0)
        return drv
