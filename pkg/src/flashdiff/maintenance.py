"""Garbage collection, PDL crash recovery, and crash injection."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import diffcodec
from .chip import FlashChip, FlashGeometry, PageType, PhysPageAddr, TimingProfile, DEFAULT_TIMING
from .errors import CapacityError, CorruptionError, PageNotFound
from .ftl import GcDestination

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GcPolicy:
    """Greedy victim choice: most obsolete pages, lowest block index on ties."""

    name: str = "greedy-most-obsolete"

    def select_victim(self, chip: FlashChip, allocator) -> int:
        counts = chip.obsolete_pages.astype(np.int64, copy=True)
        counts[allocator.reserved] = -1
        for b in allocator.free_blocks:
            counts[b] = -1
        if allocator.active is not None and allocator.cursor < allocator.pages_per_block:
            counts[allocator.active] = -1
        victim = int(np.argmax(counts))
        if counts[victim] <= 0:
            raise CapacityError("no block holds an obsolete page; the flash is genuinely full")
        return victim


GREEDY = GcPolicy()


def collect_garbage(driver, policy: GcPolicy = GREEDY) -> int:
    """Reclaim one victim block for a PDL or OPU driver.

    Valid pages move into the reserve block (PDL compacts differential pages
    on the way), the victim is erased and becomes the next reserve. The cost is
    recorded on the driver as GC time. Returns the victim block index.
    """
    chip = driver.chip
    alloc = driver.allocator
    before = chip.ledger.counters()
    victim = policy.select_victim(chip, alloc)
    dest = GcDestination(alloc.reserved, chip.geometry.pages_per_block)
    driver.relocate_block(victim, dest)
    chip.erase_block(victim)
    alloc.rotate(victim, dest.used)
    driver.gc_invocations += 1
    driver._charge_gc(before, chip.ledger.counters())
    return victim


# -- recovery ---------------------------------------------------------------


@dataclass
class MappingEntry:
    base: PhysPageAddr | None
    base_ts: int | None
    diff_page: PhysPageAddr | None = None
    diff_ts: int | None = None


def _newer(ts: int, than: int | None) -> bool:
    return than is None or ts > than


def recover(chip: FlashChip) -> tuple[dict, dict]:
    """Rebuild the page mapping table and valid differential count table.

    One pass over every page in ascending block/page order. Useless pages
    (superseded bases, differential pages with nothing adopted) are set
    obsolete on ``chip``; nothing else is modified, so a second run is a no-op.
    """
    ppmt: dict[int, MappingEntry] = {}
    vdct: dict[PhysPageAddr, int] = {}

    def decrease(dp):
        if dp is None:
            return
        n = vdct[dp] - 1
        if n == 0:
            del vdct[dp]
            chip.set_obsolete(dp)
        else:
            vdct[dp] = n

    for r in chip.addresses():
        data, spare = chip.read_page(r)
        if spare.obsolete or spare.free:
            continue
        if spare.page_type == PageType.BASE:
            pid, ts = spare.physical_page_id, spare.creation_timestamp
            e = ppmt.get(pid)
            if e is None:
                ppmt[pid] = MappingEntry(r, ts)
            elif _newer(ts, e.base_ts):
                if e.base is not None:
                    chip.set_obsolete(e.base)
                e.base, e.base_ts = r, ts
                if e.diff_page is not None and ts > e.diff_ts:
                    decrease(e.diff_page)
                    e.diff_page, e.diff_ts = None, None
            else:
                chip.set_obsolete(r)
        elif spare.page_type == PageType.DIFFERENTIAL:
            try:
                records = diffcodec.decode(data)
            except CorruptionError as exc:
                log.warning("skipping undecodable differential page %s: %s", tuple(r), exc)
                records = []
            for d in records:
                e = ppmt.setdefault(d.pid, MappingEntry(None, None))
                if _newer(d.ts, e.base_ts) and _newer(d.ts, e.diff_ts):
                    decrease(e.diff_page)
                    e.diff_page, e.diff_ts = r, d.ts
                    vdct[r] = vdct.get(r, 0) + 1
            if vdct.get(r, 0) == 0:
                chip.set_obsolete(r)

    # a differential whose base never showed up has nothing to apply to
    for pid in [p for p, e in ppmt.items() if e.base is None]:
        decrease(ppmt.pop(pid).diff_page)
    return ppmt, vdct


def read_recovered(chip: FlashChip, ppmt: dict, pid: int) -> bytes:
    """Recreate a logical page straight from recovered tables."""
    e = ppmt.get(pid)
    if e is None:
        raise PageNotFound(pid)
    base, _ = chip.read_page(e.base)
    if e.diff_page is None:
        return base
    raw, _ = chip.read_page(e.diff_page)
    for d in diffcodec.decode(raw):
        if d.pid == pid and d.ts == e.diff_ts:
            return diffcodec.apply_differential(base, d)
    raise CorruptionError(f"differential for pid {pid} missing from page {tuple(e.diff_page)}")


def scan_cost(geometry: FlashGeometry, timing: TimingProfile = DEFAULT_TIMING) -> int:
    """Simulated microseconds for the recovery scan.

    Every page is read once in full (spare and data together), so differential
    pages need no second read.
    """
    return geometry.n_pages * timing.t_read


# -- crash injection --------------------------------------------------------


@dataclass(frozen=True)
class CrashPlan:
    crash_point: int
    image: bytes


def inject_crash(journal: list, crash_point: int, geometry: FlashGeometry) -> FlashChip:
    """Chip state after the first ``crash_point`` journaled operations.

    Page programs are atomic, so this is the only kind of state a crash can
    leave behind; in-memory tables and buffers are simply gone.
    """
    if not 0 <= crash_point <= len(journal):
        raise ValueError(f"crash point {crash_point} outside 0..{len(journal)}")
    chip = FlashChip(geometry)
    for entry in journal[:crash_point]:
        chip.replay(entry)
    return chip


def iter_crash_points(journal: list, geometry: FlashGeometry):
    """Yield (crash_point, chip) for every point 0..len(journal).

    The same chip object is advanced in place; copy it before mutating.
    """
    chip = FlashChip(geometry)
    yield 0, chip
    for i, entry in enumerate(journal, 1):
        chip.replay(entry)
        yield i, chip
