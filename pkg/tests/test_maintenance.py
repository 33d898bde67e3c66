import random

import numpy as np
import pytest

from crashlab import durable_at, first_programmed, scripted_run
from flashdiff.baselines import OpuDriver
from flashdiff.chip import DEFAULT_GEOMETRY, DEFAULT_TIMING, FlashChip, PageType, PhysPageAddr, SpareArea
from flashdiff.errors import CapacityError
from flashdiff.maintenance import GREEDY, collect_garbage, inject_crash, read_recovered, recover, scan_cost
from flashdiff.pdl import PdlDriver


def test_greedy_picks_most_obsolete_block():
    chip = FlashChip(DEFAULT_GEOMETRY.with_blocks(4))
    drv = OpuDriver(chip)
    for pid in range(64 * 2):
        drv.write_logical(pid, bytes(2048))
    for pid in range(64, 64 + 10):  # block 1 gets 10 obsolete pages
        drv.write_logical(pid, b"\x01" * 2048)
    for pid in range(3):  # block 0 gets 3
        drv.write_logical(pid, b"\x01" * 2048)
    assert GREEDY.select_victim(chip, drv.allocator) == 1


def test_gc_relocates_and_charges_cost():
    chip = FlashChip(DEFAULT_GEOMETRY.with_blocks(4))
    drv = OpuDriver(chip)
    for pid in range(64 * 2):
        drv.write_logical(pid, bytes([pid % 256]) * 2048)
    for pid in range(60):
        drv.write_logical(pid, b"\x07" * 2048)
    before = chip.ledger.counters()
    victim = collect_garbage(drv)
    after = chip.ledger.counters()
    assert victim == 0 and chip.block_erased(0)
    assert drv.allocator.reserved == 0
    assert tuple(a - b for a, b in zip(after[:3], before[:3])) == (4, 4, 1)  # 4 valid pages moved
    assert drv.gc_counts == [4, 4, 1] and drv.gc_invocations == 1
    for pid in range(60, 128):
        assert drv.read_logical(pid) == bytes([pid % 256]) * 2048


def test_gc_with_nothing_obsolete_raises():
    chip = FlashChip(DEFAULT_GEOMETRY.with_blocks(3))
    drv = OpuDriver(chip)
    for pid in range(64 * 2):
        drv.write_logical(pid, bytes(2048))
    with pytest.raises(CapacityError):
        collect_garbage(drv)


def test_pdl_gc_compacts_differential_pages():
    chip = FlashChip(DEFAULT_GEOMETRY.with_blocks(5))
    drv = PdlDriver(chip, 2048, check_tables=True)
    rng = random.Random(4)
    shadow = {pid: rng.randbytes(2048) for pid in range(64)}
    for pid, page in shadow.items():
        drv.load(pid, page)
    for _ in range(4000):
        pid = rng.randrange(64)
        page = bytearray(shadow[pid])
        off = rng.randrange(2000)
        page[off : off + 30] = rng.randbytes(30)
        shadow[pid] = bytes(page)
        drv.write_logical(pid, shadow[pid])
    assert drv.gc_invocations > 10
    for pid, page in shadow.items():
        assert drv.read_logical(pid) == page


def test_scan_cost_is_one_read_per_page():
    g = DEFAULT_GEOMETRY.with_blocks(10)
    assert scan_cost(g) == 640 * 110
    assert scan_cost(g, DEFAULT_TIMING) == scan_cost(g)


def test_recover_clean_chip():
    journal, drv, checkpoints = scripted_run(ops=200, every=50)
    drv.flush()
    chip = inject_crash(journal, len(journal), drv.chip.geometry)
    ppmt, vdct = recover(chip)
    assert set(ppmt) == set(drv.ppmt)
    for pid, e in drv.ppmt.items():
        assert (ppmt[pid].base, ppmt[pid].diff_page) == (e.base, e.diff_page)
        assert read_recovered(chip, ppmt, pid) == drv.current[pid]
    assert vdct == drv.vdct


def test_recover_drops_superseded_base_after_crash():
    chip = FlashChip(DEFAULT_GEOMETRY.with_blocks(2))
    a, b = PhysPageAddr(0, 0), PhysPageAddr(0, 1)
    chip.write_page(a, b"\x01" * 2048, SpareArea(PageType.BASE, 9, 1))
    chip.write_page(b, b"\x02" * 2048, SpareArea(PageType.BASE, 9, 2))  # crash before old one went obsolete
    ppmt, vdct = recover(chip)
    assert ppmt[9].base == b and vdct == {}
    assert chip.peek_spare(a).obsolete


def test_recover_orphan_differential_is_discarded():
    from flashdiff import diffcodec
    from flashdiff.diffcodec import Differential, Run

    chip = FlashChip(DEFAULT_GEOMETRY.with_blocks(2))
    raw = diffcodec.pack_page([Differential(5, 3, (Run(0, 2, b"hi"),))], 2048)
    chip.write_page(PhysPageAddr(0, 0), raw, SpareArea(PageType.DIFFERENTIAL, None, 3))
    ppmt, vdct = recover(chip)
    assert ppmt == {} and vdct == {}
    assert chip.peek_spare(PhysPageAddr(0, 0)).obsolete


def test_crash_points_sampled():
    journal, drv, _ = scripted_run(ops=150, every=50, seed=2)
    seen = first_programmed(journal)
    for point in range(0, len(journal) + 1, 37):
        chip = inject_crash(journal, point, drv.chip.geometry)
        ppmt, _ = recover(chip)
        want = durable_at(seen, point)
        assert set(ppmt) == set(want)
        for pid, ts in want.items():
            assert read_recovered(chip, ppmt, pid) == drv.versions[(pid, ts)]


def test_inject_crash_bounds():
    journal, drv, _ = scripted_run(ops=5, every=5)
    with pytest.raises(ValueError):
        inject_crash(journal, len(journal) + 1, drv.chip.geometry)
    empty = inject_crash(journal, 0, drv.chip.geometry)
    assert np.all(empty.cells == 0xFF)


def test_attach_resumes_after_recovery():
    journal, drv, _ = scripted_run(ops=120, every=40, seed=5)
    drv.flush()
    chip = inject_crash(journal, len(journal), drv.chip.geometry)
    ppmt, vdct = recover(chip)
    again = PdlDriver.attach(chip, ppmt, vdct, 2048, check_tables=True)
    again.assert_consistent()
    rng = random.Random(0)
    pages = dict(drv.current)
    for _ in range(300):
        pid = rng.randrange(48)
        page = bytearray(pages[pid])
        off = rng.randrange(2040)
        page[off : off + 8] = rng.randbytes(8)
        pages[pid] = bytes(page)
        again.write_logical(pid, pages[pid])
    for pid, page in pages.items():
        assert again.read_logical(pid) == page
