import random

import pytest

from flashdiff import diffcodec
from flashdiff.chip import DEFAULT_GEOMETRY, FlashChip, PageType
from flashdiff.errors import PageNotFound
from flashdiff.pdl import PdlDriver
from flashdiff.workload import apply_regions, random_regions


def make(n_blocks=8, size=2048, pages=32, seed=0):
    chip = FlashChip(DEFAULT_GEOMETRY.with_blocks(n_blocks))
    drv = PdlDriver(chip, size, check_tables=True)
    rng = random.Random(seed)
    shadow = {}
    for pid in range(pages):
        shadow[pid] = rng.randbytes(2048)
        drv.load(pid, shadow[pid])
    return chip, drv, shadow, rng


def changed(page, rng, n):
    return apply_regions(page, random_regions(rng, 2048, n))


def test_load_writes_one_base_per_page():
    chip, drv, shadow, _ = make(pages=5)
    assert chip.ledger.writes == 5
    assert drv.cases["fresh"] == 5
    for pid, page in shadow.items():
        assert drv.read_logical(pid) == page
        assert chip.peek_spare(drv.ppmt[pid].base).page_type == PageType.BASE


def test_case1_buffers_without_flash_write():
    chip, drv, shadow, rng = make()
    w = chip.ledger.writes
    page = changed(shadow[3], rng, 41)
    drv.write_logical(3, page)
    assert drv.cases["case1"] == 1 and 3 in drv.buffer
    assert chip.ledger.writes == w
    assert drv.read_logical(3) == page


def test_new_differential_replaces_old_one_in_buffer():
    chip, drv, shadow, rng = make()
    p1 = changed(shadow[3], rng, 41)
    drv.write_logical(3, p1)
    p2 = changed(p1, rng, 41)
    drv.write_logical(3, p2)
    assert len(drv.buffer) == 1
    assert drv.buffer.used == diffcodec.encoded_size(drv.buffer.get(3))
    assert drv.read_logical(3) == p2


def test_case2_flushes_then_buffers():
    chip, drv, shadow, rng = make()
    pid = 0
    while drv.cases["case2"] == 0:
        shadow[pid] = changed(shadow[pid], rng, 300)
        drv.write_logical(pid, shadow[pid])
        pid += 1
    assert drv.flushes == 1
    assert len(drv.vdct) == 1 and list(drv.vdct.values()) == [pid - 1]
    for p, page in shadow.items():
        assert drv.read_logical(p) == page


def test_case3_writes_new_base_and_drops_old_differential():
    chip, drv, shadow, rng = make(size=256)
    p1 = changed(shadow[1], rng, 100)
    drv.write_logical(1, p1)
    drv.flush()
    old_base, old_diff = drv.ppmt[1].base, drv.ppmt[1].diff_page
    p2 = changed(p1, rng, 400)
    drv.write_logical(1, p2)
    assert drv.cases["case3"] == 1
    e = drv.ppmt[1]
    assert e.base != old_base and e.diff_page is None
    assert chip.peek_spare(old_base).obsolete
    assert chip.peek_spare(old_diff).obsolete  # its only valid differential is gone
    assert drv.read_logical(1) == p2


def test_unchanged_page_costs_no_write():
    chip, drv, shadow, _ = make()
    w = chip.ledger.writes
    drv.write_logical(2, shadow[2])
    assert drv.cases["unchanged"] == 1 and chip.ledger.writes == w


def test_read_costs_at_most_two_reads():
    chip, drv, shadow, rng = make(n_blocks=6, pages=64, seed=3)
    for i in range(3000):
        pid = rng.randrange(64)
        r = chip.ledger.reads
        assert drv.read_logical(pid) == shadow[pid]
        assert chip.ledger.reads - r <= 2
        shadow[pid] = changed(shadow[pid], rng, rng.choice((10, 41, 200, 900)))
        drv.write_logical(pid, shadow[pid])
    drv.assert_consistent()
    assert chip.ledger.erases > 0  # GC ran


def test_read_of_unknown_pid():
    _, drv, _, _ = make(pages=1)
    with pytest.raises(PageNotFound):
        drv.read_logical(99)


def test_wrong_page_size():
    _, drv, _, _ = make(pages=1)
    with pytest.raises(ValueError):
        drv.write_logical(0, b"short")


def test_presets():
    chip = FlashChip(DEFAULT_GEOMETRY.with_blocks(2))
    assert PdlDriver.preset(chip, "pdl256").budget.max_differential_size == 256
    assert PdlDriver.preset(chip, "pdl2k").name == "PDL(2KB)"
    with pytest.raises(ValueError):
        PdlDriver(chip, 4096)


def test_buffer_never_holds_two_differentials_for_a_pid():
    chip, drv, shadow, rng = make(pages=4)
    for _ in range(200):
        pid = rng.randrange(4)
        shadow[pid] = changed(shadow[pid], rng, 30)
        drv.write_logical(pid, shadow[pid])
        assert len(drv.buffer.entries) == len(set(drv.buffer.entries))
        assert drv.buffer.used == sum(diffcodec.encoded_size(d) for d in drv.buffer.entries.values())
