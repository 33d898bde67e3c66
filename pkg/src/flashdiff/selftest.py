"""Quick invariant suite behind ``flashdiff selftest``.

Small chips and short runs; every check returns a Check and never raises, so
one failure does not hide the rest.
"""

from __future__ import annotations

import random
import time
import traceback
from dataclasses import dataclass

from . import diffcodec
from .baselines import DRIVER_KEYS
from .chip import DEFAULT_GEOMETRY, FlashChip, PageType, PhysPageAddr, SpareArea
from .errors import OverwriteViolation, SpareExhausted
from .experiments import Cell, RunConfig, _params
from .maintenance import inject_crash, iter_crash_points, read_recovered, recover, scan_cost
from .pdl import PdlDriver
from .workload import apply_regions, generate_workload, initial_page, random_regions


@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""
    seconds: float = 0.0


def _check_chip() -> str:
    chip = FlashChip(DEFAULT_GEOMETRY.with_blocks(2))
    a = PhysPageAddr(0, 0)
    chip.write_page(a, b"\x0f" * 2048, SpareArea(PageType.BASE, 1, 1))
    try:
        chip.write_page(a, b"\xff" * 2048)
    except OverwriteViolation:
        pass
    else:
        raise AssertionError("0->1 program was accepted")
    for _ in range(4):
        chip.write_page(PhysPageAddr(0, 1), None, SpareArea(PageType.BASE, 2, 2))
    try:
        chip.write_page(PhysPageAddr(0, 1), None, SpareArea(PageType.BASE, 2, 2))
    except SpareExhausted:
        pass
    else:
        raise AssertionError("fifth spare-only program was accepted")
    chip.erase_block(0)
    if not chip.block_erased(0):
        raise AssertionError("erase left programmed bits")
    return f"ledger {chip.ledger.counters()[:3]}"


def _check_codec(n: int = 300) -> str:
    rng = random.Random("flashdiff-selftest-codec")
    for _ in range(n):
        base = rng.randbytes(2048)
        cur = apply_regions(base, random_regions(rng, 2048, rng.randint(0, 600)))
        d = diffcodec.compute_differential(base, cur, rng.randrange(1 << 20), rng.randrange(1 << 40))
        if diffcodec.apply_differential(base, d) != cur:
            raise AssertionError("apply(compute(base, cur)) != cur")
        if diffcodec.decode(diffcodec.encode(d)) != [d]:
            raise AssertionError("decode(encode(d)) != d")
    return f"{n} round trips"


def _check_driver(key: str, ops: int) -> str:
    cfg = RunConfig(n_blocks=16, warmup_gc_per_block=0, stagger=False)
    cell = Cell(key, cfg, seed=11)
    cell.load()
    counts = cell.run(generate_workload(_params(cfg, 11, ops, pct_update_ops=80.0)))
    cell.driver.flush()
    cell.verify_all()
    return f"{counts.ops} ops, {cell.chip.ledger.erases} erases, shadow matches"


def sample_pdl_chip(seed: int = 0, n_blocks: int = 8, ops: int = 400, db_pages: int | None = None, flush_every: int = 50, journal=None):
    """A PDL(256B) chip after a random update run; returns (chip, driver, shadow).

    Pages are written through every ``flush_every`` ops, so part of the
    latest updates sits in the (volatile) write buffer at the end.
    """
    g = DEFAULT_GEOMETRY.with_blocks(n_blocks)
    chip = FlashChip(g, journal=journal)
    drv = PdlDriver.preset(chip, "pdl256")
    n = db_pages or g.n_pages // 4
    rng = random.Random(f"flashdiff-sample:{seed}")
    shadow = {}
    for pid in range(n):
        shadow[pid] = initial_page(seed, pid, g.data_bytes)
        drv.load(pid, shadow[pid])
    drv.flush()
    for i in range(1, ops + 1):
        pid = rng.randrange(n)
        page = apply_regions(shadow[pid], random_regions(rng, g.data_bytes, rng.choice((8, 41, 120))))
        drv.write_logical(pid, page)
        shadow[pid] = page
        if i % flush_every == 0:
            drv.flush()
    return chip, drv, shadow


def _check_recovery() -> str:
    journal: list = []
    chip, drv, shadow = sample_pdl_chip(seed=3, n_blocks=6, ops=250, flush_every=40, journal=journal)
    drv.flush()
    flushed = {pid: drv.read_logical(pid) for pid in shadow}
    crashed = inject_crash(journal, len(journal), chip.geometry)
    ppmt, _ = recover(crashed)
    bad = [pid for pid, page in flushed.items() if read_recovered(crashed, ppmt, pid) != page]
    if bad:
        raise AssertionError(f"recovery lost pids {bad[:5]}")
    points = 0
    for point, c in iter_crash_points(journal, chip.geometry):
        if point % 97:
            continue
        c = c.copy()
        ppmt, _ = recover(c)
        for pid in ppmt:
            read_recovered(c, ppmt, pid)  # raises if a mapped differential is missing
        points += 1
    cost = scan_cost(DEFAULT_GEOMETRY.with_blocks(8192))
    return f"{len(flushed)} pids recovered, {points} sampled crash points, 1 GiB scan {cost / 1e6:.1f} s"


def run_selftest(driver_ops: int = 1500) -> list[Check]:
    checks = [
        ("chip program/erase rules", _check_chip),
        ("differential codec round trip", _check_codec),
        *[(f"driver {k} vs shadow map", (lambda k=k: _check_driver(k, driver_ops if k != "ipu" else 100))) for k in DRIVER_KEYS],
        ("crash recovery", _check_recovery),
    ]
    out = []
    for name, fn in checks:
        t = time.perf_counter()
        try:
            detail, ok = fn(), True
        except Exception as exc:  # report every failure, keep going
            detail, ok = f"{type(exc).__name__}: {exc}", False
            traceback.print_exc()
        out.append(Check(name, ok, detail, time.perf_counter() - t))
    return out
