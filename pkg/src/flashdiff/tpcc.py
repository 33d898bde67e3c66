"""TPC-C-lite: a page-access trace with TPC-C-like locality behind an LRU buffer.

Not TPC-C. A transaction touches ten pages: one read-only touch and nine
update touches, the updates arriving in groups on the same page (an order
and its lines, a customer and its district). 80% of touches go to a hot 20%
of the database. An update rewrites a few small fields of a page, the way a
row update bumps counters and balances. Pages are read from flash on a buffer
miss and written back only when a dirty page is evicted.
"""

from __future__ import annotations

import random
from collections import OrderedDict
from dataclasses import dataclass

from .baselines import IplDriver, IpuDriver
from .diffcodec import Run
from .experiments import NO_IPU, Cell, ExperimentResult, RunConfig, _add_speedups

BUFFER_PCTS = (0.1, 1.0, 5.0, 10.0)

TPCC_COLUMNS = (
    "exp",
    "driver",
    "config",
    "seed",
    "n_blocks",
    "db_pages",
    "buffer_pct",
    "buffer_pages",
    "txns",
    "page_reads",
    "page_writes",
    "hit_ratio",
    "io_time_per_txn",
    "read_time_per_txn",
    "write_time_per_txn",
    "gc_time_per_txn",
    "erases_per_txn",
)


@dataclass(frozen=True)
class TpccLiteParams:
    buffer_pcts: tuple = BUFFER_PCTS
    # long enough for the largest IPL log region to fill about once per buffer size
    txn_count: int = 2000
    warmup_txns: int | None = None  # None: run until the GC warm-up target
    hot_fraction: float = 0.2
    hot_access: float = 0.8
    read_only_touches: int = 1
    update_touches: int = 9
    updates_per_page: int = 3
    fields_per_update: tuple = (1, 4)
    row_bytes: int = 128
    # (offset, length) of the updatable columns inside a row: quantities,
    # year-to-date sums, counters, balances
    columns: tuple = ((8, 4), (16, 8), (40, 4), (52, 2))
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.hot_fraction <= 1 or not 0 <= self.hot_access <= 1:
            raise ValueError("hot set fractions must lie in (0, 1]")
        if self.updates_per_page < 1 or self.update_touches % self.updates_per_page:
            raise ValueError("update touches must split evenly into per-page groups")
        if any(p <= 0 or p > 100 for p in self.buffer_pcts):
            raise ValueError("buffer sizes are percentages of the database in (0, 100]")


class TraceGenerator:
    """Deterministic stream of transactions, each a list of (pid, regions-or-None)."""

    def __init__(self, params: TpccLiteParams, db_pages: int, page_size: int, stream: int = 0):
        self.p = params
        self.page_size = page_size
        self.rng = random.Random(f"flashdiff-tpcc:{params.seed}:{stream}")
        order = list(range(db_pages))
        random.Random(f"flashdiff-tpcc-hot:{params.seed}").shuffle(order)
        n_hot = max(1, round(db_pages * params.hot_fraction))
        self.hot, self.cold = order[:n_hot], order[n_hot:] or order[:n_hot]

    def _page(self) -> int:
        rng = self.rng
        pool = self.hot if rng.random() < self.p.hot_access else self.cold
        return pool[rng.randrange(len(pool))]

    def _update(self) -> tuple[Run, ...]:
        rng = self.rng
        p = self.p
        row = rng.randrange(self.page_size // p.row_bytes) * p.row_bytes
        cols = sorted(rng.sample(p.columns, rng.randint(*p.fields_per_update)))
        return tuple(Run(row + off, n, rng.randbytes(n)) for off, n in cols)

    def transaction(self) -> list:
        p = self.p
        touches = []
        for _ in range(p.update_touches // p.updates_per_page):
            pid = self._page()
            touches += [(pid, self._update()) for _ in range(p.updates_per_page)]
        for _ in range(p.read_only_touches):
            touches.insert(self.rng.randrange(len(touches) + 1), (self._page(), None))
        return touches


class BufferPool:
    """LRU page buffer over a driver; dirty pages are written back on eviction.

    IPL gets the update logs gathered since the page was read in, the page
    drivers get the final image.
    """

    def __init__(self, cell: Cell, capacity: int):
        self.cell = cell
        self.capacity = max(1, capacity)
        self.frames: OrderedDict[int, list] = OrderedDict()  # pid -> [page, dirty, logs]
        self.reads = self.writes = self.hits = self.touches = 0

    def touch(self, pid: int, regions) -> None:
        self.touches += 1
        frame = self.frames.get(pid)
        if frame is None:
            if len(self.frames) >= self.capacity:
                self._evict()
            page = self.cell.driver.read_logical(pid)
            self.reads += 1
            if self.cell.cfg.verify and page != self.cell.shadow[pid]:
                raise AssertionError(f"{self.cell.name}: pid {pid} differs from the shadow copy")
            frame = self.frames[pid] = [page, False, []]
        else:
            self.hits += 1
            self.frames.move_to_end(pid)
        if regions:
            buf = bytearray(frame[0])
            for off, length, data in regions:
                buf[off : off + length] = data
            frame[0] = bytes(buf)
            frame[1] = True
            frame[2].extend(regions)

    def _evict(self) -> None:
        pid, (page, dirty, logs) = self.frames.popitem(last=False)
        if dirty:
            self.cell.driver.write_logical(pid, page, logs)
            self.cell.shadow[pid] = page
            self.writes += 1

    def drain(self) -> None:
        while self.frames:
            self._evict()


def _run_txns(pool: BufferPool, gen: TraceGenerator, count: int | None, stop=None) -> int:
    done = 0
    while count is None or done < count:
        if stop is not None and stop():
            break
        for pid, regions in gen.transaction():
            pool.touch(pid, regions)
        done += 1
    return done


def run_tpcc_lite(params: TpccLiteParams, drivers=NO_IPU, cfg: RunConfig | None = None) -> ExperimentResult:
    """Per-transaction I/O time for each driver at each buffer size.

    Each driver is warmed up once with the smallest buffer, then measured at
    every buffer size in turn on the same chip.
    """
    cfg = cfg or RunConfig(n_blocks=32)
    res = ExperimentResult("Exp. 7: TPC-C-lite", columns=TPCC_COLUMNS)
    for key in drivers:
        cell = Cell(key, cfg, params.seed)
        cell.load()
        g = cell.chip.geometry
        timing = cell.chip.timing
        led = cell.chip.ledger
        gen = TraceGenerator(params, cell.db_pages, g.data_bytes)
        pool = BufferPool(cell, _buffer_pages(min(params.buffer_pcts), cell.db_pages))
        if not isinstance(cell.driver, IpuDriver):
            target = cfg.warmup_gc_per_block * (len(cell.driver.phys) if isinstance(cell.driver, IplDriver) else g.n_blocks)
            start = led.erases
            cap = params.warmup_txns
            _run_txns(pool, gen, cap, stop=None if cap is not None else (lambda: led.erases - start >= target))
        for pct in params.buffer_pcts:
            pool.drain()
            pool = BufferPool(cell, _buffer_pages(pct, cell.db_pages))
            # fill the buffer before measuring so every size starts warm
            _run_txns(pool, gen, max(1, pool.capacity // 5))
            c0 = led.counters()
            gc0 = list(cell.driver.gc_counts)
            r0, w0, h0, t0 = pool.reads, pool.writes, pool.hits, pool.touches
            read_cost = [0]
            _measure(pool, gen, params.txn_count, read_cost)
            c1 = led.counters()
            dr, dw, de = (c1[i] - c0[i] for i in range(3))
            gc = [a - b for a, b in zip(cell.driver.gc_counts, gc0)]
            n = params.txn_count
            total = timing.cost(dr, dw, de)
            read_t = read_cost[0] * timing.t_read
            res.rows.append(
                {
                    "exp": 7,
                    "driver": cell.name,
                    "config": f"buf={pct}%",
                    "seed": params.seed,
                    "n_blocks": g.n_blocks,
                    "db_pages": cell.db_pages,
                    "buffer_pct": pct,
                    "buffer_pages": pool.capacity,
                    "txns": n,
                    "page_reads": pool.reads - r0,
                    "page_writes": pool.writes - w0,
                    "hit_ratio": (pool.hits - h0) / max(pool.touches - t0, 1),
                    "io_time_per_txn": total / n,
                    "read_time_per_txn": read_t / n,
                    "write_time_per_txn": (total - read_t) / n,
                    "gc_time_per_txn": timing.cost(*gc) / n,
                    "erases_per_txn": de / n,
                }
            )
        pool.drain()
        if cfg.verify:
            cell.driver.flush()
            cell.verify_all()
    for r in res.rows:
        r["overall_time"] = r["io_time_per_txn"]
    _add_speedups(res, "config")
    res.columns = TPCC_COLUMNS + ("pdl256_speedup",)
    return res


def _measure(pool: BufferPool, gen: TraceGenerator, count: int, read_cost: list) -> None:
    """Run ``count`` transactions, tallying chip reads made for buffer misses."""
    led = pool.cell.chip.ledger
    driver = pool.cell.driver
    inner = driver.read_logical

    def counted(pid):
        before = led.reads
        page = inner(pid)
        read_cost[0] += led.reads - before
        return page

    driver.read_logical = counted
    try:
        _run_txns(pool, gen, count)
    finally:
        del driver.read_logical


def _buffer_pages(pct: float, db_pages: int) -> int:
    return max(1, round(db_pages * pct / 100))
