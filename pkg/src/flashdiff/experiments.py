"""Experiment runner: load a database, warm up to steady state, measure.

Each (driver, configuration) cell owns a private chip. Costs are read off the
chip ledger around every step, so a row's totals always add up to the ledger
delta of its measured ops. Garbage collection and IPL merging are charged to
the write step of the op that triggered them.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field

from .baselines import IplDriver, IpuDriver, make_driver
from .chip import DEFAULT_GEOMETRY, DEFAULT_TIMING, FlashChip, FlashGeometry, TimingProfile
from .diffcodec import RECORD_HEADER_BYTES, RUN_HEADER_BYTES
from .errors import CapacityError
from .pdl import PdlDriver
from .workload import ReadOp, UpdateOp, WorkloadParams, apply_regions, generate_workload, initial_page, random_regions

log = logging.getLogger(__name__)

MiB = 1024 * 1024

ALL_DRIVERS = ("ipl64", "ipl18", "pdl2k", "pdl256", "opu", "ipu")
NO_IPU = ("ipl64", "ipl18", "pdl2k", "pdl256", "opu")

# Default chip size per experiment. Exp. 1 runs on the full desk chip; the
# sweeps use a smaller chip so that every cell can still reach steady state.
DEFAULT_BLOCKS = {1: 256, 2: 32, 3: 64, 4: 64, 5: 256, 6: 64, 7: 32}

# Share of the chip's data capacity taken by the database. IPL(64KB) can only
# keep originals in half of every block, so the database has to stay well
# below one half to leave the other drivers comparable free space.
DEFAULT_UTILIZATION = 0.25

COLUMNS = (
    "exp",
    "driver",
    "config",
    "seed",
    "n_blocks",
    "db_pages",
    "n_updates_till_write",
    "pct_changed_by_one_op",
    "pct_update_ops",
    "t_read",
    "t_write",
    "t_erase",
    "ops",
    "update_ops",
    "read_time",
    "write_time",
    "gc_time",
    "overall_time",
    "erases_per_update",
    "reads",
    "writes",
    "erases",
    "gc_reads",
    "gc_writes",
    "gc_erases",
    "step_reads",
    "total_time",
    "max_reads_per_read",
)


class AuditError(AssertionError):
    """A driver broke one of the PDL design principles during a run."""


@dataclass
class RunConfig:
    n_blocks: int = 256
    db_mib: float | None = None  # None: DEFAULT_UTILIZATION of the chip
    timing: TimingProfile = DEFAULT_TIMING
    # average GC invocations (erases) per in-use block before measuring
    warmup_gc_per_block: float = 2.0
    stagger: bool = True
    max_warmup_ops: int = 200_000
    verify: bool = True
    audit: bool = True

    @property
    def geometry(self) -> FlashGeometry:
        return DEFAULT_GEOMETRY.with_blocks(self.n_blocks)

    def db_pages(self) -> int:
        g = self.geometry
        if self.db_mib is None:
            return int(g.n_pages * DEFAULT_UTILIZATION)
        pages = int(self.db_mib * MiB) // g.data_bytes
        if pages <= 0:
            raise ValueError("database must hold at least one page")
        return pages


@dataclass
class ExperimentResult:
    title: str
    rows: list[dict] = field(default_factory=list)
    columns: tuple = COLUMNS

    def select(self, **match) -> list[dict]:
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]

    def value(self, column: str, **match):
        rows = self.select(**match)
        if len(rows) != 1:
            raise KeyError(f"{len(rows)} rows match {match}")
        return rows[0][column]


@dataclass
class StepCounts:
    """Chip operations split by workload step."""

    ops: int = 0
    update_ops: int = 0
    read_step: list = field(default_factory=lambda: [0, 0, 0])
    write_step: list = field(default_factory=lambda: [0, 0, 0])
    gc: list = field(default_factory=lambda: [0, 0, 0])
    max_reads_per_read: int = 0

    def time(self, timing: TimingProfile, part: str) -> int:
        return timing.cost(*getattr(self, part))


class Cell:
    """One driver on its own chip with a shadow copy of every logical page."""

    def __init__(self, driver_key: str, cfg: RunConfig, seed: int = 0):
        self.key = driver_key
        self.cfg = cfg
        self.seed = seed
        self.chip = FlashChip(cfg.geometry, cfg.timing)
        self.driver = make_driver(driver_key, self.chip)
        self.db_pages = cfg.db_pages()
        self.shadow: list[bytes] = []

    @property
    def name(self) -> str:
        return self.driver.name

    def load(self) -> None:
        size = self.chip.geometry.data_bytes
        for pid in range(self.db_pages):
            page = initial_page(self.seed, pid, size)
            self.driver.load(pid, page)
            self.shadow.append(page)
        self.driver.flush()

    def blocks_in_use(self) -> int:
        drv = self.driver
        if isinstance(drv, IplDriver):
            return len(drv.phys)
        return self.chip.geometry.n_blocks

    def stagger_plan(self, params: WorkloadParams) -> tuple[list[list[int]], int]:
        """IPL blocks as pid groups, and the length of one log-fill cycle in ops.

        Under a uniform workload every IPL block fills its log region at the
        same pace, so after loading all blocks merge in lockstep and a short
        measurement window sees one phase of that cycle only.
        """
        drv = self.driver
        if not isinstance(drv, IplDriver):
            return [], 0
        lay = drv.layout
        n = params.n_updates_till_write
        log_bytes = params.changed_bytes + 2.5 * (RECORD_HEADER_BYTES + RUN_HEADER_BYTES)
        per_op = math.ceil(n * log_bytes / lay.sector_bytes)
        per_block = lay.originals_per_block
        groups = [list(range(a, min(a + per_block, self.db_pages))) for a in range(0, self.db_pages, per_block)]
        return groups, max(1, lay.log_sectors_per_block // per_op)

    def stagger(self, params: WorkloadParams) -> int:
        """Move every IPL block a uniformly random fraction through its log cycle.

        In the long run a uniform workload leaves the blocks at independent
        random phases; this reaches that state without simulating the many
        cycles it takes for the lockstep to wash out.
        """
        groups, span = self.stagger_plan(params)
        if not groups:
            return 0
        rng = random.Random(f"flashdiff-stagger:{params.rng_seed}")
        size, total, n = params.logical_page_size, params.changed_bytes, params.n_updates_till_write
        pids = [g[rng.randrange(len(g))] for g in groups for _ in range(rng.randrange(span))]
        rng.shuffle(pids)
        for pid in pids:
            self._write_blind(pid, [r for _ in range(n) for r in random_regions(rng, size, total)])
        return len(pids)

    def _write_blind(self, pid: int, logs) -> None:
        """Update a page without reading it through the driver.

        Warm-up only: the shadow copy stands in for the read, which changes no
        driver state. Measured ops always read (and verify) first.
        """
        page = apply_regions(self.shadow[pid], logs)
        self.driver.write_logical(pid, page, logs)
        self.shadow[pid] = page

    def warm_up(self, params: WorkloadParams, gc_per_block: float | None = None) -> int:
        """Stagger, then run update ops until GC has hit every in-use block
        ``gc_per_block`` times on average. Returns the number of ops run."""
        if isinstance(self.driver, IpuDriver):
            return 0  # no garbage collection and no cycles, nothing to settle
        if self.cfg.stagger and isinstance(self.driver, IplDriver):
            # a staggered IPL block is in the same state as one that has merged
            # before: originals plus a log region at a random fill level
            return self.stagger(params)
        done = 0
        per_block = self.cfg.warmup_gc_per_block if gc_per_block is None else gc_per_block
        target = per_block * self.blocks_in_use()
        led = self.chip.ledger
        start = led.erases
        if target <= 0:
            return done
        wp = params.with_(pct_update_ops=100.0, op_count=self.cfg.max_warmup_ops, rng_seed=params.rng_seed + 7919)
        for op in generate_workload(wp):
            if led.erases - start >= target:
                break
            if isinstance(op, UpdateOp):
                self._write_blind(op.pid, [r for u in op.updates for r in u])
            done += 1
        else:
            log.warning("%s: warm-up stopped after %d ops short of its GC target", self.name, done)
        return done

    def run(self, ops) -> StepCounts:
        counts = StepCounts()
        for op in ops:
            self._apply(op, counts)
        return counts

    def _apply(self, op, counts: StepCounts | None) -> None:
        drv = self.driver
        led = self.chip.ledger
        r0, w0, e0 = led.reads, led.writes, led.erases
        page = drv.read_logical(op.pid)
        r1 = led.reads
        if self.cfg.verify and page != self.shadow[op.pid]:
            raise AssertionError(f"{self.name}: pid {op.pid} differs from the shadow copy")
        if counts is not None:
            counts.ops += 1
            counts.read_step[0] += r1 - r0
            counts.max_reads_per_read = max(counts.max_reads_per_read, r1 - r0)
        if self.cfg.audit and isinstance(drv, PdlDriver) and r1 - r0 > 2:
            raise AuditError(f"PDL read of pid {op.pid} took {r1 - r0} chip reads")
        if isinstance(op, ReadOp):
            return
        logs = []
        for regions in op.updates:
            page = apply_regions(page, regions)
            logs.extend(regions)
        g0 = list(drv.gc_counts)
        sw0 = led.spare_writes
        drv.write_logical(op.pid, page, logs)
        self.shadow[op.pid] = page
        gc = [a - b for a, b in zip(drv.gc_counts, g0)]
        if self.cfg.audit and isinstance(drv, PdlDriver):
            data_writes = (led.writes - w0) - (led.spare_writes - sw0) - gc[1]
            if data_writes > 1:
                raise AuditError(f"PDL write of pid {op.pid} programmed {data_writes} data pages")
        if counts is not None:
            counts.update_ops += 1
            counts.write_step[0] += led.reads - r1
            counts.write_step[1] += led.writes - w0
            counts.write_step[2] += led.erases - e0
            for i in range(3):
                counts.gc[i] += gc[i]

    def verify_all(self) -> None:
        """Read back every page through the driver (on a scratch ledger)."""
        saved = self.chip.ledger.counters(), self.chip.ledger.erase_count_per_block.copy()
        try:
            for pid, want in enumerate(self.shadow):
                if self.driver.read_logical(pid) != want:
                    raise AssertionError(f"{self.name}: pid {pid} differs from the shadow copy")
        finally:
            (r, w, e, s), per_block = saved
            led = self.chip.ledger
            led.reads, led.writes, led.erases, led.spare_writes = r, w, e, s
            led.erase_count_per_block = per_block


def make_row(exp, cell: Cell, config: str, params: WorkloadParams, counts: StepCounts, timing: TimingProfile | None = None) -> dict:
    """Per-op averages from step counts, optionally repriced under ``timing``."""
    timing = timing or cell.chip.timing
    ops = max(counts.ops, 1)
    upd = counts.update_ops
    read_t = counts.time(timing, "read_step")
    write_t = counts.time(timing, "write_step")
    gc_t = counts.time(timing, "gc")
    reads = counts.read_step[0] + counts.write_step[0]
    return {
        "exp": exp,
        "driver": cell.name,
        "config": config,
        "seed": params.rng_seed,
        "n_blocks": cell.chip.geometry.n_blocks,
        "db_pages": cell.db_pages,
        "n_updates_till_write": params.n_updates_till_write,
        "pct_changed_by_one_op": params.pct_changed_by_one_op,
        "pct_update_ops": params.pct_update_ops,
        "t_read": timing.t_read,
        "t_write": timing.t_write,
        "t_erase": timing.t_erase,
        "ops": counts.ops,
        "update_ops": upd,
        "read_time": read_t / ops,
        "write_time": write_t / ops,
        "gc_time": gc_t / ops,
        "overall_time": (read_t + write_t) / ops,
        "erases_per_update": counts.write_step[2] / upd if upd else 0.0,
        "reads": reads,
        "writes": counts.write_step[1],
        "erases": counts.write_step[2],
        "gc_reads": counts.gc[0],
        "gc_writes": counts.gc[1],
        "gc_erases": counts.gc[2],
        "step_reads": counts.read_step[0],
        "total_time": read_t + write_t,
        "max_reads_per_read": counts.max_reads_per_read,
    }


def _params(cfg: RunConfig, seed: int, op_count: int, **kw) -> WorkloadParams:
    g = cfg.geometry
    return WorkloadParams(db_size=cfg.db_pages() * g.data_bytes, logical_page_size=g.data_bytes, op_count=op_count, rng_seed=seed, **kw)


def run_cell(exp, key: str, cfg: RunConfig, params: WorkloadParams, config: str = "") -> dict:
    cell = Cell(key, cfg, params.rng_seed)
    cell.load()
    cell.warm_up(params)
    counts = cell.run(generate_workload(params))
    if cfg.verify:
        cell.verify_all()
    return make_row(exp, cell, config, params, counts)


def _ops_for(key: str, op_count: int, ipu_ops: int) -> int:
    return min(op_count, ipu_ops) if key == "ipu" else op_count


def run_update_experiment(exp, drivers, cfg: RunConfig, seed: int, op_count: int, ipu_ops: int = 300, **kw) -> ExperimentResult:
    res = ExperimentResult(f"Exp. {exp}")
    for key in drivers:
        params = _params(cfg, seed, _ops_for(key, op_count, ipu_ops), **kw)
        res.rows.append(run_cell(exp, key, cfg, params))
    return res


def run_n_sweep(exp, drivers, cfg: RunConfig, seed: int, op_count: int, ns=range(1, 9), ipu_ops: int = 300) -> ExperimentResult:
    """Every driver at each N_updates_till_write, 2% change per update."""
    res = ExperimentResult(f"Exp. {exp}: N_updates_till_write sweep")
    for key in drivers:
        for n in ns:
            params = _params(cfg, seed, _ops_for(key, op_count, ipu_ops), n_updates_till_write=n)
            res.rows.append(run_cell(exp, key, cfg, params, config=f"n={n}"))
    return res


def run_pct_changed_sweep(drivers, cfg: RunConfig, seed: int, op_count: int, pcts=(0.1, 1, 2, 5, 10, 20, 50, 100), ns=(1, 5), ipu_ops: int = 100) -> ExperimentResult:
    res = ExperimentResult("Exp. 3: %ChangedByOneU_Op sweep")
    for key in drivers:
        for n in ns:
            for pct in pcts:
                params = _params(cfg, seed, _ops_for(key, op_count, ipu_ops), n_updates_till_write=n, pct_changed_by_one_op=pct)
                res.rows.append(run_cell(3, key, cfg, params, config=f"n={n},pct={pct}"))
    return res


def run_mix(drivers, cfg: RunConfig, seed: int, op_count: int, pcts=tuple(range(0, 101, 10)), n_updates_till_write: int = 1) -> ExperimentResult:
    """Read-only/update mixes. Each driver warms up once, then runs every mix in turn."""
    res = ExperimentResult("Exp. 4: %UpdateOps sweep")
    for key in drivers:
        base = _params(cfg, seed, op_count, n_updates_till_write=n_updates_till_write)
        cell = Cell(key, cfg, seed)
        cell.load()
        cell.warm_up(base)
        for i, pct in enumerate(pcts):
            params = base.with_(pct_update_ops=float(pct), rng_seed=seed * 1000 + i + 1)
            counts = cell.run(generate_workload(params))
            row = make_row(4, cell, f"upd={pct}", params, counts)
            row["seed"] = seed
            res.rows.append(row)
        if cfg.verify:
            cell.verify_all()
    _add_speedups(res, "config")
    return res


def _add_speedups(res: ExperimentResult, group: str) -> None:
    """Attach PDL(256B)'s speedup over every driver in the same group."""
    by_group: dict = {}
    for r in res.rows:
        by_group.setdefault(r[group], {})[r["driver"]] = r
    for rows in by_group.values():
        ref = rows.get("PDL(256B)")
        for r in rows.values():
            r["pdl256_speedup"] = r["overall_time"] / ref["overall_time"] if ref and ref["overall_time"] else ""
    if "pdl256_speedup" not in res.columns:
        res.columns = res.columns + ("pdl256_speedup",)


def run_flash_param_sweep(drivers, cfg: RunConfig, seed: int, op_count: int, t_reads=(10, 50, 110, 200, 500, 1000, 1500), t_writes=(500, 1000)) -> ExperimentResult:
    """Reprice one measured run per driver under each (t_read, t_write).

    The drivers never look at timing, so the operation counts of a run do not
    depend on it; repricing the counts is exactly what rerunning would give.
    """
    res = ExperimentResult("Exp. 5: flash timing sweep")
    for key in drivers:
        params = _params(cfg, seed, _ops_for(key, op_count, 300))
        cell = Cell(key, cfg, seed)
        cell.load()
        cell.warm_up(params)
        counts = cell.run(generate_workload(params))
        for tw in t_writes:
            for tr in t_reads:
                timing = TimingProfile(tr, tw, cfg.timing.t_erase)
                res.rows.append(make_row(5, cell, f"tr={tr},tw={tw}", params, counts, timing))
    _add_speedups(res, "config")
    return res


@dataclass
class ExpDefaults:
    op_count: int
    drivers: tuple


EXP_DEFAULTS = {
    1: ExpDefaults(4000, ALL_DRIVERS),
    2: ExpDefaults(2000, ALL_DRIVERS),
    3: ExpDefaults(1000, NO_IPU),
    4: ExpDefaults(1000, NO_IPU),
    5: ExpDefaults(3000, NO_IPU),
    6: ExpDefaults(3000, NO_IPU),
    7: ExpDefaults(2000, NO_IPU),
}


def run_experiment(exp_id: int, drivers=None, seed: int = 0, n_blocks: int | None = None, db_mib: float | None = None, op_count: int | None = None, cfg: RunConfig | None = None, **overrides) -> ExperimentResult:
    """Run one experiment analogue (1..7) and return its result table."""
    if exp_id not in EXP_DEFAULTS:
        raise ValueError(f"experiment must be 1..7, got {exp_id}")
    d = EXP_DEFAULTS[exp_id]
    drivers = tuple(drivers or d.drivers)
    op_count = op_count or d.op_count
    if cfg is None:
        cfg = RunConfig(n_blocks=n_blocks or DEFAULT_BLOCKS[exp_id], db_mib=db_mib)
    try:
        if exp_id == 1:
            return run_update_experiment(1, drivers, cfg, seed, op_count, **overrides)
        if exp_id in (2, 6):
            return run_n_sweep(exp_id, drivers, cfg, seed, op_count, **overrides)
        if exp_id == 3:
            return run_pct_changed_sweep(drivers, cfg, seed, op_count, **overrides)
        if exp_id == 4:
            return run_mix(drivers, cfg, seed, op_count, **overrides)
        if exp_id == 5:
            return run_flash_param_sweep(drivers, cfg, seed, op_count, **overrides)
        from .tpcc import TpccLiteParams, run_tpcc_lite

        return run_tpcc_lite(TpccLiteParams(seed=seed, txn_count=op_count, **overrides), drivers, cfg)
    except CapacityError as exc:
        raise CapacityError(f"database does not fit: {exc}") from exc
