"""Synthetic page workloads.

Every random choice comes from its own seeded stream (which page, whether
the op updates, what the update writes, the initial database contents), so
changing one knob leaves the other choices of a run untouched. Two runs
that differ only in N_updates_till_write touch the same pages in the same
order, for instance.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from typing import Iterator, NamedTuple

from .diffcodec import Run

_PID, _KIND, _CHANGE, _INIT = range(4)


@dataclass(frozen=True)
class WorkloadParams:
    n_updates_till_write: int = 1
    pct_changed_by_one_op: float = 2.0
    pct_update_ops: float = 100.0
    db_size: int = 8 * 1024 * 1024
    logical_page_size: int = 2048
    op_count: int = 10_000
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("pct_changed_by_one_op", "pct_update_ops"):
            v = getattr(self, name)
            if not 0 <= v <= 100:
                raise ValueError(f"{name} must be within [0, 100], got {v}")
        if self.n_updates_till_write < 1:
            raise ValueError("n_updates_till_write must be at least 1")
        if self.logical_page_size <= 0 or self.db_size <= 0:
            raise ValueError("sizes must be positive")
        if self.db_size % self.logical_page_size:
            raise ValueError("db_size must be a multiple of logical_page_size")
        if self.op_count < 0:
            raise ValueError("op_count cannot be negative")

    @property
    def n_db_pages(self) -> int:
        return self.db_size // self.logical_page_size

    @property
    def changed_bytes(self) -> int:
        return round(self.pct_changed_by_one_op / 100 * self.logical_page_size)

    def with_(self, **kw) -> WorkloadParams:
        return replace(self, **kw)


class ReadOp(NamedTuple):
    pid: int


class UpdateOp(NamedTuple):
    """Read the page, apply each update in turn, then write the page back once.

    ``updates`` holds one tuple of change regions per in-memory update, so it
    has N_updates_till_write entries.
    """

    pid: int
    updates: tuple[tuple[Run, ...], ...]

    @property
    def regions(self) -> list[Run]:
        return [r for u in self.updates for r in u]


def apply_regions(page: bytes, regions) -> bytes:
    buf = bytearray(page)
    for off, length, data in regions:
        buf[off : off + length] = data
    return bytes(buf)


def random_regions(rng: random.Random, page_size: int, total: int, max_runs: int = 4) -> tuple[Run, ...]:
    """``total`` bytes split into 1..max_runs disjoint runs at random places."""
    if total <= 0:
        return ()
    total = min(total, page_size)
    k = rng.randint(1, min(max_runs, total))
    # run lengths: a uniformly random composition of total into k positive parts
    cuts = sorted(rng.sample(range(1, total), k - 1))
    lengths = [b - a for a, b in zip([0] + cuts, cuts + [total])]
    # gaps: stars and bars over the free bytes, k + 1 gaps allowed to be empty
    marks = sorted(rng.sample(range(page_size - total + k), k))
    data = rng.randbytes(total)
    runs = []
    pos = used = prev = 0
    for i, length in enumerate(lengths):
        pos += marks[i] - prev
        prev = marks[i] + 1
        runs.append(Run(pos, length, data[used : used + length]))
        pos += length
        used += length
    return tuple(runs)


def _stream(seed: int, stream: int) -> random.Random:
    return random.Random(f"flashdiff:{seed}:{stream}")


def initial_page(seed: int, pid: int, page_size: int) -> bytes:
    return random.Random(f"flashdiff:{seed}:{_INIT}:{pid}").randbytes(page_size)


def generate_workload(params: WorkloadParams, pids=None) -> Iterator[ReadOp | UpdateOp]:
    """Deterministic op stream for ``params`` (a generator; ops are built lazily).

    ``pids`` optionally restricts the pages touched; by default every database
    page is equally likely.
    """
    seed = params.rng_seed
    pid_rng = _stream(seed, _PID)
    kind_rng = _stream(seed, _KIND)
    change_rng = _stream(seed, _CHANGE)
    population = range(params.n_db_pages) if pids is None else list(pids)
    p_update = params.pct_update_ops / 100
    size = params.logical_page_size
    total = params.changed_bytes
    for _ in range(params.op_count):
        pid = population[pid_rng.randrange(len(population))]
        if kind_rng.random() < p_update:
            updates = tuple(random_regions(change_rng, size, total) for _ in range(params.n_updates_till_write))
            yield UpdateOp(pid, updates)
        else:
            yield ReadOp(pid)
