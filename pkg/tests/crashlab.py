"""Crash oracle for PDL: which logical page versions are durable at each
point of a chip journal."""

import random

from flashdiff import diffcodec
from flashdiff.chip import DEFAULT_GEOMETRY, FlashChip, PageType, SpareArea
from flashdiff.pdl import PdlDriver
from flashdiff.workload import apply_regions, random_regions


class RecordingPdl(PdlDriver):
    """PdlDriver that remembers the page image behind every (pid, ts) it persists."""

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.versions = {}
        self.current = {}

    def write_logical(self, pid, page, logs=None):
        self.current[pid] = page
        super().write_logical(pid, page, logs)

    def flush_buffer(self):
        pids = list(self.buffer.entries)
        super().flush_buffer()
        for pid in pids:
            self.versions[(pid, self.clock)] = self.current[pid]

    def write_new_base(self, pid, page):
        super().write_new_base(pid, page)
        self.versions[(pid, self.ppmt[pid].base_ts)] = page


def scripted_run(ops=500, every=50, n_blocks=6, n_pids=48, max_diff=2048, seed=0):
    """Random PDL updates with a write-through every ``every`` ops.

    Returns (journal, driver, checkpoints) where checkpoints maps the journal
    length at each write-through to the logical pages visible then.
    """
    journal = []
    chip = FlashChip(DEFAULT_GEOMETRY.with_blocks(n_blocks), journal=journal)
    drv = RecordingPdl(chip, max_diff)
    rng = random.Random(seed)
    shadow = {pid: rng.randbytes(2048) for pid in range(n_pids)}
    for pid, page in shadow.items():
        drv.load(pid, page)
    drv.flush()
    checkpoints = {len(journal): dict(shadow)}
    for i in range(1, ops + 1):
        pid = rng.randrange(n_pids)
        shadow[pid] = apply_regions(shadow[pid], random_regions(rng, 2048, rng.choice((8, 41, 200, 700))))
        drv.write_logical(pid, shadow[pid])
        if i % every == 0:
            drv.flush()
            checkpoints[len(journal)] = dict(shadow)
    return journal, drv, checkpoints


def first_programmed(journal, data_bytes=2048):
    """(pid, ts) -> index of the journal entry that first made it durable."""
    seen = {}
    for i, e in enumerate(journal):
        if e[0] != "w" or e[4]:
            continue
        raw = e[3]
        spare = SpareArea.decode(raw[data_bytes:])
        if spare.page_type == PageType.BASE:
            seen.setdefault((spare.physical_page_id, spare.creation_timestamp), i)
        elif spare.page_type == PageType.DIFFERENTIAL:
            for d in diffcodec.decode(raw[:data_bytes]):
                seen.setdefault((d.pid, d.ts), i)
    return seen


def durable_at(seen, point):
    """pid -> newest durable ts once the first ``point`` journal entries ran."""
    out = {}
    for (pid, ts), i in seen.items():
        if i < point and ts > out.get(pid, -1):
            out[pid] = ts
    return out
