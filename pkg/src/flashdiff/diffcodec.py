"""Page differentials: compute, apply, and the on-flash record format.

Record layout, little-endian::

    pid        u32
    timestamp  u64
    run_count  u16
    run_count x (offset u16, length u16, payload[length])

Records are packed back to back in a differential page; the unused tail is
left erased (0xFF), and a header whose run_count reads 0xFFFF marks the start
of that padding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import CorruptionError

_RECORD = struct.Struct("<IQH")
_RUN = struct.Struct("<HH")
RECORD_HEADER_BYTES = _RECORD.size  # 14
RUN_HEADER_BYTES = _RUN.size  # 4
PADDING_RUN_COUNT = 0xFFFF

# gaps strictly shorter than one run header are cheaper to carry than to split
COALESCE_GAP = RUN_HEADER_BYTES


class Run(NamedTuple):
    offset: int
    length: int
    data: bytes


@dataclass(frozen=True)
class Differential:
    physical_page_id: int
    creation_timestamp: int
    runs: tuple[Run, ...] = ()
    changed_bytes: int = field(init=False, repr=False, compare=False)
    encoded_size: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        changed = sum([r[1] for r in self.runs])
        object.__setattr__(self, "changed_bytes", changed)
        object.__setattr__(self, "encoded_size", RECORD_HEADER_BYTES + RUN_HEADER_BYTES * len(self.runs) + changed)

    @property
    def pid(self) -> int:
        return self.physical_page_id

    @property
    def ts(self) -> int:
        return self.creation_timestamp

    def with_timestamp(self, ts: int) -> Differential:
        return Differential(self.physical_page_id, ts, self.runs)


@dataclass(frozen=True)
class DiffBudget:
    max_differential_size: int

    def __post_init__(self):
        if self.max_differential_size <= 0:
            raise ValueError("max_differential_size must be positive")

    def check(self, data_bytes: int) -> None:
        if self.max_differential_size > data_bytes:
            raise ValueError("max_differential_size cannot exceed the page data size")


def _runs_from_mask(current: bytes, differs: np.ndarray, min_hole: int) -> tuple[Run, ...]:
    idx = np.flatnonzero(differs)
    if idx.size == 0:
        return ()
    # a new run starts wherever the hole before it is at least `min_hole` bytes long
    breaks = np.flatnonzero((idx[1:] - idx[:-1]) > min_hole)
    starts = idx[np.concatenate(([0], breaks + 1))].tolist()
    ends = (idx[np.concatenate((breaks, [idx.size - 1]))] + 1).tolist()
    new = tuple.__new__
    return tuple([new(Run, (a, b - a, current[a:b])) for a, b in zip(starts, ends)])


def compute_differential(base: bytes, current: bytes, pid: int, ts: int) -> Differential:
    """Byte ranges where ``current`` differs from ``base``."""
    if len(base) != len(current):
        raise ValueError("base and current page differ in length")
    b = np.frombuffer(base, dtype=np.uint8)
    c = np.frombuffer(current, dtype=np.uint8)
    return Differential(pid, ts, _runs_from_mask(bytes(current), b != c, COALESCE_GAP))


def apply_differential(base: bytes, d: Differential) -> bytes:
    page = bytearray(base)
    n = len(page)
    for off, length, data in d.runs:
        page[off : off + length] = data
    # a run past the end or with the wrong data length changes the page length
    if len(page) != n or any(r[0] < 0 or r[1] < 1 for r in d.runs):
        raise CorruptionError(f"differential for pid {d.pid} does not fit a {n}-byte page")
    return bytes(page)


def encoded_size(d: Differential) -> int:
    return d.encoded_size


def normalize_runs(runs, page_bytes: int | None = None) -> tuple[Run, ...]:
    """Sort and merge overlapping/adjacent runs; later runs win on overlap."""
    if not runs:
        return ()
    hi = max(r.offset + r.length for r in runs)
    lo = min(r.offset for r in runs)
    buf = np.zeros(hi - lo, dtype=np.uint8)
    mask = np.zeros(hi - lo, dtype=bool)
    for off, length, data in runs:
        buf[off - lo : off - lo + length] = np.frombuffer(data, dtype=np.uint8)
        mask[off - lo : off - lo + length] = True
    out = []
    for r in _runs_from_mask(buf.tobytes(), mask, 1):
        out.append(Run(r.offset + lo, r.length, r.data))
    if page_bytes is not None and out and out[-1].offset + out[-1].length > page_bytes:
        raise CorruptionError("run past end of page")
    return tuple(out)


def encode(d: Differential) -> bytes:
    if len(d.runs) >= PADDING_RUN_COUNT:
        raise ValueError("too many runs for one record")
    parts = [_RECORD.pack(d.physical_page_id, d.creation_timestamp, len(d.runs))]
    pack = _RUN.pack
    for off, length, data in d.runs:
        parts += (pack(off, length), data)
    return b"".join(parts)


def decode(raw: bytes) -> list[Differential]:
    """Decode every record in a differential page's data area."""
    return _decode(raw, partial_ok=False)[0]


def decode_prefix(raw: bytes) -> tuple[list[Differential], int]:
    """Decode the complete records at the start of a record stream.

    Returns the records and the number of bytes they span; a truncated
    trailing record is left unconsumed instead of raising.
    """
    return _decode(raw, partial_ok=True)


def _decode(raw: bytes, partial_ok: bool) -> tuple[list[Differential], int]:
    out: list[Differential] = []
    pos = 0
    n = len(raw)
    mv = memoryview(raw)
    while pos < n:
        start = pos
        if pos + RECORD_HEADER_BYTES > n:
            if partial_ok:
                return out, start
            if all(x == 0xFF for x in mv[pos:]):
                break
            raise CorruptionError(f"truncated record header at byte {pos}")
        pid, ts, count = _RECORD.unpack_from(raw, pos)
        if count == PADDING_RUN_COUNT:
            break
        pos += RECORD_HEADER_BYTES
        runs = []
        for _ in range(count):
            if pos + RUN_HEADER_BYTES > n:
                if partial_ok:
                    return out, start
                raise CorruptionError(f"truncated run header in record for pid {pid}")
            off, length = _RUN.unpack_from(raw, pos)
            pos += RUN_HEADER_BYTES
            if length == 0:
                raise CorruptionError(f"empty run in record for pid {pid}")
            if pos + length > n:
                if partial_ok:
                    return out, start
                raise CorruptionError(f"truncated run in record for pid {pid}")
            runs.append(Run(off, length, bytes(mv[pos : pos + length])))
            pos += length
        out.append(Differential(pid, ts, tuple(runs)))
    return out, pos


def pack_page(records, data_bytes: int) -> bytes:
    """Encode records into one page, padding the tail with 0xFF."""
    body = b"".join(encode(d) for d in records)
    if len(body) > data_bytes:
        raise ValueError(f"{len(body)} bytes of records do not fit a {data_bytes}-byte page")
    return body + b"\xff" * (data_bytes - len(body))
