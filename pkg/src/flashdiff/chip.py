"""Bit-accurate NAND flash emulator.

Cells start erased (all ones). A program operation can only clear bits; the
only way back to ones is erasing the whole block. Every operation is charged
to a simulated-time ledger, nothing sleeps.

Spare area layout (first 14 of the spare bytes, the rest reserved)::

    0      page type tag          (0xFF = free)
    1..4   physical page id, LE   (0xFFFFFFFF = none)
    5..12  creation timestamp, LE (all ones = none)
    13     obsolete byte, bit 0   (1 = valid, 0 = obsolete)
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import AddressError, ImageFormatError, OverwriteViolation, SpareExhausted

ERASED = 0xFF
MAX_SPARE_PROGRAMS = 4

NO_PID = 0xFFFFFFFF
NO_TS = 0xFFFFFFFFFFFFFFFF

_SPARE_FMT = struct.Struct("<BIQB")
SPARE_FIELDS_LEN = _SPARE_FMT.size  # 14
_OBSOLETE_OFF = 13

IMAGE_MAGIC = b"FDIF"
IMAGE_VERSION = 1
_HEADER = struct.Struct("<4sHIHHH")  # 16 bytes


class PageType(enum.IntEnum):
    BASE = 0x01
    DIFFERENTIAL = 0x02
    ORIGINAL = 0x03
    LOG = 0x04
    DATA = 0x05
    FREE = 0xFF


@dataclass(frozen=True)
class FlashGeometry:
    n_blocks: int
    pages_per_block: int = 64
    data_bytes: int = 2048
    spare_bytes: int = 64

    def __post_init__(self):
        for name in ("n_blocks", "pages_per_block", "data_bytes", "spare_bytes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.spare_bytes < SPARE_FIELDS_LEN:
            raise ValueError(f"spare area needs at least {SPARE_FIELDS_LEN} bytes")

    @property
    def page_bytes(self) -> int:
        return self.data_bytes + self.spare_bytes

    @property
    def block_bytes(self) -> int:
        return self.pages_per_block * self.page_bytes

    @property
    def n_pages(self) -> int:
        return self.n_blocks * self.pages_per_block

    @property
    def data_capacity(self) -> int:
        return self.n_pages * self.data_bytes

    def with_blocks(self, n_blocks: int) -> FlashGeometry:
        """Same page/block shape with fewer blocks."""
        return FlashGeometry(n_blocks, self.pages_per_block, self.data_bytes, self.spare_bytes)


# Samsung K9L8G08U0M MLC part
DEFAULT_GEOMETRY = FlashGeometry(n_blocks=32768, pages_per_block=64, data_bytes=2048, spare_bytes=64)
DESK_GEOMETRY = DEFAULT_GEOMETRY.with_blocks(256)


@dataclass(frozen=True)
class TimingProfile:
    """Per-operation cost in microseconds."""

    t_read: int = 110
    t_write: int = 1010
    t_erase: int = 1500

    def __post_init__(self):
        if min(self.t_read, self.t_write, self.t_erase) <= 0:
            raise ValueError("timings must be strictly positive")

    def cost(self, reads: int, writes: int, erases: int) -> int:
        return reads * self.t_read + writes * self.t_write + erases * self.t_erase


DEFAULT_TIMING = TimingProfile()


class PhysPageAddr(NamedTuple):
    block: int
    page: int


@dataclass(frozen=True)
class SpareArea:
    page_type: PageType = PageType.FREE
    physical_page_id: int | None = None
    creation_timestamp: int | None = None
    obsolete_bit: int = 1
    spare_write_count: int = 0

    @property
    def obsolete(self) -> bool:
        return self.obsolete_bit == 0

    @property
    def free(self) -> bool:
        return self.page_type == PageType.FREE

    def encode(self, spare_bytes: int) -> bytes:
        pid = NO_PID if self.physical_page_id is None else self.physical_page_id
        ts = NO_TS if self.creation_timestamp is None else self.creation_timestamp
        obs = 0xFF if self.obsolete_bit else 0x00
        head = _SPARE_FMT.pack(int(self.page_type), pid, ts, obs)
        return head + b"\xff" * (spare_bytes - len(head))

    @classmethod
    def decode(cls, raw: bytes, spare_write_count: int = 0) -> SpareArea:
        tag, pid, ts, obs = _SPARE_FMT.unpack_from(raw)
        try:
            ptype = PageType(tag)
        except ValueError:
            ptype = PageType.FREE
        return cls(
            page_type=ptype,
            physical_page_id=None if pid == NO_PID else pid,
            creation_timestamp=None if ts == NO_TS else ts,
            obsolete_bit=obs & 1,
            spare_write_count=spare_write_count,
        )


@dataclass
class ChipLedger:
    timing: TimingProfile
    n_blocks: int
    reads: int = 0
    writes: int = 0
    erases: int = 0
    spare_writes: int = 0  # subset of writes that touched only the spare area
    erase_count_per_block: np.ndarray = field(init=False)

    def __post_init__(self):
        self.erase_count_per_block = np.zeros(self.n_blocks, dtype=np.int64)

    @property
    def sim_time(self) -> int:
        return self.timing.cost(self.reads, self.writes, self.erases)

    def counters(self) -> tuple[int, int, int, int]:
        return (self.reads, self.writes, self.erases, self.spare_writes)


class FlashChip:
    """Array of blocks of (data + spare) pages with NAND program/erase rules.

    If ``journal`` is a list, every operation is appended to it so a run can be
    replayed up to an arbitrary crash point (see maintenance.inject_crash).
    """

    def __init__(
        self,
        geometry: FlashGeometry = DESK_GEOMETRY,
        timing: TimingProfile = DEFAULT_TIMING,
        journal: list | None = None,
    ):
        self.geometry = geometry
        self.timing = timing
        g = geometry
        self.cells = np.full((g.n_blocks, g.pages_per_block, g.page_bytes), ERASED, dtype=np.uint8)
        self.spare_programs = np.zeros((g.n_blocks, g.pages_per_block), dtype=np.int16)
        self.obsolete_pages = np.zeros(g.n_blocks, dtype=np.int64)
        self.ledger = ChipLedger(timing, g.n_blocks)
        self.journal = journal

    # -- addressing -------------------------------------------------------

    def _check(self, addr) -> tuple[int, int]:
        b, p = addr
        if not (0 <= b < self.geometry.n_blocks and 0 <= p < self.geometry.pages_per_block):
            raise AddressError(f"page address {tuple(addr)} outside {self.geometry}")
        return b, p

    def addresses(self):
        for b in range(self.geometry.n_blocks):
            for p in range(self.geometry.pages_per_block):
                yield PhysPageAddr(b, p)

    # -- the three NAND operations ---------------------------------------

    def read_page(self, addr) -> tuple[bytes, SpareArea]:
        b, p = self._check(addr)
        self.ledger.reads += 1
        if self.journal is not None:
            self.journal.append(("r", b, p))
        row = self.cells[b, p]
        db = self.geometry.data_bytes
        spare = SpareArea.decode(row[db:].tobytes(), int(self.spare_programs[b, p]))
        return row[:db].tobytes(), spare

    def write_page(self, addr, data: bytes | None, spare: SpareArea | None = None) -> None:
        """Program a page: stored = old AND requested.

        ``data=None`` leaves the data area untouched and makes this a
        spare-only program (limited to four between erases); ``spare=None``
        leaves the spare area untouched.
        """
        b, p = self._check(addr)
        g = self.geometry
        if data is None and spare is None:
            raise ValueError("nothing to program")
        old = self.cells[b, p]
        request = old.copy()
        if data is not None:
            if len(data) != g.data_bytes:
                raise ValueError(f"data must be exactly {g.data_bytes} bytes, got {len(data)}")
            request[: g.data_bytes] = np.frombuffer(data, dtype=np.uint8)
        if spare is not None:
            request[g.data_bytes :] = np.frombuffer(spare.encode(g.spare_bytes), dtype=np.uint8)
        self._program(b, p, request, spare_only=data is None)
        if self.journal is not None:
            self.journal.append(("w", b, p, request.tobytes(), data is None))

    def erase_block(self, block: int) -> None:
        if not 0 <= block < self.geometry.n_blocks:
            raise AddressError(f"block {block} outside {self.geometry}")
        self._erase(block)
        if self.journal is not None:
            self.journal.append(("e", block))

    def set_obsolete(self, addr) -> None:
        """Clear the obsolete bit with a spare-only program (costs one write)."""
        b, p = self._check(addr)
        request = self.cells[b, p].copy()
        request[self.geometry.data_bytes + _OBSOLETE_OFF] = 0x00
        self._program(b, p, request, spare_only=True)
        if self.journal is not None:
            self.journal.append(("w", b, p, request.tobytes(), True))

    # -- internals shared with journal replay ----------------------------

    def _program(self, b: int, p: int, request: np.ndarray, spare_only: bool) -> None:
        old = self.cells[b, p]
        if np.any(request & ~old):
            raise OverwriteViolation(f"program of page ({b}, {p}) needs a 0->1 transition")
        if spare_only:
            if self.spare_programs[b, p] >= MAX_SPARE_PROGRAMS:
                raise SpareExhausted(f"page ({b}, {p}) spare already programmed {MAX_SPARE_PROGRAMS} times")
            self.spare_programs[b, p] += 1
            self.ledger.spare_writes += 1
        obs_at = self.geometry.data_bytes + _OBSOLETE_OFF
        was_valid = old[obs_at] & 1
        self.cells[b, p] = request  # request never has a bit old lacks, so AND == request
        if was_valid and not request[obs_at] & 1:
            self.obsolete_pages[b] += 1
        self.ledger.writes += 1

    def _erase(self, b: int) -> None:
        self.cells[b] = ERASED
        self.spare_programs[b] = 0
        self.obsolete_pages[b] = 0
        self.ledger.erases += 1
        self.ledger.erase_count_per_block[b] += 1

    def replay(self, entry) -> None:
        """Re-apply one journal entry (charges the ledger like the original)."""
        kind = entry[0]
        if kind == "r":
            self.ledger.reads += 1
        elif kind == "w":
            _, b, p, raw, spare_only = entry
            self._program(b, p, np.frombuffer(raw, dtype=np.uint8), spare_only)
        elif kind == "e":
            self._erase(entry[1])
        else:
            raise ValueError(f"unknown journal entry {kind!r}")

    # -- free metadata views (no ledger charge; tests and tooling only) --

    def peek_spare(self, addr) -> SpareArea:
        b, p = self._check(addr)
        raw = self.cells[b, p, self.geometry.data_bytes :].tobytes()
        return SpareArea.decode(raw, int(self.spare_programs[b, p]))

    def peek_data(self, addr) -> bytes:
        b, p = self._check(addr)
        return self.cells[b, p, : self.geometry.data_bytes].tobytes()

    def is_erased(self, addr) -> bool:
        b, p = self._check(addr)
        return bool(np.all(self.cells[b, p] == ERASED))

    def block_erased(self, block: int) -> bool:
        return bool(np.all(self.cells[block] == ERASED))

    # -- images -----------------------------------------------------------

    def image(self) -> bytes:
        g = self.geometry
        header = _HEADER.pack(IMAGE_MAGIC, IMAGE_VERSION, g.n_blocks, g.pages_per_block, g.data_bytes, g.spare_bytes)
        return header + self.cells.tobytes()

    def save_image(self, path) -> None:
        Path(path).write_bytes(self.image())

    @classmethod
    def from_image(cls, raw: bytes, timing: TimingProfile = DEFAULT_TIMING) -> FlashChip:
        if len(raw) < _HEADER.size:
            raise ImageFormatError("image shorter than its header")
        magic, version, n_blocks, ppb, data_bytes, spare_bytes = _HEADER.unpack_from(raw)
        if magic != IMAGE_MAGIC:
            raise ImageFormatError(f"bad magic {magic!r}")
        if version != IMAGE_VERSION:
            raise ImageFormatError(f"unsupported image version {version}")
        geometry = FlashGeometry(n_blocks, ppb, data_bytes, spare_bytes)
        body = raw[_HEADER.size :]
        if len(body) != geometry.n_pages * geometry.page_bytes:
            raise ImageFormatError("image body does not match its geometry")
        chip = cls(geometry, timing)
        chip.cells[...] = np.frombuffer(body, dtype=np.uint8).reshape(chip.cells.shape)
        obs = chip.cells[:, :, data_bytes + _OBSOLETE_OFF]
        chip.obsolete_pages[:] = np.sum((obs & 1) == 0, axis=1)
        return chip

    @classmethod
    def load_image(cls, path, timing: TimingProfile = DEFAULT_TIMING) -> FlashChip:
        return cls.from_image(Path(path).read_bytes(), timing)

    def copy(self) -> FlashChip:
        """Independent chip with the same cells and a fresh ledger."""
        chip = FlashChip(self.geometry, self.timing)
        chip.cells[...] = self.cells
        chip.spare_programs[...] = self.spare_programs
        chip.obsolete_pages[...] = self.obsolete_pages
        return chip
