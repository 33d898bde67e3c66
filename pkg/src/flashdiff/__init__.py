"""Flash storage workbench: page-differential logging, baseline update methods,
an emulated NAND chip, garbage collection, crash recovery and benchmarks."""

from .baselines import DRIVER_KEYS, IpuDriver, IplDriver, OpuDriver, make_driver
from .chip import DESK_GEOMETRY, DEFAULT_GEOMETRY, DEFAULT_TIMING, FlashChip, FlashGeometry, PhysPageAddr, TimingProfile
from .maintenance import collect_garbage, inject_crash, recover, scan_cost
from .pdl import PdlDriver

__version__ = "0.1.0"

__all__ = [
    "DESK_GEOMETRY",
    "DRIVER_KEYS",
    "FlashChip",
    "FlashGeometry",
    "IplDriver",
    "IpuDriver",
    "OpuDriver",
    "PdlDriver",
    "PhysPageAddr",
    "DEFAULT_GEOMETRY",
    "DEFAULT_TIMING",
    "TimingProfile",
    "collect_garbage",
    "inject_crash",
    "make_driver",
    "recover",
    "scan_cost",
]
