"""Command line entry point: ``flashdiff run|recover|selftest|make-image``."""

from __future__ import annotations

import argparse
import logging
import sys
from collections import Counter

from .baselines import DRIVER_KEYS
from .chip import FlashChip, PageType
from .config import ConfigError, config_argv, load_config
from .errors import FlashError
from .experiments import DEFAULT_BLOCKS, RunConfig, run_experiment
from .maintenance import read_recovered, recover, scan_cost
from .report import emit_report

# run options that take a value, and switches; a config file may set any of them
RUN_FLAGS = {"exp", "driver", "seed", "blocks", "db-mib", "csv", "ops", "warmup"}
RUN_SWITCHES = {"no-verify"}


def _drivers(text: str) -> tuple[str, ...]:
    keys = tuple(k.strip() for k in text.split(",") if k.strip())
    bad = [k for k in keys if k not in DRIVER_KEYS]
    if bad or not keys:
        raise argparse.ArgumentTypeError(f"unknown driver {', '.join(bad) or text!r}; choose from {', '.join(DRIVER_KEYS)}")
    return keys


def _run_parser(sub) -> argparse.ArgumentParser:
    p = sub.add_parser("run", help="run one experiment and print its table")
    p.add_argument("--config", help="key=value file with defaults for any flag below")
    p.add_argument("--exp", type=int, choices=range(1, 8), metavar="1..7", help="experiment number")
    p.add_argument("--driver", type=_drivers, help=f"driver or comma list ({'|'.join(DRIVER_KEYS)}); default: the experiment's set")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--blocks", type=int, help="chip size in 128 KiB blocks (default depends on the experiment)")
    p.add_argument("--db-mib", type=float, help="database size in MiB (default: a quarter of the chip)")
    p.add_argument("--ops", type=int, help="measured ops (transactions for exp 7)")
    p.add_argument("--warmup", type=float, help="GC invocations per block before measuring (default 2)")
    p.add_argument("--csv", help="also write the full result table here")
    p.add_argument("--no-verify", action="store_true", help="skip checking reads against the shadow copy")
    return p


def cmd_run(args) -> int:
    if args.exp is None:
        raise ConfigError("--exp is required (on the command line or in the config file)")
    cfg = RunConfig(n_blocks=args.blocks or DEFAULT_BLOCKS[args.exp], db_mib=args.db_mib, verify=not args.no_verify)
    if args.warmup is not None:
        cfg.warmup_gc_per_block = args.warmup
    res = run_experiment(args.exp, drivers=args.driver, seed=args.seed, op_count=args.ops, cfg=cfg)
    emit_report(res, args.csv)
    return 0


def recovery_report(chip: FlashChip) -> str:
    g = chip.geometry
    kinds: Counter = Counter()
    for addr in chip.addresses():
        s = chip.peek_spare(addr)
        if s.free:
            kinds["free"] += 1
        elif s.obsolete:
            kinds["obsolete"] += 1
        else:
            try:
                kinds[PageType(s.page_type).name.lower()] += 1
            except ValueError:
                kinds["unknown"] += 1
    before = chip.ledger.writes
    ppmt, vdct = recover(chip)
    marked = chip.ledger.writes - before
    unreadable = []
    for pid in sorted(ppmt):
        try:
            read_recovered(chip, ppmt, pid)
        except FlashError:
            unreadable.append(pid)
    with_diff = sum(1 for e in ppmt.values() if e.diff_page is not None)
    lines = [
        f"geometry        {g.n_blocks} blocks x {g.pages_per_block} pages x ({g.data_bytes}+{g.spare_bytes}) bytes",
        "pages           " + ", ".join(f"{k} {v}" for k, v in sorted(kinds.items())),
        f"logical pages   {len(ppmt)} recovered, {with_diff} with a differential",
        f"diff pages      {len(vdct)} still holding valid differentials",
        f"set obsolete    {marked} pages left over from before the crash",
        f"unreadable      {len(unreadable)}" + (f" (pids {unreadable[:10]})" if unreadable else ""),
        f"scan cost       {scan_cost(g, chip.timing) / 1e6:.3f} s simulated",
    ]
    return "\n".join(lines) + "\n"


def cmd_recover(args) -> int:
    chip = FlashChip.load_image(args.image)
    sys.stdout.write(recovery_report(chip))
    if args.out:
        chip.save_image(args.out)
        print(f"repaired image written to {args.out}")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    checks = run_selftest(args.ops)
    for c in checks:
        print(f"{'PASS' if c.ok else 'FAIL'}  {c.name:32s} {c.seconds:6.2f}s  {c.detail}")
    failed = sum(not c.ok for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 1 if failed else 0


def cmd_make_image(args) -> int:
    from .maintenance import inject_crash
    from .selftest import sample_pdl_chip

    journal: list | None = [] if args.crash_at is not None else None
    chip, _, _ = sample_pdl_chip(seed=args.seed, n_blocks=args.blocks, ops=args.ops, journal=journal)
    if journal is not None:
        point = min(args.crash_at, len(journal))
        chip = inject_crash(journal, point, chip.geometry)
        print(f"cut after {point} of {len(journal)} chip operations")
    chip.save_image(args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flashdiff", description="Flash page update methods on an emulated NAND chip.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    _run_parser(sub).set_defaults(func=cmd_run)

    p = sub.add_parser("recover", help="rebuild PDL tables from a chip image and report")
    p.add_argument("--image", required=True, help="chip image file")
    p.add_argument("--out", help="write the repaired image here")
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("selftest", help="run the quick invariant suite")
    p.add_argument("--ops", type=int, default=1500, help="random ops per driver")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("make-image", help="write a sample PDL chip image, optionally cut at a crash point")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--blocks", type=int, default=8)
    p.add_argument("--ops", type=int, default=400)
    p.add_argument("--crash-at", type=int, help="keep only the first N chip operations")
    p.set_defaults(func=cmd_make_image)
    return ap


def _with_config(argv: list[str]) -> list[str]:
    """Splice settings from ``run --config FILE`` in front of the real flags."""
    if not argv or argv[0] != "run":
        return argv
    rest = argv[1:]
    path = None
    for i, tok in enumerate(rest):
        if tok == "--config" and i + 1 < len(rest):
            path = rest[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
    if path is None:
        return argv
    return ["run"] + config_argv(load_config(path), RUN_FLAGS, RUN_SWITCHES) + rest


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        argv = _with_config(argv)
    except (ConfigError, OSError) as exc:
        ap.error(str(exc))
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FlashError, OSError, ValueError) as exc:
        print(f"flashdiff: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
