"""``skorohod-lab <experiment-kind> --config <file> [--out <dir>] [--seed <u64>] [--workers <n|auto>]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .. import __version__
from ..coefficients import PRESETS
from .config import KINDS, ConfigError, parse_config
from .runner import EXIT_ERROR, EXIT_FAIL, EXIT_PASS, determinism_self_test, run


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skorohod-lab", description=__doc__.split("\n")[0])
    p.add_argument("kind", nargs="?", choices=KINDS, help="experiment kind")
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--out", type=Path, help="output directory for report.json and CSVs")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--workers", help="worker count or 'auto' (default: $SKOROHOD_LAB_WORKERS or 1)")
    p.add_argument("--list-presets", action="store_true", help="print coefficient presets")
    p.add_argument("--self-test", action="store_true",
                   help="run with 1 and N workers and compare report payloads")
    p.add_argument("--version", action="version", version=f"skorohod-lab {__version__}")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    if args.list_presets:
        for name in sorted(PRESETS):
            print(f"{name:24s} {PRESETS[name][1]}")
        return EXIT_PASS
    if args.kind is None or args.config is None:
        print("error: an experiment kind and --config are required", file=sys.stderr)
        return EXIT_ERROR
    try:
        cfg = parse_config(args.config.read_text(encoding="utf-8"))
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if cfg.experiment != args.kind:
        print(f"error: config describes {cfg.experiment!r}, not {args.kind!r}", file=sys.stderr)
        return EXIT_ERROR
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
            return EXIT_ERROR
        cfg.seed = args.seed
    workers = args.workers
    if args.self_test:
        same, a, b = determinism_self_test(cfg, workers=int(workers) if workers and
                                           workers != "auto" else 8)
        print(json.dumps({"identical_payloads": same, "workers": [a.provenance["workers"],
                                                                  b.provenance["workers"]]}))
        return EXIT_PASS if same else EXIT_FAIL
    try:
        rep = run(cfg, workers=workers, out_dir=args.out)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    status = "error" if rep.exit_code == EXIT_ERROR else ("pass" if rep.passed else "fail")
    line = f"{cfg.experiment}: {status}"
    if "error" in rep.payload:
        line += f" ({rep.payload['error']})"
    if args.out is not None:
        line += f" -> {args.out / 'report.json'}"
    print(line)
    return rep.exit_code


if __name__ == "__main__":
    sys.exit(main())
