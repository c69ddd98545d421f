"""Command-line entry point: ``codedoffload <subcommand> [flags]``.

Exit status is 0 when every embedded check passes, 1 when one fails and 2
for bad configuration.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_config
from .errors import CodedOffloadError, ConfigError
from .experiments import COMMANDS, summary_line, write_report


def _common(parser: argparse.ArgumentParser):
    d = argparse.SUPPRESS
    g = parser.add_argument_group("run configuration (flags override --config)")
    g.add_argument("--config", metavar="PATH", default=d, help="key=value config file")
    g.add_argument("--seed", type=int, default=d)
    g.add_argument("--k", type=int, default=d, help="virtual batch size K")
    g.add_argument("--m", type=int, default=d, help="collusion tolerance M")
    g.add_argument("--workers", type=int, default=d)
    g.add_argument("--prime", choices=["25bit", "large"], default=d)
    g.add_argument("--frac-bits", dest="frac_bits", type=int, default=d)
    g.add_argument("--epochs", type=int, default=d)
    g.add_argument("--integrity", choices=["on", "off"], default=d)
    g.add_argument("--dataset", default=d, help="moons, xor, gaussians or csv:PATH")
    g.add_argument("--out", dest="out_dir", metavar="DIR", default=d)
    g.add_argument("--insecure-dump", dest="insecure_dump", action="store_const", const=True, default=d,
                   help="write per-batch coefficient matrices (debug only, defeats privacy)")
    g.add_argument("--set", dest="extra", action="append", default=d, metavar="KEY=VALUE",
                   help="any other config key, e.g. --set samples=20000")


def _knobs(parser: argparse.ArgumentParser, *names):
    d = argparse.SUPPRESS
    table = {
        "instances": dict(type=int), "dim": dict(type=int),
        "break_constraint": dict(action="store_const", const=True,
                                 help="debug: perturb B so the decoding constraint fails"),
        "samples": dict(type=int), "alpha": dict(type=float),
        "trials": dict(type=int),
        "lr": dict(type=float), "large_batch": dict(type=int),
        "faulty": dict(type=int, help="number of faulty workers"),
        "fault_prob": dict(type=float), "transcript": dict(action="store_const", const=True),
        "reps": dict(type=int),
    }
    for name in names:
        parser.add_argument("--" + name.replace("_", "-"), dest=name, default=d, **table[name])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="codedoffload", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    knobs = {
        "codec-check": ("instances", "dim", "break_constraint"),
        "privacy-audit": ("samples", "alpha"),
        "integrity-audit": ("trials",),
        "train": ("lr", "large_batch", "faulty", "fault_prob", "transcript"),
        "bench": ("reps", "dim"),
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=COMMANDS[name].__doc__ and COMMANDS[name].__doc__.splitlines()[0])
        _common(p)
        _knobs(p, *knobs[name])
    return parser


def main(argv=None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    path = args.pop("config", None)
    overrides = {}
    for item in args.pop("extra", []):
        if "=" not in item:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return 2
        key, val = item.split("=", 1)
        overrides[key.strip().replace("-", "_")] = val
    overrides.update(args)
    try:
        cfg = load_config(path, overrides)
        if command == "train":
            report = COMMANDS[command](cfg, out_dir=cfg.out_dir)
        else:
            report = COMMANDS[command](cfg)
    except CodedOffloadError as exc:
        if isinstance(exc, ConfigError):
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    report_path = write_report(report, Path(cfg.out_dir))
    print(summary_line(report))
    print(f"report: {report_path}")
    return 0 if report["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
