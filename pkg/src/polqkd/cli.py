"""Command line entry point: one subcommand per scenario, plus
``all`` and ``analyze`` (replay a recorded tag stream)."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from polqkd.config import ConfigError, Scenario, load_config
from polqkd.errors import InvalidParameter
from polqkd.protocol import bob_run
from polqkd.scenarios import run_all, run_scenario
from polqkd.timing import read_tags_bin, read_tags_csv


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value configuration file")
    common.add_argument("--seed", type=_u64, help="overrides the seed from the config file")
    common.add_argument("--out", type=Path, help="output directory (default: output_dir from config)")

    parser = argparse.ArgumentParser(prog="polqkd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for sc in Scenario:
        sub.add_parser(sc.value, parents=[common], help=f"run the {sc.value} scenario")
    sub.add_parser("all", parents=[common], help="every scenario, one subdirectory each")
    an = sub.add_parser("analyze", parents=[common], help="classify a recorded tag stream")
    an.add_argument("tags", type=Path, help="tag stream (.csv or binary)")
    return parser


def _analyze(args, cfg) -> dict:
    path = args.tags
    stream = read_tags_csv(path) if path.suffix == ".csv" else read_tags_bin(path)
    session = cfg.session
    bits = bob_run(stream, session)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "decisions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cycle", "count", "decision"])
        for b in bits:
            w.writerow([b.cycle_index, "" if b.raw_count is None else b.raw_count, b.decision.name])
    summary = {
        "cycles": len(bits),
        "erasures": sum(b.bit is None for b in bits),
    }
    (out / "summary.txt").write_text("".join(f"{k}={v}\n" for k, v in summary.items()))
    return summary


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed}
    if args.command not in ("all", "analyze"):
        overrides["scenario"] = Scenario(args.command)
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "analyze":
            summaries = {"analyze": _analyze(args, cfg)}
        elif args.command == "all":
            summaries = {sc.name: s for sc, s in run_all(cfg, args.out).items()}
        else:
            summaries = {cfg.scenario.name: run_scenario(cfg, args.out)}
    except ConfigError as exc:
        print(f"polqkd: config error: {exc}", file=sys.stderr)
        return 2
    except InvalidParameter as exc:
        print(f"polqkd: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"polqkd: I/O error: {exc}", file=sys.stderr)
        return 1
    for name, summary in summaries.items():
        for k, v in summary.items():
            print(f"{k}={v}" if len(summaries) == 1 else f"{name}.{k}={v}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
