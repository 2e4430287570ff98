"""Command line interface.

Exit codes: 0 success, 1 ``analyze`` found report files that differ from a
recomputation, 2 configuration or usage error, 3 runtime error (missing or
unwritable files and the like).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from .errors import ConfigError, PolarsimError
from .experiment import (ExperimentResult, analyze, diff_report, emit_report, load_experiment_config,
                         load_run, render_replicates, replicate_row, render_summary, run_experiment,
                         write_manifest)
from .worldgen import generate_world, load_world_config, validate_world, write_world

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so ``main`` can map errors to exit codes."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


class _UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override the config seed (run: a single replicate)")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="print nothing but errors")
    p = _Parser(prog="polarsim", parents=[common],
                description="Simulate preference-driven social bots and analyze their networks.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    g = sub.add_parser("genworld", parents=[common], help="generate a world and write it out")
    g.add_argument("config", help="world config (TOML)")
    g.add_argument("-o", "--out", required=True, help="output directory")
    r = sub.add_parser("run", parents=[common], help="run an experiment and write logs and report")
    r.add_argument("config", help="experiment config (TOML)")
    r.add_argument("-o", "--out", required=True, help="output directory")
    a = sub.add_parser("analyze", parents=[common],
                       help="recompute metrics and tests from a run's logs and diff the report")
    a.add_argument("run_dir")
    rp = sub.add_parser("report", parents=[common], help="rewrite a run's report from its logs")
    rp.add_argument("run_dir")
    return p


def _say(args, text: str) -> None:
    if not getattr(args, "quiet", False):
        print(text, end="" if text.endswith("\n") else "\n")


def _run_dirs(root: Path) -> list[Path]:
    """A single run directory, or the per-seed directories of a replicate set."""
    if (root / "run_config.json").exists():
        return [root]
    subs = sorted((p for p in root.glob("seed-*") if p.is_dir()), key=lambda p: int(p.name[5:]))
    if not subs:
        raise FileNotFoundError(f"missing run file: {root / 'run_config.json'}")
    return subs


def cmd_genworld(args) -> int:
    cfg = load_world_config(args.config)
    if hasattr(args, "seed"):
        cfg = cfg.with_seed(args.seed)
    world = generate_world(cfg)
    write_world(world, args.out)
    report = validate_world(world, cfg)
    for c in report.communities:
        if c.skipped:
            _say(args, f"{c.topic}: empty community, skipped")
            continue
        parts = [f"{c.topic}: {c.node_count} users"]
        shown = [("reciprocity", c.reciprocity), ("clustering", c.clustering)]
        if "tail_exponent" in c.checks:
            shown.append(("tail exponent", c.tail_exponent))
        for label, value in shown:
            parts.append(f"{label} {'n/a' if value is None else format(value, '.3f')}")
        _say(args, ", ".join(parts))
    _say(args, "validation " + ("passed" if report.passed else "FAILED: " + ", ".join(report.failures)))
    return EXIT_OK


def cmd_run(args) -> int:
    config = load_experiment_config(args.config)
    out = Path(args.out)
    if hasattr(args, "seed"):
        result = run_experiment(config, args.seed, out)
        _say(args, render_summary(result))
        return EXIT_OK
    if len(config.seeds) == 1:
        result = run_experiment(config, config.seeds[0], out)
        _say(args, render_summary(result))
        return EXIT_OK
    rows = []
    for seed in config.seeds:
        result = run_experiment(config, seed, out / f"seed-{seed}")
        rows.append(replicate_row(result))
        _say(args, f"seed {seed}: done")
    (out / "replicates.csv").write_text(render_replicates(rows), encoding="utf-8", newline="\n")
    write_manifest(out)
    _say(args, (out / "replicates.csv").read_text("utf-8"))
    return EXIT_OK


def cmd_analyze(args) -> int:
    root = Path(args.run_dir)
    bad = []
    for d in _run_dirs(root):
        for rel in diff_report(d):
            bad.append(d / rel)
    if bad:
        for path in bad:
            print(f"mismatch: {path}", file=sys.stderr)
        return EXIT_MISMATCH
    _say(args, f"{root}: report reproduced exactly")
    return EXIT_OK


def cmd_report(args) -> int:
    root = Path(args.run_dir)
    dirs = _run_dirs(root)
    rows = []
    for d in dirs:
        result: ExperimentResult = analyze(load_run(d))
        emit_report(result, d)
        rows.append(replicate_row(result))
        if len(dirs) == 1:
            _say(args, render_summary(result))
    if dirs != [root]:
        (root / "replicates.csv").write_text(render_replicates(rows), encoding="utf-8", newline="\n")
        write_manifest(root)
        _say(args, (root / "replicates.csv").read_text("utf-8"))
    return EXIT_OK


COMMANDS = {"genworld": cmd_genworld, "run": cmd_run, "analyze": cmd_analyze, "report": cmd_report}


def main(argv: Sequence[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, PolarsimError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
