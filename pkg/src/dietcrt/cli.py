"""Command-line entry point: ``dietcrt run|validate|list-dgps|tractability``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .dgp import list_dgps
from .errors import ConfigError
from .runner import emit_results, load_config, run_experiment, tractability_csv, tractability_rows

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dietcrt", description="Conditional randomization tests and power experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run an experiment described by a JSON config")
    run.add_argument("config", type=Path)
    run.add_argument("--seed", type=int, help="override the config's master seed")
    run.add_argument("--out", type=Path, help="output file (.json selects JSON); stdout if absent")
    run.add_argument("--threads", type=int, default=1, help="replicate worker threads")
    run.add_argument("--format", choices=("csv", "json"))
    run.add_argument("--no-timing", action="store_true",
                     help="leave wall_time_s blank so repeated runs give identical files")

    val = sub.add_parser("validate", help="check a config against the schema")
    val.add_argument("config", type=Path)

    sub.add_parser("list-dgps", help="list data-generating processes")

    tr = sub.add_parser("tractability", help="model fits and wall time: DIET vs refit-per-dataset CRT")
    tr.add_argument("--num-nulls", type=int, nargs="+", default=[5, 10, 20])
    tr.add_argument("--n", type=int, default=200)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--out", type=Path)
    return p


def _write(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


def _run(args) -> int:
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed must be nonnegative", "--seed")
        changes["seed"] = args.seed
    if args.no_timing:
        changes["record_timing"] = False
    if args.threads < 1:
        raise ConfigError("threads must be >= 1", "--threads")
    cfg = dataclasses.replace(cfg, **changes)
    out = args.out or (Path(cfg.output) if cfg.output else None)
    fmt = args.format or cfg.format or ("json" if out is not None and out.suffix == ".json" else "csv")
    rows = run_experiment(cfg, threads=args.threads)
    _write(emit_results(rows, fmt), out)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _run(args)
        if args.command == "validate":
            cfg = load_config(args.config)
            print(f"ok: {cfg.dgp.variant}, methods={','.join(cfg.methods)}, replicates={cfg.replicates}")
            return EXIT_OK
        if args.command == "list-dgps":
            for name, summary in list_dgps():
                print(f"{name}\t{summary}")
            return EXIT_OK
        if args.command == "tractability":
            rows = tractability_rows(args.num_nulls, n=args.n, seed=args.seed)
            _write(tractability_csv(rows), args.out)
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure past validation is a runtime error
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
