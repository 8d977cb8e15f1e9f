"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error
(the message names the failing stage). Status lines on stdout have the
form ``key=value key=value ...`` so they can be parsed line by line.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .fetch import SOURCES, FetchError, fetch_data
from .pipeline import (
    ConfigError,
    Run,
    StageError,
    load_config,
    run_all,
    stage_aggregate,
    stage_evaluate,
    stage_gmm,
    stage_split,
    stage_sweep,
    stage_synth,
    stage_train_experts,
    summarize,
)

STAGES = {
    "split": stage_split,
    "fit-gmm": stage_gmm,
    "synth": stage_synth,
    "train-experts": stage_train_experts,
    "aggregate": stage_aggregate,
    "evaluate": stage_evaluate,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage().rstrip()}")


def _ratios(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse ratios {text!r}; expected e.g. 0.1,0.2,0.3") from None
    if not vals or any(not 0 <= v <= 1 for v in vals):
        raise argparse.ArgumentTypeError("ratios must be a non-empty comma list of values in [0, 1]")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mati", description="Region-aware experts with test-time aggregation for imbalanced regression.")
    p.add_argument("--version", action="version", version=f"mati {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-key override, e.g. --set ttsa.epochs=40 (repeatable)")
    common.add_argument("--seed", type=int, help="run only this seed")
    common.add_argument("--out", required=True, help="run directory")

    helps = {
        "split": "build train and balanced/normal/inverse test splits",
        "fit-gmm": "fit the label mixture and choose the component count",
        "synth": "whole-space and per-region oversampling",
        "train-experts": "train one expert per region",
        "aggregate": "learn aggregation weights on each test set's features",
        "evaluate": "score MATI and the baselines",
        "run-all": "every stage for every seed, plus the summary",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    sw = sub.add_parser("sweep", parents=[common], help="corruption-ratio sweep",
                        description="aggregate and score once per corruption ratio")
    sw.add_argument("--ratios", type=_ratios, default=_ratios("0.1,0.2,0.3,0.4,0.5,0.6,0.7"))
    sw.add_argument("--distribution", default="balanced", choices=["balanced", "normal", "inverse"])

    fd = sub.add_parser("fetch-data", help="download a public dataset into the cache",
                        description="download a public dataset and convert it to CSV + schema")
    fd.add_argument("dataset", choices=sorted(SOURCES))
    fd.add_argument("--cache", help="cache directory (default $MATI_DATA_CACHE or ~/.cache/mati)")
    fd.add_argument("--url", help="download from this URL instead of the public archive")
    fd.add_argument("--sha256", help="required checksum of the raw download")
    return p


def _emit(line: str) -> None:
    print(line, flush=True)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1

    if args.command == "fetch-data":
        try:
            got = fetch_data(args.dataset, args.cache, args.url, args.sha256, log=_emit)
        except FetchError as exc:
            print(f"error: stage fetch-data: {exc}", file=sys.stderr)
            return 2
        _emit(f"status=ok command=fetch-data csv={got.csv_path} schema={got.schema_path} sha256={got.sha256}")
        return 0

    try:
        cfg = load_config(args.config, args.overrides, args.seed)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "run-all":
            run_all(cfg, args.out, log=_emit)
        else:
            run = Run(cfg, args.out, _emit)
            for seed in cfg.seeds:
                if args.command == "sweep":
                    stage_sweep(run, seed, args.ratios, args.distribution)
                else:
                    STAGES[args.command](run, seed)
            if args.command == "evaluate":
                summarize(run)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 1
    _emit(f"status=ok command={args.command} out={args.out}")
    return 0
