"""Command-line entry point: ``robustreg {train,compare,cascade,eval}``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from robustreg import experiment
from robustreg.config import load_config
from robustreg.numerics import ConfigError, NumericError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="experiment config (JSON)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="set a dotted config key, e.g. sgd.max_epochs=50 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustreg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("train", "train one network"),
                        ("compare", "train twin L2 and Tukey runs and compare convergence"),
                        ("cascade", "train a stage-1 network plus region refiners")):
        _add_run_args(sub.add_parser(name, help=help_))
    ev = sub.add_parser("eval", help="evaluate saved parameters on a dataset CSV")
    ev.add_argument("params")
    ev.add_argument("dataset")
    ev.add_argument("--out", default=None, help="write the report JSON here instead of stdout")
    return parser


RUNNERS = {
    "train": experiment.run_train,
    "compare": experiment.run_compare,
    "cascade": experiment.run_cascade,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "eval":
            payload = experiment.run_eval(args.params, args.dataset)
            text = json.dumps(payload, indent=2, sort_keys=True)
            if args.out:
                with open(args.out, "w") as fh:
                    fh.write(text + "\n")
            else:
                print(text)
            return EXIT_OK
        cfg = load_config(args.config, args.override, seed=args.seed, output_dir=args.out)
        payload = RUNNERS[args.command](cfg, cfg.output_dir)
    except ConfigError as exc:
        print(f"{getattr(args, 'config', '')}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    summary = {k: v for k, v in payload.items() if not isinstance(v, (dict, list))}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
