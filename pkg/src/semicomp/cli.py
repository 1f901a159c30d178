"""Command-line interface.

::

    semicomp run --config toy.yaml --out-dir out/
    semicomp simulate|fit|metrics|profile|glmm|report|sensitivity --config ... --out-dir ...

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure, 1 anything else raised by the library.
"""

import argparse
import logging
import sys
from dataclasses import replace

from . import io as sio
from .exceptions import ConfigError, SemicompError
from .pipeline import STAGES, Pipeline

log = logging.getLogger("semicomp")

COMMANDS = STAGES + ("sensitivity", "run")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="semicomp",
        description="Hierarchical illness-death models for hospital readmission and mortality "
                    "profiling.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "draw a synthetic dataset (dataset.csv, truth.json)",
        "fit": "run the MCMC sampler (posterior.npz, fit_summary.json)",
        "metrics": "excess readmission/mortality ratios (ratios.csv)",
        "profile": "plug-in and Bayes-risk classifications (classification_<scheme>.csv)",
        "glmm": "logistic GLMM comparator ratios (glmm_ratios.csv)",
        "report": "cross-tabulations of the classifications (report_*.csv)",
        "sensitivity": "quadrature node-count ladder (sensitivity.csv)",
        "run": "all stages in order",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="YAML run configuration (defaults are used if omitted)")
        p.add_argument("--seed", type=int, help="root seed, overrides the config")
        p.add_argument("--out-dir", required=True, help="artifact directory")
        p.add_argument("--threads", type=int, help="worker threads for the ratio computation")
        p.add_argument("--dataset", help="input dataset CSV, overrides the config")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _resolve_config(args):
    cfg = sio.load_config(args.config) if args.config else sio.RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = replace(cfg, threads=args.threads)
    if args.dataset is not None:
        cfg = replace(cfg, dataset=args.dataset)
    return sio.validate_run_config(cfg)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _resolve_config(args)
        pipe = Pipeline(cfg, args.out_dir)
        stages = None if args.command == "run" else [args.command]
        for path in pipe.run(stages):
            log.info("wrote %s", path)
    except SemicompError as exc:
        print(f"semicomp: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
