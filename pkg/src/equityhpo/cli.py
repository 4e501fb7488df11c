"""Command-line front end.

    equityhpo features --out DIR
    equityhpo run      --config run.yaml --out DIR [--sampler tpe --budget 50 --seeds 5 ...]
    equityhpo report   --out DIR
    equityhpo shap     --config run.yaml --out DIR [--exact]

Exit codes: 0 success, 1 at least one cell failed, 2 configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import load_config
from .errors import ConfigError, EquityHPOError

log = logging.getLogger("equityhpo")

EXIT_OK, EXIT_CELL_FAILED, EXIT_CONFIG = 0, 1, 2


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _csv_list(text: str) -> list[str]:
    return [t for t in text.split(",") if t]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--out", help="output directory (default: results)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--jobs", type=int, help="worker processes for matrix cells")
    common.add_argument("--experiments", type=_csv_list, help="e.g. Exp1,Exp4")
    common.add_argument("--features", type=_csv_list, help="technical,fundamental")
    common.add_argument("--regularizers", type=_csv_list, help="dropout,batch_norm")
    common.add_argument("-v", "--verbose", action="store_true")

    search = argparse.ArgumentParser(add_help=False)
    search.add_argument("--sampler", choices=("tpe", "sa", "rs"))
    search.add_argument("--budget", type=int, help="function evaluations per study")
    search.add_argument("--seeds", type=int, help="independent seeds per cell")
    search.add_argument("--epochs", type=int)
    search.add_argument("--space", help="YAML search-space file")
    search.add_argument("--per-seed-hpo", dest="per_seed_hpo", type=_bool, metavar="BOOL",
                        help="true: full search per seed; false: retrain the single best config")
    search.add_argument("--no-shap", dest="no_shap", action="store_true", help="skip attribution")

    shap = argparse.ArgumentParser(add_help=False)
    shap.add_argument("--exact", dest="exact", action="store_const", const=True,
                      help="exact Shapley enumeration regardless of feature count")
    shap.add_argument("--coalitions", type=int, help="sampled coalitions per instance")

    parser = argparse.ArgumentParser(prog="equityhpo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("features", parents=[common], help="write technical/fundamental feature CSVs")
    sub.add_parser("run", parents=[common, search, shap], help="run the experiment matrix")
    sub.add_parser("report", parents=[common], help="summarize a finished run directory")
    sub.add_parser("shap", parents=[common, shap], help="recompute attributions from saved models")
    return parser


def _load(args) -> "pipeline.RunConfig":
    overrides = {k: getattr(args, k, None) for k in
                 ("out", "seed", "jobs", "experiments", "features", "regularizers",
                  "sampler", "budget", "seeds", "epochs", "space", "per_seed_hpo")}
    cfg = load_config(args.config, overrides)
    if getattr(args, "no_shap", False):
        cfg.shap.enabled = False
    if getattr(args, "exact", None):
        cfg.shap.exact = True
    if getattr(args, "coalitions", None):
        cfg.shap.n_coalitions = args.coalitions
    return cfg.validate()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            out = Path(args.out or "results")
            report = pipeline.write_report(out)
            if not report["rows"]:
                log.warning("no finished cells under %s; wrote an empty summary", out)
            for gap in report["gaps"]:
                log.warning("missing cell %s", gap)
            _print_report(report)
            return EXIT_OK
        cfg = _load(args)
        out = Path(cfg.out)
        if args.command == "features":
            for path in pipeline.write_features(cfg, out):
                print(path)
            return EXIT_OK
        if args.command == "run":
            results = pipeline.run_all(cfg, out)
        else:
            results = pipeline.rerun_shap(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EquityHPOError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CELL_FAILED
    failed = [r for r in results if not r.ok]
    for r in results:
        print(f"{r.name}: {'ok' if r.ok else 'FAILED ' + str(r.error)}")
    return EXIT_CELL_FAILED if failed else EXIT_OK


def _print_report(report: dict) -> None:
    for row in report["rows"]:
        d = row["display"]
        print(f"{row['cell']}: R2_OS {d['r2_os']}  MSE_test {d['mse_test']}")


if __name__ == "__main__":
    sys.exit(main())
