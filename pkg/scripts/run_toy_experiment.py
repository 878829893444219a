#!/usr/bin/env python3
"""Run the self-contained tone-corpus experiment and print the report.

Example:
    python scripts/run_toy_experiment.py --seed 7 --out-dir runs/toy
"""

import argparse
import json
import logging
import pathlib
import sys

from xmodal_kws.experiment import (
    ToyExperimentConfig,
    config_as_json_dict,
    run_toy_experiment,
    summarize,
)
from xmodal_kws.metrics import report_to_csv, serialize_report
from xmodal_kws.train import export_loss_log


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--keywords", type=int, default=8)
    parser.add_argument("--utterances", type=int, default=20)
    parser.add_argument("--oov-keywords", type=int, default=2)
    parser.add_argument("--max-epochs", type=int, default=50)
    parser.add_argument("--patience", type=int, default=10)
    parser.add_argument("--dropout", type=float, default=0.0)
    parser.add_argument(
        "--out-dir", type=pathlib.Path, default=None,
        help="write report.json, report.csv, loss.csv, config.json here",
    )
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    if not args.quiet:
        logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = ToyExperimentConfig(
        rng_seed=args.seed,
        n_keywords=args.keywords,
        utterances_per_keyword=args.utterances,
        n_oov_keywords=args.oov_keywords,
        max_epochs=args.max_epochs,
        patience=args.patience,
        dropout_p=args.dropout,
    )
    result = run_toy_experiment(cfg)
    print(summarize(result))

    if args.out_dir is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / "report.json").write_text(serialize_report(result.report))
        (args.out_dir / "report.csv").write_text(report_to_csv(result.report))
        export_loss_log(result.train_result.history, args.out_dir / "loss.csv")
        (args.out_dir / "config.json").write_text(
            json.dumps(config_as_json_dict(cfg), indent=2, sort_keys=True) + "\n"
        )
        print("artifacts written to %s" % args.out_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
