"""Train surrogate dynamics and run filtered estimation case studies.

Exit codes: 0 success, 2 configuration or usage error, 3 stage failure.
The default output root is ``$NEURAL_FILTER_OUTPUT_ROOT`` (else ``./runs``);
each run writes to ``<root>/<run name>`` unless ``--out-dir`` is given.
"""

import argparse
import logging
import sys
from pathlib import Path

from neural_filter.errors import ConfigError, InvalidArgumentError, ModelFormatError, StageError
from neural_filter.experiments import config as config_mod
from neural_filter.experiments.runner import (
    RunSummary,
    compare_runs,
    default_output_root,
    format_report,
    run_pipeline,
)
from neural_filter.mlp import load_model

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def _add_run_flags(p):
    p.add_argument("config", help="config file path or preset name")
    p.add_argument("--seed-override", type=int, metavar="N", help="replace the data/init/train/noise seeds by N..N+3")
    p.add_argument("--out-dir", type=Path, help="write artifacts here instead of <output root>/<run name>")
    p.add_argument("--full-paper-scale", action="store_true", help="use the config's paper_n_samples")


def build_parser():
    parser = argparse.ArgumentParser(prog="neural-filter", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_run_flags(sub.add_parser("run", help="train, then run open-loop and filtered estimation"))
    _add_run_flags(sub.add_parser("train-only", help="generate data and train; write model and loss curves"))
    p = sub.add_parser("filter-only", help="estimate with an existing model file")
    _add_run_flags(p)
    p.add_argument("model", type=Path, help="model file written by run or train-only")
    p = sub.add_parser("compare", help="ratio report of two run summaries")
    p.add_argument("summary_a", type=Path)
    p.add_argument("summary_b", type=Path)
    sub.add_parser("presets", help="list shipped presets")
    return parser


def _resolve_config(args):
    cfg = config_mod.resolve(args.config)
    if args.full_paper_scale:
        cfg = cfg.at_paper_scale()
    if args.seed_override is not None:
        cfg = cfg.with_seed(args.seed_override)
    return cfg


def _out_dir(args, cfg):
    if args.out_dir is not None:
        return args.out_dir
    return default_output_root() / (cfg.output_dir or cfg.name)


def _report(summary, out_dir):
    print(f"{summary.name} ({summary.system}) -> {out_dir}")
    for key in (
        "final_train_loss",
        "final_val_loss",
        "filter_err_final_quarter",
        "open_loop_err_final_quarter",
        "max_trace_filter",
        "final_trace_open_loop",
        "open_loop_divergence_step",
    ):
        value = getattr(summary, key)
        if value is not None:
            print(f"  {key}: {value:.6g}" if isinstance(value, float) else f"  {key}: {value}")
    print(f"  wall_clock_s: {summary.wall_clock_s:.1f}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "presets":
            print("\n".join(config_mod.list_presets()))
            return EXIT_OK
        if args.command == "compare":
            a, b = RunSummary.load(args.summary_a), RunSummary.load(args.summary_b)
            print(format_report(compare_runs(a, b), a.name, b.name))
            return EXIT_OK

        cfg = _resolve_config(args)
        out_dir = _out_dir(args, cfg)
        model = None
        if args.command == "filter-only":
            try:
                model = load_model(args.model)
            except (OSError, ModelFormatError) as exc:
                raise ConfigError(f"cannot load model {args.model}: {exc}") from exc
        result = run_pipeline(cfg, out_dir, train_only=args.command == "train-only", model=model)
        _report(result.summary, out_dir)
        return EXIT_OK
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
