"""Command-line entry point: ``hurdle-imdl {generate,train,evaluate,sigma-grid,compare}``.

Every subcommand reads a JSON experiment config (``--config``) and accepts
``--set key.sub=value`` overrides.  Exit codes: 0 success, 2 config error,
3 training divergence, 4 file or format failure.
"""
import argparse
import json
import os
import sys

from . import experiment, synthgen
from .errors import CheckpointError, ConfigError, DivergenceError, SplitMismatchError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4


def _config(args):
    if args.config is None:
        d = experiment.ExperimentConfig().to_dict()
        return experiment.ExperimentConfig.from_dict(experiment.apply_overrides(d, args.set))
    return experiment.load_config(args.config, args.set)


def cmd_generate(args):
    cfg = _config(args)
    ds = experiment.load_or_generate(cfg.dataset)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    synthgen.save_dataset(ds, args.out)
    sizes = ds.split_sizes()
    print(f"wrote {args.out}: " + ", ".join(f"{k}={v}" for k, v in sizes.items()))


def cmd_train(args):
    cfg = _config(args)
    rec = experiment.run(cfg)
    print(f"{cfg.label}: run directory {cfg.output_dir} ({rec.wall_clock:.1f} s)")
    top = rec.report.rows[-1]
    print(f"top grade {top.threshold:g}: ME={top.me} ETS={top.ets}")


def cmd_evaluate(args):
    report = experiment.evaluate(args.run_dir, dataset_path=args.dataset)
    out = args.out or args.run_dir
    os.makedirs(out, exist_ok=True)
    experiment.write_report(report, out, stem="evaluation")
    sys.stdout.write(report.to_csv())


def cmd_sigma_grid(args):
    cfg = _config(args)
    records = experiment.sigma_grid(cfg)
    for s, rec in zip(cfg.sigma_grid, records):
        top = rec.report.rows[-1]
        print(f"sigma={s:g}: top-grade ME={top.me} ETS={top.ets}")
    print(f"wrote {os.path.join(cfg.output_dir, 'sigma_grid.csv')}")


def cmd_compare(args):
    if not args.config:
        raise ConfigError("compare needs at least one --config")
    base = experiment.load_config(args.config[0], args.set)
    if args.methods:
        configs = []
        for m in args.methods:
            method, _, est = m.partition(":")
            d = base.to_dict()
            d.update(method=method, estimation=est or "single_model", name=m,
                     output_dir=os.path.join(args.out, m.replace(":", "-")))
            configs.append(experiment.ExperimentConfig.from_dict(d))
    else:
        configs = [experiment.load_config(p, args.set) for p in args.config]
    cmp = experiment.compare(configs, output_dir=args.out)
    sys.stdout.write(cmp.to_csv())


def build_parser():
    parser = argparse.ArgumentParser(prog="hurdle-imdl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, multi=False):
        if multi:
            p.add_argument("--config", action="append", default=[],
                           help="experiment config (repeatable)")
        else:
            p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. train.patience=3")

    p = sub.add_parser("generate", help="write the configured synthetic dataset")
    common(p)
    p.add_argument("--out", required=True, help="dataset file path")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one method and score it on the test split")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="re-score a saved run directory")
    p.add_argument("run_dir")
    p.add_argument("--dataset", help="score against this dataset file instead")
    p.add_argument("--out", help="directory for evaluation.csv/.json (default: run_dir)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sigma-grid", help="one run per sigma in config.sigma_grid")
    common(p)
    p.set_defaults(func=cmd_sigma_grid)

    p = sub.add_parser("compare", help="tabulate several methods on one test split")
    common(p, multi=True)
    p.add_argument("--methods", nargs="+",
                   help="method[:estimation] list derived from the first config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, SplitMismatchError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, CheckpointError, json.JSONDecodeError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
