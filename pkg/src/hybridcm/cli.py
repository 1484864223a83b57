"""Command line entry point: ``hybridcm <verb> [--config FILE] [--seed N]``."""
import argparse
import json
import sys
from datetime import datetime, timezone

from .config import ROOT_ENV, ConfigError, load_config
from .experiment import ExperimentError, Pipeline, summarize


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON config file (nested keys)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--root", help=f"output root (else ${ROOT_ENV}, else the config value)")
    common.add_argument("--reduced", action="store_true",
                        help="reduced profile: 3 training runs per class, 500 samples")
    common.add_argument("-q", "--quiet", action="store_true")

    p = argparse.ArgumentParser(prog="hybridcm", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate (or load) the run dataset")
    f = sub.add_parser("features", parents=[common], help="fit surrogates and write feature CSVs")
    f.add_argument("--preset", action="append", help="preset to write (repeatable; default all)")
    sub.add_parser("train", parents=[common], help="train member models for every preset")
    sub.add_parser("ensemble", parents=[common], help="fit ensembles for every representation")
    sub.add_parser("conformal", parents=[common], help="conformal sweep tables")
    r = sub.add_parser("report", parents=[common], help="metrics.json, tables and charts")
    r.add_argument("--show-config", action="store_true", help="print the effective config and exit")
    sub.add_parser("all", parents=[common], help="run every stage")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        cfg = load_config(args.config, reduced=args.reduced, overrides=overrides)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if getattr(args, "show_config", False):
        print(cfg.dump(), end="")
        return 0

    log = (lambda m: None) if args.quiet else (lambda m: print(m, file=sys.stderr, flush=True))
    started = datetime.now(timezone.utc).isoformat()
    pipe = Pipeline(cfg, log, args.root)
    try:
        if args.verb == "simulate":
            ds = pipe.dataset
            print(f"{len(ds.runs)} runs in {pipe.data_dir}")
        elif args.verb == "features":
            params = pipe.surrogates
            print(json.dumps(params.to_dict(), indent=1))
            for path in pipe.write_features(args.preset):
                print(path)
        elif args.verb == "train":
            for preset in pipe.all_presets():
                pipe.members(preset)
            print(f"models in {pipe.out / 'models'}")
        elif args.verb == "ensemble":
            for rep in pipe.representations():
                ens = pipe.result(rep)["report"]["ensembles"]
                print(f"{rep:>13}: " + "  ".join(f"{m}={v['accuracy']:.4f}" for m, v in ens.items()))
        elif args.verb == "conformal":
            rows = pipe.conformal_rows()
            for r in rows:
                print(f"{r['representation']:>13} {r['method']:>12} alpha={r['alpha']:<5} "
                      f"coverage={r['coverage']:.4f} avg_size={r['avg_size']:.4f} empty={r['empty_count']}")
        else:
            out = pipe.report()
            print(summarize(out["metrics"]))
            print(f"artifacts: {pipe.out}")
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    pipe.write_run_info(started)
    return 0


if __name__ == "__main__":
    sys.exit(main())
