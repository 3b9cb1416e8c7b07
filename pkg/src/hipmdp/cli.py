"""Command-line entry point: ``hipmdp <subcommand> ...``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys

import numpy as np

from .errors import ConfigError, HipMdpError, InvalidInputError, ModelFormatError, NumericalError

log = logging.getLogger("hipmdp")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"ERROR: {message}\n")
        raise SystemExit(EXIT_CONFIG)


def _add_config(p, seed=True):
    p.add_argument("--config", required=True, help="TOML experiment configuration")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a configuration key (repeatable), e.g. gibbs.iterations=50")
    p.add_argument("--paper-scale", action="store_true",
                   help="use the published support size, chain counts and trial counts")
    if seed:
        p.add_argument("--seed", type=int, required=True, help="random seed (mandatory)")


def build_parser():
    parser = _Parser(prog="hipmdp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="collect Sarsa trajectories for each training setting")
    _add_config(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("fit", help="select support points, project batches, run the sampler")
    _add_config(p)
    p.add_argument("--data", required=True, help="directory written by gen-data")
    p.add_argument("--out", required=True, help="model file to write")

    p = sub.add_parser("eval-regression", help="compare one-step prediction methods")
    _add_config(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report CSV")

    p = sub.add_parser("eval-control", help="learning curves for the three planning agents")
    _add_config(p)
    p.add_argument("--model", required=True)
    p.add_argument("--average",
                   help="average-model file (default: <model stem>_average<suffix>)")
    p.add_argument("--out", required=True, help="learning-curve CSV")

    p = sub.add_parser("filter-demo", help="filter a new instance's weights step by step")
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--setting", required=True, help="parameter setting, e.g. 0.2,0.5")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--out", help="CSV path (default: standard output)")

    p = sub.add_parser("inspect-model", help="summarize a model file")
    p.add_argument("model")
    return parser


def _config(args):
    from .harness import load_config

    cfg = load_config(args.config, args.set)
    return cfg.paper_scale() if args.paper_scale else cfg


def cmd_gen_data(args):
    from .harness import gen_data

    cfg = _config(args)
    gen_data(cfg, args.seed, args.out)


def cmd_fit(args):
    from .harness import fit_model, load_batches, write_fit_outputs

    cfg = _config(args)
    batches = load_batches(args.data)
    fit = fit_model(cfg, batches, args.seed)
    write_fit_outputs(cfg, fit, batches, args.seed, args.out)
    log.info("model with K=%d written to %s", fit.model.K, args.out)


def _model_domain_check(cfg, model):
    dom = model.meta.get("domain")
    if dom is not None and dom != cfg.domain:
        raise ConfigError(f"model was fit on {dom!r} but the config domain is {cfg.domain!r}")


def cmd_eval_regression(args):
    from .harness import eval_regression, load_batches, write_regression_report
    from .model import load_model

    cfg = _config(args)
    model = load_model(args.model)
    _model_domain_check(cfg, model)
    report = eval_regression(cfg, model, load_batches(args.data), args.seed)
    write_regression_report(args.out, report, cfg, args.seed)


def cmd_eval_control(args):
    from .harness import average_path, eval_control, write_learning_curves
    from .model import load_model

    cfg = _config(args)
    model = load_model(args.model)
    _model_domain_check(cfg, model)
    avg = load_model(args.average or average_path(args.model))
    rows = eval_control(cfg, model, avg, args.seed)
    write_learning_curves(args.out, rows, cfg, args.seed)


def cmd_filter_demo(args, out=None):
    from .control import FourierValueFn, default_sarsa, sarsa_episode
    from .envs import make_domain
    from .filtering import OnlineFilter
    from .model import load_model

    model = load_model(args.model)
    domain_name = model.meta.get("domain")
    if domain_name is None:
        raise ConfigError("model file does not record its domain")
    try:
        setting = tuple(float(v) for v in args.setting.split(","))
    except ValueError:
        raise ConfigError(f"bad --setting {args.setting!r}") from None
    domain = make_domain(domain_name, setting)
    rng = np.random.default_rng(args.seed)
    filt = OnlineFilter(model)
    trace = [(0, filt.weights().w)]
    cfg = default_sarsa(domain_name)
    fn = FourierValueFn.for_domain(domain, 3 if domain_name == "cartpole" else 5)

    def observe(t):
        if len(trace) <= args.steps:
            filt.observe(t)
            trace.append((len(trace), filt.weights().w))

    while len(trace) <= args.steps:
        sarsa_episode(domain, fn, cfg, rng, observer=observe)
    fh = out or (open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", *[f"w{k + 1}" for k in range(model.K)], "config_hash", "seed"])
        tag = model.meta.get("config_hash", "")
        for step, weights in trace:
            w.writerow([step, *[repr(float(v)) for v in weights], tag, args.seed])
    finally:
        if args.out and out is None:
            fh.close()


def cmd_inspect_model(args, out=None):
    from .model import load_model

    out = out or sys.stdout
    model = load_model(args.model)
    print(f"K = {model.K}", file=out)
    print(f"support points = {model.support.size}, state dim = {model.dim}, "
          f"actions = {list(model.actions)}", file=out)
    print("active features per (action, output):", file=out)
    for ai, a in enumerate(model.actions):
        counts = [int(model.z[:, ai, j].sum()) for j in range(model.dim)]
        print(f"  a={a}: {counts}", file=out)
    print("weight-mean posteriors (feature: mean, var):", file=out)
    print("  w1: fixed at 1", file=out)
    for k in range(1, model.K):
        print(f"  w{k + 1}: {model.mu_mean[k - 1]:.6g}, {model.mu_var[k - 1]:.6g}", file=out)
    if "config_hash" in model.meta:
        print(f"config_hash = {model.meta['config_hash']}, seed = {model.meta.get('seed')}",
              file=out)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "fit": cmd_fit,
    "eval-regression": cmd_eval_regression,
    "eval-control": cmd_eval_control,
    "filter-demo": cmd_filter_demo,
    "inspect-model": cmd_inspect_model,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s: %(message)s",
                        level=logging.WARNING - 10 * min(args.verbose, 2))
    try:
        COMMANDS[args.command](args)
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (ConfigError, InvalidInputError, ModelFormatError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        log.error("file not found: %s", exc.filename)
        return EXIT_CONFIG
    except HipMdpError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
