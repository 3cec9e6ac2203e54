"""Command line entry point: ``tilescope <command> [options]``.

Every command prints a JSON report (or writes it to ``--out``), can write the
plot series to ``--csv`` and exits with status 0 exactly when every pass
flag in the report is true.
"""

from __future__ import annotations

import argparse
import inspect
import json
import sys

from . import harness
from .errors import TilescopeError


def _usage_error(message: str):
    print(f"tilescope: error: {message}", file=sys.stderr)
    raise SystemExit(2)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _load_config(args) -> dict:
    cfg = {}
    if args.config:
        with open(args.config) as fh:
            cfg.update(json.load(fh))
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            _usage_error(f"--set expects key=value, got {item!r}")
        cfg[key.strip()] = _parse_value(value)
    for key, value in vars(args).items():
        if key in ("command", "config", "set", "out", "csv", "func") or value is None:
            continue
        cfg[key.replace("-", "_")] = value
    return cfg


def _call(fn, cfg: dict):
    params = inspect.signature(fn).parameters
    unknown = set(cfg) - set(params)
    if unknown:
        _usage_error(f"unknown options for this command: {sorted(unknown)}")
    return fn(**cfg)


def _experiment_config(cfg: dict) -> harness.ExperimentConfig:
    extra = {k: cfg.pop(k) for k in ("octave_count",) if k in cfg}
    try:
        conf = harness.ExperimentConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        _usage_error(f"invalid config: {exc}")
    return conf, extra


def cmd_bht_check(cfg):
    return _call(harness.forms_checks, cfg)


def cmd_whitney_check(cfg):
    return _call(harness.whitney_checks, cfg)


def cmd_tree_demo(cfg):
    report = _call(harness.tree_demo, cfg)
    for step in report.constants["trace"]:
        print(f"{step['kind']:>16}  top={step['top']:<4d} j={step['j']}  members={step['size']}", file=sys.stderr)
    return report


def cmd_rwt_sweep(cfg):
    conf, _ = _experiment_config(cfg)
    return harness.rwt_experiment(conf)


def cmd_pipeline(cfg):
    conf, extra = _experiment_config(cfg)
    count = int(extra.get("octave_count", 1))
    reports = [harness.discretized_pipeline(conf, s) for s in range(count)]
    out = reports[0]
    if count > 1:
        worst = [r.constants["max_bucket_ratio"] for r in reports]
        for r in reports[1:]:
            out.series.extend(r.series)
            out.flags = {k: out.flags[k] and r.flags[k] for k in out.flags}
        out.constants["max_bucket_ratio_by_octave"] = worst
        out.constants["total_ratio_by_octave"] = [r.constants["total_ratio"] for r in reports]
        out.runtimes["total"] = sum(r.runtimes["total"] for r in reports)
    return out


def cmd_region(cfg):
    alpha = harness.ExponentTuple.parse(cfg["alpha"])
    k = int(cfg.get("k", 1))
    n = int(cfg.get("n", alpha.n))
    fast = harness.region_q_member(alpha, n, k)
    brute = harness.region_q_member_bruteforce(alpha, n, k)
    report = harness.ExperimentReport("region", {"alpha": str(alpha), "n": n, "k": k})
    report.constants = {"classification": harness.tuple_classify(alpha), "region_member": fast,
                        "bruteforce_member": brute}
    if alpha.admissible():
        report.constants["theta"] = [str(t) for t in harness.theta_from_alpha(alpha, k)]
    report.flags = {"admissible": alpha.admissible(), "region_member": fast, "paths_agree": fast == brute}
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tilescope", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file with options")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one option (JSON value)")
        p.add_argument("--out", help="write the JSON report here instead of stdout")
        p.add_argument("--csv", help="write the plot series (scale_octave, ratio, bucket) here")
        p.set_defaults(func=func)
        return p

    p = add("bht-check", cmd_bht_check, "product, plane-wave, principal value and duality checks")
    p.add_argument("--M", "--size", dest="size", type=int, help="grid size")
    p.add_argument("--B", dest="pv_band", type=int, help="band limit for the principal value comparison")
    p.add_argument("--trials", dest="pairs", type=int, help="random pairs per check")
    p.add_argument("--seed", type=int)

    p = add("whitney-check", cmd_whitney_check, "covering cubes, Whitney bands, partition reconstruction")
    p.add_argument("--covers", type=int)
    p.add_argument("--seed", type=int)

    p = add("tree-demo", cmd_tree_demo, "one tree selection with exhaustive verification")
    p.add_argument("--m", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--c1", type=int)
    p.add_argument("--window", type=float)

    p = add("rwt-sweep", cmd_rwt_sweep, "restricted weak-type ratios over a rescaling sweep")
    p.add_argument("--alpha")
    p.add_argument("--trials", type=int)
    p.add_argument("--octaves", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true", default=None, help="run even outside the admissible region")

    p = add("pipeline", cmd_pipeline, "bucketed model sums against the discretised bound")
    p.add_argument("--alpha")
    p.add_argument("--seed", type=int)
    p.add_argument("--octave-count", dest="octave_count", type=int)

    p = add("region", cmd_region, "classify an exponent tuple and test region membership")
    p.add_argument("--alpha", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--n", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = _load_config(args)
    try:
        report = args.func(cfg)
    except TilescopeError as exc:
        print(f"tilescope {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    text = report.dumps()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    if args.csv:
        report.write_csv(args.csv)
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
