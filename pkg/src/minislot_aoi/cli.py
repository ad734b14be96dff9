"""Command line entry point: ``minislot-aoi {solve-single,sweep,simulate}``.

Exit codes: 0 ok, 2 invalid configuration, 3 infeasible, 4 internal error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import experiments as ex
from .config import load_config
from .errors import AllInfeasibleError, ConfigError, NoFeasiblePolicyError
from .policy_io import dumps_policy, load_policy
from .sampling import DROP_TOL, LambdaEntry

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_INTERNAL = 0, 2, 3, 4

log = logging.getLogger("minislot_aoi")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="INI experiment configuration")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.add_argument("--seed", type=int, help="base seed (overrides [simulation] seed)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for grid evaluations")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="minislot-aoi", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-single", help="solve the single-sensor problem and write a policy file")
    _common(p)
    p.add_argument("--lambda", dest="lam", type=float, help="fixed sampling rate; skips the rate search")
    p.add_argument("--refine-cliff", action="store_true", help="also write a grid table refined near the cliff")

    p = sub.add_parser("sweep", help="evaluate the schemes along one axis and write a CSV")
    _common(p)
    p.add_argument("--axis", choices=("lambda", "cmax", "snr", "n_sensors"), help="overrides [sweep] axis")
    p.add_argument("--refine-cliff", action="store_true", help="lambda axis: refine the cliff to 0.01")

    p = sub.add_parser("simulate", help="run the multi-sensor simulator over several seeds")
    _common(p)
    p.add_argument("--lambda", dest="lam", type=float, help="fixed sampling rate for every sensor")
    p.add_argument("--solve-first", action="store_true", help="solve the policy instead of loading one")
    p.add_argument("--policy", help="policy file (overrides [simulation] policy_file)")
    return parser


def cmd_solve_single(args, config) -> int:
    exp = ex.Experiment(config, jobs=args.jobs)
    out = ex.ArtifactWriter(config.output.dir)
    if config.sensor.lam is not None:
        entry = exp.at_rate(config.sensor.lam)
        if entry.policy is None:
            raise NoFeasiblePolicyError(entry.reason)
        mixed, method = entry.policy, "fixed"
        if not entry.feasible:
            log.warning("lambda=%.2f: %s", entry.lam, entry.reason)
    else:
        report = exp.optimal_rate()
        mixed, method = report.best.policy, "bisection"
        out.add("lambda_report.csv", ex.lambda_csv(report, config))
    if args.refine_cliff:
        out.add("lambda_grid.csv", ex.lambda_csv(exp.lambda_table(refine_cliff=True), config))
    ev = exp.evaluator()
    out.add("policy.json", dumps_policy(mixed, ev.params, config.solver, config.as_dict()))
    out.add("summary.csv", ex.summary_csv(mixed, method, config))
    out.commit()
    print(f"lambda*={mixed.lam:.2f} avg_aoi={mixed.avg_aoi:.4f} avg_cost={mixed.avg_cost:.4f} "
          f"theta={mixed.theta:.4f}")
    return EXIT_OK


def cmd_sweep(args, config) -> int:
    axis = args.axis or config.sweep.axis
    if axis is None:
        raise ConfigError("no sweep axis given")
    exp = ex.Experiment(config, jobs=args.jobs)
    out = ex.ArtifactWriter(config.output.dir)
    if axis == "lambda" and args.refine_cliff:
        out.add("lambda_grid.csv", ex.lambda_csv(exp.lambda_table(refine_cliff=True), config))
    rows = exp.sweep(axis)
    out.add(f"sweep_{axis}.csv", ex.sweep_csv(rows, config))
    out.commit()
    print(f"{len(rows)} rows written to {config.output.dir}")
    return EXIT_OK


def cmd_simulate(args, config) -> int:
    sim = config.simulation
    exp = ex.Experiment(config, jobs=args.jobs)
    out = ex.ArtifactWriter(config.output.dir)
    n = sim.n_sensors
    policy_path = args.policy or sim.policy_file
    if sim.sampling == "fixed":
        entry = exp.at_rate(ex.FIXED_LAMBDA)
    elif args.solve_first:
        entry = exp.scheme_entry("proposed", n, config.sensor.lam)
    elif policy_path:
        mixed, params, _ = load_policy(policy_path)
        if params != config.system.params():
            raise ConfigError("policy file was solved for different system parameters")
        if mixed.cfg.q_max != config.sensor.q_max or (
                config.sensor.lam is not None and abs(mixed.lam - config.sensor.lam) > 1e-9):
            raise ConfigError("policy file does not match the [sensor] section")
        entry = entry_from_policy(mixed)
    else:
        raise ConfigError("no policy file given; pass --policy or --solve-first")
    if not entry.feasible:
        raise NoFeasiblePolicyError(f"lambda={entry.lam:.2f}: {entry.reason}")
    if args.solve_first:
        out.add("policy.json", dumps_policy(entry.policy, exp.evaluator().params, config.solver,
                                            config.as_dict()))
    reports = exp.simulate(entry, sim.scheduler, n, record_trace=config.output.trace)
    extra = {"lambda": entry.lam, "theta": entry.theta}
    for r in reports:
        out.add(f"report_seed{r.seed}.json", ex.report_json(r, config, extra))
        if config.output.trace:
            out.add(f"trace_seed{r.seed}.csv", r.trace_csv(n))
    out.add("aggregate.json", ex.aggregate_json(reports, config, extra))
    out.commit()
    maoi, se = ex.aggregate(reports)
    print(f"MAoI={maoi:.4f} +- {se:.4f} over {len(reports)} seeds (lambda={entry.lam:.2f})")
    return EXIT_OK


def entry_from_policy(mixed) -> LambdaEntry:
    """Wrap a loaded policy as a rate entry."""
    cfg = mixed.cfg
    ok = mixed.drop_rate <= DROP_TOL
    return LambdaEntry(cfg.rate_units, cfg.rate_scale, ok,
                       avg_aoi=mixed.avg_aoi, avg_cost=mixed.avg_cost, theta=mixed.theta,
                       drop_rate=mixed.drop_rate, policy=mixed,
                       reason="" if ok else "stored policy overflows its queue")


COMMANDS = {"solve-single": cmd_solve_single, "sweep": cmd_sweep, "simulate": cmd_simulate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        config = ex.with_overrides(config, seed=args.seed, lam=getattr(args, "lam", None), out=args.out)
        return COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NoFeasiblePolicyError, AllInfeasibleError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
