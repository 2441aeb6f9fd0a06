"""Command line entry point: ``mmwave-cran {run,sweep,solve,compare} <config>``.

Outputs go to ``--out``, else ``$MMWAVE_CRAN_OUT``, else ``./out``.
Configuration errors exit with status 2.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace

from . import exact, harness
from ._accel import backend

EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmwave-cran", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="YAML experiment configuration")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help=f"output directory (default ${harness.OUT_ENV} or ./out)")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    r = common(sub.add_parser("run", help="simulate one policy"))
    r.add_argument("--policy", help="override the config policy")
    r.add_argument("--horizon", type=int, help="override the number of slots")
    r.add_argument("--warmup", type=int, help="override the warmup slots")
    s = common(sub.add_parser("sweep", help="grid over drop weight and arrival rate"))
    s.add_argument("--workers", type=int, help="worker processes (default from config)")
    s.add_argument("--horizon", type=int)
    s.add_argument("--warmup", type=int)
    v = common(sub.add_parser("solve", help="exact average-cost solution"))
    v.add_argument("--policy-table", action="store_true",
                   help="also write the optimal decision for every state")
    c = common(sub.add_parser("compare", help="all configured policies on shared seeds"))
    c.add_argument("--horizon", type=int)
    c.add_argument("--warmup", type=int)
    return p


def _config(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "horizon", None) is not None:
        changes["horizon"] = args.horizon
    if getattr(args, "warmup", None) is not None:
        changes["warmup"] = args.warmup
    if getattr(args, "policy", None):
        changes["policy"] = args.policy
    if changes:
        try:
            cfg = replace(cfg, **changes)
        except ValueError as exc:
            raise harness.ConfigError(str(exc)) from exc
    return cfg


def _summary(cfg, command: str, **extra) -> dict:
    return {"command": command, "seed": cfg.seed, "horizon": cfg.horizon,
            "warmup": cfg.burn_in, "backend": backend(), **extra}


def cmd_run(cfg, out):
    res = harness.run_experiment(cfg)
    harness.write_csv(out / "metrics.csv", [res.row()])
    files = ["metrics.csv"]
    if res.trace is not None:
        harness.write_trace(out / "trace.csv", res, cfg.trace.every)
        files.append("trace.csv")
    harness.write_json(out / "summary.json",
                       _summary(cfg, "run", policy=cfg.policy,
                                metrics=res.metrics.as_row(),
                                little_error=res.little_error, files=files))
    m = res.metrics
    print(f"{cfg.policy}: objective={m.objective:.4f} queue={m.avg_queue_len:.4f} "
          f"drops={m.avg_drop_rate:.4f}")


def cmd_sweep(cfg, out, workers):
    results = harness.run_sweep(cfg, workers)
    harness.write_csv(out / "sweep.csv", [r.row() for r in results])
    summary = harness.summarize(results)
    harness.write_csv(out / "sweep_summary.csv", summary)
    harness.write_json(out / "summary.json",
                       _summary(cfg, "sweep", points=harness.sweep_points(cfg),
                                summary=summary))
    for row in summary:
        print(f"{row['policy']:>10} gamma={row['drop_weight']:<6g} lam={row['lam']:<5g} "
              f"objective={row['objective_mean']:.4f} +- {row['objective_sem']:.4f}")


def cmd_compare(cfg, out):
    results = harness.compare(cfg)
    harness.write_csv(out / "compare.csv", [r.row() for r in results])
    summary = harness.summarize(results)
    harness.write_csv(out / "compare_summary.csv", summary)
    harness.write_json(out / "summary.json",
                       _summary(cfg, "compare", policies=list(cfg.compare),
                                summary=summary))
    for row in summary:
        print(f"{row['policy']:>10} objective={row['objective_mean']:.4f} "
              f"+- {row['objective_sem']:.4f}")


def cmd_solve(cfg, out, policy_table):
    t0 = time.perf_counter()
    sol = harness.solve_exact(cfg)
    elapsed = time.perf_counter() - t0
    payload = _summary(cfg, "solve", gain=sol.gain, residual=sol.residual,
                       iterations=sol.iterations, states=sol.model.indexer.size,
                       augment=sol.model.augment, seconds=elapsed)
    if policy_table:
        harness.write_csv(out / "policy.csv", harness.policy_table_rows(sol))
    harness.write_json(out / "solve.json", payload)
    print(f"nu={sol.gain:.6f} residual={sol.residual:.2e} iterations={sol.iterations} "
          f"states={sol.model.indexer.size}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        out = harness.output_dir(args.out)
        if args.command == "run":
            cmd_run(cfg, out)
        elif args.command == "sweep":
            cmd_sweep(cfg, out, args.workers)
        elif args.command == "compare":
            cmd_compare(cfg, out)
        else:
            cmd_solve(cfg, out, args.policy_table)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except exact.StateSpaceTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except exact.ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return 0


if __name__ == "__main__":
    sys.exit(main())
