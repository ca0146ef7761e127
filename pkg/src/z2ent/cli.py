"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 numeric failure
(non-convergence or a failed oracle check), 3 resource budget exceeded.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys

from .config import ConfigError, RunConfig, parse_value

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_BUDGET = 0, 1, 2, 3

COMMANDS = ("verify", "ground-es", "scan", "eh-fit", "quench", "scaling-fit")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="z2ent", description="Exact diagonalization of Z2 lattice gauge theory with entanglement cuts.")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", metavar="PATH")
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int)
        s.add_argument("--out", metavar="DIR")
        s.add_argument("--budget-gb", type=float)
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (dotted path, YAML value)")
        if name == "scaling-fit":
            s.add_argument("archive", nargs="?", help="quench output directory or spectra.csv")
    return p


def _overrides(args) -> dict:
    over = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        over[k.strip()] = parse_value(v)
    if args.seed is not None:
        over["seed"] = args.seed
        over["quench.seed"] = args.seed
    if args.threads is not None:
        over["threads"] = args.threads
    if args.out is not None:
        over["output"] = args.out
    if args.budget_gb is not None:
        over["budget_gb"] = args.budget_gb
    if getattr(args, "archive", None):
        over["analysis.scaling.archive"] = args.archive
    return over


def _set_threads(n: int | None):
    if not n:
        return
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _clean(o):
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    return o


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    from . import pipelines as pl
    from .spectra import BudgetExceeded, NonConvergence

    try:
        config = RunConfig.load(args.config, _overrides(args))
        _set_threads(config["threads"])
        out = config["output"]
        cmd = args.command
        if cmd == "verify":
            rep = pl.run_verify(config, out)
            summary = {"ok": rep.ok, "checks": rep.entries}
            print(json.dumps(_clean(summary), indent=2, default=str))
            return EXIT_OK if rep.ok else EXIT_NUMERIC
        if cmd == "ground-es":
            recs = pl.run_ground_es(config, out)
            summary = [{"epsilon": r.epsilon, "energy": r.energy, "entropy": r.entropy,
                        "schmidt_rank": r.schmidt_rank, "gap": r.gap} for r in recs]
        elif cmd == "scan":
            res = pl.run_scan(config, out)
            summary = {"epsilon_c": res.epsilon_c, "error": res.error, "window": list(res.window),
                       "gaps": dict(zip(res.scan.epsilons, res.scan.gaps))}
        elif cmd == "eh-fit":
            recs = pl.run_eh_fit(config, out)
            summary = [{"epsilon": r.epsilon, "entropy_exact": r.result.entropy_exact,
                        "entropy_variational": r.result.entropy_variational,
                        "relative_entropy": r.result.relative_entropy, "converged": r.result.converged,
                        "es_max_relative_deviation": float(r.es_deviation.max())} for r in recs]
            if not all(r.result.converged for r in recs):
                print(json.dumps(_clean(summary), indent=2))
                print("variational fit did not converge", file=sys.stderr)
                return EXIT_NUMERIC
        elif cmd == "quench":
            res = pl.run_quench(config, out)
            summary = {"beta": res.beta, "pooled_mean_ratio": res.pooled_ratio_mean,
                       "final_entropy": res.records[-1].entropy if res.records else None,
                       "thermal_entropy": res.thermal_entropy, "points": len(res.records)}
        else:
            res = pl.run_scaling_fit(config, out)
            summary = {"alpha": [res.alpha.value, res.alpha.error], "beta": [res.beta.value, res.beta.error],
                       "eps_t0": [res.t0.value, res.t0.error], "chi2_min": res.chi2_min, "flags": res.flags}
        print(json.dumps(_clean(summary), indent=2, default=str))
        return EXIT_OK
    except ConfigError as exc:
        print(f"z2ent: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BudgetExceeded, MemoryError) as exc:
        print(f"z2ent: resource budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except NonConvergence as exc:
        print(f"z2ent: numeric non-convergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"z2ent: {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main(argv=None):
    raise SystemExit(run(argv))


if __name__ == "__main__":
    main()
