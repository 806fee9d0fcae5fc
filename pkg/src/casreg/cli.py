"""Command-line front end.

Subcommands:

* `run`: execute one scenario at one seed, optionally writing the trace and
  a check report.
* `sweep`: execute a seed range, aggregate verdicts, and emit a plot-data
  table (one row per seed).
* `check`: re-run checkers over a previously written trace.
* `enumerate`: exhaustively explore a tiny scenario's interleavings.

Exit codes: 0 all checks pass; 1 a checker failed; 2 configuration or input
error; 3 run truncated with all checks passing (inconclusive).  When several
apply, the strongest wins: 2 over 1 over 3.

Every flag can be preset via an environment variable with the `CASREG_`
prefix (for example `CASREG_PARALLEL=8`); an explicit flag wins.  Reports
contain no wall-clock data unless `--timing` is given, which writes elapsed
time to stderr only, keeping stdout byte-deterministic.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import multiprocessing
import os
import sys
import time

from .base import ConfigError
from .core import HistoryError, History, point_contention, read_trace, write_trace
from .sim import Scenario, load_scenario, run_scenario
from .verify import (
    CHECK_FUNCTIONS,
    DEFAULT_CHECKS,
    CheckReport,
    exhaustive_check,
    project_hl,
    resource_consumption,
    run_checks,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_INCONCLUSIVE = 3


def _env(name: str) -> str | None:
    return os.environ.get("CASREG_" + name.upper().replace("-", "_"))


def _parse_checks(text: str | None, scenario: Scenario | None = None):
    if text:
        tokens = tuple(t.strip() for t in text.split(",") if t.strip())
        for t in tokens:
            if t not in CHECK_FUNCTIONS:
                raise ConfigError(
                    f"unknown check {t!r}; known: "
                    f"{', '.join(sorted(CHECK_FUNCTIONS))}"
                )
        return tokens
    checks = list(DEFAULT_CHECKS)
    if scenario is not None and scenario.policy == "covering":
        checks.append("covering")
    return tuple(checks)


def _apply_overrides(sc: Scenario, args) -> Scenario:
    changes = {}
    if getattr(args, "budget", None) is not None:
        if args.budget < 1:
            raise ConfigError("--budget must be positive")
        changes["step_budget"] = args.budget
    if getattr(args, "fairness_bound", None) is not None:
        if args.fairness_bound < 1:
            raise ConfigError("--fairness-bound must be at least 1")
        changes["fairness_bound"] = args.fairness_bound
    return dataclasses.replace(sc, **changes) if changes else sc


def _max_pntcont(h: History) -> int:
    ops = project_hl(h)
    return max((point_contention(h, o.id) for o in ops), default=0)


def _report_exit(report: CheckReport) -> int:
    if not report.ok:
        return EXIT_CHECK_FAILED
    if report.truncated:
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    sc = _apply_overrides(sc, args)
    seed = args.seed if args.seed is not None else sc.seed
    checks = _parse_checks(args.checks, sc)
    h = run_scenario(sc, seed)
    if args.trace:
        write_trace(h, args.trace)
    report = run_checks(h, checks)
    header = (
        f"scenario {sc.name} digest {sc.materialize(seed).digest()} "
        f"seed {seed}\n"
        f"algorithm {sc.algorithm} n {sc.n} f {sc.f} k {sc.k}\n"
        f"truncated {h.truncated}\n"
    )
    if args.json:
        doc = report.to_json()
        doc["scenario"] = sc.name
        doc["seed"] = seed
        doc["digest"] = sc.materialize(seed).digest()
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    else:
        text = header + report.render_text()
    _emit(text, args.report)
    if args.report:
        print(f"report written to {args.report}")
    return _report_exit(report)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def _parse_seed_range(text: str) -> range:
    if ".." not in text:
        raise ConfigError("--seeds must look like a..b (inclusive)")
    a, _, b = text.partition("..")
    try:
        lo, hi = int(a), int(b)
    except ValueError as exc:
        raise ConfigError(f"bad seed range {text!r}") from exc
    if hi < lo:
        raise ConfigError(f"empty seed range {text!r}")
    return range(lo, hi + 1)


def _sweep_one(task) -> dict:
    path, seed, checks, budget, fairness = task
    sc = load_scenario(path)
    ns = argparse.Namespace(budget=budget, fairness_bound=fairness)
    sc = _apply_overrides(sc, ns)
    h = run_scenario(sc, seed)
    report = run_checks(h, checks)
    bounds = next(
        (r for r in report.results if r.name == "bounds" and r.metrics), None
    )
    return {
        "seed": seed,
        "k": sc.k,
        "f": sc.f,
        "algorithm": sc.algorithm,
        "resource": resource_consumption(h),
        "pntcont": bounds.metrics["max_pntcont"] if bounds else _max_pntcont(h),
        "max_failed_cas": bounds.metrics["max_failed_cas"] if bounds else 0,
        "ok": report.ok,
        "truncated": h.truncated,
        "failed_checks": [r.name for r in report.results if not r.ok],
    }


def cmd_sweep(args) -> int:
    sc = load_scenario(args.scenario)  # fail fast on bad scenarios
    checks = _parse_checks(args.checks, sc)
    seeds = _parse_seed_range(args.seeds)
    tasks = [
        (args.scenario, s, checks, args.budget, args.fairness_bound)
        for s in seeds
    ]
    par = args.parallel or 0
    if par > 1:
        with multiprocessing.Pool(par) as pool:
            rows = list(pool.imap(_sweep_one, tasks, chunksize=8))
    else:
        rows = [_sweep_one(t) for t in tasks]

    lines = []
    failures = [r for r in rows if not r["ok"]]
    truncs = [r for r in rows if r["truncated"]]
    lines.append(
        f"sweep {sc.name}: {len(rows)} runs, {len(rows) - len(failures)} pass, "
        f"{len(failures)} fail, {len(truncs)} truncated"
    )
    if failures:
        for r in failures[:5]:
            lines.append(
                f"  seed {r['seed']} failed: {', '.join(r['failed_checks'])}"
            )
    lines.append("# plot-data")
    lines.append("k f algorithm resource_consumption pntcont max_failed_cas seed")
    for r in rows:
        lines.append(
            f"{r['k']} {r['f']} {r['algorithm']} {r['resource']} "
            f"{r['pntcont']} {r['max_failed_cas']} {r['seed']}"
        )
    _emit("\n".join(lines) + "\n", args.report)
    if failures:
        return EXIT_CHECK_FAILED
    if truncs:
        return EXIT_INCONCLUSIVE
    return EXIT_OK


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------


def cmd_check(args) -> int:
    h = read_trace(args.trace)
    if args.checks:
        checks = _parse_checks(args.checks)
    else:
        checks = list(DEFAULT_CHECKS)
        if (h.adversary_report or {}).get("policy") == "covering":
            checks.append("covering")
        checks = tuple(checks)
    report = run_checks(h, checks)
    _emit(report.render_text(), args.report)
    return _report_exit(report)


# ---------------------------------------------------------------------------
# enumerate
# ---------------------------------------------------------------------------


def cmd_enumerate(args) -> int:
    sc = load_scenario(args.scenario)
    res = exhaustive_check(
        sc,
        include_crashes=args.crashes,
        granularity=args.granularity,
        depth_bound=args.depth_bound,
        max_states=args.max_states,
    )
    print(res.summary())
    for v in res.violations[:5]:
        print(f"  violation: {v}")
    if res.verdict == "fail":
        return EXIT_CHECK_FAILED
    if res.verdict == "partial":
        return EXIT_INCONCLUSIVE
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="casreg",
        description="simulate and verify register emulations over "
                    "crash-prone servers",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_seed=True):
        sp.add_argument(
            "--scenario", required=_env("scenario") is None,
            default=_env("scenario"),
            help="scenario file path, or builtin:<name>",
        )
        if with_seed:
            sp.add_argument(
                "--seed", type=int,
                default=int(e) if (e := _env("seed")) else None,
            )
        sp.add_argument("--report", default=_env("report"),
                        help="write the report here instead of stdout")
        sp.add_argument(
            "--budget", type=int,
            default=int(e) if (e := _env("budget")) else None,
            help="override the scenario step budget",
        )
        sp.add_argument(
            "--fairness-bound", type=int,
            default=int(e) if (e := _env("fairness_bound")) else None,
            help="override the fairness deferral bound",
        )
        sp.add_argument("--timing", action="store_true",
                        help="print elapsed wall time to stderr")

    runp = sub.add_parser("run", help="run one scenario at one seed")
    common(runp)
    runp.add_argument("--trace", default=_env("trace"),
                      help="write the JSONL trace here")
    runp.add_argument("--checks", default=_env("checks"),
                      help="comma-separated checker names")
    runp.add_argument("--json", action="store_true",
                      help="machine-readable report")
    runp.set_defaults(fn=cmd_run)

    sweepp = sub.add_parser("sweep", help="run a seed range")
    common(sweepp, with_seed=False)
    sweepp.add_argument(
        "--seeds", required=_env("seeds") is None, default=_env("seeds"),
        help="inclusive seed range a..b",
    )
    sweepp.add_argument(
        "--parallel", type=int,
        default=int(e) if (e := _env("parallel")) else None,
        help="worker processes",
    )
    sweepp.add_argument("--checks", default=_env("checks"))
    sweepp.set_defaults(fn=cmd_sweep)

    checkp = sub.add_parser("check", help="re-check a written trace")
    checkp.add_argument(
        "--trace", required=_env("trace") is None, default=_env("trace"),
        help="JSONL trace to verify",
    )
    checkp.add_argument("--checks", default=_env("checks"))
    checkp.add_argument("--report", default=_env("report"))
    checkp.add_argument("--timing", action="store_true")
    checkp.set_defaults(fn=cmd_check)

    enump = sub.add_parser(
        "enumerate", help="exhaustively explore a tiny scenario"
    )
    enump.add_argument(
        "--scenario", required=_env("scenario") is None,
        default=_env("scenario"),
    )
    enump.add_argument("--crashes", action="store_true",
                       help="also inject up to f crashes at every point")
    enump.add_argument(
        "--granularity", choices=("op", "step"),
        default=_env("granularity") or "op",
        help="schedule whole base-object operations, or effects and "
             "responses separately",
    )
    enump.add_argument(
        "--depth-bound", type=int,
        default=int(e) if (e := _env("depth_bound")) else 500,
    )
    enump.add_argument(
        "--max-states", type=int,
        default=int(e) if (e := _env("max_states")) else 2_000_000,
    )
    enump.add_argument("--timing", action="store_true")
    enump.set_defaults(fn=cmd_enumerate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    started = time.monotonic()
    try:
        code = args.fn(args)
    except (ConfigError, HistoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    if getattr(args, "timing", False):
        print(f"elapsed {time.monotonic() - started:.3f}s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
