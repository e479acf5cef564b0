"""Command line: ``run``, ``verify`` and ``report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import theory
from .report import ReportError, render_report
from .runner import ConfigError, RunConfig, run_experiment

log = logging.getLogger("entropy_lab")

SUITES = ("lemma1", "thm1", "thm2")
# fraction of random nonlinear cases whose residual ratio must land in band
THM2_MIN_PASS_FRACTION = 0.9


def _summarize(name, reports, min_fraction=1.0):
    passed = sum(r.passed for r in reports)
    return {
        "suite": name,
        "cases": len(reports),
        "passed": passed,
        "pass": bool(reports) and passed >= min_fraction * len(reports),
        "reports": [r.to_dict() for r in reports],
    }


def _guarded(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except Exception as exc:  # reported, not raised
        log.exception("suite %s crashed", name)
        return {"suite": name, "cases": 0, "passed": 0, "pass": False,
                "error": f"{type(exc).__name__}: {exc}", "reports": []}


def run_verifier(suite="all", seed=0, lr=None, cases=None, omega_sign=1.0) -> dict:
    """Run the verification suites; ``omega_sign=-1`` is a fault-injection hook."""
    chosen = SUITES if suite == "all" else (suite,)
    results = []
    if "lemma1" in chosen:
        results.append(_guarded("lemma1", lambda: _summarize(
            "lemma1", theory.lemma1_suite(cases or 100, seed))))
    if "thm1" in chosen:
        results.append(_guarded("thm1", lambda: _summarize(
            "thm1", theory.theorem1_suite(cases or 50, seed, lr=0.1 if lr is None else lr,
                                          omega_sign=omega_sign))))
    if "thm2" in chosen:
        step = 1e-3 if lr is None else lr
        results.append(_guarded("thm2", lambda: _summarize(
            "thm2", theory.theorem2_suite(cases or 50, seed, lr=step, omega_sign=omega_sign),
            THM2_MIN_PASS_FRACTION)))
        results.append(_guarded("thm2_linear", lambda: _summarize(
            "thm2_linear", theory.theorem2_suite(cases or 50, seed, lr=step, linear=True,
                                                 omega_sign=omega_sign))))
    return {"pass": all(r["pass"] for r in results), "suites": results}


def cmd_run(args) -> int:
    try:
        cfg = RunConfig.load(args.config).with_seed_offset(args.seed_offset)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    start = time.time()
    results = run_experiment(cfg, workers=args.workers)
    for r in results:
        last = r.records[-1]
        print(f"{r.label:>12} seed {r.seed:<4} {r.status:<9} step {last.step:>8} "
              f"value {last.value:+.4f} H_state {last.entropy_state:.4f} "
              f"H_marginal {last.entropy_marginal:.4f}")
    print(f"wrote {cfg.output_dir} in {time.time() - start:.1f}s")
    return 0 if all(r.status == "completed" for r in results) else 1


def cmd_verify(args) -> int:
    result = run_verifier(args.suite, args.seed, args.lr, args.cases,
                          -1.0 if args.corrupt_omega_sign else 1.0)
    text = json.dumps(result, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    for s in result["suites"]:
        status = "PASS" if s["pass"] else "FAIL"
        extra = f" ({s['error']})" if "error" in s else ""
        print(f"{status} {s['suite']}: {s['passed']}/{s['cases']}{extra}")
    if not args.out:
        print(text)
    return 0 if result["pass"] else 1


def cmd_report(args) -> int:
    try:
        info = render_report(args.input, args.out)
    except ReportError as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return 2
    for f in info["files"]:
        print(f)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="entropy-lab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train agents and write metrics CSVs")
    r.add_argument("--config", required=True)
    r.add_argument("--seed-offset", type=int, default=0, help="add to every configured seed")
    r.add_argument("--workers", type=int, default=None,
                   help="parallel runs (default: $ENTROPY_LAB_THREADS or 1)")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="check the closed-form update rules numerically")
    v.add_argument("--suite", choices=(*SUITES, "all"), default="all")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--lr", type=float, default=None,
                   help="step size for thm1/thm2 (defaults 0.1 and 1e-3)")
    v.add_argument("--cases", type=int, default=None)
    v.add_argument("--out", default=None, help="write the JSON report here")
    v.add_argument("--corrupt-omega-sign", action="store_true", help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)

    rep = sub.add_parser("report", help="render SVG charts and summary tables")
    rep.add_argument("--input", required=True)
    rep.add_argument("--out", required=True)
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
