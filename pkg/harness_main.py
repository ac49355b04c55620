# harness_main.py

import argparse
import logging
import sys
from fractions import Fraction

from analysis import (
    AnalysisError,
    alpha_confirm_threshold,
    blockdepth_curve,
    branch_curve,
    flux_table,
    frontier,
    max_branches,
    min_blockdepth,
)
from committee import FaultProfile, consensus_tolerated, tolerating_thresholds
from config import EXIT_FAILED, EXIT_OK, EXIT_SCENARIO, EXIT_USAGE, EXIT_VIOLATION
from records_handler import (
    out_dir,
    write_chain_dump,
    write_json_lines,
    write_run_rows,
    write_table,
    write_trace,
)
from scenario import ScenarioError, load_scenario
from sim_runner import run_batch
from suites import SUITES, run_suite
from utils import as_fraction, parse_seeds

logger = logging.getLogger(__name__)


class UsageParser(argparse.ArgumentParser):
    """argparse with the usage-error exit status of this tool."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = UsageParser(prog="harness_main.py", description="Accountable consensus experiments")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=UsageParser)

    run = sub.add_parser("run", help="simulate a scenario over seeds")
    run.add_argument("--scenario", required=True, help="scenario JSON file")
    run.add_argument("--seeds", help='override seeds: "1..5", "3" or "1,4,9"')
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--out", help="output directory (default $BASILIC_OUT_DIR or ./out)")
    run.add_argument("--trace", action="store_true", help="dump delivered events as JSON lines")

    suite = sub.add_parser("suite", help="run an acceptance suite")
    suite.add_argument("name", choices=[*SUITES, "all"])
    suite.add_argument("--quick", action="store_true", help="small seed counts")

    analyze = sub.add_parser("analyze", help="closed-form bounds")
    what = analyze.add_subparsers(dest="what", required=True, parser_class=UsageParser)
    bd = what.add_parser("blockdepth")
    bd.add_argument("--a", type=int, help="branch count")
    bd.add_argument("--b", type=float, default=0.1)
    bd.add_argument("--rho", type=float, default=0.9)
    bd.add_argument("--curve", action="store_true", help="table over deceitful ratios and rho")
    br = what.add_parser("branches")
    br.add_argument("--n", type=int, required=True)
    br.add_argument("--h", type=int, required=True)
    br.add_argument("--dt", type=int, help="deceitful + Byzantine; omit for the whole curve")
    al = what.add_parser("alpha")
    al.add_argument("--n", type=int, required=True)
    al.add_argument("--h", type=int, required=True)
    al.add_argument("--alpha", required=True, help='e.g. "4/9" or 0.5')
    fr = what.add_parser("frontier")
    fr.add_argument("--n", type=int, required=True)
    fr.add_argument("--h", type=int, required=True)
    fx = what.add_parser("flux")
    fx.add_argument("--a", type=int, required=True)
    fx.add_argument("--b", type=float, default=0.1)
    fx.add_argument("--rho", type=float, default=0.9)
    fx.add_argument("--w-max", type=int, default=60)
    tol = what.add_parser("tolerance")
    for name in ("n", "t", "d", "q"):
        tol.add_argument(f"--{name}", type=int, required=True)
    for p in (bd, br, al, fr, fx, tol):
        p.add_argument("--out", help="also write the table as CSV here")
    return parser


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        if args.seeds:
            scenario.seeds = parse_seeds(args.seeds)
    except ScenarioError as e:
        print(f"❌ Scenario error in field '{e.field}': {e.message}")
        return EXIT_SCENARIO
    except ValueError as e:
        print(f"❌ Scenario error in field 'seeds': {e}")
        return EXIT_SCENARIO
    if args.trace:
        scenario.trace = True

    logger.debug("loaded %s: %s", args.scenario, scenario)
    target = out_dir(args.out)
    csv_path = target / f"{scenario.name}.csv"
    jsonl_path = target / f"{scenario.name}.jsonl"
    print(f"▶️  Running {scenario.name} ({scenario.protocol}, n={scenario.n}) "
          f"over {len(scenario.seeds)} seed(s)")

    def report(res):
        row = res.row
        if res.error:
            print(f"❌ Seed {res.seed} failed: {res.error}")
        elif row["status"] == "violation":
            print(f"⚠️ Seed {res.seed}: {row['note']}")
        else:
            print(f"✅ Seed {res.seed}: decided {row['decided']}/{row['honest']}, "
                  f"branches {row['branches']}, accused {row['accused']}")

    results = run_batch(scenario, scenario.seeds, workers=args.workers, on_result=report)
    write_run_rows(csv_path, [r.row for r in results])
    write_json_lines(jsonl_path, [r.record.to_json() for r in results if r.record is not None])
    if scenario.trace:
        for r in results:
            if r.record is not None:
                write_trace(target / f"{scenario.name}-seed{r.seed}.trace.jsonl", r.record.trace)
    for r in results:
        if r.record is not None and r.record.chain:
            write_chain_dump(target / f"{scenario.name}-seed{r.seed}.chain.jsonl", r.record.chain)
    print(f"✅ Wrote {len(results)} row(s) to {csv_path}")
    if any(r.status == "violation" for r in results):
        return EXIT_VIOLATION
    return EXIT_OK


# ---------------------------------------------------------------------------
# suite
# ---------------------------------------------------------------------------

def cmd_suite(args) -> int:
    print(f"▶️  Suite {args.name}{' (quick)' if args.quick else ''}")
    checks = run_suite(args.name, quick=args.quick)
    for c in checks:
        mark = "✅" if c.passed else "❌"
        print(f"{mark} {c.name}: {c.detail}")
    failed = sum(1 for c in checks if not c.passed)
    if failed:
        print(f"❌ {failed} of {len(checks)} check(s) failed")
        return EXIT_FAILED
    print(f"✅ All {len(checks)} check(s) passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def _emit(args, headers, rows):
    for row in rows:
        print("\t".join(str(x) for x in row))
    if getattr(args, "out", None):
        write_table(args.out, headers, rows)


def cmd_analyze(args) -> int:
    w = args.what
    if w == "blockdepth":
        if args.curve or args.a is None:
            deltas = [Fraction(k, 100) for k in range(0, 66, 2)]
            rows = [(float(d), a, rho, wd) for d, a, rho, wd in
                    blockdepth_curve(Fraction(2, 3), args.b, (0.5, 0.75, 0.9), deltas)]
            _emit(args, ["delta", "a", "rho", "w"], rows)
        else:
            print(min_blockdepth(args.a, args.b, args.rho))
    elif w == "branches":
        if args.dt is not None:
            print(max_branches(args.n, args.h, args.dt))
        else:
            _emit(args, ["dt", "branches"], branch_curve(args.n, args.h))
    elif w == "alpha":
        print(alpha_confirm_threshold(args.n, args.h, as_fraction(args.alpha)))
    elif w == "frontier":
        _emit(args, ["t", "d", "q"], frontier(args.n, args.h))
    elif w == "flux":
        _emit(args, ["w", "flux"], [(k, f"{v:.6f}") for k, v in
                                    flux_table(args.a, args.b, args.rho, range(args.w_max + 1))])
    elif w == "tolerance":
        p = FaultProfile(n=args.n, t=args.t, d=args.d, q=args.q)
        print(f"consensus tolerated: {consensus_tolerated(p)}")
        print(f"thresholds: {tolerating_thresholds(p)}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "suite":
            return cmd_suite(args)
        return cmd_analyze(args)
    except (AnalysisError, ValueError) as e:
        print(f"❌ {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
