"""Command line front end.

Subcommands: ``single-user`` (downlink NMSE/SE sweep), ``multi-user``
(uplink NMSE-vs-K sweep), ``overhead`` (minimal pilot counts), ``verify``
(acceptance property suite). Exit codes: 0 success, 1 invalid spec or usage,
2 I/O error, 3 acceptance failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .channel import SystemDims
from .experiments import ExperimentSpec, overhead_table, run_sweep, write_results

_DEFAULT_DIMS = dict(n_bs=32, m_ris=50)
_SNR_DEFAULT = [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0]


class _Parser(argparse.ArgumentParser):
    # usage errors are "invalid spec" (1), not I/O (2)
    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _default_spec(scenario: str) -> ExperimentSpec:
    if scenario == "single_user_downlink":
        return ExperimentSpec(
            scenario=scenario,
            dims=SystemDims(**_DEFAULT_DIMS),
            snr_grid_db=list(_SNR_DEFAULT),
            k_grid=[400],
            estimators=("MF_AM", "LR"),
            n_trials=200,
        )
    return ExperimentSpec(
        scenario=scenario,
        dims=SystemDims(q_users=5, t_symbols=5, **_DEFAULT_DIMS),
        snr_grid_db=[10.0],
        k_grid=[50, 100, 200, 400],
        n_trials=200,
    )


def _load_spec(args, scenario: str) -> ExperimentSpec:
    if args.config is None:
        spec = _default_spec(scenario)
    else:
        with open(args.config, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as err:
                raise ValueError(f"config {args.config} is not valid JSON: {err}") from err
        raw.setdefault("scenario", scenario)
        if raw["scenario"] != scenario:
            raise ValueError(
                f"config scenario {raw['scenario']!r} does not match subcommand"
            )
        spec = ExperimentSpec.from_dict(raw)
    if args.seed is not None:
        spec.master_seed = args.seed
    if args.trials is not None:
        spec = ExperimentSpec.from_dict({**spec.to_dict(), "n_trials": args.trials})
    return spec


def _print_summary(records):
    feasible = [r for r in records if r.nmse is not None]
    skipped = len(records) - len(feasible)
    print(f"{len(records)} records ({skipped} infeasible)")
    cells = sorted({(r.estimator, r.snr_db, r.k) for r in feasible})
    for estimator, snr_db, k in cells:
        values = [r.nmse for r in feasible
                  if (r.estimator, r.snr_db, r.k) == (estimator, snr_db, k)]
        print(f"  {estimator:6s} snr {snr_db:+6.1f} dB  K {k:5d}  "
              f"mean NMSE {np.mean(values):.4e}  ({len(values)} trials)")


def _cmd_sweep(args, scenario: str) -> int:
    spec = _load_spec(args, scenario)
    records = run_sweep(spec, n_threads=args.threads)
    out = args.out or f"{scenario}.{args.format}"
    write_results(records, out, format=args.format, spec=spec)
    _print_summary(records)
    print(f"wrote {out}")
    return 0


def _cmd_overhead(args) -> int:
    if args.config is not None:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
        dims = SystemDims(**raw.get("dims", raw))
    else:
        dims = SystemDims(**_DEFAULT_DIMS)
    table = overhead_table(dims)
    rows = [f"{name},{pilots}" for name, pilots in table.items()]
    body = "estimator,min_pilots\n" + "\n".join(rows) + "\n"
    if args.out:
        if args.format == "json":
            body = json.dumps(table, indent=1) + "\n"
        with open(args.out, "w", encoding="ascii") as fh:
            fh.write(body)
        print(f"wrote {args.out}")
    else:
        print(body, end="")
    return 0


def _cmd_verify(args) -> int:
    from .acceptance import CRITERIA, run_criterion

    known = [name for name, _, _ in CRITERIA]
    names = args.criteria or known
    unknown = sorted(set(names) - set(known))
    if unknown:
        raise ValueError(f"unknown criteria: {unknown}; choose from {known}")
    failures = 0
    for name in names:
        result = run_criterion(name)
        status = "PASS" if result.passed else "FAIL"
        print(f"{status} {result.name} ({result.elapsed_s:.1f}s): {result.detail}")
        failures += not result.passed
    if failures:
        print(f"{failures}/{len(names)} criteria failed")
        return 3
    print(f"all {len(names)} criteria passed")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="rismf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON experiment spec")
        p.add_argument("--out", help="output path (default <scenario>.<format>)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--trials", type=int, help="trials-per-cell override")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads (affects speed only, never results)")

    add_common(sub.add_parser("single-user", help="downlink estimation sweep"))
    add_common(sub.add_parser("multi-user", help="uplink multi-user sweep"))

    overhead = sub.add_parser("overhead", help="minimal pilot overhead table")
    overhead.add_argument("--config", help="JSON with a dims object")
    overhead.add_argument("--out", help="output path (default: stdout)")
    overhead.add_argument("--format", choices=("csv", "json"), default="csv")

    verify = sub.add_parser("verify", help="run the acceptance property suite")
    verify.add_argument("criteria", nargs="*", help="criterion names (default: all)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "single-user":
            return _cmd_sweep(args, "single_user_downlink")
        if args.command == "multi-user":
            return _cmd_sweep(args, "multi_user_uplink")
        if args.command == "overhead":
            return _cmd_overhead(args)
        return _cmd_verify(args)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
