"""Command-line entry point: ``starnoma run | chart | validate``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .charts import ChartError, chart_for_kind, emit_chart
from .experiments import SpecError, audit, load_spec, run_experiment

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID_SPEC = 2
EXIT_ALL_INFEASIBLE = 3


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="starnoma", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment spec (TOML)")
    run.add_argument("spec", type=Path)
    run.add_argument("--seed", type=int, help="override the base seed")
    run.add_argument("--trials", type=_positive_int, help="override the trial count")
    run.add_argument("--out", type=Path, help="override the output directory")
    run.add_argument("--threads", type=_positive_int, default=1,
                     help="worker processes for independent trials (default 1)")
    run.add_argument("--no-chart", action="store_true", help="skip the SVG chart")
    run.add_argument("--quiet", action="store_true")

    chart = sub.add_parser("chart", help="render a results or traces CSV as SVG")
    chart.add_argument("csv", type=Path)
    chart.add_argument("--kind", choices=("convergence", "sweep_M_NT", "qos_compare"),
                       help="chart preset (default: inferred from the CSV name)")
    chart.add_argument("--out", type=Path, help="SVG path (default: CSV name with .svg)")

    val = sub.add_parser("validate", help="audit a results CSV against the QoS targets")
    val.add_argument("csv", type=Path)
    val.add_argument("--manifest", type=Path)
    val.add_argument("--solutions", type=Path)
    return parser


def _cmd_run(args) -> int:
    try:
        spec = load_spec(args.spec)
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.trials is not None:
            changes["trials"] = args.trials
        if args.out is not None:
            changes["output_dir"] = str(args.out)
        spec = spec.with_(**changes)
    except SpecError as exc:
        print(f"invalid spec: {exc}", file=sys.stderr)
        return EXIT_INVALID_SPEC

    def progress(done, total):
        print(f"\r{done}/{total} trials", end="" if done < total else "\n", file=sys.stderr)

    result = run_experiment(spec, workers=args.threads, chart=not args.no_chart,
                            progress=None if args.quiet else progress)
    print(f"{len(result.rows)} rows, {result.n_infeasible} infeasible -> {result.output_dir}")
    if result.all_infeasible:
        print("every trial was infeasible", file=sys.stderr)
        return EXIT_ALL_INFEASIBLE
    return EXIT_OK


def _cmd_chart(args) -> int:
    kind = args.kind
    if kind is None and args.csv.name.startswith("traces"):
        kind = "convergence"
    manifest = args.csv.with_name("manifest.json")
    if kind is None and manifest.exists():
        try:
            kind = json.loads(manifest.read_text())["spec"]["kind"]
        except (ValueError, KeyError):
            kind = None
    if kind is None:
        print("cannot infer the chart kind from the file name; pass --kind", file=sys.stderr)
        return EXIT_INVALID_SPEC
    out = args.out or args.csv.with_suffix(".svg")
    try:
        emit_chart(args.csv, out, chart_for_kind(kind))
    except (ChartError, OSError) as exc:
        print(f"chart failed: {exc}", file=sys.stderr)
        return EXIT_INVALID_SPEC
    print(out)
    return EXIT_OK


def _cmd_validate(args) -> int:
    try:
        findings = audit(args.csv, args.manifest, args.solutions)
    except (SpecError, OSError) as exc:
        print(f"cannot audit: {exc}", file=sys.stderr)
        return EXIT_INVALID_SPEC
    bad = [f for f in findings if not f.ok]
    for f in bad:
        r = f.row
        print(f"QoS violated: {r.scheme} trial={r.trial} M={r.m} N_T={r.n_t} "
              f"R={r.qos_bits} slack={f.worst_slack:.3e}")
    print(f"audited {len(findings)} feasible rows, {len(bad)} violations")
    if findings and not bad:
        return EXIT_OK
    return EXIT_FAILURE if bad else EXIT_ALL_INFEASIBLE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "chart": _cmd_chart, "validate": _cmd_validate}[args.command]
    return handler(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
