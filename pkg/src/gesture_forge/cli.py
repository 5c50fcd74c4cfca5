"""Command-line entry point.

Subcommands
-----------
``synth``         write a seeded synthetic cohort (traces, schedule, ground truth)
``ingest-check``  parse and validate trace files, report warnings
``detect``        dump AU events as CSV
``cluster``       dump facial gestures (and optionally AP convergence) as CSV
``evaluate``      full run: JSON report + CSV summary

Settings resolve as: command-line flag > ``--config`` file > built-in
default. ``GESTURE_FORGE_THREADS`` sets the worker count unless a config
file or ``--workers`` says otherwise.

Examples
--------
    $ gesture-forge synth --subjects 20 --seed 42 --out data/
    $ gesture-forge evaluate --traces data/traces --schedule data/stimulus_schedule.csv \\
          --mode both --report-out out/report.json
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

from .events import events_to_csv
from .gestures import featurize_all, gestures_to_csv, normalize_cohort
from .ingest import read_au_csv, validate_trace
from .pipeline import (
    EXIT_FATAL,
    EXIT_OK,
    EXIT_PARTIAL,
    FatalError,
    process_all,
    resolve_config,
    run_pipeline,
    trace_files,
)
from .synth import CohortConfig, generate_cohort

log = logging.getLogger("gesture_forge")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--traces", help="directory of per-subject AU CSV files")
    p.add_argument("--workers", type=int, help="parallel subject workers")
    p.add_argument("--confidence-floor", type=float)
    p.add_argument("--min-valid-fraction", type=float)


def _add_detection(p):
    p.add_argument("--activation-threshold", type=float)
    p.add_argument("--min-duration-frames", type=int)
    p.add_argument("--smoothing-window", type=int)


def _preference(raw: str):
    return "median" if raw.strip().lower() == "median" else float(raw)


def _add_clustering(p):
    p.add_argument("--damping", type=float)
    p.add_argument("--preference", type=_preference, help="float, or 'median'")
    p.add_argument("--max-iter", type=int)
    p.add_argument("--convergence-iter", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gesture-forge", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--subjects", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--length", type=float, default=300.0, help="trace length in seconds")
    p.add_argument("--distractors", type=int, default=40)
    p.add_argument("--time-jitter", type=float, default=0.0)
    p.add_argument("--intensity-jitter", type=float, default=0.0)
    p.add_argument("--shared-template", action="store_true")
    p.add_argument("--allow-flinch", action="store_true",
                   help="let distractors land inside response windows")

    p = sub.add_parser("ingest-check", help="parse and validate traces")
    _add_common(p)

    p = sub.add_parser("detect", help="dump AU events")
    _add_common(p)
    _add_detection(p)
    p.add_argument("--out", help="output directory (stdout when omitted)")

    p = sub.add_parser("cluster", help="dump facial gestures")
    _add_common(p)
    _add_detection(p)
    _add_clustering(p)
    p.add_argument("--out", help="output directory (stdout when omitted)")
    p.add_argument("--history", action="store_true", help="also write ap_history.csv")

    p = sub.add_parser("evaluate", help="full pipeline with report")
    _add_common(p)
    _add_detection(p)
    _add_clustering(p)
    p.add_argument("--schedule", help="stimulus schedule CSV")
    p.add_argument("--mode", choices=("sd", "si", "both"))
    p.add_argument("--scope", choices=("sd", "si"), help="normalization scope (default: follows mode)")
    p.add_argument("--window", type=float, help="response window after each stimulus, seconds")
    p.add_argument("--topk-list", help="comma-separated extra k values, e.g. 2,5,10")
    p.add_argument("--report-out", help="JSON report path")
    p.add_argument("--summary-out", help="CSV summary path (default: next to the report)")
    return parser


_NOT_CONFIG = {"command", "verbose", "config", "topk_list", "history", "subjects"}


def _config_from_args(args):
    values = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
    if getattr(args, "topk_list", None):
        values["topk"] = tuple(int(k) for k in args.topk_list.split(",") if k.strip())
    return resolve_config(values, args.config)


def cmd_synth(args) -> int:
    config = CohortConfig(
        n_subjects=args.subjects,
        fps=args.fps,
        length=args.length,
        distractor_count=args.distractors,
        time_jitter=args.time_jitter,
        intensity_jitter=args.intensity_jitter,
        shared_template=args.shared_template,
        avoid_response_windows=not args.allow_flinch,
    )
    generate_cohort(config, args.seed, args.out)
    print(f"wrote {args.subjects} subjects to {args.out}")
    return EXIT_OK


def cmd_ingest_check(args) -> int:
    config = _config_from_args(args)
    status = EXIT_OK
    for path in trace_files(config.traces):
        try:
            trace = read_au_csv(path, config.confidence_floor)
            _, warnings = validate_trace(trace, config.min_valid_fraction)
        except Exception as exc:  # report every file, keep going
            print(f"{path.stem}: FAILED {type(exc).__name__}: {exc}")
            status = EXIT_PARTIAL
            continue
        print(f"{path.stem}: ok, {trace.n_frames} frames, {len(trace.au_ids)} AUs, {len(warnings)} warnings")
        for w in warnings:
            print(f"  {w}")
    return status


def _write(text: str, out_dir, name: str) -> None:
    if out_dir is None:
        sys.stdout.write(text)
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text, encoding="utf-8")


def _report_failures(outcomes) -> int:
    failed = [o for o in outcomes if o.error]
    for o in failed:
        log.warning("%s: %s", o.subject_id, o.error)
    if len(failed) == len(outcomes):
        return EXIT_FATAL
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_detect(args) -> int:
    config = _config_from_args(args)
    outcomes = process_all(config)
    _write(events_to_csv({o.subject_id: o.events for o in outcomes if not o.error}), args.out, "events.csv")
    return _report_failures(outcomes)


def cmd_cluster(args) -> int:
    config = _config_from_args(args)
    outcomes = process_all(config, record_history=args.history)
    rows = []
    for o in outcomes:
        if o.error or not o.gestures:
            continue
        rows.extend(featurize_all(o.gestures, normalize_cohort(o.gestures, "sd")))
    _write(gestures_to_csv(rows), args.out, "gestures.csv")
    if args.history:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["subject_id", "iteration", "n_exemplars", "net_similarity"])
        for o in outcomes:
            for it, k, net in o.history:
                writer.writerow([o.subject_id, it, k, repr(net)])
        _write(buf.getvalue(), args.out, "ap_history.csv")
    return _report_failures(outcomes)


def cmd_evaluate(args) -> int:
    config = _config_from_args(args)
    if config.report_out and not config.summary_out:
        config.summary_out = str(Path(config.report_out).with_suffix(".csv"))
    status, report = run_pipeline(config)
    if status != EXIT_FATAL:
        for mode, section in report["modes"].items():
            m = section["metrics"]
            if m is None:
                print(f"{mode.upper()}: no included subjects")
            else:
                print(
                    f"{mode.upper()}: Top 2 {m['top2_pct']:.0f}%  Top 10 {m['top10_pct']:.0f}%  "
                    f"Top 15% {m['top15pct_pct']:.0f}%  Median rank {m['median_rank']:g}  "
                    f"({m['included']} included, {m['excluded']} excluded)"
                )
        if report["failures"]:
            print(f"{len(report['failures'])} subject(s) failed; see report")
    return status


COMMANDS = {
    "synth": cmd_synth,
    "ingest-check": cmd_ingest_check,
    "detect": cmd_detect,
    "cluster": cmd_cluster,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (FatalError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
