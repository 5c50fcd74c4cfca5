"""End-to-end orchestration: traces in, JSON report and CSV summary out."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .apcluster import (
    DEFAULT_CONVERGENCE_ITER,
    DEFAULT_DAMPING,
    DEFAULT_MAX_ITER,
    Clustering,
    affinity_propagation,
    build_temporal_similarity,
)
from .errors import GestureForgeError, NoIncludedSubjects
from .events import DetectionParams, detect_events
from .gestures import assemble_gestures
from .ingest import (
    DEFAULT_CONFIDENCE_FLOOR,
    DEFAULT_MIN_VALID_FRACTION,
    parse_stimulus_schedule,
    read_au_csv,
    validate_trace,
)
from .ranking import DEFAULT_WINDOW, MODES, aggregate_metrics, evaluate_cohort

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
THREADS_ENV = "GESTURE_FORGE_THREADS"
# events within ~2 s of each other (onset and apex) fall into one gesture
DEFAULT_PREFERENCE = -4.0
SUMMARY_HEADER = "mode,top2_pct,top10_pct,top15pct_pct,median_rank,included,excluded"

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


class FatalError(GestureForgeError):
    """The run cannot produce a report at all."""


@dataclass
class RunConfig:
    traces: Optional[str] = None
    schedule: Optional[str] = None
    confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR
    min_valid_fraction: float = DEFAULT_MIN_VALID_FRACTION
    activation_threshold: float = 0.5
    min_duration_frames: int = 3
    smoothing_window: int = 5
    damping: float = DEFAULT_DAMPING
    preference: Optional[float] = DEFAULT_PREFERENCE  # None -> median similarity
    max_iter: int = DEFAULT_MAX_ITER
    convergence_iter: int = DEFAULT_CONVERGENCE_ITER
    mode: str = "both"
    scope: Optional[str] = None
    window: float = DEFAULT_WINDOW
    topk: tuple = (2, 10)
    report_out: Optional[str] = None
    summary_out: Optional[str] = None
    out: Optional[str] = None
    seed: int = 0
    workers: int = 1

    # fields that affect results and are echoed into reports
    ANALYSIS_FIELDS = (
        "confidence_floor", "min_valid_fraction", "activation_threshold",
        "min_duration_frames", "smoothing_window", "damping", "preference",
        "max_iter", "convergence_iter", "mode", "scope", "window", "topk",
    )

    def validate(self) -> None:
        if not 0.0 <= self.confidence_floor <= 1.0:
            raise ValueError("confidence_floor must be in [0, 1]")
        if not 0.0 < self.min_valid_fraction <= 1.0:
            raise ValueError("min_valid_fraction must be in (0, 1]")
        DetectionParams(self.activation_threshold, self.min_duration_frames, self.smoothing_window)
        if not 0.5 <= self.damping < 1.0:
            raise ValueError("damping must be in [0.5, 1)")
        if self.max_iter < 1 or self.convergence_iter < 1:
            raise ValueError("max_iter and convergence_iter must be >= 1")
        if self.mode not in MODES + ("both",):
            raise ValueError(f"mode must be sd, si or both, got {self.mode!r}")
        if self.scope not in (None,) + MODES:
            raise ValueError(f"scope must be sd or si, got {self.scope!r}")
        if self.window <= 0:
            raise ValueError("window must be positive")
        if any(k < 1 for k in self.topk):
            raise ValueError("topk entries must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def detection(self) -> DetectionParams:
        return DetectionParams(self.activation_threshold, self.min_duration_frames, self.smoothing_window)

    @property
    def modes(self) -> tuple:
        return MODES if self.mode == "both" else (self.mode,)

    def analysis_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.ANALYSIS_FIELDS}
        d["topk"] = list(self.topk)
        return d


def _coerce(name: str, raw: str):
    if name == "topk":
        return tuple(int(k) for k in str(raw).replace(" ", "").split(",") if k)
    if name == "preference":
        return "median" if str(raw).strip().lower() in ("median", "none", "") else float(raw)
    if name in ("scope", "traces", "schedule", "report_out", "summary_out", "out"):
        return None if str(raw).strip().lower() in ("none", "") else str(raw).strip()
    default = RunConfig.__dataclass_fields__[name].default
    if isinstance(default, bool):
        return str(raw).strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return str(raw).strip()


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines. Blank lines and ``#`` comments are skipped;
    dashes in keys are accepted as underscores."""
    known = {f.name for f in dataclasses.fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def resolve_config(cli_values: dict, config_file=None, env=None) -> RunConfig:
    """Merge settings: CLI flag > config file > environment (workers only) > default."""
    env = os.environ if env is None else env
    merged = {}
    if env.get(THREADS_ENV):
        merged["workers"] = int(env[THREADS_ENV])
    if config_file:
        merged.update(read_config_file(config_file))
    merged.update({k: v for k, v in cli_values.items() if v is not None})
    if merged.get("preference") == "median":
        merged["preference"] = None
    config = RunConfig(**merged)
    config.validate()
    return config


@dataclass
class SubjectOutcome:
    subject_id: str
    path: str
    error: Optional[str] = None
    warnings: list = field(default_factory=list)
    events: list = field(default_factory=list)
    gestures: list = field(default_factory=list)
    converged: Optional[bool] = None
    iterations: int = 0
    history: tuple = ()


@dataclass
class TraceAnalysis:
    events: list
    gestures: list
    clustering: Optional[Clustering]


def analyze_trace(trace, config: RunConfig, record_history: bool = False) -> TraceAnalysis:
    """Detect, cluster and assemble gestures for one validated trace."""
    events = detect_events(trace, config.detection)
    if not events:
        return TraceAnalysis([], [], None)
    S = build_temporal_similarity(events, config.preference)
    clustering = affinity_propagation(
        S, config.damping, config.max_iter, config.convergence_iter, record_history
    )
    return TraceAnalysis(events, assemble_gestures(events, clustering, trace.subject_id), clustering)


def process_subject(path, config: RunConfig, record_history: bool = False) -> SubjectOutcome:
    """Ingest, detect, cluster and assemble one subject's trace file.

    Per-subject failures come back in ``error`` instead of raising.
    """
    path = Path(path)
    outcome = SubjectOutcome(subject_id=path.stem, path=str(path))
    try:
        trace = read_au_csv(path, confidence_floor=config.confidence_floor)
        trace, outcome.warnings = validate_trace(trace, config.min_valid_fraction)
        analysis = analyze_trace(trace, config, record_history)
        outcome.events, outcome.gestures = analysis.events, analysis.gestures
        clustering = analysis.clustering
        if clustering is not None:
            outcome.converged = clustering.converged
            outcome.iterations = clustering.iterations_run
            outcome.history = clustering.history
            if not clustering.converged:
                outcome.warnings.append(
                    f"affinity propagation did not converge in {clustering.iterations_run} iterations"
                )
    except (GestureForgeError, ValueError, UnicodeDecodeError, OSError) as exc:
        outcome.error = f"{type(exc).__name__}: {exc}"
    return outcome


def _process_args(args):
    return process_subject(*args)


def trace_files(traces_dir) -> list[Path]:
    d = Path(traces_dir)
    if not d.is_dir():
        raise FatalError(f"trace directory {d} does not exist")
    files = sorted(p for p in d.glob("*.csv") if p.is_file())
    if not files:
        raise FatalError(f"no .csv trace files in {d}")
    return files


def process_all(config: RunConfig, record_history: bool = False) -> list[SubjectOutcome]:
    """Run :func:`process_subject` over every trace file, in sorted order."""
    files = trace_files(config.traces)
    jobs = [(p, config, record_history) for p in files]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(_process_args, jobs))
    return [_process_args(job) for job in jobs]


def _metrics_dict(m) -> dict:
    return {
        "mode": m.mode,
        "top2_pct": m.top2_pct,
        "top10_pct": m.top10_pct,
        "top15pct_pct": m.top15pct_pct,
        "median_rank": m.median_rank,
        "included": m.included_subjects,
        "excluded": m.excluded_subjects,
        "median_candidate_count": m.median_candidate_count,
        "topk_pct": {str(k): v for k, v in m.topk_pct},
    }


def _result_dict(r) -> dict:
    return {
        "subject_id": r.subject_id,
        "mode": r.mode,
        "excluded": r.excluded,
        "reason": r.reason,
        "rank_of_gamma": r.rank_of_gamma,
        "candidate_count": r.candidate_count,
        "gamma_gesture_id": r.gamma_id,
        "ranking": [{"gesture_id": gid, "distance": d} for gid, d in r.ranking],
    }


def build_report(config: RunConfig, outcomes, failures, per_mode) -> dict:
    """Assemble the report document. Key order is fixed by construction."""
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "tool": "gesture-forge",
        "version": __version__,
        "config": config.analysis_dict(),
        "subjects": [
            {
                "subject_id": o.subject_id,
                "n_events": len(o.events),
                "n_gestures": len(o.gestures),
                "clustering_converged": o.converged,
                "clustering_iterations": o.iterations,
                "warnings": len(o.warnings),
            }
            for o in outcomes if o.error is None
        ],
        "failures": failures,
        "modes": {
            mode: {
                "metrics": _metrics_dict(metrics) if metrics is not None else None,
                "results": [_result_dict(r) for r in results],
            }
            for mode, (results, metrics) in per_mode.items()
        },
    }


def emit_report(report: dict, fmt: str = "json") -> str:
    """Render a report as JSON or as the one-row-per-mode CSV summary."""
    if fmt == "json":
        return json.dumps(report, indent=2, allow_nan=False) + "\n"
    if fmt == "csv":
        lines = [SUMMARY_HEADER]
        for mode, section in report["modes"].items():
            m = section["metrics"]
            if m is None:
                excluded = sum(r["excluded"] for r in section["results"])
                lines.append(f"{mode},,,,,0,{excluded}")
                continue
            lines.append(
                f"{mode},{round(m['top2_pct'])},{round(m['top10_pct'])},{round(m['top15pct_pct'])},"
                f"{m['median_rank']:g},{m['included']},{m['excluded']}"
            )
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def run_pipeline(config: RunConfig) -> tuple[int, dict]:
    """Run every stage and write the configured outputs.

    Returns ``(exit_status, report)``: 0 when every subject was evaluated,
    2 when some were excluded or failed, 1 on fatal errors (the report is
    then empty).
    """
    try:
        config.validate()
        if not config.schedule or not Path(config.schedule).is_file():
            raise FatalError(f"schedule file {config.schedule!r} not found")
        if not config.traces:
            raise FatalError("no trace directory given")
        try:
            schedules = parse_stimulus_schedule(Path(config.schedule).read_bytes())
        except (GestureForgeError, ValueError, UnicodeDecodeError) as exc:
            raise FatalError(f"schedule file unreadable: {exc}") from exc
        outcomes = process_all(config)
    except (FatalError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_FATAL, {}

    ok = [o for o in outcomes if o.error is None]
    failures = [
        {"subject_id": o.subject_id, "file": Path(o.path).name, "error": o.error}
        for o in outcomes if o.error is not None
    ]
    for o in outcomes:
        if o.error is not None:
            log.warning("%s: %s", o.subject_id, o.error)
    if not ok:
        log.error("no parseable subjects")
        return EXIT_FATAL, {}
    traced = {o.subject_id for o in outcomes}
    for sid in sorted(set(schedules) - traced):
        failures.append({"subject_id": sid, "file": None, "error": "no trace file for scheduled subject"})
    failures.sort(key=lambda f: f["subject_id"])

    gestures = {o.subject_id: o.gestures for o in ok}
    per_mode = {}
    for mode in config.modes:
        results = evaluate_cohort(gestures, schedules, mode, config.window, config.scope)
        try:
            metrics = aggregate_metrics(results, config.topk)
        except NoIncludedSubjects:
            metrics = None
        per_mode[mode] = (results, metrics)

    report = build_report(config, outcomes, failures, per_mode)
    if config.report_out:
        Path(config.report_out).parent.mkdir(parents=True, exist_ok=True)
        Path(config.report_out).write_text(emit_report(report, "json"), encoding="utf-8")
    if config.summary_out:
        Path(config.summary_out).parent.mkdir(parents=True, exist_ok=True)
        Path(config.summary_out).write_text(emit_report(report, "csv"), encoding="utf-8")

    partial = failures or any(r.excluded for results, _ in per_mode.values() for r in results)
    return (EXIT_PARTIAL if partial else EXIT_OK), report
