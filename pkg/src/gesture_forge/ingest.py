"""Reading and validating AU intensity traces and stimulus schedules.

Trace files follow the OpenFace 2.0 CSV layout (``frame, timestamp,
confidence, success, AU01_r, ...``). Header cells may carry leading
spaces. Only ``AU??_r`` intensity columns for the 17 supported AUs are
kept; ``AU??_c`` occurrence columns and anything else are ignored.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Union

import numpy as np

from .errors import (
    DuplicateStimulusIndex,
    MalformedRow,
    MissingColumn,
    NonIncreasingTimes,
    NonMonotonicTimestamps,
    TooFewValidFrames,
)

AU_VOCABULARY = (
    "AU01", "AU02", "AU04", "AU05", "AU06", "AU07", "AU09", "AU10", "AU12",
    "AU14", "AU15", "AU17", "AU20", "AU23", "AU25", "AU26", "AU45",
)
INTENSITY_MIN = 0.0
INTENSITY_MAX = 5.0
DEFAULT_CONFIDENCE_FLOOR = 0.75
DEFAULT_MIN_VALID_FRACTION = 0.5

_AU_R_COLUMN = re.compile(r"^AU(\d{2})_r$")

Source = Union[bytes, str, IO[bytes], IO[str]]


def au_sort_key(au_id: str) -> int:
    """Numeric AU id, used as the canonical ordering everywhere."""
    return int(au_id[2:])


@dataclass(frozen=True, eq=False)
class SubjectTrace:
    subject_id: str
    timestamps: np.ndarray
    au_ids: tuple
    intensities: np.ndarray
    frame_valid: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float)
        x = np.asarray(self.intensities, dtype=float).reshape(len(ts), len(self.au_ids))
        ok = np.asarray(self.frame_valid, dtype=bool)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "intensities", x)
        object.__setattr__(self, "frame_valid", ok)
        object.__setattr__(self, "au_ids", tuple(self.au_ids))
        if ok.shape != ts.shape:
            raise ValueError("frame_valid length does not match timestamps")
        if len(set(self.au_ids)) != len(self.au_ids):
            raise ValueError("duplicate AU ids")
        unknown = [a for a in self.au_ids if a not in AU_VOCABULARY]
        if unknown:
            raise ValueError(f"AU ids outside the vocabulary: {unknown}")
        if len(ts) > 1 and np.any(np.diff(ts) <= 0):
            raise NonMonotonicTimestamps("timestamps must be strictly increasing")

    @property
    def n_frames(self) -> int:
        return len(self.timestamps)

    def channel(self, au_id: str) -> np.ndarray:
        return self.intensities[:, self.au_ids.index(au_id)]

    def __eq__(self, other):
        if not isinstance(other, SubjectTrace):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and self.au_ids == other.au_ids
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.intensities, other.intensities)
            and np.array_equal(self.frame_valid, other.frame_valid)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ValidatedTrace(SubjectTrace):
    """A trace whose intensities are clamped to [0, 5] and gap-filled.

    ``frame_valid`` still records which frames were tracked; the
    intensities of untracked frames are interpolated.
    """


@dataclass(frozen=True)
class StimulusSchedule:
    subject_id: str
    stimulus_times: tuple = field(default_factory=tuple)

    def __post_init__(self):
        times = tuple(float(t) for t in self.stimulus_times)
        object.__setattr__(self, "stimulus_times", times)
        if not times:
            raise ValueError(f"{self.subject_id}: schedule needs at least one stimulus")
        if any(t < 0 for t in times):
            raise ValueError(f"{self.subject_id}: stimulus times must be >= 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise NonIncreasingTimes(f"{self.subject_id}: stimulus times must increase")


def _read_text(source: Source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8-sig")
    if isinstance(source, str):
        return source
    data = source.read()
    if isinstance(data, bytes):
        return data.decode("utf-8-sig")
    return data


def _parse_float(cell: str, line: int, column: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise MalformedRow(line, f"column {column!r}: cannot parse {cell!r}") from None
    if not math.isfinite(value):
        raise MalformedRow(line, f"column {column!r}: non-finite value {cell!r}")
    return value


def parse_au_csv(
    source: Source,
    subject_id: str = "",
    confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR,
) -> SubjectTrace:
    """Parse an OpenFace-style AU CSV into a :class:`SubjectTrace`.

    A frame is valid when ``success == 1`` and ``confidence >=
    confidence_floor``; files without those columns count every frame as
    valid. AU columns are reordered canonically (ascending AU number).

    Raises
    ------
    MissingColumn
        No ``timestamp`` column, or no supported ``AU??_r`` column.
    MalformedRow
        A numeric cell does not parse (carries the 1-based file line).
    NonMonotonicTimestamps
        Timestamps are not strictly increasing.
    """
    reader = csv.reader(io.StringIO(_read_text(source)))
    try:
        header = [cell.strip() for cell in next(reader)]
    except StopIteration:
        raise MissingColumn("empty file: no header row") from None

    col = {name: i for i, name in reversed(list(enumerate(header)))}
    if "timestamp" not in col:
        raise MissingColumn("no 'timestamp' column")
    au_cols = {}
    for i, name in enumerate(header):
        m = _AU_R_COLUMN.match(name)
        if m and f"AU{m.group(1)}" in AU_VOCABULARY:
            au_cols.setdefault(f"AU{m.group(1)}", i)
    if not au_cols:
        raise MissingColumn("no AU intensity (AU??_r) columns")
    au_ids = tuple(sorted(au_cols, key=au_sort_key))
    au_idx = [au_cols[a] for a in au_ids]

    times, rows, valid = [], [], []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise MalformedRow(line, f"expected {len(header)} cells, got {len(row)}")
        t = _parse_float(row[col["timestamp"]], line, "timestamp")
        ok = True
        if "success" in col:
            ok = _parse_float(row[col["success"]], line, "success") == 1
        if "confidence" in col:
            ok = ok and _parse_float(row[col["confidence"]], line, "confidence") >= confidence_floor
        times.append(t)
        rows.append([_parse_float(row[i], line, header[i]) for i in au_idx])
        valid.append(ok)

    ts = np.array(times, dtype=float)
    if len(ts) > 1:
        bad = np.flatnonzero(np.diff(ts) <= 0)
        if len(bad):
            raise NonMonotonicTimestamps(
                f"timestamp {ts[bad[0] + 1]!r} does not follow {ts[bad[0]]!r} (data row {bad[0] + 2})"
            )
    return SubjectTrace(
        subject_id=subject_id,
        timestamps=ts,
        au_ids=au_ids,
        intensities=np.array(rows, dtype=float).reshape(len(ts), len(au_ids)),
        frame_valid=np.array(valid, dtype=bool),
    )


def read_au_csv(path, confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR) -> SubjectTrace:
    """Parse a trace file; the subject id is the file stem."""
    path = Path(path)
    return parse_au_csv(path.read_bytes(), subject_id=path.stem, confidence_floor=confidence_floor)


def _runs(mask: np.ndarray):
    """Yield (start, stop) index pairs of True runs, stop exclusive."""
    padded = np.concatenate(([False], mask, [False]))
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[::2], edges[1::2]))


def validate_trace(
    trace: SubjectTrace,
    min_valid_fraction: float = DEFAULT_MIN_VALID_FRACTION,
) -> tuple[ValidatedTrace, list[str]]:
    """Clamp intensities and fill untracked frames.

    Intensities outside [0, 5] are clamped. Intensities on invalid frames
    are linearly interpolated in time between the nearest valid frames,
    holding the edge value before the first / after the last valid frame.

    Returns the cleaned trace and a list of human-readable warnings, one
    per clamped cell and one per interpolated span.
    """
    n = trace.n_frames
    n_valid = int(trace.frame_valid.sum())
    if n == 0 or n_valid / n < min_valid_fraction or n_valid == 0:
        raise TooFewValidFrames(
            f"{trace.subject_id}: {n_valid}/{n} valid frames, need fraction >= {min_valid_fraction}"
        )

    warnings = []
    x = trace.intensities.copy()
    for f, j in zip(*np.nonzero((x < INTENSITY_MIN) | (x > INTENSITY_MAX))):
        clamped = min(max(x[f, j], INTENSITY_MIN), INTENSITY_MAX)
        warnings.append(
            f"{trace.au_ids[j]} frame {f} (t={trace.timestamps[f]:.3f}s): "
            f"clamped {x[f, j]!r} -> {clamped!r}"
        )
    np.clip(x, INTENSITY_MIN, INTENSITY_MAX, out=x)

    invalid = ~trace.frame_valid
    if invalid.any():
        t_ok = trace.timestamps[trace.frame_valid]
        t_bad = trace.timestamps[invalid]
        for j in range(x.shape[1]):
            x[invalid, j] = np.interp(t_bad, t_ok, x[trace.frame_valid, j])
        for start, stop in _runs(invalid):
            warnings.append(
                f"frames {start}-{stop - 1} (t={trace.timestamps[start]:.3f}-"
                f"{trace.timestamps[stop - 1]:.3f}s): interpolated"
            )

    validated = ValidatedTrace(
        subject_id=trace.subject_id,
        timestamps=trace.timestamps.copy(),
        au_ids=trace.au_ids,
        intensities=x,
        frame_valid=trace.frame_valid.copy(),
    )
    return validated, warnings


def write_au_csv(trace: SubjectTrace) -> str:
    """Serialize a trace in the OpenFace column layout.

    Valid frames are written with ``success=1, confidence=1``, invalid ones
    with zeros, so re-parsing reproduces ``frame_valid`` exactly.
    """
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["frame", " timestamp", " confidence", " success"] + [f" {a}_r" for a in trace.au_ids])
    for f in range(trace.n_frames):
        ok = bool(trace.frame_valid[f])
        writer.writerow(
            [f + 1, repr(float(trace.timestamps[f])), "1.0" if ok else "0.0", 1 if ok else 0]
            + [repr(float(v)) for v in trace.intensities[f]]
        )
    return out.getvalue()


def parse_stimulus_schedule(source: Source) -> dict[str, StimulusSchedule]:
    """Parse a ``subject_id,stimulus_index,time_s`` CSV.

    Rows are grouped by subject and ordered by stimulus index. Returns a
    dict keyed by subject id, in sorted subject order.
    """
    reader = csv.reader(io.StringIO(_read_text(source)))
    try:
        header = [cell.strip() for cell in next(reader)]
    except StopIteration:
        raise MissingColumn("empty schedule: no header row") from None
    for name in ("subject_id", "stimulus_index", "time_s"):
        if name not in header:
            raise MissingColumn(f"schedule lacks column {name!r}")
    i_sub, i_idx, i_time = (header.index(n) for n in ("subject_id", "stimulus_index", "time_s"))

    grouped: dict[str, dict[int, float]] = {}
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise MalformedRow(line, f"expected {len(header)} cells, got {len(row)}")
        sid = row[i_sub].strip()
        if not sid:
            raise MalformedRow(line, "empty subject_id")
        try:
            index = int(row[i_idx].strip())
        except ValueError:
            raise MalformedRow(line, f"bad stimulus_index {row[i_idx]!r}") from None
        t = _parse_float(row[i_time].strip(), line, "time_s")
        if t < 0:
            raise MalformedRow(line, f"negative time {t!r}")
        per_subject = grouped.setdefault(sid, {})
        if index in per_subject:
            raise DuplicateStimulusIndex(f"{sid}: stimulus_index {index} repeated (line {line})")
        per_subject[index] = t

    schedules = {}
    for sid in sorted(grouped):
        times = [grouped[sid][k] for k in sorted(grouped[sid])]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise NonIncreasingTimes(f"{sid}: stimulus times {times} are not strictly increasing")
        schedules[sid] = StimulusSchedule(sid, tuple(times))
    return schedules


def write_stimulus_schedule(schedules) -> str:
    """Inverse of :func:`parse_stimulus_schedule`. Accepts a dict or iterable."""
    items = schedules.values() if isinstance(schedules, dict) else schedules
    lines = ["subject_id,stimulus_index,time_s"]
    for sched in sorted(items, key=lambda s: s.subject_id):
        for k, t in enumerate(sched.stimulus_times, start=1):
            lines.append(f"{sched.subject_id},{k},{t!r}")
    return "\n".join(lines) + "\n"
