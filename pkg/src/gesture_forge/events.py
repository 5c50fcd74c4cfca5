"""Segmentation of AU intensity channels into onset/apex/offset events."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import EvenWindow, WindowTooLarge
from .ingest import SubjectTrace, au_sort_key


@dataclass(frozen=True)
class DetectionParams:
    activation_threshold: float = 0.5
    min_duration_frames: int = 3
    smoothing_window: int = 5

    def __post_init__(self):
        if self.activation_threshold <= 0:
            raise ValueError("activation_threshold must be positive")
        if self.min_duration_frames < 1:
            raise ValueError("min_duration_frames must be >= 1")
        if self.smoothing_window < 1 or self.smoothing_window % 2 == 0:
            raise EvenWindow("smoothing_window must be a positive odd integer")


@dataclass(frozen=True)
class AUEvent:
    au_id: str
    onset_time: float
    apex_time: float
    offset_time: float
    onset_intensity: float
    apex_intensity: float
    offset_intensity: float
    rise_rate: float
    fall_rate: float

    @property
    def duration(self) -> float:
        return self.offset_time - self.onset_time

    def sort_key(self):
        return (self.onset_time, au_sort_key(self.au_id))


def smooth_series(values, window: int) -> np.ndarray:
    """Centered moving average with shrunken windows at the edges.

    >>> smooth_series([0, 0, 3, 0, 0], 3).tolist()
    [0.0, 1.0, 1.0, 1.0, 0.0]
    """
    x = np.asarray(values, dtype=float)
    if window < 1 or window % 2 == 0:
        raise EvenWindow(f"window must be odd and >= 1, got {window}")
    if window > len(x):
        raise WindowTooLarge(f"window {window} exceeds series length {len(x)}")
    if window == 1:
        return x.copy()
    kernel = np.ones(window)
    sums = np.convolve(x, kernel, mode="same")
    counts = np.convolve(np.ones_like(x), kernel, mode="same")
    return sums / counts


def _channel_events(au_id, t, y, params):
    above = y >= params.activation_threshold
    if not above.any():
        return []
    padded = np.concatenate(([False], above, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    events = []
    for start, stop in zip(edges[::2], edges[1::2]):
        if stop - start < params.min_duration_frames:
            continue
        on, off = int(start), int(stop - 1)
        apex = on + int(np.argmax(y[on:off + 1]))
        rise = (y[apex] - y[on]) / (t[apex] - t[on]) if apex > on else 0.0
        fall = (y[apex] - y[off]) / (t[off] - t[apex]) if off > apex else 0.0
        events.append(AUEvent(
            au_id=au_id,
            onset_time=float(t[on]),
            apex_time=float(t[apex]),
            offset_time=float(t[off]),
            onset_intensity=float(y[on]),
            apex_intensity=float(y[apex]),
            offset_intensity=float(y[off]),
            rise_rate=float(rise),
            fall_rate=float(fall),
        ))
    return events


def detect_events(trace: SubjectTrace, params: DetectionParams = DetectionParams()) -> list[AUEvent]:
    """Segment every AU channel of ``trace`` into events.

    Each channel is smoothed, then every maximal run of frames at or above
    ``activation_threshold`` that lasts at least ``min_duration_frames``
    frames becomes one event. Onset and offset are the first and last
    frames of the run; the apex is the earliest frame holding the run's
    maximum. Rates are slopes of the smoothed signal between those frames.
    Runs touching the trace boundaries are kept.

    Returns events sorted by (onset_time, AU number).
    """
    if trace.n_frames == 0:
        return []
    # traces shorter than the window are smoothed with the largest odd window that fits
    window = min(params.smoothing_window, trace.n_frames - (1 - trace.n_frames % 2))
    events = []
    for j, au_id in enumerate(trace.au_ids):
        y = smooth_series(trace.intensities[:, j], window)
        events.extend(_channel_events(au_id, trace.timestamps, y, params))
    events.sort(key=AUEvent.sort_key)
    return events


EVENT_CSV_HEADER = (
    "subject_id", "au_id", "onset_s", "apex_s", "offset_s",
    "onset_i", "apex_i", "offset_i", "rise_rate", "fall_rate",
)


def events_to_csv(events_by_subject: dict[str, list[AUEvent]]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(EVENT_CSV_HEADER)
    for sid in sorted(events_by_subject):
        for e in events_by_subject[sid]:
            writer.writerow([
                sid, e.au_id, repr(e.onset_time), repr(e.apex_time), repr(e.offset_time),
                repr(e.onset_intensity), repr(e.apex_intensity), repr(e.offset_intensity),
                repr(e.rise_rate), repr(e.fall_rate),
            ])
    return out.getvalue()
