"""Facial gestures: clusters of co-occurring AU events, and their feature vectors.

Feature layout (85 values, fixed): for each AU of the vocabulary in
ascending AU order, five slots::

    presence, apex_intensity / 5, duration_norm, rise_norm, fall_norm

The last three are min-max normalized against a :class:`NormalizationContext`.
An absent AU has all five slots at zero.
"""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .apcluster import Clustering
from .errors import EmptyCohort, MismatchedSizes
from .events import AUEvent
from .ingest import AU_VOCABULARY, INTENSITY_MAX

SLOTS = ("presence", "apex", "duration", "rise", "fall")
N_FEATURES = len(AU_VOCABULARY) * len(SLOTS)
FEATURE_NAMES = tuple(f"{au}_{slot}" for au in AU_VOCABULARY for slot in SLOTS)
SCOPES = ("sd", "si")


@dataclass(frozen=True, eq=False)
class FacialGesture:
    gesture_id: int
    subject_id: str
    member_events: tuple
    start_time: float
    apex_time: float
    end_time: float
    exemplar: int = -1
    features: Optional[np.ndarray] = None

    @property
    def au_ids(self) -> tuple:
        return tuple(sorted({e.au_id for e in self.member_events}, key=AU_VOCABULARY.index))


@dataclass(frozen=True)
class NormalizationContext:
    scope: str
    duration: tuple
    rise: tuple
    fall: tuple


def assemble_gestures(
    events: Sequence[AUEvent], clustering: Clustering, subject_id: str = ""
) -> list[FacialGesture]:
    """Group events by exemplar into gestures, ordered by start time.

    ``gesture_id`` is the position in that order. Start and end are the
    earliest member onset and latest member offset; the apex time is the
    median of member apex times.
    """
    if len(events) != len(clustering.exemplar_of):
        raise MismatchedSizes(
            f"{len(events)} events but {len(clustering.exemplar_of)} cluster assignments"
        )
    members: dict[int, list[AUEvent]] = {}
    for event, ex in zip(events, clustering.exemplar_of):
        members.setdefault(ex, []).append(event)

    drafts = []
    for ex, evs in members.items():
        drafts.append(FacialGesture(
            gesture_id=-1,
            subject_id=subject_id,
            member_events=tuple(evs),
            start_time=min(e.onset_time for e in evs),
            apex_time=float(statistics.median(e.apex_time for e in evs)),
            end_time=max(e.offset_time for e in evs),
            exemplar=ex,
        ))
    drafts.sort(key=lambda g: (g.start_time, g.apex_time, g.exemplar))
    return [replace(g, gesture_id=i) for i, g in enumerate(drafts)]


def _span(values) -> tuple:
    values = list(values)
    return (float(min(values)), float(max(values)))


def normalize_cohort(
    gestures: Sequence[FacialGesture], scope: str = "sd", subject_id: Optional[str] = None
) -> NormalizationContext:
    """Min/max of duration, rise and fall over every member event in scope.

    For ``scope="sd"`` the gestures must come from a single subject, or
    ``subject_id`` picks one out of a mixed list. ``scope="si"`` pools
    everything it is given.
    """
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}, got {scope!r}")
    if scope == "sd":
        if subject_id is not None:
            gestures = [g for g in gestures if g.subject_id == subject_id]
        elif len({g.subject_id for g in gestures}) > 1:
            raise ValueError("sd scope over several subjects; pass subject_id")
    events = [e for g in gestures for e in g.member_events]
    if not events:
        raise EmptyCohort("no gestures in normalization scope")
    return NormalizationContext(
        scope=scope,
        duration=_span(e.duration for e in events),
        rise=_span(e.rise_rate for e in events),
        fall=_span(e.fall_rate for e in events),
    )


def _minmax(x: float, span: tuple) -> float:
    lo, hi = span
    if hi <= lo:
        return 0.0
    return min(max((x - lo) / (hi - lo), 0.0), 1.0)


def slot_events(gesture: FacialGesture) -> dict[str, AUEvent]:
    """One event per AU; when an AU repeats, the higher apex wins (earlier onset on ties)."""
    def strength(e):
        return (e.apex_intensity, -e.onset_time, -e.offset_time, e.onset_intensity, e.offset_intensity)

    chosen: dict[str, AUEvent] = {}
    for e in gesture.member_events:
        cur = chosen.get(e.au_id)
        if cur is None or strength(e) > strength(cur):
            chosen[e.au_id] = e
    return chosen


def featurize_gesture(gesture: FacialGesture, norm: NormalizationContext) -> np.ndarray:
    v = np.zeros(N_FEATURES)
    for au_id, e in slot_events(gesture).items():
        base = AU_VOCABULARY.index(au_id) * len(SLOTS)
        v[base:base + 5] = (
            1.0,
            min(e.apex_intensity / INTENSITY_MAX, 1.0),
            _minmax(e.duration, norm.duration),
            _minmax(e.rise_rate, norm.rise),
            _minmax(e.fall_rate, norm.fall),
        )
    return v


def featurize_all(gestures: Sequence[FacialGesture], norm: NormalizationContext) -> list[FacialGesture]:
    return [replace(g, features=featurize_gesture(g, norm)) for g in gestures]


def gestures_to_csv(gestures: Sequence[FacialGesture]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(
        ["subject_id", "gesture_id", "members", "start_s", "apex_s", "end_s"] + list(FEATURE_NAMES)
    )
    for g in gestures:
        feats = g.features if g.features is not None else np.full(N_FEATURES, np.nan)
        writer.writerow(
            [g.subject_id, g.gesture_id, " ".join(e.au_id for e in g.member_events),
             repr(g.start_time), repr(g.apex_time), repr(g.end_time)]
            + [repr(float(x)) for x in feats]
        )
    return out.getvalue()
