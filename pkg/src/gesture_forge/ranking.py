"""Stimulus alignment, prototype ranking and Top-k / median-rank metrics.

The first two stimulus-locked gestures of a subject (alpha, beta) form a
prototype by coordinate-wise mean. Every other gesture of that subject,
the third response (gamma) included, is ranked by Euclidean distance to
the prototype. In subject-dependent mode (``"sd"``) the prototype comes
from the subject's own alpha/beta; in subject-independent mode (``"si"``)
it is the mean over the alpha/beta vectors of every included subject,
featurized under one pooled normalization.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import (
    EmptyCandidates,
    EmptyList,
    ExcludedSubject,
    LengthMismatch,
    NoIncludedSubjects,
)
from .gestures import FacialGesture, featurize_all, normalize_cohort
from .ingest import StimulusSchedule

MODES = ("sd", "si")
DEFAULT_WINDOW = 2.0
N_RESPONSES = 3
NO_RESPONSE = "no significant facial response"


@dataclass(frozen=True)
class StimulusAlignment:
    subject_id: str
    stimulus_times: tuple
    matches: tuple  # gesture_id or None, one per stimulus
    response_window: float
    excluded: bool = False
    reason: str = ""

    @property
    def alpha(self) -> Optional[int]:
        return self.matches[0] if len(self.matches) > 0 else None

    @property
    def beta(self) -> Optional[int]:
        return self.matches[1] if len(self.matches) > 1 else None

    @property
    def gamma(self) -> Optional[int]:
        return self.matches[2] if len(self.matches) > 2 else None


@dataclass(frozen=True)
class SubjectResult:
    subject_id: str
    mode: str
    rank_of_gamma: Optional[int]
    candidate_count: int
    excluded: bool = False
    reason: str = ""
    gamma_id: Optional[int] = None
    ranking: tuple = field(default=(), repr=False)  # (gesture_id, distance) pairs


@dataclass(frozen=True)
class MetricsReport:
    mode: str
    top2_pct: float
    top10_pct: float
    top15pct_pct: float
    median_rank: float
    included_subjects: int
    excluded_subjects: int
    median_candidate_count: float
    topk_pct: tuple = ()  # extra (k, pct) pairs


def align_stimuli(
    gestures: Sequence[FacialGesture],
    schedule: StimulusSchedule,
    window: float = DEFAULT_WINDOW,
) -> StimulusAlignment:
    """Match each stimulus to the earliest-apex unmatched gesture in ``[t, t + window]``.

    Gestures peaking before a stimulus are never matched to it. A subject
    missing a match for any of the first three stimuli is excluded.
    """
    if window <= 0:
        raise ValueError("response window must be positive")
    used: set[int] = set()
    matches = []
    for t in schedule.stimulus_times:
        candidates = [
            g for g in gestures
            if g.gesture_id not in used and t <= g.apex_time <= t + window
        ]
        if candidates:
            hit = min(candidates, key=lambda g: (g.apex_time, g.gesture_id))
            used.add(hit.gesture_id)
            matches.append(hit.gesture_id)
        else:
            matches.append(None)

    reason = ""
    if len(matches) < N_RESPONSES:
        reason = f"schedule has {len(matches)} stimuli, need {N_RESPONSES}"
    elif any(m is None for m in matches[:N_RESPONSES]):
        missing = [i + 1 for i, m in enumerate(matches[:N_RESPONSES]) if m is None]
        reason = f"{NO_RESPONSE} to stimulus {', '.join(map(str, missing))}"
    return StimulusAlignment(
        subject_id=schedule.subject_id,
        stimulus_times=schedule.stimulus_times,
        matches=tuple(matches),
        response_window=window,
        excluded=bool(reason),
        reason=reason,
    )


def prototype_mean(vectors: Sequence[np.ndarray]) -> np.ndarray:
    if len(vectors) == 0:
        raise EmptyList("cannot average an empty list of vectors")
    lengths = {len(v) for v in vectors}
    if len(lengths) != 1:
        raise LengthMismatch(f"vectors have differing lengths {sorted(lengths)}")
    return np.mean(np.vstack(vectors), axis=0)


def rank_candidates(prototype: np.ndarray, candidates: Sequence[FacialGesture]) -> list[tuple[int, float]]:
    """Candidates nearest-first, as ``(gesture_id, distance)``.

    Equal distances fall back to earlier apex time, then lower gesture id.
    """
    if len(candidates) == 0:
        raise EmptyCandidates("nothing to rank")
    feats = np.vstack([g.features for g in candidates])
    if feats.shape[1] != len(prototype):
        raise LengthMismatch("prototype and candidate feature lengths differ")
    dist = np.sqrt(((feats - prototype[None, :]) ** 2).sum(axis=1))
    order = sorted(
        range(len(candidates)),
        key=lambda i: (dist[i], candidates[i].apex_time, candidates[i].gesture_id),
    )
    return [(candidates[i].gesture_id, float(dist[i])) for i in order]


def _by_id(gestures):
    return {g.gesture_id: g for g in gestures}


def evaluate_subject(
    gestures: Sequence[FacialGesture],
    alignment: StimulusAlignment,
    mode: str = "sd",
    si_prototype: Optional[np.ndarray] = None,
) -> SubjectResult:
    """Rank the subject's gamma response against the prototype.

    ``gestures`` must already be featurized. In ``"si"`` mode the pooled
    prototype has to be supplied; in ``"sd"`` mode it is built from the
    subject's own alpha and beta.

    Raises
    ------
    ExcludedSubject
        The alignment is incomplete.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if alignment.excluded:
        raise ExcludedSubject(alignment.subject_id, alignment.reason)
    index = _by_id(gestures)
    alpha, beta, gamma = index[alignment.alpha], index[alignment.beta], index[alignment.gamma]
    if mode == "sd":
        prototype = prototype_mean([alpha.features, beta.features])
    else:
        if si_prototype is None:
            raise ValueError("si mode needs the pooled prototype")
        prototype = si_prototype
    candidates = [g for g in gestures if g.gesture_id not in (alpha.gesture_id, beta.gesture_id)]
    ranking = rank_candidates(prototype, candidates)
    rank = 1 + [gid for gid, _ in ranking].index(gamma.gesture_id)
    return SubjectResult(
        subject_id=alignment.subject_id,
        mode=mode,
        rank_of_gamma=rank,
        candidate_count=len(candidates),
        gamma_id=gamma.gesture_id,
        ranking=tuple(ranking),
    )


def excluded_result(subject_id: str, mode: str, reason: str, candidate_count: int = 0) -> SubjectResult:
    return SubjectResult(
        subject_id=subject_id, mode=mode, rank_of_gamma=None,
        candidate_count=candidate_count, excluded=True, reason=reason,
    )


def si_prototype_for(featurized: Mapping[str, Sequence[FacialGesture]], alignments: Mapping[str, StimulusAlignment]) -> np.ndarray:
    """Mean over the alpha and beta vectors of every subject in ``alignments``."""
    pool = []
    for sid in sorted(alignments):
        index = _by_id(featurized[sid])
        pool.append(index[alignments[sid].alpha].features)
        pool.append(index[alignments[sid].beta].features)
    return prototype_mean(pool)


def evaluate_cohort(
    gestures_by_subject: Mapping[str, Sequence[FacialGesture]],
    schedules: Mapping[str, StimulusSchedule],
    mode: str = "sd",
    window: float = DEFAULT_WINDOW,
    scope: Optional[str] = None,
) -> list[SubjectResult]:
    """Evaluate every subject; returns results in sorted subject order.

    ``gestures_by_subject`` holds unfeaturized gestures. Normalization
    follows ``scope`` (defaults to ``mode``): per subject for ``"sd"``,
    pooled over all included subjects for ``"si"``. In SI mode the pooled
    prototype and pooled normalization are computed once from the
    included subjects before any ranking.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    scope = scope or mode

    alignments, results = {}, {}
    for sid in sorted(gestures_by_subject):
        gestures = gestures_by_subject[sid]
        if sid not in schedules:
            results[sid] = excluded_result(sid, mode, "no stimulus schedule")
            continue
        alignment = align_stimuli(gestures, schedules[sid], window)
        if alignment.excluded:
            results[sid] = excluded_result(sid, mode, alignment.reason)
        else:
            alignments[sid] = alignment

    featurized = {}
    if alignments:
        if scope == "si":
            pooled = [g for sid in sorted(alignments) for g in gestures_by_subject[sid]]
            norm = normalize_cohort(pooled, "si")
            for sid in alignments:
                featurized[sid] = featurize_all(gestures_by_subject[sid], norm)
        else:
            for sid in alignments:
                norm = normalize_cohort(gestures_by_subject[sid], "sd")
                featurized[sid] = featurize_all(gestures_by_subject[sid], norm)

    si_proto = si_prototype_for(featurized, alignments) if mode == "si" and alignments else None
    for sid in sorted(alignments):
        results[sid] = evaluate_subject(featurized[sid], alignments[sid], mode, si_proto)
    return [results[sid] for sid in sorted(results)]


def top15_cutoff(candidate_count: int) -> int:
    """max(1, round(0.15 * n)) with halves rounded up, in exact integer arithmetic."""
    return max(1, (15 * candidate_count + 50) // 100)


def aggregate_metrics(results: Sequence[SubjectResult], topk: Sequence[int] = ()) -> MetricsReport:
    """Table-style summary over the included subjects.

    Percentages are kept at full precision; round them only for display.
    """
    included = [r for r in results if not r.excluded]
    if not included:
        raise NoIncludedSubjects("every subject was excluded")
    modes = {r.mode for r in results}
    if len(modes) != 1:
        raise ValueError(f"results mix modes {sorted(modes)}")
    n = len(included)
    ranks = [r.rank_of_gamma for r in included]

    def pct(hits):
        return 100.0 * hits / n

    return MetricsReport(
        mode=modes.pop(),
        top2_pct=pct(sum(r <= 2 for r in ranks)),
        top10_pct=pct(sum(r <= 10 for r in ranks)),
        top15pct_pct=pct(sum(r.rank_of_gamma <= top15_cutoff(r.candidate_count) for r in included)),
        median_rank=float(statistics.median(ranks)),
        included_subjects=n,
        excluded_subjects=len(results) - n,
        median_candidate_count=float(statistics.median(r.candidate_count for r in included)),
        topk_pct=tuple((int(k), pct(sum(r <= k for r in ranks))) for k in topk),
    )
