"""Seeded synthetic AU traces with known responses to known stimuli.

Each subject has a personal response template: a handful of AUs, each a
triangular pulse with its own onset lag, rise time, fall time and apex
intensity. Every stimulus replays the template with Gaussian jitter on
times and intensities. Random distractor gestures fill the rest of the
trace. Pulses add up and the sum is clamped to [0, 5].

Seeds
-----
Per-subject seeds come from the master seed by a splitmix64 step:
``seed_i = splitmix64(master + (i + 1) * 0x9E3779B97F4A7C15)`` for the
zero-based subject index ``i``. Inside a subject, the template and
schedule, the response jitter, and the distractors draw from separate
streams, so changing the distractors never moves the responses.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ScheduleOverflow
from .ingest import (
    AU_VOCABULARY,
    INTENSITY_MAX,
    StimulusSchedule,
    SubjectTrace,
    au_sort_key,
    write_au_csv,
    write_stimulus_schedule,
)

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
GROUND_TRUTH_SCHEMA = 1
MIN_PULSE_TIME = 0.1
# free time kept between distinct gestures when placement avoidance is on
GESTURE_GAP = 1.0
PLACEMENT_TRIES = 2000


def splitmix64(x: int) -> int:
    z = (x + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, index: int) -> int:
    return splitmix64((master_seed + index * GOLDEN_GAMMA) & MASK64)


@dataclass(frozen=True)
class PulseSpec:
    """One AU pulse relative to its gesture's reference time."""

    au_id: str
    apex_intensity: float
    onset_lag: float
    rise: float
    fall: float


@dataclass(frozen=True)
class SubjectProfile:
    subject_id: str
    response_template: tuple
    time_jitter: float = 0.0
    intensity_jitter: float = 0.0
    distractor_count: int = 0
    distractor_spread: Optional[tuple] = None  # (t0, t1); whole trace when None
    seed: int = 0
    avoid_response_windows: bool = True

    def __post_init__(self):
        aus = [p.au_id for p in self.response_template]
        if not aus:
            raise ValueError("response template is empty")
        if any(a not in AU_VOCABULARY for a in aus):
            raise ValueError(f"template AUs outside the vocabulary: {aus}")
        if len(set(aus)) != len(aus):
            raise ValueError("template repeats an AU")
        if self.time_jitter < 0 or self.intensity_jitter < 0:
            raise ValueError("jitter must be >= 0")
        if self.distractor_count < 0:
            raise ValueError("distractor_count must be >= 0")


@dataclass(frozen=True)
class Pulse:
    au_id: str
    onset: float
    apex: float
    offset: float
    apex_intensity: float


@dataclass(frozen=True)
class TruthGesture:
    label: str  # "response" or "distractor"
    stimulus_index: Optional[int]
    members: tuple

    @property
    def start(self) -> float:
        return min(p.onset for p in self.members)

    @property
    def end(self) -> float:
        return max(p.offset for p in self.members)

    @property
    def apex(self) -> float:
        return float(np.median([p.apex for p in self.members]))

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "stimulus_index": self.stimulus_index,
            "start_s": self.start,
            "apex_s": self.apex,
            "end_s": self.end,
            "members": [asdict(p) for p in self.members],
        }


@dataclass(frozen=True)
class GroundTruth:
    subject_id: str
    gestures: tuple

    @property
    def responses(self) -> tuple:
        return tuple(g for g in self.gestures if g.label == "response")

    def to_dict(self) -> dict:
        return {"subject_id": self.subject_id, "gestures": [g.to_dict() for g in self.gestures]}


@dataclass(frozen=True)
class _Shape:
    """A realized pulse relative to its gesture's reference time."""

    au_id: str
    ref: float
    lag: float
    rise: float
    fall: float
    amp: float

    def pulse(self) -> Pulse:
        onset = self.ref + self.lag
        return Pulse(self.au_id, onset, onset + self.rise, onset + self.rise + self.fall, self.amp)

    def render(self, n_frames: int, fps: float) -> np.ndarray:
        # time relative to ``ref``; on-grid references give identical samples for identical shapes
        t = (np.arange(n_frames) - self.ref * fps) / fps - self.lag
        up = t / self.rise
        down = (self.rise + self.fall - t) / self.fall
        return self.amp * np.clip(np.minimum(up, down), 0.0, 1.0)


def _realize(spec: PulseSpec, ref: float, rng, time_jitter: float, intensity_jitter: float) -> _Shape:
    lag = spec.onset_lag + rng.normal(0.0, time_jitter)
    rise = max(spec.rise + rng.normal(0.0, time_jitter), MIN_PULSE_TIME)
    fall = max(spec.fall + rng.normal(0.0, time_jitter), MIN_PULSE_TIME)
    amp = min(max(spec.apex_intensity + rng.normal(0.0, intensity_jitter), 0.0), INTENSITY_MAX)
    return _Shape(spec.au_id, float(ref), float(lag), float(rise), float(fall), float(amp))


def random_pulse_specs(rng, n_aus: int) -> tuple:
    """Random AU subset with random pulse shapes, in canonical AU order."""
    aus = sorted(rng.choice(AU_VOCABULARY, size=n_aus, replace=False).tolist(), key=au_sort_key)
    return tuple(
        PulseSpec(
            au_id=au,
            apex_intensity=float(rng.uniform(1.5, 4.5)),
            onset_lag=float(rng.uniform(0.0, 0.4)),
            rise=float(rng.uniform(0.3, 0.7)),
            fall=float(rng.uniform(0.4, 1.0)),
        )
        for au in aus
    )


def _overlaps(a0, a1, intervals) -> bool:
    return any(a0 < b1 and b0 < a1 for b0, b1 in intervals)


def generate_subject_trace(
    profile: SubjectProfile,
    schedule: StimulusSchedule,
    fps: float = 30.0,
    length: float = 300.0,
    response_window: float = 2.0,
) -> tuple[SubjectTrace, GroundTruth]:
    """Render one subject's trace and its ground truth.

    Raises
    ------
    ScheduleOverflow
        A response runs past the end of the trace, or the distractors do
        not fit around the responses.
    """
    if fps <= 0 or length <= 0:
        raise ValueError("fps and length must be positive")
    n_frames = int(round(length * fps))
    t = np.arange(n_frames) / fps
    rng_resp = np.random.default_rng([profile.seed, 1])
    rng_dist = np.random.default_rng([profile.seed, 2])

    gestures = []
    for k, stim in enumerate(schedule.stimulus_times, start=1):
        shapes = tuple(
            _realize(spec, stim, rng_resp, profile.time_jitter, profile.intensity_jitter)
            for spec in profile.response_template
        )
        g = TruthGesture("response", k, tuple(sh.pulse() for sh in shapes))
        if g.end > length or g.start < 0:
            raise ScheduleOverflow(
                f"{profile.subject_id}: response to stimulus {k} spans "
                f"{g.start:.2f}-{g.end:.2f}s, trace is {length}s"
            )
        gestures.append((g, shapes))

    blocked = []
    if profile.avoid_response_windows:
        for stim, (g, _) in zip(schedule.stimulus_times, gestures):
            blocked.append((min(stim, g.start) - GESTURE_GAP, max(stim + response_window, g.end) + GESTURE_GAP))
    lo, hi = profile.distractor_spread or (0.0, length)
    for _ in range(profile.distractor_count):
        specs = random_pulse_specs(rng_dist, int(rng_dist.integers(1, 5)))
        for _attempt in range(PLACEMENT_TRIES):
            ref = float(rng_dist.uniform(lo, hi))
            shapes = tuple(_realize(s, ref, rng_dist, 0.0, 0.0) for s in specs)
            g = TruthGesture("distractor", None, tuple(sh.pulse() for sh in shapes))
            if g.end > length:
                continue
            if profile.avoid_response_windows and _overlaps(g.start - GESTURE_GAP, g.end + GESTURE_GAP, blocked):
                continue
            break
        else:
            raise ScheduleOverflow(f"{profile.subject_id}: cannot place {profile.distractor_count} distractors")
        if profile.avoid_response_windows:
            blocked.append((g.start, g.end))
        gestures.append((g, shapes))
    gestures.sort(key=lambda pair: (pair[0].start, pair[0].label))

    x = np.zeros((n_frames, len(AU_VOCABULARY)))
    for _, shapes in gestures:
        for sh in shapes:
            x[:, AU_VOCABULARY.index(sh.au_id)] += sh.render(n_frames, fps)
    np.clip(x, 0.0, INTENSITY_MAX, out=x)

    trace = SubjectTrace(
        subject_id=profile.subject_id,
        timestamps=t,
        au_ids=AU_VOCABULARY,
        intensities=x,
        frame_valid=np.ones(n_frames, dtype=bool),
    )
    return trace, GroundTruth(profile.subject_id, tuple(g for g, _ in gestures))


@dataclass(frozen=True)
class CohortConfig:
    n_subjects: int = 20
    fps: float = 30.0
    length: float = 300.0
    n_stimuli: int = 3
    distractor_count: int = 40
    time_jitter: float = 0.0
    intensity_jitter: float = 0.0
    template_aus: tuple = (3, 5)  # inclusive range of AUs per response template
    shared_template: bool = False
    avoid_response_windows: bool = True
    first_stimulus: tuple = (15.0, 60.0)
    stimulus_gap: tuple = (40.0, 90.0)
    response_window: float = 2.0


@dataclass
class Cohort:
    config: CohortConfig
    master_seed: int
    profiles: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)
    schedules: dict = field(default_factory=dict)
    truths: dict = field(default_factory=dict)


def subject_ids(n: int) -> list[str]:
    width = max(2, len(str(n)))
    return [f"S{i:0{width}d}" for i in range(1, n + 1)]


def _subject_setup(config: CohortConfig, sid: str, seed: int, shared):
    rng = np.random.default_rng([seed, 0])
    lo, hi = config.template_aus
    template = shared if shared is not None else random_pulse_specs(rng, int(rng.integers(lo, hi + 1)))
    times, t = [], float(rng.uniform(*config.first_stimulus))
    for _ in range(config.n_stimuli):
        times.append(round(t * config.fps) / config.fps)  # stimuli sit on the frame grid
        t += float(rng.uniform(*config.stimulus_gap))
    profile = SubjectProfile(
        subject_id=sid,
        response_template=template,
        time_jitter=config.time_jitter,
        intensity_jitter=config.intensity_jitter,
        distractor_count=config.distractor_count,
        seed=seed,
        avoid_response_windows=config.avoid_response_windows,
    )
    return profile, StimulusSchedule(sid, tuple(times))


def generate_cohort(config: CohortConfig, master_seed: int, out_dir=None) -> Cohort:
    """Build a whole synthetic cohort; optionally write it to ``out_dir``.

    Files written: ``traces/<subject>.csv`` per subject,
    ``stimulus_schedule.csv`` and ``ground_truth.json``.
    """
    cohort = Cohort(config=config, master_seed=master_seed)
    shared = None
    if config.shared_template:
        rng = np.random.default_rng([derive_seed(master_seed, 0), 0])
        lo, hi = config.template_aus
        shared = random_pulse_specs(rng, int(rng.integers(lo, hi + 1)))
    for i, sid in enumerate(subject_ids(config.n_subjects)):
        seed = derive_seed(master_seed, i + 1)
        profile, schedule = _subject_setup(config, sid, seed, shared)
        trace, truth = generate_subject_trace(
            profile, schedule, config.fps, config.length, config.response_window
        )
        cohort.profiles[sid] = profile
        cohort.schedules[sid] = schedule
        cohort.traces[sid] = trace
        cohort.truths[sid] = truth
    if out_dir is not None:
        write_cohort(cohort, out_dir)
    return cohort


def write_cohort(cohort: Cohort, out_dir) -> Path:
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    for sid, trace in cohort.traces.items():
        (out / "traces" / f"{sid}.csv").write_text(write_au_csv(trace), encoding="utf-8")
    (out / "stimulus_schedule.csv").write_text(write_stimulus_schedule(cohort.schedules), encoding="utf-8")
    doc = {
        "schema_version": GROUND_TRUTH_SCHEMA,
        "master_seed": cohort.master_seed,
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cohort.config).items()},
        "subjects": {
            sid: {
                "seed": cohort.profiles[sid].seed,
                "stimulus_times": list(cohort.schedules[sid].stimulus_times),
                "template": [asdict(p) for p in cohort.profiles[sid].response_template],
                **cohort.truths[sid].to_dict(),
            }
            for sid in sorted(cohort.truths)
        },
    }
    (out / "ground_truth.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return out
