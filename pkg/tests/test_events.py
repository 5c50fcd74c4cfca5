import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gesture_forge.errors import EvenWindow, WindowTooLarge
from gesture_forge.events import DetectionParams, detect_events, events_to_csv, smooth_series
from gesture_forge.ingest import SubjectTrace

RAW = DetectionParams(activation_threshold=0.5, min_duration_frames=3, smoothing_window=1)


def one_channel(values, fps=10.0, au="AU12"):
    values = np.asarray(values, dtype=float)
    return SubjectTrace("S", np.arange(len(values)) / fps, (au,), values[:, None], np.ones(len(values), bool))


def naive_events(t, y, threshold, min_len):
    """Frame-by-frame reference: walk the series, open/close runs explicitly."""
    out, start = [], None
    for i in range(len(y) + 1):
        above = i < len(y) and y[i] >= threshold
        if above and start is None:
            start = i
        elif not above and start is not None:
            end = i - 1
            if end - start + 1 >= min_len:
                apex = start
                for j in range(start, end + 1):
                    if y[j] > y[apex]:
                        apex = j
                rise = (y[apex] - y[start]) / (t[apex] - t[start]) if apex > start else 0.0
                fall = (y[apex] - y[end]) / (t[end] - t[apex]) if end > apex else 0.0
                out.append((t[start], t[apex], t[end], y[apex], rise, fall))
            start = None
    return out


def test_smooth_examples():
    assert smooth_series([0, 0, 3, 0, 0], 3).tolist() == [0, 1, 1, 1, 0]
    assert smooth_series([2, 2, 2, 2], 3).tolist() == [2, 2, 2, 2]
    x = [0.3, 1.7, 2.2, 0.1]
    assert smooth_series(x, 1).tolist() == x


def test_smooth_edges_shrink():
    np.testing.assert_allclose(smooth_series([1, 2, 3, 4, 5], 5), [2.0, 2.5, 3.0, 3.5, 4.0])


def test_smooth_errors():
    with pytest.raises(EvenWindow):
        smooth_series([1, 2, 3], 2)
    with pytest.raises(WindowTooLarge):
        smooth_series([1, 2, 3], 5)


def test_detect_worked_example():
    # hand simulation: run is frames 2..6 (>= 0.5), apex frame 4
    events = detect_events(one_channel([0, 0, 1.0, 2.0, 3.0, 2.0, 1.0, 0]), RAW)
    assert len(events) == 1
    e = events[0]
    assert e.onset_time == pytest.approx(0.2)
    assert e.apex_time == pytest.approx(0.4)
    assert e.offset_time == pytest.approx(0.6)
    assert e.apex_intensity == 3.0
    assert e.rise_rate == pytest.approx(10.0)
    assert e.fall_rate == pytest.approx(10.0)


def test_all_zero_channel():
    assert detect_events(one_channel(np.zeros(50))) == []


def test_plateau_apex_earliest():
    e, = detect_events(one_channel([0, 2, 5, 5, 5, 2, 0]), RAW)
    assert e.apex_time == pytest.approx(0.2)


def test_short_runs_discarded():
    assert detect_events(one_channel([0, 1, 1, 0, 0, 1, 1, 1, 0]), RAW)[0].onset_time == pytest.approx(0.5)
    assert len(detect_events(one_channel([0, 1, 1, 0, 0, 1, 1, 1, 0]), RAW)) == 1


def test_threshold_is_inclusive():
    events = detect_events(one_channel([0.5, 0.5, 0.5]), RAW)
    assert len(events) == 1


def test_boundary_runs_kept():
    events = detect_events(one_channel([3, 2, 1, 0, 0, 0, 1, 2, 3]), RAW)
    assert [e.onset_time for e in events] == pytest.approx([0.0, 0.6])
    assert events[0].rise_rate == 0.0
    assert events[1].fall_rate == 0.0


def test_sorted_by_onset_then_au():
    t = np.arange(10) / 10
    x = np.zeros((10, 2))
    x[2:6, 0] = 2.0  # AU12 column second in canonical order below
    x[2:6, 1] = 2.0
    trace = SubjectTrace("S", t, ("AU04", "AU12"), x, np.ones(10, bool))
    assert [e.au_id for e in detect_events(trace, RAW)] == ["AU04", "AU12"]


def test_short_trace_shrinks_window():
    events = detect_events(one_channel([1, 1, 1]), DetectionParams())
    assert len(events) == 1


def test_events_csv_header():
    events = detect_events(one_channel([0, 0, 1.0, 2.0, 3.0, 2.0, 1.0, 0]), RAW)
    lines = events_to_csv({"S01": events}).splitlines()
    assert lines[0] == "subject_id,au_id,onset_s,apex_s,offset_s,onset_i,apex_i,offset_i,rise_rate,fall_rate"
    assert lines[1].startswith("S01,AU12,")


channel = st.lists(st.floats(0.0, 5.0, allow_nan=False), min_size=1, max_size=60)


@settings(max_examples=300, deadline=None)
@given(channel, st.integers(1, 4), st.sampled_from([0.5, 1.0, 2.5]))
def test_matches_naive_reference(values, min_len, threshold):
    params = DetectionParams(threshold, min_len, 1)
    trace = one_channel(values)
    got = [(e.onset_time, e.apex_time, e.offset_time, e.apex_intensity, e.rise_rate, e.fall_rate)
           for e in detect_events(trace, params)]
    assert got == naive_events(trace.timestamps, np.asarray(values, float), threshold, min_len)


@settings(max_examples=300, deadline=None)
@given(channel, st.sampled_from([1, 3, 5]))
def test_event_invariants(values, window):
    params = DetectionParams(0.5, 2, window)
    trace = one_channel(values)
    events = detect_events(trace, params)
    for e in events:
        assert e.onset_time <= e.apex_time <= e.offset_time
        assert e.apex_intensity >= 0.5
        assert e.apex_intensity >= e.onset_intensity and e.apex_intensity >= e.offset_intensity
        assert e.rise_rate >= 0 and e.fall_rate >= 0
    for a, b in zip(events, events[1:]):
        assert a.offset_time < b.onset_time
        # at least one sub-threshold frame between them
        gap = (trace.timestamps > a.offset_time) & (trace.timestamps < b.onset_time)
        assert gap.any()


@settings(max_examples=300, deadline=None)
@given(channel)
def test_run_partition(values):
    """Every above-threshold frame is inside an event unless its whole run was too short."""
    params = DetectionParams(0.5, 3, 1)
    trace = one_channel(values)
    events = detect_events(trace, params)
    y = np.asarray(values, float)
    covered = np.zeros(len(y), bool)
    for e in events:
        covered |= (trace.timestamps >= e.onset_time) & (trace.timestamps <= e.offset_time)
    assert not np.any(covered & (y < 0.5))
    for i in np.flatnonzero((y >= 0.5) & ~covered):
        lo = i
        while lo > 0 and y[lo - 1] >= 0.5:
            lo -= 1
        hi = i
        while hi + 1 < len(y) and y[hi + 1] >= 0.5:
            hi += 1
        assert hi - lo + 1 < 3


def test_deterministic(rng):
    x = rng.uniform(0, 3, size=(400, 3))
    trace = SubjectTrace("S", np.arange(400) / 30, ("AU01", "AU06", "AU12"), x, np.ones(400, bool))
    assert detect_events(trace) == detect_events(trace)
