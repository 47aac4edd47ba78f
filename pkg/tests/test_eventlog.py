"""Tests for event-log parsing, trajectory extraction, and waiting-time removal."""

from __future__ import annotations

import io
import math
from datetime import datetime

import numpy as np
import pytest

from edsynth import eventlog as ev


# ---------------------------------------------------------------------------
# frozen scalar values, derived by hand
# ---------------------------------------------------------------------------


def naive_median(values):
    ordered = sorted(values)
    n = len(ordered)
    if n % 2:
        return float(ordered[n // 2])
    return (ordered[n // 2 - 1] + ordered[n // 2]) / 2.0


def naive_mad(values):
    med = naive_median(values)
    return naive_median([abs(v - med) for v in values])


def test_median_and_mad_hand_examples():
    # {8, 10, 12}: median 10, deviations {2, 0, 2} -> MAD 2
    assert naive_median([8, 10, 12]) == 10.0
    assert naive_mad([8, 10, 12]) == 2.0
    # {5, 10, 100}: median 10, deviations {5, 0, 90} -> MAD 5
    assert naive_median([5, 10, 100]) == 10.0
    assert naive_mad([5, 10, 100]) == 5.0


def test_modified_zscore_hand_examples():
    # 0.6745 * (20 - 10) / 2 = 3.3725
    assert ev.modified_zscore(20.0, 10.0, 2.0) == pytest.approx(3.3725, abs=1e-12)
    # 0.6745 * (4 - 10) / 2 = -2.0235
    assert ev.modified_zscore(4.0, 10.0, 2.0) == pytest.approx(-2.0235, abs=1e-12)
    assert ev.modified_zscore(10.0, 10.0, 2.0) == 0.0


def test_clamp_hand_example():
    # z(25) = 0.6745 * 15 / 2 = 5.06 > 3, so 25 -> 10 + 3 * 1.4826 * 2 = 18.8956
    assert ev.clamp_duration(25.0, 10.0, 2.0, 3.0) == pytest.approx(18.8956, abs=1e-12)
    # z(12) = 0.6745 < 3: kept bit-identical
    assert ev.clamp_duration(12.0, 10.0, 2.0, 3.0) == 12.0


def test_zero_mad_rules():
    assert ev.modified_zscore(10.0, 10.0, 0.0) == 0.0
    assert ev.modified_zscore(10.5, 10.0, 0.0) == math.inf
    assert ev.modified_zscore(9.5, 10.0, 0.0) == math.inf
    # any deviation from the median collapses onto it
    assert ev.clamp_duration(10.5, 10.0, 0.0, 3.0) == 10.0
    assert ev.clamp_duration(9.5, 10.0, 0.0, 3.0) == 10.0
    assert ev.clamp_duration(10.0, 10.0, 0.0, 3.0) == 10.0
    with pytest.raises(ValueError):
        ev.modified_zscore(1.0, 1.0, -0.5)


def test_infinite_threshold_disables_clamping():
    assert ev.clamp_duration(1e9, 10.0, 2.0, math.inf) == 1e9
    # even the zero-MAD sentinel must not fire when k is infinite
    assert ev.clamp_duration(99.0, 10.0, 0.0, math.inf) == 99.0


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


LOG_TEXT = """stay_id,activity,timestamp
s1,arrival,2025-01-06T08:00
s1,triage,2025-01-06T08:12
s2,arrival,2025-01-06T08:05
s1,lab_test,2025-01-06T09:00
s2,triage,2025-01-06T08:20
s1,discharge,2025-01-06T10:30
s2,discharge,2025-01-06T09:02
"""


def test_parse_event_log_from_stream_and_order_preserved():
    events = ev.parse_event_log(io.StringIO(LOG_TEXT))
    assert len(events) == 7
    assert events[0] == ev.StayEvent("s1", "arrival", datetime(2025, 1, 6, 8, 0))
    # rows keep file order, not stay order
    assert [e.stay_id for e in events[:4]] == ["s1", "s1", "s2", "s1"]


def test_parse_floors_seconds_to_minute():
    text = "stay_id,activity,timestamp\ns1,arrival,2025-01-06T08:00:45\ns1,discharge,2025-01-06T08:59:59\n"
    events = ev.parse_event_log(io.StringIO(text))
    assert events[0].timestamp == datetime(2025, 1, 6, 8, 0)
    assert events[1].timestamp == datetime(2025, 1, 6, 8, 59)


def test_parse_skips_comment_lines():
    events = ev.parse_event_log(io.StringIO("# generated corpus\n" + LOG_TEXT))
    assert len(events) == 7


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("activity,timestamp\n", "header"),
        ("stay_id,activity,timestamp\ns1,arrival\n", "line 2"),
        ("stay_id,activity,timestamp\ns1,teleport,2025-01-06T08:00\n", "teleport"),
        ("stay_id,activity,timestamp\ns1,arrival,yesterday\n", "line 2"),
        (
            "stay_id,activity,timestamp\ns1,arrival,2025-01-06T08:00\ns1,arrival,2025-01-06T09:00\n",
            "arrival",
        ),
    ],
)
def test_parse_errors(text, fragment):
    with pytest.raises(ev.EventLogError) as exc:
        ev.parse_event_log(io.StringIO(text))
    assert fragment in str(exc.value)


def test_unknown_activity_error_lists_allowed_names():
    text = "stay_id,activity,timestamp\ns1,teleport,2025-01-06T08:00\n"
    with pytest.raises(ev.EventLogError) as exc:
        ev.parse_event_log(io.StringIO(text))
    for name in ev.ACTIVITIES:
        assert name in str(exc.value)


# ---------------------------------------------------------------------------
# trajectory extraction
# ---------------------------------------------------------------------------


def test_extract_trajectories_durations_by_hand():
    events = ev.parse_event_log(io.StringIO(LOG_TEXT))
    trajectories = ev.extract_trajectories(events)
    assert [t.stay_id for t in trajectories] == ["s1", "s2"]  # first-appearance order
    s1 = trajectories[0]
    assert [tuple(step) for step in s1.steps] == [
        ("triage", 12.0),
        ("lab_test", 48.0),
        ("discharge", 90.0),
    ]
    assert s1.duration_total() == 150.0
    s2 = trajectories[1]
    assert [tuple(step) for step in s2.steps] == [("triage", 15.0), ("discharge", 42.0)]


def test_extract_sorts_by_timestamp_keeping_ties_stable():
    rows = [
        ev.StayEvent("a", "arrival", datetime(2025, 1, 6, 8, 0)),
        ev.StayEvent("a", "lab_test", datetime(2025, 1, 6, 9, 0)),
        ev.StayEvent("a", "triage", datetime(2025, 1, 6, 8, 10)),
        ev.StayEvent("a", "vitalsign", datetime(2025, 1, 6, 9, 0)),
        ev.StayEvent("a", "discharge", datetime(2025, 1, 6, 9, 30)),
    ]
    (traj,) = ev.extract_trajectories(rows)
    # lab_test and vitalsign share a timestamp; input order breaks the tie
    assert [step.activity for step in traj.steps] == ["triage", "lab_test", "vitalsign", "discharge"]
    assert [step.duration for step in traj.steps] == [10.0, 50.0, 0.0, 30.0]


@pytest.mark.parametrize(
    "rows, fragment",
    [
        ([("x", "triage", "08:00"), ("x", "discharge", "09:00")], "arrival"),
        ([("x", "arrival", "08:00"), ("x", "triage", "08:30")], "discharge"),
        (
            [("x", "arrival", "08:00"), ("x", "discharge", "08:30"), ("x", "triage", "08:30")],
            "x",
        ),
    ],
)
def test_extract_rejects_malformed_stays(rows, fragment):
    events = [
        ev.StayEvent(sid, act, datetime(2025, 1, 6, int(ts[:2]), int(ts[3:])))
        for sid, act, ts in rows
    ]
    with pytest.raises(ev.EventLogError) as exc:
        ev.extract_trajectories(events)
    assert fragment in str(exc.value)


def test_transition_pairs_prefixes_arrival():
    traj = ev.RawTrajectory(
        "s",
        (
            ev.TrajectoryStep("triage", 5.0),
            ev.TrajectoryStep("lab_test", 30.0),
            ev.TrajectoryStep("discharge", 10.0),
        ),
    )
    pairs = [(pair, step.duration) for pair, step in ev.transition_pairs(traj)]
    assert pairs == [
        (("arrival", "triage"), 5.0),
        (("triage", "lab_test"), 30.0),
        (("lab_test", "discharge"), 10.0),
    ]


# ---------------------------------------------------------------------------
# transition statistics
# ---------------------------------------------------------------------------


def _traj(stay_id, *durations):
    steps = [ev.TrajectoryStep("triage", durations[0])]
    for d in durations[1:-1]:
        steps.append(ev.TrajectoryStep("lab_test", d))
    steps.append(ev.TrajectoryStep("discharge", durations[-1]))
    return ev.RawTrajectory(stay_id, tuple(steps))


def test_compute_transition_stats_hand_values():
    trajectories = [_traj("a", 8.0, 5.0, 1.0), _traj("b", 10.0, 10.0, 2.0), _traj("c", 12.0, 100.0, 3.0)]
    stats = ev.compute_transition_stats(trajectories)
    at = stats.require(("arrival", "triage"))
    assert (at.median, at.mad, at.support) == (10.0, 2.0, 3)
    tl = stats.require(("triage", "lab_test"))
    assert (tl.median, tl.mad, tl.support) == (10.0, 5.0, 3)
    assert ("lab_test", "discharge") in stats
    assert len(stats) == 3


def test_stats_median_matches_naive_sort_median():
    rng = np.random.default_rng(20250817)
    for trial in range(40):
        n = int(rng.integers(1, 25))
        values = rng.gamma(2.0, 30.0, size=n).tolist()
        trajectories = [_traj(f"s{i}", v, 1.0, 1.0) for i, v in enumerate(values)]
        stats = ev.compute_transition_stats(trajectories)
        got = stats.require(("arrival", "triage"))
        assert got.median == naive_median(values)
        assert got.mad == naive_mad(values)


def test_stats_require_reports_missing_pair():
    stats = ev.compute_transition_stats([_traj("a", 1.0, 2.0, 3.0)])
    with pytest.raises(ev.EventLogError) as exc:
        stats.require(("imaging_test", "discharge"))
    assert "imaging_test" in str(exc.value)


def test_stats_reject_empty_input():
    with pytest.raises(ev.EventLogError):
        ev.compute_transition_stats([])


# ---------------------------------------------------------------------------
# waiting-time removal against an independent scalar oracle
# ---------------------------------------------------------------------------


def oracle_clean_value(tau, mdn, mad, k):
    """Piecewise rule, written separately from the implementation."""
    if mad == 0.0:
        if tau == mdn or k == math.inf:
            return tau
        return mdn
    z = 0.6745 * (tau - mdn) / mad
    if z > k:
        return mdn + k * (1.4826 * mad)
    return tau


def _random_corpus(rng, n_stays):
    trajectories = []
    for i in range(n_stays):
        base = [
            ("triage", float(rng.gamma(3.0, 4.0))),
            ("lab_test", float(rng.gamma(2.0, 30.0))),
            ("discharge", float(rng.gamma(2.0, 10.0))),
        ]
        # contaminate some steps with large additive waits
        steps = [
            ev.TrajectoryStep(act, d + (300.0 if rng.random() < 0.15 else 0.0))
            for act, d in base
        ]
        trajectories.append(ev.RawTrajectory(f"s{i}", tuple(steps)))
    return trajectories


def test_remove_waiting_times_matches_scalar_oracle():
    rng = np.random.default_rng(7)
    trajectories = _random_corpus(rng, 120)
    stats = ev.compute_transition_stats(trajectories)
    for k in (0.5, 3.0, math.inf):
        cleaned = {t.stay_id: t for t in (ev.remove_waiting_times(t, stats, k=k) for t in trajectories)}
        for raw in trajectories:
            out = cleaned[raw.stay_id]
            assert [s.activity for s in out.steps] == [s.activity for s in raw.steps]
            for (pair, raw_step), got in zip(ev.transition_pairs(raw), out.steps):
                ps = stats.require(pair)
                want = oracle_clean_value(raw_step.duration, ps.median, ps.mad, k)
                assert got.duration == want, (raw.stay_id, pair, k)


def test_remove_waiting_times_shrinks_and_keeps_conforming_values():
    rng = np.random.default_rng(11)
    trajectories = _random_corpus(rng, 150)
    stats = ev.compute_transition_stats(trajectories)
    kept = clamped = 0
    for raw in trajectories:
        out = ev.remove_waiting_times(raw, stats, k=3.0)
        for (pair, raw_step), got in zip(ev.transition_pairs(raw), out.steps):
            ps = stats.require(pair)
            if ev.modified_zscore(raw_step.duration, ps.median, ps.mad) <= 3.0:
                assert got.duration == raw_step.duration  # bit-identical
                kept += 1
            else:
                assert raw_step.duration > ps.median
                assert got.duration <= raw_step.duration
                assert got.duration == ps.median + 3.0 * (1.4826 * ps.mad)
                clamped += 1
    assert kept > 0 and clamped > 0  # both branches exercised


def test_remove_waiting_times_is_idempotent_under_fixed_stats():
    rng = np.random.default_rng(13)
    trajectories = _random_corpus(rng, 80)
    stats = ev.compute_transition_stats(trajectories)
    for raw in trajectories:
        once = ev.remove_waiting_times(raw, stats, k=3.0)
        again = ev.remove_waiting_times(
            ev.RawTrajectory(once.stay_id, once.steps), stats, k=3.0
        )
        assert [tuple(s) for s in again.steps] == [tuple(s) for s in once.steps]


def test_remove_waiting_times_requires_known_pair():
    stats = ev.compute_transition_stats([_traj("a", 1.0, 2.0, 3.0)])
    odd = ev.RawTrajectory("z", (ev.TrajectoryStep("imaging_test", 10.0), ev.TrajectoryStep("discharge", 5.0)))
    with pytest.raises(ev.EventLogError):
        ev.remove_waiting_times(odd, stats)


# ---------------------------------------------------------------------------
# file round trips
# ---------------------------------------------------------------------------


def test_event_log_round_trip(tmp_path):
    events = ev.parse_event_log(io.StringIO(LOG_TEXT))
    path = tmp_path / "log.csv"
    ev.write_event_log(path, events, header_comment="round trip")
    assert ev.parse_event_log(path) == events


def test_clean_trajectory_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(17)
    trajectories = _random_corpus(rng, 40)
    stats = ev.compute_transition_stats(trajectories)
    cleaned = [ev.remove_waiting_times(t, stats) for t in trajectories]
    path = tmp_path / "clean.csv"
    ev.write_clean_trajectories(path, cleaned, header_comment="cleaned")
    loaded = {t.stay_id: t for t in ev.read_clean_trajectories(path)}
    assert set(loaded) == {t.stay_id for t in cleaned}
    for original in cleaned:
        got = loaded[original.stay_id]
        # repr round trip must be bit-exact, not approximate
        assert [tuple(s) for s in got.steps] == [tuple(s) for s in original.steps]


def test_write_transition_stats_has_header_and_rows(tmp_path):
    trajectories = [_traj("a", 8.0, 5.0, 1.0), _traj("b", 10.0, 10.0, 2.0), _traj("c", 12.0, 100.0, 3.0)]
    stats = ev.compute_transition_stats(trajectories)
    path = tmp_path / "stats.csv"
    ev.write_transition_stats(path, stats, header_comment="fitted on 3 stays")
    lines = path.read_text().splitlines()
    assert lines[0] == "# fitted on 3 stays"
    assert lines[1] == "from_activity,to_activity,median_min,mad_min,support"
    assert len(lines) == 2 + 3
