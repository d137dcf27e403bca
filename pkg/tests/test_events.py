
import numpy as np
import pytest
from hypothesis import given, strategies as st

from convdyn.errors import DataError
from convdyn.events import (
    ConversationalEvent, EventCounts, classify_events, classify_path, counts_from_csv,
    counts_to_csv, events_from_csv, events_to_csv, slot_path_events, total_counts,
    turns_from_states, window_counts,
)
from convdyn.segment import TurnSegment
from convdyn.simulate import NO_EVENT, gillespie_simulate

E = ConversationalEvent


def turn(c, s, e):
    return TurnSegment(c, s, e, "turn")


def names(events):
    return [(e.kind, e.actor, e.target) for e in events]


def test_isolated_turn_is_take_then_yield():
    assert names(classify_events([turn(0, 1.0, 4.0)])) == [("take", 0, None), ("yield", 0, None)]


def test_quick_handover_is_transfer():
    ev = classify_events([turn(0, 0.0, 3.0), turn(1, 3.4, 6.0)])
    assert names(ev) == [("take", 0, None), ("transfer", 0, 1), ("yield", 1, None)]
    assert ev[1].time == 3.4


def test_slow_handover_is_yield_and_take():
    ev = classify_events([turn(0, 0.0, 3.0), turn(1, 4.5, 6.0)])
    assert names(ev) == [("take", 0, None), ("yield", 0, None), ("take", 1, None), ("yield", 1, None)]


def test_overlap_is_a_competition():
    ev = classify_events([turn(0, 0.0, 5.0), turn(1, 3.0, 8.0)])
    assert ("competition-loss", 0, None) in names(ev) and ("competition-win", 1, None) in names(ev)
    ev = classify_events([turn(0, 0.0, 8.0), turn(1, 3.0, 5.0)])
    assert [n for n in names(ev) if n[0].startswith("competition")] == [
        ("competition-loss", 1, None), ("competition-win", 0, None)]


def test_each_end_feeds_one_transfer():
    ev = classify_events([turn(0, 0.0, 3.0), turn(1, 3.2, 6.0), turn(2, 3.5, 9.0)])
    assert sum(e.kind == "transfer" for e in ev) == 1


def test_backchannel_candidates_become_backchannels():
    ev = classify_events([turn(0, 0.0, 5.0), TurnSegment(2, 1.0, 1.4, "backchannel-candidate")])
    assert ("backchannel", 2, None) in names(ev)


# quarter-second grid: shifts are exact in binary, so ties survive them
quarter = st.integers(0, 400).map(lambda k: k / 4)
turn_lists = st.lists(st.tuples(st.integers(0, 3), quarter, st.integers(6, 40).map(lambda k: k / 4)), max_size=20)


@given(turn_lists, st.integers(-200, 200).map(lambda k: k / 4))
def test_classification_is_shift_invariant(raw, delta):
    turns = [turn(c, s, s + d) for c, s, d in raw]
    moved = [turn(c, s + delta, s + d + delta) for c, s, d in raw]
    a, b = classify_events(turns), classify_events(moved)
    assert names(a) == names(b)
    assert np.allclose([e.time + delta for e in a], [e.time for e in b], atol=1e-9)


@given(turn_lists)
def test_wins_and_losses_pair_up(raw):
    tally = total_counts(classify_events([turn(c, s, s + d) for c, s, d in raw]))
    assert tally["competition-win"] == tally["competition-loss"]
    assert tally["take"] + tally["transfer"] == len(raw)


def turns_of_path(traj, catalog):
    """Speaking spans and backchannel blips read directly off a jump-process path."""
    C = catalog.speaker_count
    x = list(traj.initial_state)
    onset = [0.0 if v else None for v in x]
    out = []
    for t, e in zip(traj.times, traj.event_ids):
        ev = catalog[int(e)]
        if ev.kind == "backchannel":
            out.append(TurnSegment(ev.actor, float(t), float(t) + 0.1, "backchannel-candidate"))
        y = [a + d for a, d in zip(x, ev.delta)]
        for c in range(C):
            if x[c] and not y[c]:
                out.append(turn(c, onset[c], float(t)))
            if y[c] and not x[c]:
                onset[c] = float(t)
        x = y
    return out


def closed_prefix(traj, catalog):
    """Cut a path at its last silent moment so that every turn is closed."""
    states = traj.state_indices(catalog)   # states[k] is in force before event k
    k = np.flatnonzero(states == 0)[-1]
    return type(traj)(traj.initial_state, traj.times[:k], traj.event_ids[:k], float(traj.times[k - 1]))


def rates_with(cat, off, seed):
    r = np.random.default_rng(seed).uniform(0.2, 1.0, len(cat))
    for e in cat.events:
        if e.kind in off or e.is_continue:
            r[e.id] = 0.0
    return r


@pytest.mark.parametrize("seed", range(5))
def test_path_labels_agree_with_turn_rules_without_transfers(cat4, seed):
    rates = rates_with(cat4, {"transfer"}, seed)
    traj = gillespie_simulate(cat4, rates, (0, 0, 0, 0), 300.0, seed=seed)
    traj = closed_prefix(traj, cat4)
    from_path = sorted(names(classify_path(traj, cat4)))
    from_turns = sorted(names(classify_events(turns_of_path(traj, cat4), transfer_gap_max=0.0)))
    assert from_path == from_turns
    assert any(n[0] == "competition-loss" for n in from_path)


@pytest.mark.parametrize("seed", range(5))
def test_path_labels_agree_with_turn_rules_without_overlap(cat4, seed):
    rates = rates_with(cat4, {"seize", "yield-under-competition"}, seed)
    traj = gillespie_simulate(cat4, rates, (0, 0, 0, 0), 300.0, seed=seed)
    traj = closed_prefix(traj, cat4)
    from_path = names(classify_path(traj, cat4))
    from_turns = names(classify_events(turns_of_path(traj, cat4), transfer_gap_max=0.0))
    assert sorted(from_path) == sorted(from_turns)
    assert any(n[0] == "transfer" for n in from_path)


def test_classify_path_rejects_disabled_events(cat4):
    from convdyn.simulate import Trajectory
    bad = Trajectory((0, 0, 0, 0), np.array([1.0]), np.array([cat4.find("yield", 0).id]), 2.0)
    with pytest.raises(DataError):
        classify_path(bad, cat4)


def test_seize_is_reported_as_take_and_continue_is_silent(cat4):
    from convdyn.simulate import Trajectory
    ids = [cat4.find("take", 0).id, cat4.find("transfer", 0, 0).id, cat4.find("seize", 1).id,
           cat4.find("yield-under-competition", 1).id]
    ev = classify_path(Trajectory((0, 0, 0, 0), np.arange(1.0, 5.0), np.array(ids), 6.0), cat4)
    assert names(ev) == [("take", 0, None), ("take", 1, None), ("competition-loss", 1, None),
                         ("competition-win", 0, None)]


def test_slot_path_and_state_runs(cat4):
    take = cat4.find("take", 2).id
    yld = cat4.find("yield", 2).id
    slots = np.array([NO_EVENT, take, NO_EVENT, NO_EVENT, yld])
    ev = slot_path_events((0, 0, 0, 0), slots, 0.5, cat4)
    assert [(e.kind, e.time) for e in ev] == [("take", 0.5), ("yield", 2.0)]
    spans = turns_from_states(np.array([0, 4, 4, 4, 0, 5]), 0.5, 4)
    assert spans == [turn(2, 0.5, 2.0), turn(0, 2.5, 3.0), turn(2, 2.5, 3.0)]


def test_worked_example_three_turns_two_members():
    ev = [E(1.0, "take", 0), E(5.0, "transfer", 0, 1), E(9.0, "transfer", 1, 0)]
    (w,) = window_counts(ev, 60.0, duration=60.0)
    assert w.turns == 3 and w.distinct_speakers == 2 and w.speaker_changes == 2


def test_speaker_changes_keep_growing_past_group_size():
    ev = [E(float(k), "take", k % 2) for k in range(10)]
    (w,) = window_counts(ev, 60.0)
    assert w.distinct_speakers == 2 and w.speaker_changes == 9


def test_speaker_change_across_window_boundary():
    ev = [E(59.0, "take", 0), E(61.0, "take", 1)]
    a, b = window_counts(ev, 60.0)
    assert a.speaker_changes == 0 and b.speaker_changes == 1


def test_empty_and_boundary_windows():
    counts = window_counts([E(60.0, "backchannel", 1)], 60.0, duration=180.0)
    assert len(counts) == 3
    assert counts[0] == EventCounts(0.0, 60.0)
    assert counts[1].backchannel == 1 and counts[2].backchannel == 0


@given(st.lists(st.tuples(st.floats(0, 599), st.sampled_from(["take", "yield", "backchannel", "competition-loss"]),
                          st.integers(0, 3)), max_size=60), st.sampled_from([10.0, 30.0, 60.0]))
def test_windows_neither_lose_nor_duplicate(raw, window):
    ev = [E(t, k, a) for t, k, a in raw]
    counts = window_counts(ev, window, duration=600.0)
    tally = total_counts(ev)
    assert sum(c.take for c in counts) == tally["take"]
    assert sum(c.yield_ for c in counts) == tally["yield"]
    assert sum(c.backchannel for c in counts) == tally["backchannel"]
    assert sum(c.competition for c in counts) == tally["competition-loss"]


def test_per_minute_scaling():
    c = EventCounts(0.0, 30.0, take=3, transfer=1, backchannel=2, competition=1, speaker_changes=2)
    assert c.per_minute() == {"turn_taking": 8.0, "turn_competitions": 2.0, "backchannel": 4.0,
                              "turns_by_different_members": 4.0}


def test_event_validation():
    with pytest.raises(DataError):
        E(0.0, "shout", 0)
    with pytest.raises(DataError):
        E(0.0, "transfer", 0, 0)
    with pytest.raises(DataError):
        E(0.0, "take", 0, 1)
    with pytest.raises(DataError):
        window_counts([], 0.0)


def test_csv_roundtrips():
    ev = [E(0.25, "take", 0), E(1.5, "transfer", 0, 3), E(2.0, "backchannel", 1)]
    assert events_from_csv(events_to_csv(ev)) == ev
    counts = window_counts(ev, 1.0, duration=3.0)
    assert counts_from_csv(counts_to_csv(counts), window=1.0) == counts


def test_csv_errors_have_line_numbers():
    with pytest.raises(DataError, match="e.csv:3:"):
        events_from_csv("time_s,kind,actor,target\n0.0,take,0,\n1.0,transfer,0,\n", "e.csv")
    with pytest.raises(DataError, match="c.csv:2:"):
        counts_from_csv("window_start_s,take,transfer,yield,backchannel,competition,distinct_speakers,"
                        "speaker_changes\n0.0,1,2,3,-4,0,0,0\n", source="c.csv")
    with pytest.raises(DataError, match="c.csv:1:"):
        counts_from_csv("window,take\n", source="c.csv")
