"""Conversational events from turn segments or jump-process paths, and windowed counts.

Two counts of "turns by different members" are kept per window:
``distinct_speakers`` is the number of unique speakers who started a turn,
and ``speaker_changes`` is the number of turn starts whose speaker differs
from whoever started the previous turn.  For turns X, Y, X both equal 2;
over a minute the first saturates at the group size while the second keeps
growing, so the per-minute Table 1 column uses ``speaker_changes``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .core import EventCatalog
from .errors import DataError
from .segment import TurnSegment
from .simulate import NO_EVENT, SlotTrajectory, Trajectory

EVENT_KINDS = ("take", "yield", "transfer", "backchannel", "competition-win", "competition-loss")
TRANSFER_GAP_MAX = 1.0


@dataclass(frozen=True, order=True)
class ConversationalEvent:
    time: float
    kind: str
    actor: int
    target: int | None = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise DataError(f"unknown event kind {self.kind!r}")
        if self.kind == "transfer":
            if self.target is None or self.target == self.actor:
                raise DataError("a transfer needs a target different from its actor")
        elif self.target is not None:
            raise DataError(f"{self.kind} events carry no target")

    @property
    def starter(self) -> int | None:
        """Speaker whose turn begins with this event, if any."""
        if self.kind == "take":
            return self.actor
        if self.kind == "transfer":
            return self.target
        return None


def _sort(events):
    order = {k: i for i, k in enumerate(("competition-loss", "competition-win", "yield",
                                          "transfer", "take", "backchannel"))}
    return sorted(events, key=lambda e: (e.time, order[e.kind], e.actor))


def classify_events(turns, transfer_gap_max: float = TRANSFER_GAP_MAX) -> list[ConversationalEvent]:
    """Rule-based event labels for a set of turn segments.

    A turn start within ``transfer_gap_max`` after another speaker's
    uncontested turn end is a transfer from that speaker (the most recent such
    end, each end used at most once); any other start is a take.  A turn that
    ends while another speaker's turn is open loses a competition, and the
    open turn with the earliest start wins it.  Remaining ends are yields.
    """
    full = sorted((t for t in turns if t.kind == "turn"), key=lambda t: (t.start, t.speaker))
    events = [ConversationalEvent(t.start, "backchannel", t.speaker)
              for t in turns if t.kind == "backchannel-candidate"]
    contested = {}
    for i, t in enumerate(full):
        rivals = [u for j, u in enumerate(full)
                  if j != i and u.speaker != t.speaker and u.start < t.end < u.end]
        if rivals:
            winner = min(rivals, key=lambda u: (u.start, u.speaker))
            contested[i] = winner.speaker
    ends = sorted(((t.end, i) for i, t in enumerate(full) if i not in contested))
    used = set()
    for t in full:
        best = None
        for end, i in ends:
            if end > t.start:
                break
            if i in used or full[i].speaker == t.speaker:
                continue
            if t.start - end <= transfer_gap_max:
                best = i
        if best is None:
            events.append(ConversationalEvent(t.start, "take", t.speaker))
        else:
            used.add(best)
            events.append(ConversationalEvent(t.start, "transfer", full[best].speaker, t.speaker))
    for i, t in enumerate(full):
        if i in contested:
            events.append(ConversationalEvent(t.end, "competition-loss", t.speaker))
            events.append(ConversationalEvent(t.end, "competition-win", contested[i]))
        elif i not in used:
            events.append(ConversationalEvent(t.end, "yield", t.speaker))
    return _sort(events)


def classify_path(traj, catalog: EventCatalog) -> list[ConversationalEvent]:
    """Conversational events implied by a jump-process event sequence.

    Seizing an occupied floor starts a turn and is reported as a take.  A
    yield under competition is a competition loss for the actor and a win for
    the remaining speaker with the earliest onset.  Continue events are
    observationally empty and produce nothing.
    """
    if isinstance(traj, SlotTrajectory):
        traj = traj.to_trajectory()
    C = catalog.speaker_count
    x = list(traj.initial_state)
    onset = [0.0 if v else math.inf for v in x]
    out = []
    for t, e in zip(np.asarray(traj.times, dtype=float), np.asarray(traj.event_ids)):
        ev = catalog[int(e)]
        if not ev.guard(x):
            raise DataError(f"{ev.name} at t={t:.6g} is not enabled in state {tuple(x)}")
        a = ev.actor
        t = float(t)
        if ev.kind in ("take", "seize"):
            out.append(ConversationalEvent(t, "take", a))
            onset[a] = t
        elif ev.kind == "yield":
            out.append(ConversationalEvent(t, "yield", a))
            onset[a] = math.inf
        elif ev.kind == "transfer":
            if ev.target != a:
                out.append(ConversationalEvent(t, "transfer", a, ev.target))
                onset[a] = math.inf
                onset[ev.target] = t
        elif ev.kind == "backchannel":
            out.append(ConversationalEvent(t, "backchannel", a))
        else:
            onset[a] = math.inf
            rest = [c for c in range(C) if c != a and x[c]]
            winner = min(rest, key=lambda c: (onset[c], c))
            out.append(ConversationalEvent(t, "competition-loss", a))
            out.append(ConversationalEvent(t, "competition-win", winner))
        x = [v + d for v, d in zip(x, ev.delta)]
    return out


def turns_from_states(states, dt: float, speaker_count: int) -> list[TurnSegment]:
    """Maximal per-speaker speaking runs of a slot-level state-index path."""
    states = np.asarray(states, dtype=np.int64)
    out = []
    for c in range(speaker_count):
        on = (states >> c) & 1
        edges = np.diff(np.concatenate([[0], on, [0]]))
        for a, b in zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)):
            out.append(TurnSegment(c, float(a * dt), float(b * dt), "turn"))
    out.sort(key=lambda t: (t.start, t.speaker))
    return out


def slot_path_events(initial_state, slot_events, dt: float,
                     catalog: EventCatalog) -> list[ConversationalEvent]:
    """Conversational events for an inferred slot path (as returned by the sampler)."""
    slot_events = np.asarray(slot_events)
    idx = np.flatnonzero(slot_events != NO_EVENT)
    traj = Trajectory(tuple(initial_state), idx * dt, slot_events[idx].astype(np.int64),
                      len(slot_events) * dt)
    return classify_path(traj, catalog)


@dataclass(frozen=True)
class EventCounts:
    window_start: float
    window_length: float
    take: int = 0
    transfer: int = 0
    yield_: int = 0
    backchannel: int = 0
    competition: int = 0
    distinct_speakers: int = 0
    speaker_changes: int = 0

    @property
    def turns(self) -> int:
        return self.take + self.transfer

    def per_minute(self) -> dict:
        scale = 60.0 / self.window_length
        return {
            "turn_taking": self.turns * scale,
            "turn_competitions": self.competition * scale,
            "backchannel": self.backchannel * scale,
            "turns_by_different_members": self.speaker_changes * scale,
        }


def window_counts(events, window: float = 60.0, duration: float | None = None,
                  start: float = 0.0) -> list[EventCounts]:
    """Tumbling half-open windows [start + k w, start + (k+1) w).

    ``duration`` fixes the number of windows (trailing empty windows included);
    otherwise windows run up to the last event.  Competitions count losses.
    """
    if window <= 0:
        raise DataError("window length must be positive")
    events = _sort(events)
    if duration is None:
        last = max((e.time for e in events), default=start)
        n = int(math.floor((last - start) / window)) + 1
    else:
        n = max(int(math.ceil(duration / window - 1e-9)), 1)
    tallies = [dict(take=0, transfer=0, yield_=0, backchannel=0, competition=0,
                    speaker_changes=0, speakers=set()) for _ in range(n)]
    previous = None
    for e in events:
        k = int(math.floor((e.time - start) / window))
        inside = 0 <= k < n
        s = e.starter
        if inside:
            w = tallies[k]
            if e.kind in ("take", "transfer", "backchannel"):
                w[e.kind] += 1
            elif e.kind == "yield":
                w["yield_"] += 1
            elif e.kind == "competition-loss":
                w["competition"] += 1
            if s is not None:
                w["speakers"].add(s)
                if previous is not None and s != previous:
                    w["speaker_changes"] += 1
        if s is not None:
            previous = s
    out = []
    for k, w in enumerate(tallies):
        speakers = w.pop("speakers")
        out.append(EventCounts(start + k * window, window, distinct_speakers=len(speakers), **w))
    return out


def total_counts(events) -> dict:
    tally = {k: 0 for k in EVENT_KINDS}
    for e in events:
        tally[e.kind] += 1
    return tally


# -- file formats ------------------------------------------------------------

EVENT_COLUMNS = ("time_s", "kind", "actor", "target")
COUNT_COLUMNS = ("window_start_s", "take", "transfer", "yield", "backchannel", "competition",
                 "distinct_speakers", "speaker_changes")


def events_to_csv(events) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVENT_COLUMNS)
    for e in events:
        w.writerow([repr(float(e.time)), e.kind, e.actor, "" if e.target is None else e.target])
    return buf.getvalue()


def events_from_csv(text: str, source: str = "<events>") -> list[ConversationalEvent]:
    out = []
    for lineno, fields in enumerate(csv.reader(io.StringIO(text)), start=1):
        if lineno == 1:
            if tuple(fields) != EVENT_COLUMNS:
                raise DataError(f"{source}:1: expected header {','.join(EVENT_COLUMNS)}")
            continue
        if not fields:
            continue
        try:
            target = int(fields[3]) if fields[3] != "" else None
            out.append(ConversationalEvent(float(fields[0]), fields[1], int(fields[2]), target))
        except (ValueError, IndexError, DataError) as exc:
            raise DataError(f"{source}:{lineno}: {exc}") from None
    return out


def counts_to_csv(counts) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COUNT_COLUMNS)
    for c in counts:
        w.writerow([repr(float(c.window_start)), c.take, c.transfer, c.yield_, c.backchannel,
                    c.competition, c.distinct_speakers, c.speaker_changes])
    return buf.getvalue()


def counts_from_csv(text: str, window: float = 60.0, source: str = "<counts>") -> list[EventCounts]:
    out = []
    for lineno, fields in enumerate(csv.reader(io.StringIO(text)), start=1):
        if lineno == 1:
            if tuple(fields) != COUNT_COLUMNS:
                raise DataError(f"{source}:1: expected header {','.join(COUNT_COLUMNS)}")
            continue
        if not fields:
            continue
        try:
            start = float(fields[0])
            vals = [int(v) for v in fields[1:]]
        except ValueError as exc:
            raise DataError(f"{source}:{lineno}: {exc}") from None
        if len(vals) != len(COUNT_COLUMNS) - 1 or min(vals) < 0:
            raise DataError(f"{source}:{lineno}: expected {len(COUNT_COLUMNS) - 1} non-negative counts")
        out.append(EventCounts(start, window, *vals))
    return out
