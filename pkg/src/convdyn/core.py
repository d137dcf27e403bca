"""Conversational state space, guarded event catalog and reaction-matrix algebra.

A state is a tuple of 0/1 flags, one per speaker (1 = currently holds a
turn).  States are also addressed by an integer index whose bit ``c`` is
speaker ``c``'s flag; the inference code works on indices throughout.

The doubled indicator encoding (one ``x_c == 0`` and one ``x_c == 1``
coordinate per speaker) only appears in :func:`encode`, :func:`decode`
and the reaction matrix.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import GuardViolation, InconsistentUpdate, InvalidConfiguration

KINDS = ("take", "yield", "transfer", "backchannel", "seize", "yield-under-competition")

State = tuple


def as_state(x: Sequence[int], speaker_count: int | None = None) -> tuple:
    state = tuple(int(v) for v in x)
    if speaker_count is not None and len(state) != speaker_count:
        raise InvalidConfiguration(
            f"state has {len(state)} speakers, catalog has {speaker_count}"
        )
    if any(v not in (0, 1) for v in state):
        raise InvalidConfiguration(f"state entries must be 0 or 1, got {state}")
    return state


def state_index(x: Sequence[int]) -> int:
    return sum(int(v) << c for c, v in enumerate(x))


def index_state(index: int, speaker_count: int) -> tuple:
    return tuple((index >> c) & 1 for c in range(speaker_count))


def encode(x: Sequence[int]) -> np.ndarray:
    """Doubled indicator vector: rows ``2c`` / ``2c+1`` flag ``x_c == 0`` / ``x_c == 1``."""
    out = np.zeros(2 * len(x), dtype=int)
    for c, v in enumerate(x):
        out[2 * c + int(v)] = 1
    return out


def decode(z: Sequence[int]) -> tuple:
    z = np.asarray(z)
    if z.ndim != 1 or z.size % 2:
        raise InconsistentUpdate(f"indicator vector has odd length {z.size}")
    pairs = z.reshape(-1, 2)
    if not (((pairs == 0) | (pairs == 1)).all() and (pairs.sum(axis=1) == 1).all()):
        raise InconsistentUpdate(f"not a valid indicator encoding: {z.tolist()}")
    return tuple(pairs[:, 1].tolist())


@dataclass(frozen=True)
class EventSpec:
    id: int
    kind: str
    actor: int
    target: int | None = None
    speaker_count: int = 4

    @property
    def name(self) -> str:
        if self.kind == "transfer":
            return f"transfer({self.actor}->{self.target})"
        return f"{self.kind}({self.actor})"

    @property
    def is_continue(self) -> bool:
        return self.kind == "transfer" and self.target == self.actor

    @property
    def delta(self) -> tuple:
        d = [0] * self.speaker_count
        if self.kind in ("take", "seize"):
            d[self.actor] = 1
        elif self.kind in ("yield", "yield-under-competition"):
            d[self.actor] = -1
        elif self.kind == "transfer" and self.target != self.actor:
            d[self.actor] = -1
            d[self.target] = 1
        return tuple(d)

    def guard(self, x: Sequence[int]) -> bool:
        a = self.actor
        speaking = sum(x)
        others = speaking - x[a]
        if self.kind == "take":
            return speaking == 0
        if self.kind == "yield":
            return x[a] == 1 and speaking == 1
        if self.kind == "transfer":
            if self.target == a:
                return x[a] == 1
            return x[a] == 1 and x[self.target] == 0
        if self.kind == "backchannel":
            return x[a] == 0 and others >= 1
        if self.kind == "seize":
            return x[a] == 0 and others == 1
        if self.kind == "yield-under-competition":
            return x[a] == 1 and others >= 1
        raise InvalidConfiguration(f"unknown event kind {self.kind!r}")


@dataclass(frozen=True)
class EventCatalog:
    events: tuple
    speaker_count: int

    def __len__(self) -> int:
        return len(self.events)

    def __getitem__(self, i: int) -> EventSpec:
        return self.events[i]

    @property
    def n_states(self) -> int:
        return 1 << self.speaker_count

    def ids(self, kind: str) -> list[int]:
        return [e.id for e in self.events if e.kind == kind]

    def find(self, kind: str, actor: int, target: int | None = None) -> EventSpec:
        for e in self.events:
            if e.kind == kind and e.actor == actor and e.target == target:
                return e
        raise KeyError((kind, actor, target))

    @cached_property
    def reaction_matrix(self) -> np.ndarray:
        """2C x V matrix in the doubled indicator encoding."""
        C = self.speaker_count
        A = np.zeros((2 * C, len(self.events)), dtype=int)
        for e in self.events:
            for c, d in enumerate(e.delta):
                if d:
                    A[2 * c + 1, e.id] += d
                    A[2 * c, e.id] -= d
        return A

    @cached_property
    def active_table(self) -> np.ndarray:
        """Boolean (2^C, V): guard of event v holds in state index s."""
        table = np.zeros((self.n_states, len(self.events)), dtype=bool)
        for s in range(self.n_states):
            x = index_state(s, self.speaker_count)
            for e in self.events:
                table[s, e.id] = e.guard(x)
        table.flags.writeable = False
        return table

    @cached_property
    def next_table(self) -> np.ndarray:
        """Integer (2^C, V): successor state index, -1 where the guard fails."""
        nxt = np.full((self.n_states, len(self.events)), -1, dtype=np.int64)
        for s in range(self.n_states):
            x = index_state(s, self.speaker_count)
            for e in self.events:
                if self.active_table[s, e.id]:
                    nxt[s, e.id] = state_index(apply_event(x, e))
        nxt.flags.writeable = False
        return nxt

    @cached_property
    def backchannel_actor(self) -> np.ndarray:
        """Per event: the backchannelling speaker, or -1."""
        out = np.full(len(self.events), -1, dtype=np.int64)
        for e in self.events:
            if e.kind == "backchannel":
                out[e.id] = e.actor
        return out

    def to_json(self) -> str:
        doc = {
            "speaker_count": self.speaker_count,
            "events": [
                {"id": e.id, "kind": e.kind, "actor": e.actor, "target": e.target}
                for e in self.events
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EventCatalog":
        doc = json.loads(text)
        C = int(doc["speaker_count"])
        events = tuple(
            EventSpec(int(d["id"]), d["kind"], int(d["actor"]),
                      None if d["target"] is None else int(d["target"]), C)
            for d in sorted(doc["events"], key=lambda d: d["id"])
        )
        if [e.id for e in events] != list(range(len(events))):
            raise InvalidConfiguration("event ids must be 0..V-1 without gaps")
        return cls(events, C)


def build_catalog(speaker_count: int) -> EventCatalog:
    """All C^2 + 5C guarded events for ``speaker_count`` speakers.

    Order: take, yield, transfer (row-major over actor, target), backchannel,
    seize, yield-under-competition.
    """
    if int(speaker_count) != speaker_count or speaker_count < 2:
        raise InvalidConfiguration(f"need at least 2 speakers, got {speaker_count}")
    C = int(speaker_count)
    specs = []
    for c in range(C):
        specs.append(("take", c, None))
    for c in range(C):
        specs.append(("yield", c, None))
    for c in range(C):
        for d in range(C):
            specs.append(("transfer", c, d))
    for kind in ("backchannel", "seize", "yield-under-competition"):
        for c in range(C):
            specs.append((kind, c, None))
    events = tuple(EventSpec(i, k, a, t, C) for i, (k, a, t) in enumerate(specs))
    return EventCatalog(events, C)


def active_events(x: Sequence[int], catalog: EventCatalog) -> list[int]:
    x = as_state(x, catalog.speaker_count)
    return [int(i) for i in np.flatnonzero(catalog.active_table[state_index(x)])]


def apply_event(x: Sequence[int], e: EventSpec) -> tuple:
    x = as_state(x, e.speaker_count)
    if not e.guard(x):
        raise GuardViolation(f"{e.name} is not enabled in state {x}")
    return tuple(v + d for v, d in zip(x, e.delta))


def state_update(x: Sequence[int], A: np.ndarray, r: Sequence[int]) -> tuple:
    """Matrix route: decode(encode(x) + A @ r)."""
    x = as_state(x)
    A = np.asarray(A)
    r = np.asarray(r)
    if A.shape != (2 * len(x), r.size):
        raise InconsistentUpdate(
            f"reaction matrix {A.shape} incompatible with state length {len(x)} "
            f"and event vector length {r.size}"
        )
    return decode(encode(x) + A @ r)
