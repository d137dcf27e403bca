"""Event trajectories: exact Gillespie sampling, the slotted approximation, likelihoods."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .core import EventCatalog, as_state, index_state, state_index
from .errors import DataError, GuardViolation, InvalidConfiguration

NO_EVENT = -1


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_rates(rates, catalog: EventCatalog) -> np.ndarray:
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (len(catalog),):
        raise InvalidConfiguration(f"expected {len(catalog)} rates, got shape {rates.shape}")
    if not np.all(np.isfinite(rates)) or np.any(rates < 0):
        raise InvalidConfiguration("rates must be finite and non-negative")
    return rates


def total_rates(catalog: EventCatalog, rates) -> np.ndarray:
    """Total active rate H(x) for every state index."""
    return catalog.active_table @ np.asarray(rates, dtype=float)


@dataclass(frozen=True)
class Trajectory:
    initial_state: tuple
    times: np.ndarray
    event_ids: np.ndarray
    horizon: float

    def __len__(self) -> int:
        return len(self.event_ids)

    def state_indices(self, catalog: EventCatalog) -> np.ndarray:
        """State index after each event, prefixed by the initial state."""
        out = np.empty(len(self) + 1, dtype=np.int64)
        out[0] = state_index(self.initial_state)
        for i, e in enumerate(self.event_ids):
            nxt = catalog.next_table[out[i], e]
            if nxt < 0:
                raise GuardViolation(
                    f"event {catalog[e].name} at t={self.times[i]:.6g} is not enabled "
                    f"in state {index_state(out[i], catalog.speaker_count)}"
                )
            out[i + 1] = nxt
        return out

    def validate(self, catalog: EventCatalog) -> None:
        t = np.asarray(self.times)
        if t.size and (t[0] < 0 or t[-1] > self.horizon or np.any(np.diff(t) <= 0)):
            raise DataError("event times must be strictly increasing within [0, horizon]")
        self.state_indices(catalog)


@dataclass(frozen=True)
class SlotTrajectory:
    """One optional event per slot; ``slot_events[n]`` fires at ``n * dt``.

    The guard of slot ``n``'s event is checked against the state entering the
    slot; :meth:`state_indices` returns the state in force during each slot.
    """
    initial_state: tuple
    slot_events: np.ndarray
    dt: float

    @property
    def n_slots(self) -> int:
        return len(self.slot_events)

    def state_indices(self, catalog: EventCatalog) -> np.ndarray:
        out = np.empty(self.n_slots, dtype=np.int64)
        s = state_index(self.initial_state)
        nxt = catalog.next_table
        for n, e in enumerate(self.slot_events):
            if e != NO_EVENT:
                s2 = nxt[s, e]
                if s2 < 0:
                    raise GuardViolation(f"slot {n}: {catalog[e].name} not enabled")
                s = s2
            out[n] = s
        return out

    def to_trajectory(self) -> Trajectory:
        idx = np.flatnonzero(self.slot_events != NO_EVENT)
        return Trajectory(self.initial_state, idx * self.dt,
                          self.slot_events[idx].astype(np.int64), self.n_slots * self.dt)


def gillespie_simulate(catalog: EventCatalog, rates, x0, horizon: float, seed=None) -> Trajectory:
    """Exact Markov-jump-process sample on [0, horizon]."""
    rates = check_rates(rates, catalog)
    if horizon <= 0:
        raise InvalidConfiguration("horizon must be positive")
    rng = make_rng(seed)
    x0 = as_state(x0, catalog.speaker_count)
    s = state_index(x0)
    active = catalog.active_table
    nxt = catalog.next_table
    H = total_rates(catalog, rates)
    times, events = [], []
    t = 0.0
    while H[s] > 0:
        t += rng.exponential(1.0 / H[s])
        if t > horizon:
            break
        w = np.where(active[s], rates, 0.0)
        e = int(np.searchsorted(np.cumsum(w), rng.random() * H[s], side="right"))
        e = min(e, len(w) - 1)
        times.append(t)
        events.append(e)
        s = int(nxt[s, e])
    return Trajectory(x0, np.asarray(times, dtype=float), np.asarray(events, dtype=np.int64),
                      float(horizon))


def slot_event_distribution(catalog: EventCatalog, x, rates, dt: float) -> np.ndarray:
    """Outcome probabilities for one slot of width ``dt`` entered in state ``x``.

    Entry 0 is the no-event probability exp(-H dt); entry ``i + 1`` is
    (h_i / H) (1 - exp(-H dt)) for active events and 0 otherwise.
    """
    if dt <= 0:
        raise InvalidConfiguration("dt must be positive")
    rates = check_rates(rates, catalog)
    x = as_state(x, catalog.speaker_count)
    h = np.where(catalog.active_table[state_index(x)], rates, 0.0)
    H = h.sum()
    out = np.zeros(len(catalog) + 1)
    if H == 0:
        out[0] = 1.0
        return out
    fire = -math.expm1(-H * dt)
    out[0] = 1.0 - fire
    out[1:] = h / H * fire
    return out


def slotted_simulate(catalog: EventCatalog, rates, x0, horizon: float, dt: float = 0.1,
                     seed=None) -> SlotTrajectory:
    """Sample the slotted process with at most one event per slot.

    Instead of one categorical draw per slot, the number of empty slots before
    the next event is drawn from its geometric law; the joint distribution of
    slot outcomes is the same as drawing every slot from
    :func:`slot_event_distribution`.
    """
    rates = check_rates(rates, catalog)
    if dt <= 0 or horizon <= 0:
        raise InvalidConfiguration("dt and horizon must be positive")
    rng = make_rng(seed)
    x0 = as_state(x0, catalog.speaker_count)
    n_slots = int(round(horizon / dt))
    slots = np.full(n_slots, NO_EVENT, dtype=np.int64)
    s = state_index(x0)
    active = catalog.active_table
    nxt = catalog.next_table
    H = total_rates(catalog, rates)
    n = -1
    while H[s] > 0:
        n += int(rng.geometric(-math.expm1(-H[s] * dt)))
        if n >= n_slots:
            break
        w = np.where(active[s], rates, 0.0)
        e = int(np.searchsorted(np.cumsum(w), rng.random() * H[s], side="right"))
        e = min(e, len(w) - 1)
        slots[n] = e
        s = int(nxt[s, e])
    return SlotTrajectory(x0, slots, float(dt))


def trajectory_loglik(traj: Trajectory, catalog: EventCatalog, rates) -> float:
    """Log density of a fully observed trajectory.

    sum_i log h_{v_i} - sum_i H(x_i) (t_{i+1} - t_i), with H the total active
    rate and the last holding interval running to the horizon.
    """
    rates = check_rates(rates, catalog)
    states = traj.state_indices(catalog)
    H = total_rates(catalog, rates)
    edges = np.concatenate([[0.0], np.asarray(traj.times, dtype=float), [traj.horizon]])
    holding = np.diff(edges)
    ll = -float(np.dot(H[states], holding))
    occurred = rates[np.asarray(traj.event_ids, dtype=np.int64)]
    if np.any(occurred == 0):
        return -math.inf
    return ll + float(np.sum(np.log(occurred)))


def event_exposure(traj: Trajectory, catalog: EventCatalog) -> tuple[np.ndarray, np.ndarray]:
    """Per-event occurrence counts and guard-active time."""
    states = traj.state_indices(catalog)
    edges = np.concatenate([[0.0], np.asarray(traj.times, dtype=float), [traj.horizon]])
    occupancy = np.bincount(states, weights=np.diff(edges), minlength=catalog.n_states)
    exposure = occupancy @ catalog.active_table
    counts = np.bincount(traj.event_ids, minlength=len(catalog)).astype(float)
    return counts, exposure


def ml_rates(trajectories, catalog: EventCatalog) -> np.ndarray:
    """Maximum-likelihood base rates (count / exposure) pooled over trajectories."""
    counts = np.zeros(len(catalog))
    exposure = np.zeros(len(catalog))
    for traj in trajectories:
        n, e = event_exposure(traj, catalog)
        counts += n
        exposure += e
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(exposure > 0, counts / np.where(exposure > 0, exposure, 1.0), 0.0)


# -- serialization ---------------------------------------------------------

TRAJECTORY_COLUMNS = ("time_s", "event_id", "kind", "actor", "target")


def trajectory_to_csv(traj: Trajectory, catalog: EventCatalog) -> str:
    buf = io.StringIO()
    buf.write(f"# initial_state={';'.join(map(str, traj.initial_state))}\n")
    buf.write(f"# horizon_s={traj.horizon!r}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJECTORY_COLUMNS)
    for t, e in zip(traj.times, traj.event_ids):
        ev = catalog[int(e)]
        w.writerow([repr(float(t)), int(e), ev.kind, ev.actor, "" if ev.target is None else ev.target])
    return buf.getvalue()


def trajectory_from_csv(text: str, catalog: EventCatalog, source: str = "<trajectory>") -> Trajectory:
    meta = {}
    rows = []
    header = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
            continue
        fields = next(csv.reader([line]))
        if header is None:
            if tuple(fields) != TRAJECTORY_COLUMNS:
                raise DataError(f"{source}:{lineno}: expected header {','.join(TRAJECTORY_COLUMNS)}")
            header = fields
            continue
        try:
            t, e = float(fields[0]), int(fields[1])
        except (ValueError, IndexError) as exc:
            raise DataError(f"{source}:{lineno}: {exc}") from None
        if not 0 <= e < len(catalog) or catalog[e].kind != fields[2]:
            raise DataError(f"{source}:{lineno}: event {e} does not match catalog")
        rows.append((t, e))
    try:
        x0 = as_state(int(v) for v in meta["initial_state"].split(";"))
        horizon = float(meta["horizon_s"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{source}: missing or bad metadata line ({exc})") from None
    times = np.array([r[0] for r in rows], dtype=float)
    ids = np.array([r[1] for r in rows], dtype=np.int64)
    traj = Trajectory(x0, times, ids, horizon)
    try:
        traj.validate(catalog)
    except (DataError, GuardViolation) as exc:
        raise DataError(f"{source}: {exc}") from None
    return traj


def trajectory_to_json(traj: Trajectory, catalog: EventCatalog) -> str:
    doc = {
        "initial_state": list(traj.initial_state),
        "horizon_s": traj.horizon,
        "events": [
            {"time_s": float(t), "event_id": int(e), "kind": catalog[int(e)].kind,
             "actor": catalog[int(e)].actor, "target": catalog[int(e)].target}
            for t, e in zip(traj.times, traj.event_ids)
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def trajectory_from_json(text: str, catalog: EventCatalog) -> Trajectory:
    doc = json.loads(text)
    traj = Trajectory(
        as_state(doc["initial_state"]),
        np.array([ev["time_s"] for ev in doc["events"]], dtype=float),
        np.array([ev["event_id"] for ev in doc["events"]], dtype=np.int64),
        float(doc["horizon_s"]),
    )
    traj.validate(catalog)
    return traj
