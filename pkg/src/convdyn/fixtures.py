"""Synthetic groups for end-to-end runs.

A group's conversation is simulated from rates calibrated to one Table 1
row.  Its 20-questions game is then played with question quality driven by
the conversation: the events in each inter-question interval give a hazard,
the hazard gives an expected eliminated fraction, and that fraction sets the
question quality.
"""
from __future__ import annotations

import json
import math
from functools import lru_cache
from pathlib import Path

import numpy as np

from .analysis import TABLE1_ROWS, calibrate_table1
from .core import build_catalog
from .events import classify_path, counts_to_csv, window_counts
from .simulate import gillespie_simulate, make_rng
from .survival import COVARIATES, HazardFit, question_effect, questions_to_csv
from .tasksim import MAX_QUESTIONS, N_ITEMS, new_game, play_question, quality_from_fraction

PUBLISHED_BETA = np.array([1e-3, 1e-4, 2.5e-4, 1e-5])   # competition, transfer, take, backchannel


@lru_cache(maxsize=8)
def calibrated_rates(percentile: int = 50, speakers: int = 4) -> np.ndarray:
    rates = calibrate_table1(TABLE1_ROWS[percentile], build_catalog(speakers)).rates
    rates.flags.writeable = False
    return rates


def recovery_rates(scale: float = 1.5, listener_backchannel: float = 2.0, speakers: int = 4) -> np.ndarray:
    """Ground truth for recovery studies: two active talkers, the rest listen.

    Speakers 0 and 1 take, yield, hand over to each other and compete; the
    others only backchannel, at ``listener_backchannel`` per second.  Every
    event type that can occur fires often enough in half an hour to be
    estimable, and the listeners vocalise often enough to pin down their
    speaking-status emission means.
    """
    catalog = build_catalog(speakers)
    rates = np.zeros(len(catalog))
    for e in catalog.events:
        if e.actor in (0, 1):
            if e.kind in ("take", "yield"):
                rates[e.id] = 0.8 * scale
            elif e.kind == "transfer" and e.target == 1 - e.actor:
                rates[e.id] = 0.8 * scale
            elif e.kind == "seize":
                rates[e.id] = 0.6 * scale
            elif e.kind == "yield-under-competition":
                rates[e.id] = 1.5 * scale
        elif e.kind == "backchannel":
            rates[e.id] = listener_backchannel
    return rates


def game_hazard(interval: float = 60.0) -> HazardFit:
    """Additive hazard with the published coefficient ratios, rescaled for the game.

    The coefficients keep their published relative sizes and are scaled so
    that the 75th-percentile Table 1 row (turns split evenly between takes and
    transfers) removes exactly half of the answer space per interval.
    """
    turns, comp, back, _ = TABLE1_ROWS[75]
    x = np.array([comp, turns / 2, turns / 2, back]) / 60.0
    scale = math.log(2.0) / interval / float(x @ PUBLISHED_BETA)
    return HazardFit(0.0, PUBLISHED_BETA * scale, math.nan, math.nan, COVARIATES)


def play_from_events(events, horizon: float, seed=None, interval: float = 60.0,
                     hazard: HazardFit | None = None):
    """Play one game; question k uses the events of interval k, cycling if the talk runs out.

    Returns (questions asked, game steps, question rows for the records CSV).
    """
    hazard = hazard or game_hazard(interval)
    rng = make_rng(seed)
    state = new_game(rng)
    windows = window_counts(events, interval, duration=horizon)
    steps, rows = [], []
    while not state.solved and state.questions_asked < MAX_QUESTIONS:
        w = windows[state.questions_asked % len(windows)]
        quality = quality_from_fraction(question_effect(w, hazard, interval))
        state, step = play_question(state, quality, rng)
        if step is None:
            break
        steps.append(step)
        rows.append({
            "fraction_remaining_before": step["remaining_before"] / N_ITEMS,
            "fraction_remaining_after": step["remaining_after"] / N_ITEMS,
            "interval_s": interval,
            "rate_take": w.take / interval,
            "rate_transfer": w.transfer / interval,
            "rate_backchannel": w.backchannel / interval,
            "rate_competition": w.competition / interval,
        })
    return state.questions_asked, steps, rows


def write_group(directory, group_id: str, events, horizon: float, seed=None,
                interval: float = 60.0, window: float = 60.0, rates=None) -> int:
    """Play the game for one conversation and write the group directory.

    Files: meta.json (group_id, questions), counts.csv, records.csv, game.json,
    and rates.csv when ``rates`` is given.  Returns the question count.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    questions, steps, rows = play_from_events(events, horizon, seed, interval)
    meta = {"group_id": group_id, "questions": questions}
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    (directory / "counts.csv").write_text(counts_to_csv(window_counts(events, window, duration=horizon)))
    (directory / "records.csv").write_text(questions_to_csv(rows))
    (directory / "game.json").write_text(json.dumps(steps, indent=1, sort_keys=True) + "\n")
    if rates is not None:
        lines = ["event_id,mean"] + [f"{i},{float(r)!r}" for i, r in enumerate(rates)]
        (directory / "rates.csv").write_text("\n".join(lines) + "\n")
    return questions


def make_groups(directory, n_groups: int = 12, minutes: float = 10.0, seed=0,
                percentiles=(25, 50, 75), interval: float = 60.0) -> list[str]:
    """Write ``n_groups`` synthetic group directories, cycling over Table 1 rows."""
    directory = Path(directory)
    catalog = build_catalog(4)
    seeds = np.random.SeedSequence(seed).spawn(n_groups)
    names = []
    for g, ss in enumerate(seeds):
        p = percentiles[g % len(percentiles)]
        rng = np.random.default_rng(ss)
        horizon = minutes * 60.0
        traj = gillespie_simulate(catalog, calibrated_rates(p), (0, 0, 0, 0), horizon, rng)
        name = f"group{g:02d}"
        write_group(directory / name, name, classify_path(traj, catalog), horizon, rng, interval)
        names.append(name)
    return names


def badge_streams(turns, duration: float, speakers: int = 4, period: float = 0.05, seed=None,
                  offsets=None, crosstalk: float = 0.4):
    """Synthetic badge recordings for a set of speaking spans.

    Every speaker is a sound source whose loudness fluctuates (log-normal,
    shared by all listeners).  A badge hears its wearer at gain 1, everyone
    else at gain ``crosstalk``, plus its own background noise.  Badge ``b``'s
    clock reads true time plus ``offsets[b]``.
    """
    from .segment import BadgeStream

    rng = make_rng(seed)
    offsets = np.zeros(speakers) if offsets is None else np.asarray(offsets, dtype=float)
    t = period * np.arange(int(round(duration / period)))
    source = np.zeros((speakers, len(t)))
    for turn in turns:
        on = (t >= turn.start) & (t < turn.end)
        source[turn.speaker, on] = np.exp(rng.normal(math.log(20.0), 1.0, on.sum()))
    out = []
    for b in range(speakers):
        gain = np.full(speakers, crosstalk)
        gain[b] = 1.0
        audio = gain @ source + np.exp(rng.normal(0.0, 0.3, len(t)))
        motion = np.exp(rng.normal(0.0, 0.3, len(t))) + (source[b] > 0) * 2.0
        out.append(BadgeStream(b, t + offsets[b], audio, motion, ((),) * len(t), period))
    return out
