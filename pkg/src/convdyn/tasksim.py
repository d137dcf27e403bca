"""Synthetic hidden-profile 20-questions game.

Forty candidate people, ten known to each of four members, each with a
height, weight and test score.  Questions are threshold predicates
"attribute <= value"; the group wins when one candidate remains.  Attribute
ranges are synthetic choices: height 150-200 cm, weight 45-110 kg, score 0-100.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ParameterError
from .simulate import make_rng

ATTRIBUTES = ("height", "weight", "score")
RANGES = ((150.0, 200.0), (45.0, 110.0), (0.0, 100.0))
N_ITEMS = 40
N_MEMBERS = 4
MAX_QUESTIONS = 30
BAD_FACTOR = 1.3


@dataclass(frozen=True)
class GameState:
    values: np.ndarray      # (40, 3)
    owner: np.ndarray       # (40,)
    answer: int
    remaining: tuple
    questions_asked: int = 0

    @property
    def solved(self) -> bool:
        return len(self.remaining) == 1

    def owner_counts(self) -> np.ndarray:
        return np.bincount(self.owner[list(self.remaining)], minlength=N_MEMBERS)


@dataclass(frozen=True)
class Question:
    attribute: int
    threshold: float
    yes_count: int
    degenerate: bool = False

    def ask(self, values: np.ndarray) -> np.ndarray:
        return values[..., self.attribute] <= self.threshold

    def describe(self) -> str:
        return f"{ATTRIBUTES[self.attribute]} <= {self.threshold:.4g}"


def new_game(seed=None) -> GameState:
    rng = make_rng(seed)
    values = np.column_stack([rng.uniform(lo, hi, N_ITEMS) for lo, hi in RANGES])
    owner = rng.permutation(np.repeat(np.arange(N_MEMBERS), N_ITEMS // N_MEMBERS))
    answer = int(rng.integers(N_ITEMS))
    return GameState(values, owner, answer, tuple(range(N_ITEMS)))


def _candidates(state: GameState):
    """(attribute, threshold, yes_count) for every distinct threshold, sorted."""
    idx = np.array(state.remaining)
    out = []
    for a in range(len(ATTRIBUTES)):
        vals = np.sort(state.values[idx, a])
        distinct = np.unique(vals)
        counts = np.searchsorted(vals, distinct, side="right")
        out.extend((a, float(v), int(k)) for v, k in zip(distinct, counts))
    return out


def _closest(state: GameState, target: float) -> Question:
    n = len(state.remaining)
    if n < 2:
        raise ParameterError("need at least two remaining items to ask a question")
    cands = _candidates(state)
    a, v, k = min(cands, key=lambda c: (abs(c[2] - target), c[0], c[1]))
    degenerate = all(c[2] in (0, n) for c in cands)
    return Question(a, v, k, degenerate)


def optimal_halving_question(state: GameState) -> Question:
    """Predicate whose yes-set size is closest to half the remaining items.

    Ties go to the lowest attribute index, then the lowest threshold.
    """
    return _closest(state, len(state.remaining) / 2)


def answer_question(state: GameState, q: Question) -> GameState:
    idx = np.array(state.remaining)
    yes = q.ask(state.values[idx])
    truth = bool(q.ask(state.values[state.answer]))
    keep = idx[yes == truth]
    return replace(state, remaining=tuple(int(i) for i in keep),
                   questions_asked=state.questions_asked + 1)


def is_bad(q: Question, n: int) -> bool:
    """Worst-case remaining set at least 30% larger than an even split leaves."""
    worst = max(q.yes_count, n - q.yes_count)
    return worst >= BAD_FACTOR * math.ceil(n / 2)


@dataclass(frozen=True)
class GameLog:
    quality: float
    questions: int
    aborted: bool
    steps: tuple = field(default=())

    @property
    def eliminated_fractions(self) -> np.ndarray:
        return np.array([1 - s["remaining_after"] / s["remaining_before"] for s in self.steps])

    def to_json(self) -> str:
        doc = {"quality": self.quality, "questions": self.questions, "aborted": self.aborted,
               "steps": list(self.steps)}
        return json.dumps(doc, indent=1, sort_keys=True)


def play_question(state: GameState, quality: float, rng) -> tuple[GameState, dict | None]:
    """Ask one question of the given quality; returns the new state and its log entry.

    The question aims at a yes-fraction 0.5 + (1 - quality) * u / 2 with u
    uniform on [-1, 1], kept within one item of either end so it always makes
    progress; quality 1 is optimal halving.  The entry is None when no
    predicate splits the remaining items.
    """
    if not 0.0 <= quality <= 1.0:
        raise ParameterError("quality must lie in [0, 1]")
    n = len(state.remaining)
    u = rng.uniform(-1.0, 1.0)
    target = min(max((0.5 + 0.5 * (1.0 - quality) * u) * n, 1.0), n - 1.0)
    q = _closest(state, target)
    if q.degenerate:
        return state, None
    nxt = answer_question(state, q)
    return nxt, {
        "attribute": ATTRIBUTES[q.attribute], "threshold": q.threshold,
        "answer": bool(q.ask(state.values[state.answer])),
        "remaining_before": n, "remaining_after": len(nxt.remaining),
        "bad": is_bad(q, n),
    }


def play_game(state: GameState, quality: float = 1.0, seed=None,
              max_questions: int = MAX_QUESTIONS) -> GameLog:
    """Play questions of fixed quality until one item remains.

    Games that reach ``max_questions``, or where no predicate splits the
    remaining items, are aborted.
    """
    if not 0.0 <= quality <= 1.0:
        raise ParameterError("quality must lie in [0, 1]")
    rng = make_rng(seed)
    steps = []
    while not state.solved:
        if state.questions_asked >= max_questions:
            return GameLog(quality, state.questions_asked, True, tuple(steps))
        state, step = play_question(state, quality, rng)
        if step is None:
            return GameLog(quality, state.questions_asked, True, tuple(steps))
        steps.append(step)
    return GameLog(quality, state.questions_asked, False, tuple(steps))


def quality_from_fraction(fraction: float) -> float:
    """Question quality whose splits are centred like an expected eliminated fraction.

    A question removing half the answer space is optimal (quality 1); removing
    none or all of it is quality 0.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ParameterError("fraction must lie in [0, 1]")
    return 1.0 - abs(1.0 - 2.0 * fraction)


def mean_questions(quality: float, games: int = 1000, seed=0) -> float:
    seqs = np.random.SeedSequence(seed).spawn(games)
    total = 0
    for ss in seqs:
        rng = np.random.default_rng(ss)
        total += play_game(new_game(rng), quality, rng).questions
    return total / games


def quality_sweep(levels=None, games: int = 1000, seed=0) -> dict:
    levels = np.linspace(0.0, 1.0, 11) if levels is None else levels
    return {float(q): mean_questions(q, games, seed) for q in levels}
