"""Turn-level preprocessing of raw badge streams.

Streams are aligned by cross-correlating loud-sample indicator trains,
loud samples become candidate pitched segments, a two-component Gaussian
mixture on log inter-segment gaps gives the turn-break threshold, and the
merged spans are classified with the 1.5 s turn / 1 s backchannel rules.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal

from .errors import AlignmentError, DataError, DegenerateSignal, InsufficientData
from .simulate import make_rng

MIN_TURN = 1.5
BACKCHANNEL_MAX = 1.0


@dataclass(frozen=True)
class BadgeStream:
    badge: int
    timestamps: np.ndarray
    audio: np.ndarray
    motion: np.ndarray
    ir_hits: tuple = ()
    sample_period: float | None = None

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        if np.any(np.diff(t) < 0):
            raise DataError(f"badge {self.badge}: timestamps must be nondecreasing")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "audio", np.asarray(self.audio, dtype=float))
        object.__setattr__(self, "motion", np.asarray(self.motion, dtype=float))
        if self.sample_period is None:
            period = float(np.median(np.diff(t))) if len(t) > 1 else 0.0
            object.__setattr__(self, "sample_period", period)

    @property
    def start(self) -> float:
        return float(self.timestamps[0])

    @property
    def end(self) -> float:
        return float(self.timestamps[-1] + self.sample_period)


@dataclass(frozen=True)
class Alignment:
    offsets: np.ndarray        # seconds to add to each badge's clock
    peak_correlation: np.ndarray
    low_confidence: np.ndarray
    streams: tuple             # re-timed BadgeStreams


@dataclass(frozen=True)
class PitchSegment:
    badge: int
    start: float
    end: float


@dataclass(frozen=True)
class TurnSegment:
    speaker: int
    start: float
    end: float
    kind: str = "turn"   # or "backchannel-candidate"

    @property
    def length(self) -> float:
        return self.end - self.start


def _loud_train(stream: BadgeStream, grid: np.ndarray, percentile: float) -> np.ndarray:
    threshold = np.percentile(stream.audio, percentile)
    loud = stream.audio > threshold
    if not loud.any():
        raise DegenerateSignal(f"badge {stream.badge}: no samples above the {percentile}th percentile")
    idx = np.searchsorted(stream.timestamps, grid + 1e-9, side="right") - 1
    inside = (idx >= 0) & (grid < stream.end - 1e-9)
    out = np.zeros(len(grid))
    out[inside] = loud[idx[inside]]
    return out


def align_streams(streams, resolution: float = 0.01, max_lag: float = 5.0,
                  percentile: float = 90.0, min_peak: float = 0.2) -> Alignment:
    """Per-badge clock offsets relative to badge 0.

    Each badge's top-decile audio indicator is cross-correlated with badge
    0's over lags within ``max_lag`` at ``resolution``; the best lag gives the
    offset.  Peaks below ``min_peak`` (normalised) are flagged low-confidence.
    """
    streams = list(streams)
    if len(streams) < 2:
        raise AlignmentError("need at least two badges to align")
    lo = max(s.start for s in streams)
    hi = min(s.end for s in streams)
    if hi - lo <= resolution:
        raise AlignmentError("badge recordings do not overlap in time")
    t0 = min(s.start for s in streams)
    t1 = max(s.end for s in streams)
    grid = t0 + resolution * np.arange(int(math.floor((t1 - t0) / resolution + 1e-9)))
    trains = [_loud_train(s, grid, percentile) for s in streams]
    K = int(round(max_lag / resolution))
    ref = trains[0] - trains[0].mean()
    offsets = np.zeros(len(streams))
    peaks = np.ones(len(streams))
    for b in range(1, len(streams)):
        sig = trains[b] - trains[b].mean()
        full = signal.correlate(sig, ref, mode="full", method="fft")
        zero = len(ref) - 1
        window = full[zero - K: zero + K + 1]
        norm = math.sqrt(float(ref @ ref) * float(sig @ sig))
        corr = window / norm if norm > 0 else np.zeros_like(window)
        best = int(np.argmax(corr))
        offsets[b] = -(best - K) * resolution
        peaks[b] = float(corr[best])
    aligned = tuple(replace(s, timestamps=s.timestamps + offsets[i]) for i, s in enumerate(streams))
    return Alignment(offsets, peaks, peaks < min_peak, aligned)


def detect_pitched(timestamps, audio, percentile: float = 90.0, badge: int = 0,
                   sample_period: float | None = None) -> list[PitchSegment]:
    """Maximal runs of samples strictly above the per-badge percentile."""
    timestamps = np.asarray(timestamps, dtype=float)
    audio = np.asarray(audio, dtype=float)
    if len(audio) < 10:
        raise InsufficientData("need at least 10 audio samples")
    if sample_period is None:
        sample_period = float(np.median(np.diff(timestamps)))
    loud = audio > np.percentile(audio, percentile)
    edges = np.diff(np.concatenate([[0], loud.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1) - 1
    return [PitchSegment(badge, float(timestamps[a]), float(timestamps[b] + sample_period))
            for a, b in zip(starts, stops)]


@dataclass(frozen=True)
class GapMixture:
    """Two-component mixture on log gaps; component 1 is the long-gap one."""
    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    threshold: float
    loglik: float
    single_component: bool = False
    loglik_trace: tuple = field(default=(), repr=False)


def _norm_logpdf(z, m, v):
    return -0.5 * (math.log(2 * math.pi * v) + (z - m) ** 2 / v)


def _em(z, means, variances, weights, tol, max_iter, floor):
    trace = []
    prev = -math.inf
    for _ in range(max_iter):
        logp = np.stack([np.log(weights[k]) + _norm_logpdf(z, means[k], variances[k]) for k in (0, 1)])
        top = logp.max(axis=0)
        lse = top + np.log(np.exp(logp - top).sum(axis=0))
        ll = float(lse.sum())
        trace.append(ll)
        resp = np.exp(logp - lse)
        nk = resp.sum(axis=1)
        if np.any(nk < 1e-8):
            break
        weights = nk / len(z)
        means = (resp @ z) / nk
        variances = np.maximum((resp * (z - means[:, None]) ** 2).sum(axis=1) / nk, floor)
        if abs(ll - prev) <= tol * abs(ll):
            break
        prev = ll
    return means, variances, weights, trace


def _kmeans2(z, init, iters=100):
    c = np.array(init, dtype=float)
    for _ in range(iters):
        lab = np.abs(z - c[1]) < np.abs(z - c[0])
        if lab.all() or not lab.any():
            break
        new = np.array([z[~lab].mean(), z[lab].mean()])
        if np.allclose(new, c):
            break
        c = new
    return c, lab


def _crossing(means, variances, weights) -> float:
    """Log-gap where the long component's responsibility is 0.5."""
    (m0, m1), (v0, v1), (w0, w1) = means, variances, weights
    a = 0.5 / v0 - 0.5 / v1
    b = m1 / v1 - m0 / v0
    c = (0.5 * m0 ** 2 / v0 - 0.5 * m1 ** 2 / v1 + math.log(w1 / w0)
         - 0.5 * math.log(v1 / v0))
    if abs(a) < 1e-12 * max(abs(b), 1.0):
        return -c / b
    disc = b * b - 4 * a * c
    if disc < 0:
        return 0.5 * (m0 + m1)
    roots = [(-b + s * math.sqrt(disc)) / (2 * a) for s in (1, -1)]
    between = [r for r in roots if m0 <= r <= m1]
    if between:
        return between[0]
    return min(roots, key=lambda r: abs(r - 0.5 * (m0 + m1)))


def fit_gap_mixture(gaps, restarts: int = 10, tol: float = 1e-8, max_iter: int = 500,
                    seed=0) -> GapMixture:
    """EM fit of a two-Gaussian mixture to log gaps; threshold returned in seconds.

    Restarts begin from 2-means clusterings seeded at random data pairs (the
    first at the quartiles); the best final log-likelihood wins.  When BIC
    prefers a single Gaussian the threshold is +inf.
    """
    gaps = np.asarray(gaps, dtype=float)
    if len(gaps) < 10:
        raise InsufficientData(f"need at least 10 gaps, got {len(gaps)}")
    if np.any(gaps <= 0) or not np.all(np.isfinite(gaps)):
        raise DataError("gaps must be positive and finite")
    z = np.log(gaps)
    n = len(z)
    var = float(z.var())
    ll_one = float(np.sum(_norm_logpdf(z, z.mean(), var))) if var > 0 else math.inf
    if var < 1e-12:
        return GapMixture(np.array([z.mean()] * 2), np.array([0.0, 0.0]), np.array([1.0, 0.0]),
                          math.inf, ll_one, True)
    rng = make_rng(seed)
    floor = 1e-6 * var
    best = None
    for r in range(restarts):
        init = np.quantile(z, [0.25, 0.75]) if r == 0 else np.sort(rng.choice(z, 2, replace=False))
        if init[0] == init[1]:
            init = np.quantile(z, [0.25, 0.75])
        centers, lab = _kmeans2(z, init)
        if lab.all() or not lab.any():
            continue
        groups = (z[~lab], z[lab])
        means = np.array([g.mean() for g in groups])
        variances = np.array([max(g.var(), floor) for g in groups])
        weights = np.array([len(g) / n for g in groups])
        fit = _em(z, means, variances, weights, tol, max_iter, floor)
        if best is None or fit[3][-1] > best[3][-1]:
            best = fit
    if best is None:
        return GapMixture(np.array([z.mean()] * 2), np.array([var, var]), np.array([1.0, 0.0]),
                          math.inf, ll_one, True)
    means, variances, weights, trace = best
    order = np.argsort(means)
    means, variances, weights = means[order], variances[order], weights[order]
    ll = trace[-1]
    bic_two = -2 * ll + 5 * math.log(n)
    bic_one = -2 * ll_one + 2 * math.log(n)
    if bic_one <= bic_two or weights.min() < 1e-3:
        return GapMixture(means, variances, weights, math.inf, ll, True, tuple(trace))
    return GapMixture(means, variances, weights, float(math.exp(_crossing(means, variances, weights))),
                      ll, False, tuple(trace))


@dataclass(frozen=True)
class Segmentation:
    turns: list
    dropped: int


def _merge(spans, gap_max):
    out = []
    for s, e in sorted(spans):
        if out and s - out[-1][1] < gap_max:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return out


def segment_turns(segments, break_threshold: float, min_turn: float = MIN_TURN,
                  backchannel_max: float = BACKCHANNEL_MAX,
                  attach_gap: float | None = None) -> Segmentation:
    """Merge pitched segments into turns and backchannel candidates.

    Same-speaker segments closer than ``break_threshold`` merge.  Spans of at
    least ``min_turn`` are turns; spans shorter than ``backchannel_max`` that
    start inside another speaker's turn are backchannel candidates.  Spans in
    between join the nearest same-speaker turn within ``attach_gap`` (default
    ``break_threshold``, inclusive) or are dropped and counted.
    """
    attach_gap = break_threshold if attach_gap is None else attach_gap
    by_speaker: dict[int, list] = {}
    for seg in segments:
        by_speaker.setdefault(seg.badge, []).append((seg.start, seg.end))
    spans = {c: _merge(v, break_threshold) for c, v in by_speaker.items()}
    turns = {c: [list(s) for s in v if s[1] - s[0] >= min_turn] for c, v in spans.items()}
    dropped = 0
    for c, v in spans.items():
        for s, e in v:
            length = e - s
            if length >= min_turn or length < backchannel_max:
                continue
            near = None
            for t in turns[c]:
                gap = max(t[0] - e, s - t[1])
                if gap <= attach_gap and (near is None or gap < near[0]):
                    near = (gap, t)
            if near is None:
                dropped += 1
            else:
                near[1][0] = min(near[1][0], s)
                near[1][1] = max(near[1][1], e)
    result = [TurnSegment(c, s, e, "turn") for c, v in turns.items() for s, e in v]
    for c, v in spans.items():
        for s, e in v:
            if e - s >= backchannel_max:
                continue
            inside = any(t.speaker != c and t.start <= s < t.end for t in result if t.kind == "turn")
            if inside:
                result.append(TurnSegment(c, s, e, "backchannel-candidate"))
            else:
                dropped += 1
    result.sort(key=lambda t: (t.start, t.speaker, t.kind))
    return Segmentation(result, dropped)


def gaps_between(segments) -> np.ndarray:
    """Inter-segment gaps within each badge."""
    by_badge: dict[int, list] = {}
    for seg in segments:
        by_badge.setdefault(seg.badge, []).append(seg)
    out = []
    for segs in by_badge.values():
        segs.sort(key=lambda s: s.start)
        out.extend(b.start - a.end for a, b in zip(segs, segs[1:]) if b.start > a.end)
    return np.asarray(out, dtype=float)


# -- file formats ------------------------------------------------------------

BADGE_COLUMNS = ("timestamp_s", "audio_var", "motion_var", "ir_detected_ids")
TURN_COLUMNS = ("speaker", "start_s", "end_s", "kind")


def badge_from_csv(text: str, badge: int, source: str = "<badge>") -> BadgeStream:
    reader = csv.reader(io.StringIO(text))
    rows = []
    for lineno, fields in enumerate(reader, start=1):
        if lineno == 1:
            if tuple(fields) != BADGE_COLUMNS:
                raise DataError(f"{source}:1: expected header {','.join(BADGE_COLUMNS)}")
            continue
        if not fields:
            continue
        if len(fields) != len(BADGE_COLUMNS):
            raise DataError(f"{source}:{lineno}: expected {len(BADGE_COLUMNS)} fields")
        try:
            t, a, m = float(fields[0]), float(fields[1]), float(fields[2])
            ids = tuple(int(x) for x in fields[3].split(";") if x != "")
        except ValueError as exc:
            raise DataError(f"{source}:{lineno}: {exc}") from None
        if a < 0 or m < 0:
            raise DataError(f"{source}:{lineno}: variances must be non-negative")
        if rows and t < rows[-1][0]:
            raise DataError(f"{source}:{lineno}: timestamps must be nondecreasing")
        rows.append((t, a, m, ids))
    if len(rows) < 2:
        raise DataError(f"{source}: need at least two samples")
    return BadgeStream(badge, np.array([r[0] for r in rows]), np.array([r[1] for r in rows]),
                       np.array([r[2] for r in rows]), tuple(r[3] for r in rows))


def badge_to_csv(stream: BadgeStream) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BADGE_COLUMNS)
    hits = stream.ir_hits or ((),) * len(stream.timestamps)
    for t, a, m, ids in zip(stream.timestamps, stream.audio, stream.motion, hits):
        w.writerow([repr(float(t)), repr(float(a)), repr(float(m)), ";".join(map(str, ids))])
    return buf.getvalue()


def turns_to_csv(turns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TURN_COLUMNS)
    for t in turns:
        w.writerow([t.speaker, repr(float(t.start)), repr(float(t.end)), t.kind])
    return buf.getvalue()


def turns_from_csv(text: str, source: str = "<turns>") -> list[TurnSegment]:
    out = []
    for lineno, fields in enumerate(csv.reader(io.StringIO(text)), start=1):
        if lineno == 1:
            if tuple(fields) != TURN_COLUMNS:
                raise DataError(f"{source}:1: expected header {','.join(TURN_COLUMNS)}")
            continue
        if not fields:
            continue
        try:
            c, s, e, kind = int(fields[0]), float(fields[1]), float(fields[2]), fields[3]
        except (ValueError, IndexError) as exc:
            raise DataError(f"{source}:{lineno}: {exc}") from None
        if e <= s or kind not in ("turn", "backchannel-candidate"):
            raise DataError(f"{source}:{lineno}: bad turn segment")
        out.append(TurnSegment(c, s, e, kind))
    return out
