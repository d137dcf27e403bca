"""Group-level statistics.

Covers percentile-band rate estimates, the simulate-and-count Table 1
constructor with its calibration, the Wilcoxon signed-rank test, OLS with
nested F-tests, and item-distribution entropy.
"""
from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .core import EventCatalog, build_catalog
from .errors import DataError, InsufficientData, NumericalError, ParameterError
from .events import classify_path, window_counts
from .simulate import check_rates, gillespie_simulate

TABLE1_COLUMNS = ("turn_taking", "turn_competitions", "backchannel", "turns_by_different_members")
TABLE1_ROWS = {
    25: (30.0, 2.0, 10.0, 25.0),
    50: (40.0, 4.0, 18.0, 30.0),
    75: (50.0, 5.0, 15.0, 35.0),
}
COUNT_FIELDS = ("take", "transfer", "yield_", "backchannel", "competition", "speaker_changes")


# -- groups and percentile bands ------------------------------------------

@dataclass(frozen=True)
class GroupRecord:
    group_id: str
    questions: int
    counts: tuple = ()
    rates: np.ndarray | None = None
    remaining: tuple = ()

    def __post_init__(self):
        if self.questions < 1:
            raise DataError(f"group {self.group_id}: question count must be at least 1")

    def minutes(self) -> float:
        return sum(c.window_length for c in self.counts) / 60.0

    def count_rates(self) -> np.ndarray:
        """Per-second rates of the COUNT_FIELDS tallies over all windows."""
        seconds = sum(c.window_length for c in self.counts)
        if seconds <= 0:
            raise InsufficientData(f"group {self.group_id} has no counted windows")
        return np.array([sum(getattr(c, f) for c in self.counts) for f in COUNT_FIELDS]) / seconds


@dataclass(frozen=True)
class PercentileRates:
    percentile: int
    rates: np.ndarray
    names: tuple
    group_ids: tuple


def performance_band(groups, percentile: float) -> list:
    """Groups whose performance quantile lies within 1/6 of ``percentile``.

    Performance is the inverse of the question count; ties keep input order.
    The band is a tercile centred on the percentile; if no group falls inside
    it the group nearest to the percentile is used.
    """
    groups = list(groups)
    ranked = sorted(range(len(groups)), key=lambda i: -groups[i].questions)
    q = {i: (r + 0.5) / len(groups) for r, i in enumerate(ranked)}
    target = percentile / 100.0
    band = [groups[i] for i in ranked if abs(q[i] - target) <= 1.0 / 6.0 + 1e-12]
    if not band:
        band = [groups[min(ranked, key=lambda i: abs(q[i] - target))]]
    return band


def percentile_rates(groups, percentile: float, catalog: EventCatalog | None = None) -> PercentileRates:
    """Mean rates over the performance band at ``percentile``.

    Uses the groups' full event-rate vectors when every group has one (for
    example inferred posterior means), otherwise the per-second event-count
    rates in COUNT_FIELDS order.
    """
    groups = list(groups)
    if len(groups) < 4:
        raise InsufficientData(f"need at least 4 groups, got {len(groups)}")
    if not 0 <= percentile <= 100:
        raise ParameterError("percentile must lie in [0, 100]")
    band = performance_band(groups, percentile)
    if all(g.rates is not None for g in groups):
        rates = np.mean([np.asarray(g.rates, dtype=float) for g in band], axis=0)
        names = tuple(e.name for e in catalog.events) if catalog else ()
    else:
        rates = np.mean([g.count_rates() for g in band], axis=0)
        names = COUNT_FIELDS
    return PercentileRates(int(percentile), rates, names, tuple(g.group_id for g in band))


# -- Table 1 ----------------------------------------------------------------

@dataclass(frozen=True)
class Table1Stats:
    means: dict
    stderr: dict
    replicates: int = 0

    def row(self) -> tuple:
        return tuple(self.means[k] for k in TABLE1_COLUMNS)


def counts_per_minute(counts) -> dict:
    seconds = sum(c.window_length for c in counts)
    if seconds <= 0:
        return {k: 0.0 for k in TABLE1_COLUMNS}
    scale = 60.0 / seconds
    return {
        "turn_taking": scale * sum(c.turns for c in counts),
        "turn_competitions": scale * sum(c.competition for c in counts),
        "backchannel": scale * sum(c.backchannel for c in counts),
        "turns_by_different_members": scale * sum(c.speaker_changes for c in counts),
    }


def simulate_and_count(rates, minutes: float = 10.0, replicates: int = 200, seed=0,
                       catalog: EventCatalog | None = None, window: float = 60.0) -> Table1Stats:
    """Mean per-minute Table 1 statistics over replicated exact simulations.

    Each replicate starts from silence, runs ``minutes`` of jump-process time,
    is converted to conversational events and counted in tumbling windows.
    """
    if replicates < 1:
        raise ParameterError("replicates must be at least 1")
    rates = np.asarray(rates, dtype=float)
    if catalog is None:
        catalog = build_catalog(_speakers_for(len(rates)))
    rates = check_rates(rates, catalog)
    horizon = minutes * 60.0
    seeds = np.random.SeedSequence(seed).spawn(replicates)
    rows = []
    for ss in seeds:
        traj = gillespie_simulate(catalog, rates, (0,) * catalog.speaker_count, horizon,
                                  np.random.default_rng(ss))
        counts = window_counts(classify_path(traj, catalog), window, duration=horizon)
        rows.append([counts_per_minute(counts)[k] for k in TABLE1_COLUMNS])
    rows = np.array(rows)
    means = rows.mean(axis=0)
    se = rows.std(axis=0, ddof=1) / math.sqrt(replicates) if replicates > 1 else np.zeros(4)
    return Table1Stats(dict(zip(TABLE1_COLUMNS, map(float, means))),
                       dict(zip(TABLE1_COLUMNS, map(float, se))), replicates)


def _speakers_for(n_events: int) -> int:
    C = int(round((-5 + math.sqrt(25 + 4 * n_events)) / 2))
    if C * C + 5 * C != n_events:
        raise DataError(f"{n_events} rates do not match any catalog size")
    return C


def _starter(catalog: EventCatalog) -> np.ndarray:
    out = np.full(len(catalog), -1, dtype=np.int64)
    for e in catalog.events:
        if e.kind in ("take", "seize"):
            out[e.id] = e.actor
        elif e.kind == "transfer" and e.target != e.actor:
            out[e.id] = e.target
    return out


@lru_cache(maxsize=8)
def _augmented_structure(catalog: EventCatalog):
    """Transitions of the (state, last turn starter) chain as (from, to, event) arrays."""
    C, S = catalog.speaker_count, catalog.n_states
    starter = _starter(catalog)
    src, dst, ev = [], [], []
    for s in range(S):
        for last in range(C):
            for v in np.flatnonzero(catalog.active_table[s]):
                l2 = starter[v] if starter[v] >= 0 else last
                j = catalog.next_table[s, v] * C + l2
                if j != s * C + last:
                    src.append(s * C + last)
                    dst.append(j)
                    ev.append(v)
    return np.array(src), np.array(dst), np.array(ev), starter


def expected_table1(rates, catalog: EventCatalog) -> dict:
    """Long-run per-minute Table 1 statistics, computed without simulation.

    The jump process is augmented with the identity of the last turn starter
    so that speaker changes become a function of the state; the statistics are
    expectations of event-rate indicators under the stationary distribution
    of that augmented chain.
    """
    rates = check_rates(rates, catalog)
    C, S = catalog.speaker_count, catalog.n_states
    src, dst, ev, starter = _augmented_structure(catalog)
    n = S * C
    Q = np.zeros((n, n))
    np.add.at(Q, (src, dst), rates[ev])
    h = np.where(catalog.active_table, rates, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    A = np.vstack([Q.T, np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    if np.abs(A @ pi - b).max() > 1e-8:
        raise NumericalError("stationary distribution is not unique")
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    occupancy = pi.reshape(S, C)
    is_start = starter >= 0
    kinds = np.array([e.kind for e in catalog.events])
    per_state = occupancy.sum(axis=1)
    turn = float(per_state @ (h[:, is_start]).sum(axis=1))
    comp = float(per_state @ h[:, kinds == "yield-under-competition"].sum(axis=1))
    back = float(per_state @ h[:, kinds == "backchannel"].sum(axis=1))
    change = 0.0
    for last in range(C):
        differs = is_start & (starter != last)
        change += float(occupancy[:, last] @ h[:, differs].sum(axis=1))
    return dict(zip(TABLE1_COLUMNS, (60 * turn, 60 * comp, 60 * back, 60 * change)))


@dataclass(frozen=True)
class RateProfile:
    """Low-dimensional rate family used for Table 1 calibration.

    Speaker c has weight proportional to ``balance ** c``, normalised to mean
    one.  take(c) = turn * w_c, transfer(c->d) = transfer_share * turn * w_d,
    seize(c) = seize * w_c, backchannel(c) = backchannel; yield and
    yield-under-competition rates are fixed.
    """
    turn: float = 0.5
    seize: float = 0.05
    backchannel: float = 0.1
    balance: float = 1.0
    transfer_share: float = 0.5
    yield_rate: float = 1.0
    resolve_rate: float = 1.0

    def with_spread(self, spread: float, base_share: float = 0.5) -> "RateProfile":
        """One monotone knob for speaker changes.

        Below 1 it sets ``balance`` (more imbalance, fewer changes); above 1
        balance stays at 1 and the transfer share grows from ``base_share``.
        """
        return replace(self, balance=min(spread, 1.0), transfer_share=base_share * max(spread, 1.0))

    def rates(self, catalog: EventCatalog) -> np.ndarray:
        C = catalog.speaker_count
        w = self.balance ** np.arange(C, dtype=float)
        w = w * C / w.sum()
        out = np.zeros(len(catalog))
        for e in catalog.events:
            a = e.actor
            if e.kind == "take":
                out[e.id] = self.turn * w[a]
            elif e.kind == "yield":
                out[e.id] = self.yield_rate
            elif e.kind == "transfer" and e.target != a:
                out[e.id] = self.transfer_share * self.turn * w[e.target]
            elif e.kind == "backchannel":
                out[e.id] = self.backchannel
            elif e.kind == "seize":
                out[e.id] = self.seize * w[a]
            elif e.kind == "yield-under-competition":
                out[e.id] = self.resolve_rate
        return out


_CALIBRATION = (
    # profile field, statistic, search interval, statistic increases with field
    ("turn", "turn_taking", (1e-4, 1e3), True),
    ("seize", "turn_competitions", (0.0, 1e2), True),
    ("backchannel", "backchannel", (0.0, 1e2), True),
    ("spread", "turns_by_different_members", (1e-4, 1e3), True),
)


def _bisect(fn, lo, hi, increasing, target, rtol):
    f_lo, f_hi = fn(lo), fn(hi)
    if increasing and not f_lo <= target <= f_hi or not increasing and not f_hi <= target <= f_lo:
        raise ParameterError(f"target {target} outside reachable range [{f_lo:.4g}, {f_hi:.4g}]")
    for _ in range(200):
        mid = math.sqrt(lo * hi) if lo > 0 else 0.5 * (lo + hi)
        val = fn(mid)
        if (val < target) == increasing:
            lo = mid
        else:
            hi = mid
        if abs(hi - lo) <= rtol * max(abs(hi), 1e-300):
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class Calibration:
    profile: RateProfile
    rates: np.ndarray
    expected: dict
    sweeps: int
    history: tuple = field(default=(), repr=False)


def calibrate_table1(target, catalog: EventCatalog | None = None, start: RateProfile | None = None,
                     rtol: float = 1e-6, max_sweeps: int = 100) -> Calibration:
    """Find a RateProfile whose long-run statistics match a Table 1 row.

    Cyclic coordinate bisection: each statistic is matched in turn by bisecting
    its own profile parameter with the others held fixed, using
    :func:`expected_table1` as the objective, until one full cycle changes no
    statistic by more than ``rtol`` relative to its target.
    """
    catalog = catalog or build_catalog(4)
    target = dict(zip(TABLE1_COLUMNS, target)) if not isinstance(target, dict) else dict(target)
    profile = start or RateProfile()
    history = []
    for sweep in range(1, max_sweeps + 1):
        for name, stat, (lo, hi), increasing in _CALIBRATION:
            def set_(v, name=name):
                return profile.with_spread(v) if name == "spread" else replace(profile, **{name: v})

            def fn(v, stat=stat):
                return expected_table1(set_(v).rates(catalog), catalog)[stat]
            profile = set_(_bisect(fn, lo, hi, increasing, target[stat], rtol * 1e-2))
        got = expected_table1(profile.rates(catalog), catalog)
        err = max(abs(got[k] / target[k] - 1) for k in TABLE1_COLUMNS)
        history.append(err)
        if err <= rtol:
            return Calibration(profile, profile.rates(catalog), got, sweep, tuple(history))
    raise NumericalError(f"calibration did not converge (relative error {history[-1]:.3g})")


def table1_report(groups, percentiles=(25, 50, 75), catalog: EventCatalog | None = None,
                  minutes: float = 10.0, replicates: int = 50, seed=0) -> dict:
    """Table 1 rows from group records.

    With full rate vectors the band-mean rates are simulated and counted; with
    count data only, band-mean per-minute counts are reported directly.
    """
    out = {}
    groups = list(groups)
    use_rates = all(g.rates is not None for g in groups)
    for k, p in enumerate(percentiles):
        pr = percentile_rates(groups, p, catalog)
        if use_rates:
            st = simulate_and_count(pr.rates, minutes, replicates, [seed, k], catalog)
            row = st.means
        else:
            band = [g for g in groups if g.group_id in pr.group_ids]
            rows = [counts_per_minute(g.counts) for g in band]
            row = {c: float(np.mean([r[c] for r in rows])) for c in TABLE1_COLUMNS}
        out[str(p)] = {**row, "groups": list(pr.group_ids)}
    return out


def format_table1(report: dict) -> str:
    head = ("percentile",) + TABLE1_COLUMNS
    widths = [max(len(h), 10) for h in head]
    lines = ["  ".join(h.rjust(w) for h, w in zip(head, widths))]
    for p, row in report.items():
        cells = [f"{p}%"] + [f"{row[c]:.1f}" for c in TABLE1_COLUMNS]
        lines.append("  ".join(c.rjust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines) + "\n"


# -- Wilcoxon signed-rank ------------------------------------------------------

@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    one_sided: bool
    exact: bool
    n: int


def _signed_rank_null(doubled_ranks) -> np.ndarray:
    """Counts of sign assignments per value of the doubled positive-rank sum."""
    total = int(sum(doubled_ranks))
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in doubled_ranks:
        for s in range(total, r - 1, -1):
            counts[s] += counts[s - r]
    return np.array(counts, dtype=object)


def wilcoxon_signed_rank(differences, alternative: str = "two-sided",
                         method: str = "auto") -> WilcoxonResult:
    """Signed-rank test on paired differences.

    Zero differences are dropped and tied magnitudes get mid-ranks.  With
    ``method="auto"`` the null distribution is exact (dynamic programming over
    doubled ranks) up to 20 differences and normal with continuity and tie
    corrections beyond.  ``alternative`` is "two-sided", "greater" or "less";
    the statistic is the positive-rank sum.
    """
    if alternative not in ("two-sided", "greater", "less"):
        raise ParameterError(f"unknown alternative {alternative!r}")
    d = np.asarray(differences, dtype=float)
    if d.size and np.all(d == 0):
        raise ParameterError("all differences are zero: the test is undefined")
    d = d[d != 0]
    n = d.size
    if n < 5:
        raise InsufficientData(f"need at least 5 nonzero differences, got {n}")
    ranks = stats.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    exact = method == "exact" or (method == "auto" and n <= 20)
    if exact:
        doubled = [int(round(2 * r)) for r in ranks]
        null = _signed_rank_null(doubled)
        obs = int(round(2 * w_plus))
        denom = 2 ** n
        upper = sum(null[obs:]) / denom
        lower = sum(null[: obs + 1]) / denom
        upper, lower = float(upper), float(lower)
    else:
        mean = n * (n + 1) / 4
        _, tie = np.unique(np.abs(d), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24 - float(np.sum(tie ** 3 - tie)) / 48
        sd = math.sqrt(var)
        upper = float(stats.norm.sf((w_plus - mean - 0.5) / sd))
        lower = float(stats.norm.cdf((w_plus - mean + 0.5) / sd))
    if alternative == "greater":
        p = upper
    elif alternative == "less":
        p = lower
    else:
        p = min(1.0, 2 * min(upper, lower))
    return WilcoxonResult(w_plus, p, alternative != "two-sided", exact, n)


# -- regression ----------------------------------------------------------------

@dataclass(frozen=True)
class OLSFit:
    coefficients: np.ndarray   # intercept first
    r_squared: float
    rss: float
    tss: float
    n: int
    names: tuple

    @property
    def n_params(self) -> int:
        return len(self.coefficients)


def ols_fit(X, y, names=None) -> OLSFit:
    """Least squares with an intercept; r^2 = 1 - RSS/TSS."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(p))
    if len(names) != p or len(y) != n:
        raise DataError("X, y and names have inconsistent sizes")
    if n <= p + 1:
        raise InsufficientData(f"need more rows ({n}) than parameters ({p + 1})")
    design = np.column_stack([np.ones(n), X])
    rank = np.linalg.matrix_rank(design)
    if rank < p + 1:
        dependent = []
        kept = design[:, :1]
        for j in range(p):
            trial = np.column_stack([kept, X[:, j]])
            if np.linalg.matrix_rank(trial) == trial.shape[1]:
                kept = trial
            else:
                dependent.append(names[j])
        raise ParameterError(f"design is rank deficient; dependent columns: {', '.join(dependent)}")
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    rss = float(resid @ resid)
    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    return OLSFit(coef, float(min(max(r2, 0.0), 1.0)), rss, tss, n, names)


def nested_f_test(restricted: OLSFit, full: OLSFit) -> tuple[float, float]:
    """F statistic and p-value for adding ``full``'s extra regressors."""
    if not set(restricted.names) <= set(full.names) or restricted.n != full.n \
            or not math.isclose(restricted.tss, full.tss, rel_tol=1e-9, abs_tol=1e-12):
        raise ParameterError("models are not nested on the same data")
    q = full.n_params - restricted.n_params
    if q == 0:
        return 0.0, 1.0
    df = full.n - full.n_params
    if full.rss <= 0:
        return math.inf, 0.0
    F = max((restricted.rss - full.rss) / q, 0.0) / (full.rss / df)
    return float(F), float(stats.f.sf(F, q, df))


def item_entropy(counts) -> float:
    """Shannon entropy in bits of the normalised member distribution."""
    c = np.asarray(counts, dtype=float)
    if np.any(c < 0) or c.sum() <= 0:
        raise ParameterError("counts must be non-negative and not all zero")
    p = c[c > 0] / c.sum()
    return float(-np.sum(p * np.log2(p)))


__all__ = [
    "GroupRecord", "PercentileRates", "percentile_rates", "performance_band", "Table1Stats",
    "simulate_and_count", "expected_table1", "RateProfile", "calibrate_table1", "Calibration",
    "table1_report", "format_table1", "WilcoxonResult", "wilcoxon_signed_rank", "OLSFit", "ols_fit",
    "nested_f_test", "item_entropy", "counts_per_minute", "TABLE1_ROWS", "TABLE1_COLUMNS",
]
