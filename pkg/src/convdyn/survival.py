"""Constant-baseline hazard models linking event rates to question-level elimination.

The default model is additive, lambda(X) = lambda0 + X @ beta, fitted by
maximum likelihood under lambda > 0 at every record and lambda0 >= 0.  An
exponential-link variant lambda(X) = exp(alpha + X @ beta) is available via
``link="exponential"``.  Records carry weights so that one question, which
removes a fraction of the remaining items, becomes two weighted records.
Covariates are event rates per second.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DomainError, InsufficientData, NumericalError
from .simulate import make_rng

COVARIATES = ("competition", "transfer", "take", "backchannel")
RECORD_COLUMNS = ("fraction_remaining_before", "fraction_remaining_after", "interval_s",
                  "rate_take", "rate_transfer", "rate_backchannel", "rate_competition")


@dataclass(frozen=True)
class SurvivalRecord:
    duration: float
    covariates: tuple
    censored: bool = False
    weight: float = 1.0


@dataclass(frozen=True)
class HazardFit:
    baseline: float
    beta: np.ndarray
    loglik: float
    variance_explained: float
    names: tuple = COVARIATES
    link: str = "additive"
    standard_errors: np.ndarray | None = None
    unidentifiable: tuple = ()
    trace: tuple = field(default=(), repr=False)

    def hazard(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.link == "exponential":
            return self.baseline * np.exp(X @ self.beta)
        return self.baseline + X @ self.beta

    def to_json(self) -> str:
        doc = {
            "baseline": self.baseline,
            "betas": {n: float(b) for n, b in zip(self.names, self.beta)},
            "standard_errors": None if self.standard_errors is None
            else {n: float(s) for n, s in zip(("baseline",) + tuple(self.names), self.standard_errors)},
            "loglik": self.loglik,
            "variance_explained": self.variance_explained,
            "link": self.link,
            "unidentifiable": list(self.unidentifiable),
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def _arrays(records):
    T = np.array([r.duration for r in records], dtype=float)
    X = np.array([r.covariates for r in records], dtype=float).reshape(len(records), -1)
    d = np.array([0.0 if r.censored else 1.0 for r in records])
    w = np.array([r.weight for r in records], dtype=float)
    return T, X, d, w


def _additive_terms(theta, Z, T, d, w):
    lam = Z @ theta
    ll = float(np.sum(w * (d * np.log(np.where(d > 0, lam, 1.0)) - lam * T)))
    g = Z.T @ (w * (d / lam - T))
    H = -(Z * (w * d / lam ** 2)[:, None]).T @ Z
    return lam, ll, g, H


def _exponential_terms(theta, Z, T, d, w):
    eta = Z @ theta
    lam = np.exp(eta)
    ll = float(np.sum(w * (d * eta - lam * T)))
    g = Z.T @ (w * (d - lam * T))
    H = -(Z * (w * lam * T)[:, None]).T @ Z
    return lam, ll, g, H


def fit_hazard(records, names=COVARIATES, link: str = "additive", tol: float = 1e-8,
               max_iter: int = 500) -> HazardFit:
    """Maximum-likelihood hazard fit by damped Newton steps with backtracking.

    Every accepted step keeps the hazard positive at all records, keeps the
    baseline non-negative and does not decrease the log-likelihood.  Iteration
    stops when the relative log-likelihood change falls below ``tol``.
    Covariates without variation are fixed at beta = 0 and reported as
    unidentifiable.
    """
    if link not in ("additive", "exponential"):
        raise DataError(f"unknown link {link!r}")
    records = list(records)
    if len(records) < 2:
        raise InsufficientData("need at least two records")
    T, X, d, w = _arrays(records)
    names = tuple(names)[: X.shape[1]] if X.shape[1] else ()
    if X.shape[1] != len(names):
        names = tuple(f"x{p}" for p in range(X.shape[1]))
    if np.any(T <= 0) or np.any(w < 0) or not np.all(np.isfinite(X)):
        raise DataError("durations must be positive, weights non-negative, covariates finite")
    if np.sum(w * d) <= 0:
        raise DomainError("no uncensored events: a positive hazard cannot be fitted")
    free = [p for p in range(X.shape[1]) if np.ptp(X[:, p]) > 0]
    flagged = tuple(names[p] for p in range(X.shape[1]) if p not in free)
    if flagged:
        warnings.warn(f"covariates without variation are unidentifiable: {', '.join(flagged)}",
                      stacklevel=2)
    Z = np.column_stack([np.ones(len(T)), X[:, free]])
    base = float(np.sum(w * d) / np.sum(w * T))
    if link == "additive":
        terms = _additive_terms
        theta = np.concatenate([[base], np.zeros(len(free))])
    else:
        terms = _exponential_terms
        theta = np.concatenate([[math.log(base)], np.zeros(len(free))])
    _, ll, g, H = terms(theta, Z, T, d, w)
    trace = [ll]
    for _ in range(max_iter):
        active = np.ones(len(theta), dtype=bool)
        if link == "additive" and theta[0] <= 0 and g[0] <= 0:
            active[0] = False
        step = np.zeros_like(theta)
        Ha = H[np.ix_(active, active)]
        try:
            step[active] = np.linalg.solve(-Ha, g[active])
        except np.linalg.LinAlgError:
            step[active] = np.linalg.lstsq(-Ha, g[active], rcond=None)[0]
        if float(g @ step) <= 0:
            step = g / max(np.abs(np.diag(H)).max(), 1e-300)
        t = 1.0
        accepted = False
        while t > 1e-14:
            cand = theta + t * step
            if link == "additive":
                cand[0] = max(cand[0], 0.0)
                if np.any(Z @ cand <= 0):
                    t *= 0.5
                    continue
            _, ll_c, g_c, H_c = terms(cand, Z, T, d, w)
            if np.isfinite(ll_c) and ll_c >= ll:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        change = ll_c - ll
        theta, ll, g, H = cand, ll_c, g_c, H_c
        trace.append(ll)
        if change <= tol * max(1.0, abs(ll)):
            break
    if not np.isfinite(ll):
        raise NumericalError("hazard fit diverged")
    beta = np.zeros(X.shape[1])
    beta[free] = theta[1:]
    baseline = float(theta[0]) if link == "additive" else float(math.exp(theta[0]))
    se = np.full(X.shape[1] + 1, np.nan)
    try:
        cov = np.linalg.inv(-H)
        diag = np.sqrt(np.clip(np.diag(cov), 0, None))
        se[0] = diag[0] if link == "additive" else diag[0] * baseline
        se[1:][free] = diag[1:]
    except np.linalg.LinAlgError:
        pass
    fit = HazardFit(baseline, beta, ll, 0.0, names, link, se, flagged, tuple(trace))
    return HazardFit(baseline, beta, ll, variance_explained(fit, records), names, link, se,
                     flagged, tuple(trace))


def variance_explained(fit: HazardFit, records) -> float:
    """Weighted squared correlation between observed and expected durations, uncensored records."""
    T, X, d, w = _arrays(records)
    keep = (d > 0) & (w > 0)
    if keep.sum() < 2:
        return 0.0
    expected = 1.0 / fit.hazard(X[keep])
    obs, ww = T[keep], w[keep]
    mo = np.average(obs, weights=ww)
    me = np.average(expected, weights=ww)
    cov = np.average((obs - mo) * (expected - me), weights=ww)
    vo = np.average((obs - mo) ** 2, weights=ww)
    ve = np.average((expected - me) ** 2, weights=ww)
    if vo <= 0 or ve <= 0:
        return 0.0
    return float(min(1.0, cov * cov / (vo * ve)))


def _hazard_at(fit: HazardFit, X) -> float:
    lam = float(fit.hazard(X)[0])
    if lam < 0 or not math.isfinite(lam):
        raise DomainError(f"hazard {lam} is negative at the given covariates")
    return lam


def cumulative_hazard(fit: HazardFit, X, t):
    """Lambda(t) = lambda(X) t for the constant-baseline model."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("t must be non-negative")
    return _hazard_at(fit, X) * t


def survival_function(fit: HazardFit, X, t):
    """S(t) = exp(-Lambda(t))."""
    return np.exp(-cumulative_hazard(fit, X, t))


def question_effect(counts, fit: HazardFit, interval: float | None = None) -> float:
    """Expected fraction of the answer space removed over one inter-question interval.

    ``counts`` is an EventCounts covering the interval; its event counts are
    turned into per-second rates, the hazard is evaluated there, and the
    fraction is 1 - S(interval).
    """
    interval = counts.window_length if interval is None else interval
    if interval <= 0:
        raise DataError("interval must be positive")
    rates = {
        "competition": counts.competition / interval,
        "transfer": counts.transfer / interval,
        "take": counts.take / interval,
        "backchannel": counts.backchannel / interval,
    }
    X = np.array([rates.get(n, 0.0) for n in fit.names])
    return float(1.0 - survival_function(fit, X, interval))


def records_from_questions(rows, names=COVARIATES) -> list[SurvivalRecord]:
    """Two weighted records per question.

    The eliminated share of the items that were still possible, (before -
    after) / before, is an event at the interval length; the surviving share is
    censored there.  ``rows`` are dicts keyed by the record CSV columns.
    """
    out = []
    for row in rows:
        before = float(row["fraction_remaining_before"])
        after = float(row["fraction_remaining_after"])
        interval = float(row["interval_s"])
        if not (0 < after <= before <= 1) or interval <= 0:
            raise DataError(f"bad question record {row}")
        X = tuple(float(row[f"rate_{n}"]) for n in names)
        gone = (before - after) / before
        if gone > 0:
            out.append(SurvivalRecord(interval, X, False, gone))
        out.append(SurvivalRecord(interval, X, True, after / before))
    return out


def simulate_records(beta, n: int, baseline: float = 0.0, span: float = 1.0, seed=None,
                     link: str = "additive") -> list[SurvivalRecord]:
    """Synthetic uncensored records with known coefficients.

    Covariate p is uniform on [0, span / beta_p], so every term contributes a
    hazard between 0 and ``span`` whatever the magnitude of beta_p.
    """
    rng = make_rng(seed)
    beta = np.asarray(beta, dtype=float)
    X = rng.uniform(0.0, 1.0, size=(n, len(beta))) * (span / beta)
    lam = baseline + X @ beta if link == "additive" else baseline * np.exp(X @ beta)
    T = rng.exponential(1.0 / lam)
    return [SurvivalRecord(float(t), tuple(x)) for t, x in zip(T, X)]


def questions_from_csv(text: str, source: str = "<records>") -> list[dict]:
    rows = []
    for lineno, fields in enumerate(csv.reader(io.StringIO(text)), start=1):
        if lineno == 1:
            if tuple(fields) != RECORD_COLUMNS:
                raise DataError(f"{source}:1: expected header {','.join(RECORD_COLUMNS)}")
            continue
        if not fields:
            continue
        if len(fields) != len(RECORD_COLUMNS):
            raise DataError(f"{source}:{lineno}: expected {len(RECORD_COLUMNS)} fields")
        try:
            row = {k: float(v) for k, v in zip(RECORD_COLUMNS, fields)}
        except ValueError as exc:
            raise DataError(f"{source}:{lineno}: {exc}") from None
        if not (0 < row["fraction_remaining_after"] <= row["fraction_remaining_before"] <= 1):
            raise DataError(f"{source}:{lineno}: fractions must satisfy 0 < after <= before <= 1")
        if row["interval_s"] <= 0 or min(row[c] for c in RECORD_COLUMNS[3:]) < 0:
            raise DataError(f"{source}:{lineno}: interval must be positive and rates non-negative")
        rows.append(row)
    return rows


def questions_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for row in rows:
        w.writerow([repr(float(row[c])) for c in RECORD_COLUMNS])
    return buf.getvalue()
