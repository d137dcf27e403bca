"""Gaussian sensor model conditioned on speaking status, with NIW conjugate updates.

Each speaker emits a 3-channel frame per slot: log audio variance, log body
motion variance and the infrared facing count.  Parameters are kept per
(speaker, status); missing channels are NaN and are marginalised out.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DataError, ParameterError
from .simulate import make_rng

CHANNELS = ("audio_logvar", "motion_logvar", "facing_count")
N_CHANNELS = len(CHANNELS)
LOG_EPS = 1e-8
LOG_2PI = math.log(2.0 * math.pi)


def log_feature(variance) -> np.ndarray:
    """Raw variance -> log(eps + v); heavy-tailed variances are near-Gaussian on this scale."""
    return np.log(LOG_EPS + np.asarray(variance, dtype=float))


@dataclass(frozen=True)
class ObservationSeries:
    values: np.ndarray  # (n_slots, speakers, channels), NaN = missing
    dt: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[0] < 1 or v.shape[2] != N_CHANNELS:
            raise DataError(f"observations must have shape (n>=1, C, {N_CHANNELS}), got {v.shape}")
        if np.any(np.isinf(v)):
            raise DataError("observations must be finite where present")
        object.__setattr__(self, "values", v)

    @property
    def n_slots(self) -> int:
        return self.values.shape[0]

    @property
    def speaker_count(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class EmissionParams:
    means: np.ndarray  # (C, 2, D)
    covs: np.ndarray   # (C, 2, D, D)

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        covs = np.asarray(self.covs, dtype=float)
        if means.ndim != 3 or means.shape[1] != 2 or covs.shape != means.shape + (means.shape[2],):
            raise ParameterError(f"bad emission parameter shapes {means.shape}, {covs.shape}")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)

    @property
    def speaker_count(self) -> int:
        return self.means.shape[0]

    def check(self) -> None:
        for c in range(self.speaker_count):
            for s in (0, 1):
                check_spd(self.covs[c, s], f"covariance of speaker {c}, status {s}")


def check_spd(S: np.ndarray, what: str = "matrix") -> np.ndarray:
    if not np.allclose(S, S.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise ParameterError(f"{what} is not symmetric")
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise ParameterError(f"{what} is not positive definite") from None


def _gauss_logpdf(y: np.ndarray, mu: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Row-wise log N(y; mu, S) for y of shape (n, d)."""
    d = y.shape[-1]
    L = check_spd(S)
    z = np.linalg.solve(L, (y - mu).T)
    with np.errstate(over="ignore"):   # absurd frames get density 0, reported by the caller
        return -0.5 * (d * LOG_2PI + np.sum(z * z, axis=0)) - np.sum(np.log(np.diag(L)))


def frame_loglik(y, x, params: EmissionParams) -> float:
    """Log density of one frame (C, D) given per-speaker status ``x``."""
    y = np.asarray(y, dtype=float)
    if y.shape != (params.speaker_count, N_CHANNELS) or len(x) != params.speaker_count:
        raise DataError("frame, state and parameter dimensions disagree")
    total = 0.0
    for c, s in enumerate(x):
        keep = ~np.isnan(y[c])
        if not keep.any():
            continue
        mu = params.means[c, int(s)][keep]
        S = params.covs[c, int(s)][np.ix_(keep, keep)]
        total += float(_gauss_logpdf(y[c][keep][None, :], mu, S)[0])
    return total


def status_loglik(obs: ObservationSeries, params: EmissionParams) -> np.ndarray:
    """Log density of every frame under each status: shape (n_slots, C, 2)."""
    v = obs.values
    n, C, _ = v.shape
    if C != params.speaker_count:
        raise DataError(f"observations have {C} speakers, parameters {params.speaker_count}")
    out = np.zeros((n, C, 2))
    missing = np.isnan(v)
    for c in range(C):
        masks = missing[:, c, :]
        codes = masks @ (1 << np.arange(N_CHANNELS))
        for code in np.unique(codes):
            rows = np.flatnonzero(codes == code)
            keep = ~masks[rows[0]]
            if not keep.any():
                continue
            y = v[rows, c][:, keep]
            for s in (0, 1):
                mu = params.means[c, s][keep]
                S = params.covs[c, s][np.ix_(keep, keep)]
                out[rows, c, s] = _gauss_logpdf(y, mu, S)
    return out


def sample_observations(status, params: EmissionParams, seed=None, dt: float = 0.1) -> ObservationSeries:
    """Draw one frame per slot from the status-conditional Gaussians.

    ``status`` is an (n_slots, C) 0/1 array of emission status.
    """
    rng = make_rng(seed)
    status = np.asarray(status, dtype=np.int64)
    n, C = status.shape
    if C != params.speaker_count:
        raise DataError("status and parameters disagree on speaker count")
    out = np.empty((n, C, N_CHANNELS))
    z = rng.standard_normal((n, C, N_CHANNELS))
    for c in range(C):
        for s in (0, 1):
            rows = status[:, c] == s
            L = np.linalg.cholesky(params.covs[c, s])
            out[rows, c] = params.means[c, s] + z[rows, c] @ L.T
    return ObservationSeries(out, dt)


@dataclass(frozen=True)
class NIW:
    """Normal-Inverse-Wishart hyper-parameters (kappa, nu, mu, psi)."""
    kappa: float
    nu: float
    mu: np.ndarray
    psi: np.ndarray

    def check(self) -> None:
        d = len(self.mu)
        if self.kappa <= 0:
            raise ParameterError("kappa must be positive")
        if self.nu <= d + 1:
            raise ParameterError(f"nu must exceed {d + 1}")
        check_spd(np.asarray(self.psi), "prior scale matrix")

    @property
    def mean_cov(self) -> np.ndarray:
        return np.asarray(self.psi) / (self.nu - len(self.mu) - 1)


def niw_update(prior: NIW, data) -> NIW:
    """Conjugate update with complete-case frames ``data`` of shape (n, d)."""
    data = np.asarray(data, dtype=float).reshape(-1, len(prior.mu))
    n = data.shape[0]
    if n == 0:
        return prior
    ybar = data.mean(axis=0)
    centered = data - ybar
    scatter = centered.T @ centered
    kn = prior.kappa + n
    diff = ybar - prior.mu
    psi = prior.psi + scatter + (prior.kappa * n / kn) * np.outer(diff, diff)
    return NIW(kn, prior.nu + n, (prior.kappa * prior.mu + n * ybar) / kn, 0.5 * (psi + psi.T))


def sample_niw(post: NIW, seed=None) -> tuple[np.ndarray, np.ndarray]:
    rng = make_rng(seed)
    sigma = np.atleast_2d(stats.invwishart.rvs(df=post.nu, scale=post.psi, random_state=rng))
    sigma = 0.5 * (sigma + sigma.T)
    mu = rng.multivariate_normal(post.mu, sigma / post.kappa, method="cholesky")
    return mu, sigma


def sample_emission_params(posteriors, seed=None) -> EmissionParams:
    """One draw per (speaker, status) from a nested list ``posteriors[c][s]`` of NIW."""
    rng = make_rng(seed)
    C = len(posteriors)
    d = len(posteriors[0][0].mu)
    means = np.empty((C, 2, d))
    covs = np.empty((C, 2, d, d))
    for c in range(C):
        for s in (0, 1):
            means[c, s], covs[c, s] = sample_niw(posteriors[c][s], rng)
    return EmissionParams(means, covs)


def emission_posteriors(priors, obs: ObservationSeries, status) -> list:
    """NIW posterior per (speaker, status) from frames grouped by emission status."""
    status = np.asarray(status)
    out = []
    for c in range(obs.speaker_count):
        row = []
        frames = obs.values[:, c]
        complete = ~np.isnan(frames).any(axis=1)
        for s in (0, 1):
            row.append(niw_update(priors[c][s], frames[complete & (status[:, c] == s)]))
        out.append(row)
    return out


def default_priors(obs: ObservationSeries, kappa: float = 1.0, nu: float = 5.0,
                   psi_scale: float = 0.1) -> list:
    """Data-driven NIW priors per (speaker, status).

    The prior mean for each status is the per-channel median of the frames
    falling in the matching 2-means cluster of the audio channel (the louder
    cluster is "speaking"); the scale is ``psi_scale * nu`` times the
    speaker's empirical covariance.
    """
    priors = []
    for c in range(obs.speaker_count):
        frames = obs.values[:, c]
        frames = frames[~np.isnan(frames).any(axis=1)]
        if len(frames) < N_CHANNELS + 1:
            raise DataError(f"speaker {c}: too few complete frames for a prior")
        loud = two_means_split(frames[:, 0])
        cov = np.cov(frames, rowvar=False) + 1e-9 * np.eye(N_CHANNELS)
        row = []
        for s in (0, 1):
            group = frames[loud == s] if np.any(loud == s) else frames
            row.append(NIW(kappa, nu, np.median(group, axis=0), psi_scale * nu * cov))
        priors.append(row)
    return priors


def two_means_split(values: np.ndarray, iters: int = 100) -> np.ndarray:
    """1-D 2-means; returns 1 for the high cluster, 0 otherwise."""
    values = np.asarray(values, dtype=float)
    lo, hi = values.min(), values.max()
    if lo == hi:
        return np.zeros(len(values), dtype=np.int64)
    for _ in range(iters):
        cut = 0.5 * (lo + hi)
        high = values > cut
        if high.all() or not high.any():
            break
        new_lo, new_hi = values[~high].mean(), values[high].mean()
        if new_lo == lo and new_hi == hi:
            break
        lo, hi = new_lo, new_hi
    return (values > 0.5 * (lo + hi)).astype(np.int64)


def prior_mean_params(priors) -> EmissionParams:
    C = len(priors)
    means = np.array([[priors[c][s].mu for s in (0, 1)] for c in range(C)])
    covs = np.array([[priors[c][s].mean_cov for s in (0, 1)] for c in range(C)])
    return EmissionParams(means, covs)


# -- serialization ---------------------------------------------------------

OBS_COLUMNS = ("slot_index", "speaker") + CHANNELS


def observations_to_csv(obs: ObservationSeries) -> str:
    buf = io.StringIO()
    buf.write(f"# dt_s={obs.dt!r}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(OBS_COLUMNS)
    for n in range(obs.n_slots):
        for c in range(obs.speaker_count):
            w.writerow([n, c] + ["" if np.isnan(v) else repr(float(v)) for v in obs.values[n, c]])
    return buf.getvalue()


def observations_from_csv(text: str, source: str = "<observations>") -> ObservationSeries:
    dt = None
    header_seen = False
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            if key.strip() == "dt_s":
                try:
                    dt = float(value)
                except ValueError:
                    raise DataError(f"{source}:{lineno}: bad dt value {value!r}") from None
            continue
        fields = next(csv.reader([line]))
        if not header_seen:
            if tuple(fields) != OBS_COLUMNS:
                raise DataError(f"{source}:{lineno}: expected header {','.join(OBS_COLUMNS)}")
            header_seen = True
            continue
        if len(fields) != len(OBS_COLUMNS):
            raise DataError(f"{source}:{lineno}: expected {len(OBS_COLUMNS)} fields, got {len(fields)}")
        try:
            n, c = int(fields[0]), int(fields[1])
            vals = [math.nan if f == "" else float(f) for f in fields[2:]]
        except ValueError as exc:
            raise DataError(f"{source}:{lineno}: {exc}") from None
        if n < 0 or c < 0 or any(math.isinf(v) for v in vals):
            raise DataError(f"{source}:{lineno}: negative index or infinite value")
        rows.append((lineno, n, c, vals))
    if dt is None:
        raise DataError(f"{source}: missing '# dt_s=' metadata line")
    if not rows:
        raise DataError(f"{source}: no observation rows")
    n_slots = max(r[1] for r in rows) + 1
    C = max(r[2] for r in rows) + 1
    values = np.full((n_slots, C, N_CHANNELS), math.nan)
    seen = np.zeros((n_slots, C), dtype=bool)
    for lineno, n, c, vals in rows:
        if seen[n, c]:
            raise DataError(f"{source}:{lineno}: duplicate row for slot {n}, speaker {c}")
        seen[n, c] = True
        values[n, c] = vals
    if not seen.all():
        n, c = np.argwhere(~seen)[0]
        raise DataError(f"{source}: no row for slot {n}, speaker {c}")
    return ObservationSeries(values, dt)
