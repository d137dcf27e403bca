"""Gibbs sampler for latent turn states, event labels, rates and emission parameters.

One sweep draws

1. the whole latent path (initial state, per-slot event, per-slot state) by
   forward filtering / backward sampling over the 2^C joint states,
2. the event rates given the labelled path,
3. the emission parameters given the per-slot emission status.

Emission status is the speaking state, except that a listener who
backchannels in a slot is treated as vocal in that slot.  This is what makes
backchannel rates identifiable from sensor data at all.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .core import EventCatalog
from .emission import (
    EmissionParams,
    ObservationSeries,
    default_priors,
    emission_posteriors,
    prior_mean_params,
    sample_emission_params,
    status_loglik,
)
from .errors import InvalidConfiguration, NumericalError, StateSpaceTooLarge
from .simulate import NO_EVENT, check_rates, make_rng, total_rates

MAX_STATES = 1024

DEFAULT_PRIOR_RATES = {
    "take": 0.3,
    "yield": 0.8,
    "transfer": 0.2,
    "backchannel": 0.3,
    "seize": 0.05,
    "yield-under-competition": 1.0,
}


@dataclass(frozen=True)
class RatePrior:
    """Independent Gamma priors: shape = mean * strength, rate = strength.

    ``strength`` is pseudo-exposure in seconds.  Events flagged in ``fixed``
    are not sampled and stay at ``mean``.
    """
    mean: np.ndarray
    strength: float = 1.0
    fixed: np.ndarray | None = None

    @property
    def fixed_mask(self) -> np.ndarray:
        if self.fixed is None:
            return np.zeros(len(self.mean), dtype=bool)
        return np.asarray(self.fixed, dtype=bool)

    @property
    def shape(self) -> np.ndarray:
        return np.asarray(self.mean, dtype=float) * self.strength


def default_rate_prior(catalog: EventCatalog, strength: float = 1.0, **overrides) -> RatePrior:
    """Weak priors around conversational rates; diagonal transfers (continue) are fixed at 0.

    A continue event leaves both the state and the sensors unchanged, so the
    data carry no information about its rate.
    """
    table = {**DEFAULT_PRIOR_RATES, **overrides}
    mean = np.array([table[e.kind] for e in catalog.events], dtype=float)
    fixed = np.array([e.is_continue for e in catalog.events])
    mean[fixed] = 0.0
    return RatePrior(mean, strength, fixed)


@dataclass(frozen=True)
class GibbsConfig:
    sweeps: int = 500
    burn_in: int = 100
    thinning: int = 1
    dt: float = 0.1
    seed: int | None = 0
    rate_prior: RatePrior | None = None
    emission_priors: list | None = None
    update_rates: bool = True
    update_emission: bool = True

    def check(self) -> None:
        if not self.sweeps > self.burn_in >= 0:
            raise InvalidConfiguration("need sweeps > burn_in >= 0")
        if self.thinning < 1:
            raise InvalidConfiguration("thinning must be >= 1")
        if self.dt <= 0:
            raise InvalidConfiguration("dt must be positive")


@dataclass(frozen=True)
class PosteriorSample:
    initial_state: int
    states: np.ndarray   # state index in force during each slot
    events: np.ndarray   # event id fired at the start of each slot, NO_EVENT if none
    rates: np.ndarray
    emission: EmissionParams
    loglik: float = math.nan   # log p(observations | rates, emission)

    def status_matrix(self, speaker_count: int) -> np.ndarray:
        return (self.states[:, None] >> np.arange(speaker_count)) & 1


@dataclass
class Chain:
    samples: list
    diagnostics: dict = field(default_factory=dict)

    def rate_trace(self) -> np.ndarray:
        return np.array([s.rates for s in self.samples])

    def posterior_mean_rates(self) -> np.ndarray:
        return self.rate_trace().mean(axis=0)

    def posterior_mean_means(self) -> np.ndarray:
        return np.mean([s.emission.means for s in self.samples], axis=0)


# -- transition kernel ------------------------------------------------------

@dataclass(frozen=True)
class Kernel:
    """Slot transitions as edges grouped by destination state."""
    e_from: np.ndarray
    e_event: np.ndarray
    e_pattern: np.ndarray
    e_logp: np.ndarray
    to_ptr: np.ndarray


def build_kernel(catalog: EventCatalog, rates, dt: float) -> Kernel:
    rates = check_rates(rates, catalog)
    S = catalog.n_states
    H = total_rates(catalog, rates)
    bc = catalog.backchannel_actor
    edges = []
    for s in range(S):
        fire = -math.expm1(-H[s] * dt)
        edges.append((s, s, NO_EVENT, s, -H[s] * dt))
        if H[s] == 0:
            continue
        for e in np.flatnonzero(catalog.active_table[s]):
            if rates[e] == 0:
                continue
            to = int(catalog.next_table[s, e])
            pattern = to | (1 << int(bc[e])) if bc[e] >= 0 else to
            edges.append((to, s, int(e), pattern, math.log(rates[e] / H[s] * fire)))
    edges.sort(key=lambda r: (r[0], r[1], r[2]))
    to = np.array([r[0] for r in edges], dtype=np.int64)
    return Kernel(
        e_from=np.array([r[1] for r in edges], dtype=np.int64),
        e_event=np.array([r[2] for r in edges], dtype=np.int64),
        e_pattern=np.array([r[3] for r in edges], dtype=np.int64),
        e_logp=np.array([r[4] for r in edges], dtype=float),
        to_ptr=np.searchsorted(to, np.arange(S + 1)).astype(np.int64),
    )


def pattern_loglik(status_ll: np.ndarray) -> np.ndarray:
    """(n, C, 2) per-speaker status log-likelihoods -> (n, 2^C) per joint pattern."""
    n, C, _ = status_ll.shape
    bits = (np.arange(1 << C)[:, None] >> np.arange(C)) & 1
    return status_ll[:, np.arange(C)[None, :], bits].sum(axis=2)


@numba.njit(cache=True)
def _forward(logL, log_init, e_from, e_logp, e_pat, to_ptr):
    N = logL.shape[0]
    S = to_ptr.shape[0] - 1
    la = np.empty((N, S))
    tmp = np.empty(e_from.shape[0])
    prev = log_init.copy()
    total = 0.0
    for n in range(N):
        for t in range(S):
            m = -np.inf
            for k in range(to_ptr[t], to_ptr[t + 1]):
                v = prev[e_from[k]] + e_logp[k] + logL[n, e_pat[k]]
                tmp[k] = v
                if v > m:
                    m = v
            if m == -np.inf:
                la[n, t] = -np.inf
            else:
                acc = 0.0
                for k in range(to_ptr[t], to_ptr[t + 1]):
                    acc += math.exp(tmp[k] - m)
                la[n, t] = m + math.log(acc)
        m = -np.inf
        for t in range(S):
            if la[n, t] > m:
                m = la[n, t]
        if m == -np.inf:
            return la, -np.inf, n
        acc = 0.0
        for t in range(S):
            acc += math.exp(la[n, t] - m)
        lse = m + math.log(acc)
        for t in range(S):
            la[n, t] -= lse
            prev[t] = la[n, t]
        total += lse
    return la, total, -1


@numba.njit(cache=True)
def _pick(logw, u):
    m = -np.inf
    for i in range(logw.shape[0]):
        if logw[i] > m:
            m = logw[i]
    acc = 0.0
    for i in range(logw.shape[0]):
        acc += math.exp(logw[i] - m)
    target = u * acc
    acc = 0.0
    last = 0
    for i in range(logw.shape[0]):
        if logw[i] == -np.inf:
            continue
        acc += math.exp(logw[i] - m)
        last = i
        if acc >= target:
            return i
    return last


@numba.njit(cache=True)
def _backward(la, log_init, logL, e_from, e_logp, e_pat, e_event, to_ptr, u):
    N = la.shape[0]
    states = np.empty(N, dtype=np.int64)
    events = np.empty(N, dtype=np.int64)
    s = _pick(la[N - 1], u[N])
    w = np.empty(e_from.shape[0])
    for n in range(N - 1, -1, -1):
        states[n] = s
        lo = to_ptr[s]
        hi = to_ptr[s + 1]
        for k in range(lo, hi):
            p = log_init[e_from[k]] if n == 0 else la[n - 1, e_from[k]]
            w[k - lo] = p + e_logp[k] + logL[n, e_pat[k]]
        k = lo + _pick(w[: hi - lo], u[n])
        events[n] = e_event[k]
        s = e_from[k]
    return s, states, events


def sample_state_path(obs: ObservationSeries, rates, emission: EmissionParams,
                      catalog: EventCatalog, seed=None, init_logp=None):
    """Exact joint draw of (initial state, per-slot states, per-slot events).

    Returns ``(initial_state, states, events, loglik)`` where ``loglik`` is the
    marginal log-likelihood of the observations.
    """
    if catalog.n_states > MAX_STATES:
        raise StateSpaceTooLarge(
            f"{catalog.speaker_count} speakers give {catalog.n_states} joint states (max {MAX_STATES})"
        )
    if obs.speaker_count != catalog.speaker_count:
        raise InvalidConfiguration("observations and catalog disagree on speaker count")
    rng = make_rng(seed)
    kernel = build_kernel(catalog, rates, obs.dt)
    logL = pattern_loglik(status_loglik(obs, emission))
    if init_logp is None:
        init_logp = np.full(catalog.n_states, -math.log(catalog.n_states))
    la, total, bad = _forward(logL, np.asarray(init_logp, dtype=float), kernel.e_from,
                              kernel.e_logp, kernel.e_pattern, kernel.to_ptr)
    if bad >= 0:
        raise NumericalError(f"observation at slot {bad} has zero probability under the model")
    u = rng.random(obs.n_slots + 1)
    x0, states, events = _backward(la, np.asarray(init_logp, dtype=float), logL, kernel.e_from,
                                   kernel.e_logp, kernel.e_pattern, kernel.e_event,
                                   kernel.to_ptr, u)
    return int(x0), states, events, float(total)


def emission_status(states, events, catalog: EventCatalog) -> np.ndarray:
    """(n, C) vocal status: speaking state plus one-slot backchannel blips."""
    C = catalog.speaker_count
    status = (np.asarray(states)[:, None] >> np.arange(C)) & 1
    events = np.asarray(events)
    fired = events != NO_EVENT
    actors = np.full(len(events), -1, dtype=np.int64)
    actors[fired] = catalog.backchannel_actor[events[fired]]
    rows = np.flatnonzero(actors >= 0)
    status[rows, actors[rows]] = 1
    return status


def sample_rates(initial_state: int, states, events, catalog: EventCatalog, prior: RatePrior,
                 rates, dt: float, seed=None) -> np.ndarray:
    """Conjugate Gamma draw of the base rates given a labelled slot path.

    Each slot is augmented with the time ``tau`` the underlying jump process
    spent before its first event: ``dt`` for empty slots, and a truncated
    exponential on [0, dt] with the current total rate otherwise.  Given the
    augmented exposures the complete-data likelihood is prod h_i^n_i
    exp(-h_i E_i), so h_i ~ Gamma(shape_i + n_i, strength + E_i).  Normalised,
    these independent Gammas are the Dirichlet over outcome probabilities.
    """
    rng = make_rng(seed)
    rates = check_rates(rates, catalog)
    states = np.asarray(states, dtype=np.int64)
    events = np.asarray(events, dtype=np.int64)
    entering = np.concatenate([[initial_state], states[:-1]])
    fired = events != NO_EVENT
    H = total_rates(catalog, rates)[entering]
    tau = np.full(len(events), float(dt))
    Hf = H[fired]
    u = rng.random(int(fired.sum()))
    if np.any(Hf <= 0):
        raise NumericalError("an event was labelled in a state with zero total rate")
    tau[fired] = -np.log1p(-u * -np.expm1(-Hf * dt)) / Hf
    occupancy = np.bincount(entering, weights=tau, minlength=catalog.n_states)
    exposure = occupancy @ catalog.active_table
    counts = np.bincount(events[fired], minlength=len(catalog))
    draw = rng.gamma(prior.shape + counts, 1.0 / (prior.strength + exposure))
    fixed = prior.fixed_mask
    draw[fixed] = np.asarray(prior.mean)[fixed]
    return draw


def gibbs_sweep(sample: PosteriorSample, obs: ObservationSeries, catalog: EventCatalog,
                rate_prior: RatePrior, emission_priors, seed=None, *, dt: float | None = None,
                update_rates: bool = True, update_emission: bool = True) -> PosteriorSample:
    rng = make_rng(seed)
    dt = obs.dt if dt is None else dt
    x0, states, events, ll = sample_state_path(obs, sample.rates, sample.emission, catalog, rng)
    rates = sample.rates
    if update_rates:
        rates = sample_rates(x0, states, events, catalog, rate_prior, rates, dt, rng)
    emission = sample.emission
    if update_emission:
        posts = emission_posteriors(emission_priors, obs, emission_status(states, events, catalog))
        emission = sample_emission_params(posts, rng)
    return PosteriorSample(x0, states, events, np.asarray(rates, dtype=float), emission, ll)


def initial_sample(obs: ObservationSeries, catalog: EventCatalog, rate_prior: RatePrior,
                   emission_priors) -> PosteriorSample:
    n = obs.n_slots
    return PosteriorSample(0, np.zeros(n, dtype=np.int64), np.full(n, NO_EVENT, dtype=np.int64),
                           np.asarray(rate_prior.mean, dtype=float).copy(),
                           prior_mean_params(emission_priors))


def psrf(traces) -> np.ndarray:
    """Gelman-Rubin potential scale reduction over chains; traces (m, n, p)."""
    traces = np.asarray(traces, dtype=float)
    if traces.ndim == 2:
        traces = traces[:, :, None]
    m, n, _ = traces.shape
    means = traces.mean(axis=1)
    W = traces.var(axis=1, ddof=1).mean(axis=0)
    B = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * W + B / n
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.sqrt(var_plus / W)
    return np.where(W > 0, r, 1.0)


def split_psrf(traces) -> np.ndarray:
    """Split every chain in half, then :func:`psrf`; accepts (n, p) or (m, n, p)."""
    traces = np.asarray(traces, dtype=float)
    if traces.ndim == 2:
        traces = traces[None]
    half = traces.shape[1] // 2
    if half < 2:
        return np.ones(traces.shape[2])
    halves = np.concatenate([traces[:, :half], traces[:, half:2 * half]], axis=0)
    return psrf(halves)


def _diagnostics(samples) -> dict:
    trace = np.array([s.rates for s in samples])
    return {
        "rate_mean": trace.mean(axis=0).tolist(),
        "rate_sd": trace.std(axis=0, ddof=1).tolist() if len(trace) > 1 else [0.0] * trace.shape[1],
        "rate_split_psrf": split_psrf(trace).tolist(),
        "loglik_mean": float(np.mean([s.loglik for s in samples])),
    }


def run_chain(obs: ObservationSeries, catalog: EventCatalog, config: GibbsConfig,
              init: PosteriorSample | None = None) -> Chain:
    config.check()
    if abs(obs.dt - config.dt) > 1e-12 * max(1.0, config.dt):
        raise InvalidConfiguration(f"observation dt {obs.dt} differs from config dt {config.dt}")
    rate_prior = config.rate_prior or default_rate_prior(catalog)
    emission_priors = config.emission_priors or default_priors(obs)
    rng = make_rng(config.seed)
    sample = init or initial_sample(obs, catalog, rate_prior, emission_priors)
    kept = []
    for sweep in range(config.sweeps):
        sample = gibbs_sweep(sample, obs, catalog, rate_prior, emission_priors, rng,
                             dt=config.dt, update_rates=config.update_rates,
                             update_emission=config.update_emission)
        if sweep >= config.burn_in and (sweep - config.burn_in) % config.thinning == 0:
            kept.append(sample)
    return Chain(kept, _diagnostics(kept))


def run_chains(obs: ObservationSeries, catalog: EventCatalog, config: GibbsConfig,
               n_chains: int = 2) -> tuple[list, np.ndarray]:
    """Independent chains on spawned seed streams, plus cross-chain split PSRF."""
    seeds = np.random.SeedSequence(config.seed).spawn(n_chains)
    chains = [run_chain(obs, catalog, replace(config, seed=s)) for s in seeds]
    n = min(len(c.samples) for c in chains)
    traces = np.array([c.rate_trace()[:n] for c in chains])
    return chains, split_psrf(traces)


def chain_to_json(chains, catalog: EventCatalog, psrf_values=None) -> str:
    doc = {"events": [e.name for e in catalog.events], "chains": []}
    for c in chains:
        doc["chains"].append({
            "samples": [{"rates": [float(r) for r in s.rates], "loglik": s.loglik}
                        for s in c.samples],
            "diagnostics": c.diagnostics,
        })
    if psrf_values is not None:
        doc["psrf"] = [float(v) for v in psrf_values]
    return json.dumps(doc, indent=1, sort_keys=True)


def states_to_csv(sample: PosteriorSample, speaker_count: int) -> str:
    status = sample.status_matrix(speaker_count)
    lines = ["slot,speaker,status"]
    for n in range(status.shape[0]):
        for c in range(speaker_count):
            lines.append(f"{n},{c},{int(status[n, c])}")
    return "\n".join(lines) + "\n"


def rate_posterior_summary(chains, catalog: EventCatalog) -> list[dict]:
    trace = np.concatenate([c.rate_trace() for c in chains])
    lo, hi = np.quantile(trace, [0.025, 0.975], axis=0)
    return [
        {"event_id": e.id, "event": e.name, "mean": float(trace[:, e.id].mean()),
         "sd": float(trace[:, e.id].std(ddof=1)) if len(trace) > 1 else 0.0,
         "q025": float(lo[e.id]), "q975": float(hi[e.id])}
        for e in catalog.events
    ]

