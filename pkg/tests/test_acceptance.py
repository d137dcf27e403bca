"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are collected into an "acceptance criteria" section at the end of
the pytest run.  ``python3 tests/test_acceptance.py`` runs only this file.
"""
import json
import math
import time

import numpy as np
import pytest
from scipy import stats

from convdyn.analysis import (
    TABLE1_COLUMNS, TABLE1_ROWS, calibrate_table1, nested_f_test, ols_fit, simulate_and_count,
    wilcoxon_signed_rank,
)
from convdyn.cli import main as cli_main
from convdyn.core import apply_event, build_catalog, index_state, state_update
from convdyn.emission import EmissionParams, sample_observations
from convdyn.errors import GuardViolation
from convdyn.fixtures import PUBLISHED_BETA, badge_streams, calibrated_rates, make_groups, recovery_rates
from convdyn.infer import GibbsConfig, PosteriorSample, RatePrior, emission_status, run_chain
from convdyn.segment import (
    BadgeStream, PitchSegment, TurnSegment, align_streams, badge_to_csv, fit_gap_mixture,
    segment_turns,
)
from convdyn.simulate import NO_EVENT, gillespie_simulate, slot_event_distribution, slotted_simulate
from convdyn.survival import cumulative_hazard, fit_hazard, simulate_records, survival_function
from convdyn.tasksim import new_game, play_game, quality_sweep
from oracles import enumerate_state_posterior, reference_segment_turns, wilcoxon_enumeration


class Clock:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def test_criterion_01_catalog_size(criterion):
    with Clock() as clock:
        n = len(build_catalog(4))
    ok = n == 36 and clock.seconds < 1
    assert criterion(ok, f"build_catalog(4) has {n} events ({clock.seconds:.3f} s)")


def test_criterion_02_state_algebra(criterion):
    failures = checked = 0
    with Clock() as clock:
        for C in (2, 3, 4):
            cat = build_catalog(C)
            A = cat.reaction_matrix
            for s in range(1 << C):
                x = index_state(s, C)
                for e in cat.events:
                    checked += 1
                    if e.guard(x):
                        raw = tuple(v + d for v, d in zip(x, e.delta))
                        y = apply_event(x, e)
                        r = np.zeros(len(cat), dtype=int)
                        r[e.id] = 1
                        failures += any(v not in (0, 1) for v in raw) or y != raw or state_update(x, A, r) != y
                    else:
                        try:
                            apply_event(x, e)
                            failures += 1
                        except GuardViolation:
                            pass
        cat = build_catalog(4)
        A = cat.reaction_matrix
        rng = np.random.default_rng(0)
        states = rng.integers(0, 16, 100_000)
        for s, u in zip(states, rng.random(100_000)):
            x = index_state(int(s), 4)
            enabled = np.flatnonzero(cat.active_table[s])
            e = cat[int(enabled[int(u * len(enabled))])]
            r = np.zeros(36, dtype=int)
            r[e.id] = 1
            failures += state_update(x, A, r) != apply_event(x, e)
    ok = failures == 0 and clock.seconds < 10
    assert criterion(ok, f"{checked} exhaustive + 100000 random updates, {failures} failures "
                         f"({clock.seconds:.1f} s)")


def test_criterion_03_slot_distribution(criterion):
    cat = build_catalog(4)
    rng = np.random.default_rng(1)
    worst = 0.0
    with Clock() as clock:
        for _ in range(10_000):
            x = index_state(int(rng.integers(16)), 4)
            rates = rng.exponential(1.0, 36) * 10 ** rng.uniform(-3, 2)
            dt = 10 ** rng.uniform(-4, 1)
            worst = max(worst, abs(slot_event_distribution(cat, x, rates, dt).sum() - 1.0))
    ok = worst <= 1e-12 and clock.seconds < 5
    assert criterion(ok, f"max |sum - 1| = {worst:.2e} over 10000 triples ({clock.seconds:.1f} s)")


def test_criterion_04_slotted_vs_exact(criterion):
    cat = build_catalog(4)
    rates = np.array(calibrated_rates(50))
    reps, horizon = 150, 1000.0
    slotted = np.zeros(36)
    exact = np.zeros(36)
    with Clock() as clock:
        for r in range(reps):
            ev = slotted_simulate(cat, rates, (0, 0, 0, 0), horizon, 0.01, seed=[4, r]).slot_events
            slotted += np.bincount(ev[ev != NO_EVENT], minlength=36)
            exact += np.bincount(gillespie_simulate(cat, rates, (0, 0, 0, 0), horizon, seed=[5, r]).event_ids,
                                 minlength=36)
    slotted /= reps
    exact /= reps
    big = exact >= 50
    rel = np.abs(slotted[big] / exact[big] - 1)
    ok = big.any() and rel.max() < 0.05 and clock.seconds < 60
    assert criterion(ok, f"{big.sum()} event types with >= 50 expected per 1000 s; max relative "
                         f"difference of mean counts {rel.max():.3f} over {reps} replicates "
                         f"({clock.seconds:.1f} s)")


@pytest.mark.slow
def test_criterion_05_gibbs_recovery(criterion):
    cat = build_catalog(4)
    truth = recovery_rates()
    seed = 0
    with Clock() as clock:
        path = slotted_simulate(cat, truth, (0, 0, 0, 0), 1800.0, 0.1, seed=seed)
        states = path.state_indices(cat)
        counts = np.bincount(path.slot_events[path.slot_events != NO_EVENT], minlength=36)
        means = np.zeros((4, 2, 3))
        means[:, 1, :] = 3.0          # unit covariances: 3 sigma separation
        obs = sample_observations(emission_status(states, path.slot_events, cat),
                                  EmissionParams(means, np.tile(np.eye(3), (4, 2, 1, 1))), seed=seed + 1000)
        chain = run_chain(obs, cat, GibbsConfig(sweeps=2000, burn_in=500, seed=seed))
    est = chain.posterior_mean_rates()
    often = counts >= 20
    rel = np.abs(est[often] / truth[often] - 1)
    mean_err = np.abs(chain.posterior_mean_means() - means).max()
    ok = rel.max() <= 0.20 and mean_err <= 0.1 and clock.seconds <= 300
    assert criterion(ok, f"{often.sum()} event types with >= 20 occurrences, max rate error {rel.max():.3f}; "
                         f"max emission-mean error {mean_err:.3f} sigma ({clock.seconds:.0f} s)")


def test_criterion_06_gibbs_exactness(criterion):
    cat = build_catalog(2)
    rates = 3 * np.array([0.8, 0.5, 0.6, 0.4, 0.0, 0.7, 0.3, 0.0, 0.5, 0.5, 0.3, 0.3, 0.9, 0.9])
    params = EmissionParams(np.array([[[0.0] * 3, [1.0] * 3]] * 2), np.array([[np.eye(3)] * 2] * 2))
    with Clock() as clock:
        path = slotted_simulate(cat, rates, (0, 0), 1.0, 0.1, seed=5)
        obs = sample_observations(emission_status(path.state_indices(cat), path.slot_events, cat), params, seed=6)
        exact, _ = enumerate_state_posterior(cat, rates, params, obs.values, 0.1)
        init = PosteriorSample(0, np.zeros(10, dtype=np.int64), np.full(10, NO_EVENT), rates, params)
        cfg = GibbsConfig(sweeps=20_000, burn_in=0, thinning=2, seed=1, rate_prior=RatePrior(rates),
                          update_rates=False, update_emission=False)
        draws = np.array([s.states for s in run_chain(obs, cat, cfg, init=init).samples])
    bits = (draws[:, :, None] >> np.arange(2)) & 1
    exact_bits = np.stack([exact @ ((np.arange(4) >> c) & 1) for c in range(2)], axis=-1)
    tv_speaker = np.abs(bits.mean(axis=0) - exact_bits).max()
    emp = np.array([np.bincount(draws[:, k], minlength=4) for k in range(10)]) / len(draws)
    tv_joint = 0.5 * np.abs(emp - exact).sum(axis=1).max()
    ok = len(draws) == 10_000 and max(tv_speaker, tv_joint) <= 0.02 and clock.seconds < 60
    assert criterion(ok, f"{len(draws)} thinned draws; max TV per speaker status {tv_speaker:.4f}, "
                         f"per joint state {tv_joint:.4f} ({clock.seconds:.1f} s)")


def test_criterion_07_hazard_recovery(criterion):
    with Clock() as clock:
        fit = fit_hazard(simulate_records(PUBLISHED_BETA, 50_000, baseline=0.0, seed=0))
        rel = np.abs(fit.beta / PUBLISHED_BETA - 1)
        worst = 0.0
        rng = np.random.default_rng(0)
        for x in rng.uniform(0, 1, (200, 4)) * (1.0 / PUBLISHED_BETA):
            t = np.linspace(0, 5, 51)
            worst = max(worst, np.abs(survival_function(fit, x, t) * np.exp(cumulative_hazard(fit, x, t)) - 1).max())
    ok = rel.max() <= 0.10 and worst <= 1e-12 and clock.seconds < 60
    assert criterion(ok, "relative errors " + ", ".join(f"{r:.3f}" for r in rel)
                     + f"; max |S exp(L) - 1| = {worst:.1e} ({clock.seconds:.1f} s)")


def test_criterion_08_table1_self_consistency(criterion):
    cat = build_catalog(4)
    target = TABLE1_ROWS[50]
    with Clock() as clock:
        cal = calibrate_table1(target, cat)
        sim = simulate_and_count(cal.rates, minutes=10, replicates=200, seed=8, catalog=cat)
    rel = [abs(sim.means[k] / v - 1) for k, v in zip(TABLE1_COLUMNS, target)]
    ok = max(rel) <= 0.10 and clock.seconds < 120
    got = ", ".join(f"{sim.means[k]:.1f}" for k in TABLE1_COLUMNS)
    assert criterion(ok, f"target {target}, simulated ({got}); max relative error {max(rel):.3f} "
                         f"({clock.seconds:.1f} s)")


def test_criterion_09_task_bound(criterion):
    with Clock() as clock:
        worst = 0
        for ss in np.random.SeedSequence(9).spawn(1000):
            rng = np.random.default_rng(ss)
            log = play_game(new_game(rng), 1.0, rng)
            worst = max(worst, 99 if log.aborted else log.questions)
        sweep = quality_sweep(np.linspace(0, 1, 6), games=300, seed=9)
    inside = {q: m for q, m in sweep.items() if 5 <= m <= 8}
    ok = worst <= 6 and bool(inside) and clock.seconds < 60
    shown = ", ".join(f"q={q:.1f}: {m:.2f}" for q, m in sweep.items())
    assert criterion(ok, f"optimal play worst case {worst} questions over 1000 games; sweep means {shown} "
                         f"({clock.seconds:.1f} s)")


TURN_CASES = [
    # (pitched segments, threshold, expected (speaker, start, end, kind))
    ([(0, 0.0, 3.0)], 0.7, [(0, 0.0, 3.0, "turn")]),
    ([(0, 0.0, 6.0), (1, 2.0, 2.5)], 0.7, [(0, 0.0, 6.0, "turn"), (1, 2.0, 2.5, "backchannel-candidate")]),
    ([(0, 0.0, 1.0), (0, 1.3, 2.3)], 0.7, [(0, 0.0, 2.3, "turn")]),
    ([(0, 0.0, 1.5)], 0.7, [(0, 0.0, 1.5, "turn")]),
    ([(0, 0.0, 1.49)], 0.7, []),
    ([(0, 0.0, 4.0), (1, 1.0, 1.99)], 0.7, [(0, 0.0, 4.0, "turn"), (1, 1.0, 1.99, "backchannel-candidate")]),
    ([(0, 0.0, 4.0), (1, 1.0, 2.0)], 0.7, [(0, 0.0, 4.0, "turn")]),
    ([(1, 5.0, 5.5)], 0.7, []),
    ([(0, 0.0, 2.0), (0, 2.5, 3.7)], 0.7, [(0, 0.0, 3.7, "turn")]),
    ([(0, 0.0, 2.0), (0, 2.7, 3.9)], 0.7, [(0, 0.0, 2.0, "turn")]),
    ([(0, 0.0, 1.0), (0, 1.7, 2.5)], 0.7, []),
    ([(0, 0.0, 3.0), (1, 2.8, 3.3), (1, 3.3, 6.0)], 0.7, [(0, 0.0, 3.0, "turn"), (1, 2.8, 6.0, "turn")]),
]


def test_criterion_10_segmentation(criterion):
    with Clock() as clock:
        rng = np.random.default_rng(10)

        def lognormal(m, sd, n):
            s2 = math.log(1 + (sd / m) ** 2)
            return np.exp(rng.normal(math.log(m) - s2 / 2, math.sqrt(s2), n))

        gaps = np.concatenate([lognormal(0.2, 0.05, 300), lognormal(1.2, 0.2, 300)])
        threshold = fit_gap_mixture(gaps, seed=0).threshold

        t = 0.01 * np.arange(6000)
        audio = np.exp(rng.normal(0, 1, len(t)))
        pair = [BadgeStream(0, t, audio, np.ones(len(t))),
                BadgeStream(1, t, np.interp(t - 0.37, t, audio), np.ones(len(t)))]
        err_shift = abs(align_streams(pair).offsets[1] + 0.37)
        turns = [TurnSegment(k % 4, 3.0 * k, 3.0 * k + 2.2, "turn") for k in range(40)]
        offsets = np.array([0.0, 0.83, -1.21, 2.5])
        aligned = align_streams(badge_streams(turns, 130.0, period=0.01, seed=1, offsets=offsets))
        err_badges = np.abs(aligned.offsets + offsets).max()

        wrong = 0
        for segs, thr, expected in TURN_CASES:
            got = segment_turns([PitchSegment(*s) for s in segs], thr).turns
            wrong += [(g.speaker, round(g.start, 9), round(g.end, 9), g.kind) for g in got] != expected
        for k in range(300):
            segs = [PitchSegment(int(c), float(s), float(s + d)) for c, s, d in
                    zip(rng.integers(0, 3, 15), rng.uniform(0, 40, 15), rng.uniform(0.05, 4.0, 15))]
            thr = float(rng.uniform(0.1, 1.2))
            got = segment_turns(segs, thr)
            want, dropped = reference_segment_turns(segs, thr)
            wrong += [(g.speaker, g.start, g.end, g.kind) for g in got.turns] != want or got.dropped != dropped
    ok = 0.5 <= threshold <= 0.9 and max(err_shift, err_badges) <= 0.02 and wrong == 0 and clock.seconds < 30
    assert criterion(ok, f"break threshold {threshold:.3f} s; alignment errors {err_shift:.3f} s (shifted copy), "
                         f"{err_badges:.3f} s (four badges); {wrong} misclassified of {len(TURN_CASES)} "
                         f"constructed + 300 random cases ({clock.seconds:.1f} s)")


def test_criterion_11_statistics(criterion):
    rng = np.random.default_rng(11)
    mismatches = 0
    with Clock() as clock:
        for n in range(5, 13):
            for _ in range(4):
                d = rng.integers(-5, 6, n).astype(float)
                d[d == 0] = 1.0
                for alt in ("two-sided", "greater", "less"):
                    mismatches += wilcoxon_signed_rank(d, alt).p_value != wilcoxon_enumeration(d, alt)
        p = []
        monotone = True
        for _ in range(1000):
            X = rng.normal(size=(24, 4))
            y = 1 + X[:, 0] + rng.normal(size=24)
            fits = [ols_fit(X[:, :k], y) for k in range(1, 5)]
            monotone &= all(a.r_squared <= b.r_squared + 1e-12 for a, b in zip(fits, fits[1:]))
            p.append(nested_f_test(fits[0], fits[-1])[1])
        ks = stats.kstest(p, "uniform").pvalue
    ok = mismatches == 0 and ks > 0.01 and monotone and clock.seconds < 60
    assert criterion(ok, f"{mismatches} Wilcoxon mismatches against enumeration (n = 5..12, with ties); "
                         f"F-test null KS p = {ks:.3f}; r^2 monotone: {monotone} ({clock.seconds:.1f} s)")


def _tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def _cli(*argv):
    code = cli_main([str(a) for a in argv])
    if code != 0:
        raise RuntimeError(f"convdyn {' '.join(map(str, argv))} exited with {code}")


@pytest.mark.slow
def test_criterion_12_end_to_end(criterion, tmp_path):
    d = tmp_path
    (d / "small.json").write_text(json.dumps({"minutes": 1, "sweeps": 12, "burn_in": 4, "replicates": 3,
                                              "games": 25}))
    small = ("--config", d / "small.json")
    turns = [TurnSegment(k % 3, 4.0 * k, 4.0 * k + 2.5, "turn") for k in range(20)]
    for b, s in enumerate(badge_streams(turns, 85.0, speakers=3, seed=2, offsets=[0, 0.3, -0.2])):
        (d / f"badge{b}.csv").write_text(badge_to_csv(s))
    make_groups(d / "fixture_groups", n_groups=4, minutes=1, seed=1, percentiles=(50, 75))

    def commands(sim):
        return [
            ("simulate", [*small, "simulate"]),
            ("infer", [*small, "infer", sim / "observations.csv"]),
            ("segment", ["segment", d / "badge0.csv", d / "badge1.csv", d / "badge2.csv"]),
            ("extract", [*small, "extract", "--trajectory", sim / "trajectory.csv", "--group", "g"]),
            ("survival", ["survival", "--groups", d / "fixture_groups"]),
            ("table1", [*small, "table1"]),
            ("tasksim", [*small, "tasksim"]),
            ("report", [*small, "report", d / "fixture_groups"]),
        ]

    differing = []
    with Clock() as rerun_clock:
        for name, argv in commands(d / "simulate_a"):
            for copy in "ab":
                _cli("--seed", 3, "--out", d / f"{name}_{copy}", *argv)
            if _tree(d / f"{name}_a") != _tree(d / f"{name}_b"):
                differing.append(name)

    # full pipeline at the default configuration
    groups = d / "groups"
    with Clock() as clock:
        for g, p in enumerate((25, 50, 75, 50)):
            run = d / f"run{g}"
            _cli("--seed", g, "--out", run / "sim", "simulate", "--percentile", p)
            _cli("--seed", g, "--out", run / "infer", "infer", run / "sim" / "observations.csv")
            _cli("--seed", g, "--out", groups / f"g{g}", "extract", "--trajectory", run / "infer" / "path.csv",
                 "--group", f"g{g}", "--rates", run / "infer" / "rates.csv")
        _cli("--out", d / "survival", "survival", "--groups", groups)
        _cli("--out", d / "report", "report", groups)
    report = json.loads((d / "report" / "report.json").read_text())
    complete = report["table1"] is not None and "baseline" in report["survival"]
    ok = not differing and complete and clock.seconds <= 600
    assert criterion(ok, f"8 commands rerun, byte-identical: {'all' if not differing else differing} "
                         f"({rerun_clock.seconds:.1f} s); default pipeline simulate -> infer -> extract "
                         f"(4 groups) -> survival -> report in {clock.seconds:.0f} s")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
