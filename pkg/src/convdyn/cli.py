"""File-based command line pipeline.

Every command writes its outputs plus ``manifest.json`` into ``--out``.  The
manifest records the command, seed, resolved configuration, a hash of that
configuration and hashes of the input and output files, and never a
timestamp, so identical inputs give byte-identical directories.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (TABLE1_COLUMNS, TABLE1_ROWS, GroupRecord, calibrate_table1, counts_per_minute,
                       format_table1, nested_f_test, ols_fit, simulate_and_count, table1_report)
from .core import build_catalog
from .emission import EmissionParams, observations_from_csv, observations_to_csv, sample_observations
from .errors import ConvDynError, DataError, InvalidConfiguration, NumericalError
from .events import (classify_events, classify_path, counts_from_csv, counts_to_csv, events_to_csv,
                     window_counts)
from .fixtures import calibrated_rates, write_group
from .infer import (GibbsConfig, PosteriorSample, chain_to_json, default_rate_prior, emission_status,
                    rate_posterior_summary, run_chain, run_chains, states_to_csv)
from .segment import (align_streams, badge_from_csv, detect_pitched, fit_gap_mixture, gaps_between,
                      segment_turns, turns_from_csv, turns_to_csv)
from .simulate import SlotTrajectory, slotted_simulate, trajectory_from_csv, trajectory_to_csv
from .survival import fit_hazard, questions_from_csv, records_from_questions
from .tasksim import new_game, play_game, quality_sweep


@dataclass(frozen=True)
class RunConfig:
    speakers: int = 4
    minutes: float = 10.0
    percentile: int = 50
    separation: float = 3.0
    sweeps: int = 500
    burn_in: int = 100
    chains: int = 1
    prior_strength: float = 1.0
    window: float = 60.0
    transfer_gap_max: float = 1.0
    question_interval: float = 60.0
    replicates: int = 200
    link: str = "additive"
    games: int = 1000
    quality: float = 1.0

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls()
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{p}: invalid JSON ({exc})") from None
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise UsageError(f"{p}: unknown config keys {', '.join(unknown)}")
        return cls(**doc)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Output directory plus manifest bookkeeping for one command."""

    def __init__(self, command: str, args, config: RunConfig):
        self.command = command
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.seed = args.seed
        self.dt = args.dt
        self.config = config
        self.inputs: dict = {}
        self.outputs: list = []

    def read(self, path) -> str:
        p = Path(path)
        if not p.is_file():
            raise DataError(f"missing input file: {p}")
        self.inputs[str(path)] = _sha(p)
        return p.read_text()

    def write(self, name: str, text: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
        self.outputs.append(name)
        return p

    def finish(self, extra: dict | None = None) -> None:
        config = {"dt": self.dt, "seed": self.seed, **asdict(self.config), **(extra or {})}
        blob = json.dumps(config, sort_keys=True).encode()
        doc = {
            "command": self.command,
            "version": __version__,
            "seed": self.seed,
            "config": config,
            "config_hash": hashlib.sha256(blob).hexdigest(),
            "inputs": self.inputs,
            "outputs": {n: _sha(self.out / n) for n in sorted(self.outputs)},
        }
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _rates_csv(rates, catalog) -> str:
    lines = ["event_id,event,rate"]
    lines += [f"{e.id},{e.name},{float(rates[e.id])!r}" for e in catalog.events]
    return "\n".join(lines) + "\n"


def _read_rates(text: str, catalog, source: str) -> np.ndarray:
    rows = [line.split(",") for line in text.strip().splitlines()]
    header = rows[0]
    col = "rate" if "rate" in header else "mean"
    if "event_id" not in header or col not in header:
        raise DataError(f"{source}:1: expected event_id and rate (or mean) columns")
    i, j = header.index("event_id"), header.index(col)
    out = np.zeros(len(catalog))
    for lineno, r in enumerate(rows[1:], start=2):
        try:
            out[int(r[i])] = float(r[j])
        except (ValueError, IndexError) as exc:
            raise DataError(f"{source}:{lineno}: {exc}") from None
    return out


# -- commands ----------------------------------------------------------------

def cmd_simulate(args, config: RunConfig) -> None:
    run = Run("simulate", args, config)
    catalog = build_catalog(config.speakers)
    if args.rates:
        rates = _read_rates(run.read(args.rates), catalog, args.rates)
    else:
        if config.speakers != 4:
            raise InvalidConfiguration("calibrated default rates exist for 4 speakers; pass --rates")
        rates = np.array(calibrated_rates(config.percentile))
    rng = np.random.default_rng(args.seed)
    traj = slotted_simulate(catalog, rates, (0,) * config.speakers, config.minutes * 60.0, args.dt, rng)
    states = traj.state_indices(catalog)
    status = emission_status(states, traj.slot_events, catalog)
    means = np.zeros((config.speakers, 2, 3))
    means[:, 1, :] = config.separation
    covs = np.tile(np.eye(3), (config.speakers, 2, 1, 1))
    obs = sample_observations(status, EmissionParams(means, covs), rng, args.dt)
    run.write("trajectory.csv", trajectory_to_csv(traj.to_trajectory(), catalog))
    run.write("observations.csv", observations_to_csv(obs))
    run.write("rates.csv", _rates_csv(rates, catalog))
    run.finish()


def cmd_infer(args, config: RunConfig) -> None:
    run = Run("infer", args, config)
    obs = observations_from_csv(run.read(args.observations), args.observations)
    catalog = build_catalog(obs.speaker_count)
    gibbs = GibbsConfig(sweeps=config.sweeps, burn_in=config.burn_in, dt=obs.dt, seed=args.seed,
                        rate_prior=default_rate_prior(catalog, config.prior_strength))
    if config.chains > 1:
        chains, psrf = run_chains(obs, catalog, gibbs, config.chains)
    else:
        chains, psrf = [run_chain(obs, catalog, gibbs)], None
    summary = rate_posterior_summary(chains, catalog)
    cols = ["event_id", "event", "mean", "sd", "q025", "q975"] + (["psrf"] if psrf is not None else [])
    lines = [",".join(cols)]
    for row in summary:
        vals = [str(row["event_id"]), row["event"]] + [repr(row[k]) for k in ("mean", "sd", "q025", "q975")]
        if psrf is not None:
            vals.append(repr(float(psrf[row["event_id"]])))
        lines.append(",".join(vals))
    run.write("rates.csv", "\n".join(lines) + "\n")
    run.write("chain.json", chain_to_json(chains, catalog, psrf) + "\n")
    last: PosteriorSample = chains[0].samples[-1]
    x0 = tuple((last.initial_state >> c) & 1 for c in range(catalog.speaker_count))
    path = SlotTrajectory(x0, np.asarray(last.events, dtype=np.int64), obs.dt)
    run.write("path.csv", trajectory_to_csv(path.to_trajectory(), catalog))
    run.write("states.csv", states_to_csv(last, catalog.speaker_count))
    run.finish()


def cmd_segment(args, config: RunConfig) -> None:
    run = Run("segment", args, config)
    streams = [badge_from_csv(run.read(p), b, p) for b, p in enumerate(args.badges)]
    aligned = align_streams(streams)
    segments = []
    for s in aligned.streams:
        segments += detect_pitched(s.timestamps, s.audio, badge=s.badge, sample_period=s.sample_period)
    mixture = fit_gap_mixture(gaps_between(segments), seed=args.seed)
    threshold = mixture.threshold if np.isfinite(mixture.threshold) else 0.7
    result = segment_turns(segments, threshold)
    run.write("turns.csv", turns_to_csv(result.turns))
    run.write("segmentation.json", _dump({
        "offsets_s": [float(v) for v in aligned.offsets],
        "peak_correlation": [float(v) for v in aligned.peak_correlation],
        "low_confidence": [bool(v) for v in aligned.low_confidence],
        "break_threshold_s": float(threshold),
        "mixture_single_component": bool(mixture.single_component),
        "dropped_spans": result.dropped,
    }))
    run.finish()


def cmd_extract(args, config: RunConfig) -> None:
    run = Run("extract", args, config)
    if bool(args.trajectory) == bool(args.turns):
        raise UsageError("give exactly one of --trajectory or --turns")
    if args.trajectory:
        catalog = build_catalog(config.speakers)
        traj = trajectory_from_csv(run.read(args.trajectory), catalog, args.trajectory)
        events = classify_path(traj, catalog)
        horizon = traj.horizon
    else:
        turns = turns_from_csv(run.read(args.turns), args.turns)
        events = classify_events(turns, config.transfer_gap_max)
        horizon = max((t.end for t in turns), default=0.0)
    run.write("events.csv", events_to_csv(events))
    if args.group:
        rates = None
        if args.rates:
            rates = _read_rates(run.read(args.rates), build_catalog(config.speakers), args.rates)
        write_group(run.out, args.group, events, horizon, args.seed, config.question_interval,
                    config.window, rates)
        run.outputs += ["meta.json", "counts.csv", "records.csv", "game.json"]
        if rates is not None:
            run.outputs.append("rates.csv")
    else:
        run.write("counts.csv", counts_to_csv(window_counts(events, config.window, duration=horizon)))
    run.finish()


def _collect_records(paths, run: Run):
    rows = []
    for p in paths:
        rows += questions_from_csv(run.read(p), str(p))
    if not rows:
        raise DataError("no question records found")
    return records_from_questions(rows)


def cmd_survival(args, config: RunConfig) -> None:
    run = Run("survival", args, config)
    paths = list(args.records or [])
    if args.groups:
        paths += sorted(Path(args.groups).glob("*/records.csv"))
    if not paths:
        raise UsageError("give --records files or --groups")
    fit = fit_hazard(_collect_records(paths, run), link=config.link)
    run.write("fit.json", fit.to_json() + "\n")
    run.finish()


def cmd_table1(args, config: RunConfig) -> None:
    run = Run("table1", args, config)
    catalog = build_catalog(4)
    row = TABLE1_ROWS[config.percentile] if args.row is None else tuple(args.row)
    cal = calibrate_table1(row, catalog)
    stats = simulate_and_count(cal.rates, config.minutes, config.replicates, args.seed, catalog,
                               config.window)
    run.write("rates.csv", _rates_csv(cal.rates, catalog))
    run.write("table1.json", _dump({
        "target": dict(zip(stats.means, row)),
        "calibrated_expected": cal.expected,
        "profile": asdict(cal.profile),
        "simulated": stats.means,
        "stderr": stats.stderr,
        "replicates": stats.replicates,
    }))
    run.finish({"row": list(row)})


def cmd_tasksim(args, config: RunConfig) -> None:
    run = Run("tasksim", args, config)
    if args.sweep:
        sweep = quality_sweep(games=config.games, seed=args.seed)
        run.write("sweep.json", _dump({f"{q:.2f}": v for q, v in sweep.items()}))
    else:
        seeds = np.random.SeedSequence(args.seed).spawn(config.games)
        logs = []
        for ss in seeds:
            rng = np.random.default_rng(ss)
            logs.append(play_game(new_game(rng), config.quality, rng))
        counts = [g.questions for g in logs]
        run.write("games.json", _dump({
            "quality": config.quality,
            "mean_questions": float(np.mean(counts)),
            "max_questions": int(max(counts)),
            "aborted": int(sum(g.aborted for g in logs)),
            "games": [json.loads(g.to_json()) for g in logs[:20]],
        }))
    run.finish()


def _load_groups(root: Path, run: Run, catalog) -> list[GroupRecord]:
    if not root.is_dir():
        raise DataError(f"groups directory not found: {root}")
    dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not dirs:
        raise DataError(f"no group directories in {root}")
    groups = []
    for d in dirs:
        for required in ("meta.json", "counts.csv"):
            if not (d / required).is_file():
                raise DataError(f"missing file: {d / required}")
        meta = json.loads(run.read(d / "meta.json"))
        counts = counts_from_csv(run.read(d / "counts.csv"), source=str(d / "counts.csv"))
        rates = None
        if (d / "rates.csv").is_file():
            rates = _read_rates(run.read(d / "rates.csv"), catalog, str(d / "rates.csv"))
        groups.append(GroupRecord(str(meta["group_id"]), int(meta["questions"]), tuple(counts), rates))
    return groups


def cmd_report(args, config: RunConfig) -> None:
    run = Run("report", args, config)
    catalog = build_catalog(4)
    root = Path(args.groups)
    groups = _load_groups(root, run, catalog)
    report: dict = {"groups": len(groups)}
    if len(groups) >= 4:
        table = table1_report(groups, catalog=catalog, minutes=config.minutes, replicates=20,
                              seed=args.seed)
        report["table1"] = table
    else:
        report["table1"] = None
        report["note"] = "Table 1 rows need at least 4 groups"
    records = sorted(root.glob("*/records.csv"))
    if records:
        try:
            report["survival"] = json.loads(fit_hazard(_collect_records(records, run),
                                                       link=config.link).to_json())
        except ConvDynError as exc:
            report["survival"] = {"error": str(exc)}
    X = np.array([[counts_per_minute(g.counts)[k] for k in TABLE1_COLUMNS] for g in groups])
    y = np.array([g.questions for g in groups], dtype=float)
    if len(groups) > 6 and np.ptp(y) > 0:
        try:
            full = ols_fit(X, y, TABLE1_COLUMNS)
            restricted = ols_fit(X[:, :1], y, TABLE1_COLUMNS[:1])
            F, p = nested_f_test(restricted, full)
            report["regression"] = {"r_squared_turns_only": restricted.r_squared,
                                    "r_squared_all": full.r_squared, "F": F, "p_value": p}
        except ConvDynError as exc:
            report["regression"] = {"error": str(exc)}
    run.write("report.json", _dump(report))
    if report["table1"]:
        run.write("report.txt", format_table1(report["table1"]))
    run.finish()


COMMANDS = {
    "simulate": cmd_simulate, "infer": cmd_infer, "segment": cmd_segment, "extract": cmd_extract,
    "survival": cmd_survival, "table1": cmd_table1, "tasksim": cmd_tasksim, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="convdyn", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--dt", type=float, default=0.1)
    parser.add_argument("--config", default=None, help="JSON file overriding RunConfig fields")
    parser.add_argument("--out", default=".", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate a conversation and its sensor observations")
    p.add_argument("--rates", help="CSV with event_id and rate columns (default: calibrated Table 1 row)")
    p.add_argument("--minutes", type=float)
    p.add_argument("--percentile", type=int, choices=(25, 50, 75))

    p = sub.add_parser("infer", help="Gibbs sampling of rates and states from observations")
    p.add_argument("observations")
    p.add_argument("--sweeps", type=int)
    p.add_argument("--burn-in", type=int, dest="burn_in")
    p.add_argument("--chains", type=int)

    p = sub.add_parser("segment", help="badge streams to turn segments")
    p.add_argument("badges", nargs="+")

    p = sub.add_parser("extract", help="conversational events and window counts")
    p.add_argument("--trajectory")
    p.add_argument("--turns")
    p.add_argument("--window", type=float)
    p.add_argument("--group", help="also play the synthetic game and write a group directory")
    p.add_argument("--rates", help="rate CSV copied into the group directory")

    p = sub.add_parser("survival", help="fit the hazard model to question records")
    p.add_argument("--records", nargs="*")
    p.add_argument("--groups")
    p.add_argument("--link", choices=("additive", "exponential"))

    p = sub.add_parser("table1", help="calibrate rates to a Table 1 row and simulate-and-count")
    p.add_argument("--percentile", type=int, choices=(25, 50, 75))
    p.add_argument("--row", type=float, nargs=4, metavar=("TURNS", "COMP", "BACK", "CHANGES"))
    p.add_argument("--replicates", type=int)
    p.add_argument("--minutes", type=float)

    p = sub.add_parser("tasksim", help="play synthetic 20-questions games")
    p.add_argument("--games", type=int)
    p.add_argument("--quality", type=float)
    p.add_argument("--sweep", action="store_true")

    p = sub.add_parser("report", help="Table 1 style report over group directories")
    p.add_argument("groups")
    return parser


_OVERRIDES = ("minutes", "percentile", "sweeps", "burn_in", "chains", "window", "link",
              "replicates", "games", "quality")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = RunConfig.load(args.config)
        config = replace(config, **{k: getattr(args, k) for k in _OVERRIDES
                                    if getattr(args, k, None) is not None})
        if args.dt <= 0:
            raise UsageError("--dt must be positive")
        COMMANDS[args.command](args, config)
    except (UsageError, InvalidConfiguration) as exc:
        print(f"convdyn: usage error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"convdyn: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ConvDynError, ValueError, OSError) as exc:
        print(f"convdyn: data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
