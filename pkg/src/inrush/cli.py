"""Command line front end.

Subcommands cover the pipeline stages: ``synth`` writes a labelled corpus
of preprocessed events, ``detect`` locates onsets in raw records,
``extract`` turns event files into a feature table, ``experiment`` runs a
classification protocol over a feature table, and ``report`` re-renders a
stored report.

Configuration is a flat key=value file with dotted keys ('#' starts a
comment); command line flags override file values.  Every output file
embeds a digest of the effective configuration, so artefacts can be traced
to the exact settings that produced them.

Exit codes: 0 success, 2 configuration problems, 3 protocol violations
(a corpus that cannot support the requested experiment), 4 I/O and data
errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from inrush.experiments import (
    ExperimentConfig,
    ProtocolError,
    render_report,
    report_from_dict,
    run_mech_experiment,
    run_motor_experiment,
)
from inrush.features import (
    N_FEATURES,
    FeatureTable,
    extract_all,
    read_feature_table,
    write_feature_table,
)
from inrush.ml import KERNELS
from inrush.signals import WaveformError, parse_waveform
from inrush.synth import NAMED_ROSTERS, generate_corpus, read_roster, write_roster
from inrush.transients import (
    DetectionConfig,
    detect_turn_on,
    process_record,
    read_event,
    write_event,
)


class ConfigError(ValueError):
    """Raised for unusable configuration files or values."""


@dataclass(frozen=True)
class RunConfig:
    """Effective settings of one invocation; see ``_KEY_TABLE`` for the
    file keys."""

    roster: str = "default"
    events_per_motor: int = 8
    duration: float = 1.6
    sample_rate: float = 10_000.0
    noise_level: float = 0.02
    on_threshold: float = 0.1
    quiet_samples: int = 2000
    steady_tail_periods: int = 25
    min_separation_periods: float = 7.0
    extrema_prominence_frac: float = 0.01
    smooth_width: int = 5
    inflect_band_frac: float = 0.1
    c: float = 1.0
    tol: float = 1e-3
    max_iter: int = 100_000
    class_weighting: str = "balanced"
    protocol: str = "motors"
    kernels: tuple = KERNELS
    k_max: int = 15
    n_folds: int = 8
    per_motor: int = 8
    seed: int = 0
    jobs: int = 1


_KEY_TABLE: dict[str, tuple[str, str]] = {
    "synth.roster": ("roster", "str"),
    "synth.events_per_motor": ("events_per_motor", "int"),
    "synth.duration": ("duration", "float"),
    "synth.sample_rate": ("sample_rate", "float"),
    "synth.noise_level": ("noise_level", "float"),
    "detect.on_threshold": ("on_threshold", "float"),
    "detect.quiet_samples": ("quiet_samples", "int"),
    "detect.steady_tail_periods": ("steady_tail_periods", "int"),
    "detect.min_separation_periods": ("min_separation_periods", "float"),
    "features.extrema_prominence_frac": ("extrema_prominence_frac", "float"),
    "features.smooth_width": ("smooth_width", "int"),
    "features.inflect_band_frac": ("inflect_band_frac", "float"),
    "ml.c": ("c", "float"),
    "ml.tol": ("tol", "float"),
    "ml.max_iter": ("max_iter", "int"),
    "ml.class_weighting": ("class_weighting", "str"),
    "experiment.protocol": ("protocol", "str"),
    "experiment.kernels": ("kernels", "kernels"),
    "experiment.k_max": ("k_max", "int"),
    "experiment.n_folds": ("n_folds", "int"),
    "experiment.per_motor": ("per_motor", "int"),
    "run.seed": ("seed", "int"),
    "run.jobs": ("jobs", "int"),
}

_ATTR_TO_KEY = {attr: key for key, (attr, _) in _KEY_TABLE.items()}


def _parse_value(key: str, raw: str, kind: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "kernels":
            parts = tuple(p.strip() for p in raw.split(",") if p.strip())
            for p in parts:
                if p not in KERNELS:
                    raise ValueError(f"unknown kernel {p!r}")
            if not parts:
                raise ValueError("empty kernel list")
            return parts
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc


def load_config(path) -> RunConfig:
    """Read a config file over the defaults; unknown keys are errors."""
    overrides = {}
    try:
        with open(path, "r", encoding="ascii") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in _KEY_TABLE:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        attr, kind = _KEY_TABLE[key]
        overrides[attr] = _parse_value(key, value.strip(), kind)
    return validate_config(replace(RunConfig(), **overrides))


def validate_config(cfg: RunConfig) -> RunConfig:
    if cfg.protocol not in ("motors", "mech"):
        raise ConfigError(f"experiment.protocol must be motors or mech, not {cfg.protocol!r}")
    if cfg.class_weighting not in ("balanced", "none"):
        raise ConfigError("ml.class_weighting must be balanced or none")
    if cfg.events_per_motor < 0:
        raise ConfigError("synth.events_per_motor must be >= 0 (0 = roster counts)")
    for attr in ("duration", "sample_rate", "noise_level", "c", "tol"):
        if getattr(cfg, attr) < 0:
            raise ConfigError(f"{_ATTR_TO_KEY[attr]} must be non-negative")
    if cfg.seed < 0 or cfg.jobs < 1 or cfg.k_max < 1 or cfg.n_folds < 2:
        raise ConfigError("run.seed >= 0, run.jobs >= 1, k_max >= 1, n_folds >= 2 required")
    return cfg


def config_digest(cfg: RunConfig) -> str:
    """Stable hash of the result-affecting configuration.

    Worker count only changes scheduling, never the numbers, so it stays
    out of the digest and parallel reruns stay byte-identical.
    """
    lines = []
    for f in fields(RunConfig):
        if f.name == "jobs":
            continue
        key = _ATTR_TO_KEY[f.name]
        value = getattr(cfg, f.name)
        if isinstance(value, float):
            text = repr(value)
        elif isinstance(value, tuple):
            text = ",".join(value)
        else:
            text = str(value)
        lines.append(f"{key}={text}")
    blob = "\n".join(sorted(lines)).encode("ascii")
    return hashlib.sha256(blob).hexdigest()[:16]


def detection_config(cfg: RunConfig) -> DetectionConfig:
    return DetectionConfig(
        on_threshold=cfg.on_threshold,
        quiet_samples=cfg.quiet_samples,
        steady_tail_periods=cfg.steady_tail_periods,
        min_separation_periods=cfg.min_separation_periods,
    )


def feature_config(cfg: RunConfig):
    from inrush.features import FeatureConfig

    return FeatureConfig(
        extrema_prominence_frac=cfg.extrema_prominence_frac,
        smooth_width=cfg.smooth_width,
        inflect_band_frac=cfg.inflect_band_frac,
    )


def experiment_config(cfg: RunConfig) -> ExperimentConfig:
    return ExperimentConfig(
        kernels=cfg.kernels,
        k_max=cfg.k_max,
        n_folds=cfg.n_folds,
        per_motor=cfg.per_motor,
        seed=cfg.seed,
        jobs=cfg.jobs,
        c=cfg.c,
        tol=cfg.tol,
        max_iter=cfg.max_iter,
        class_weighting=cfg.class_weighting,
        digest=config_digest(cfg),
    )


def _build_roster(cfg: RunConfig):
    if cfg.roster in NAMED_ROSTERS:
        return NAMED_ROSTERS[cfg.roster](seed=cfg.seed, noise_level=cfg.noise_level)
    path = Path(cfg.roster)
    if path.is_file():
        roster = read_roster(path)
        if not roster:
            raise ConfigError(f"roster file {path} holds no motors")
        return roster
    raise ConfigError(
        f"synth.roster {cfg.roster!r} is neither a file nor one of "
        f"{sorted(NAMED_ROSTERS)}"
    )


def cmd_synth(cfg: RunConfig, out_dir: Path) -> int:
    roster = _build_roster(cfg)
    per_motor = None if cfg.events_per_motor == 0 else cfg.events_per_motor
    events = generate_corpus(
        roster, events_per_motor=per_motor, seed=cfg.seed,
        duration=cfg.duration, sample_rate=cfg.sample_rate,
        cfg=detection_config(cfg),
    )
    digest = config_digest(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_roster(roster, out_dir / "roster.txt")
    counts: dict[str, int] = {}
    for ev in events:
        idx = counts.get(ev.motor_id, 0)
        counts[ev.motor_id] = idx + 1
        motor_dir = out_dir / "events" / ev.motor_id
        motor_dir.mkdir(parents=True, exist_ok=True)
        write_event(ev, motor_dir / f"ev{idx:03d}.csv", digest=digest)
    print(f"synth: {len(events)} events from {len(roster)} motors -> {out_dir}")
    return 0


def _record_files(path: Path) -> list[Path]:
    """CSV files under ``path``; an existing but empty directory gives []."""
    if path.is_file():
        return [path]
    if path.is_dir():
        return sorted(p for p in path.rglob("*.csv") if p.is_file())
    raise FileNotFoundError(f"no records found at {path}")


def cmd_detect(cfg: RunConfig, input_path: Path, out_dir: Path | None) -> int:
    files = _record_files(input_path)
    if not files:
        raise FileNotFoundError(f"no records found at {input_path}")
    det = detection_config(cfg)
    digest = config_digest(cfg)
    failures = 0
    for f in files:
        try:
            w = parse_waveform(f)
            if out_dir is None:
                times = detect_turn_on(w, det)
                stamp = " ".join(repr(float(t)) for t in times)
                print(f"{f}: {stamp}" if len(times) else f"{f}: no events")
            else:
                events = process_record(w, det)
                out_dir.mkdir(parents=True, exist_ok=True)
                for k, ev in enumerate(events):
                    write_event(ev, out_dir / f"{f.stem}_ev{k:03d}.csv", digest=digest)
                print(f"{f}: {len(events)} events")
        except (WaveformError, ValueError) as exc:
            failures += 1
            print(f"skipping {f}: {exc}", file=sys.stderr)
    if failures == len(files):
        raise OSError(f"all {failures} records under {input_path} were unusable")
    return 0


def cmd_extract(cfg: RunConfig, input_path: Path, out_dir: Path) -> int:
    files = _record_files(input_path)
    fcfg = feature_config(cfg)
    rows = []
    motor_ids: list[str] = []
    mech_types: list[str] = []
    event_files: list[str] = []
    event_times = []
    for f in files:
        try:
            ev = read_event(f)
            vec = extract_all(ev, fcfg)
        except (WaveformError, ValueError) as exc:
            print(f"skipping {f}: {exc}", file=sys.stderr)
            continue
        rows.append(vec.values)
        motor_ids.append(ev.motor_id)
        mech_types.append(ev.mech_type)
        try:
            event_files.append(str(f.relative_to(input_path)))
        except ValueError:
            event_files.append(f.name)
        event_times.append(ev.event_time)
    if files and not rows:
        raise OSError(f"no usable event files under {input_path}")
    values = np.asarray(rows) if rows else np.empty((0, N_FEATURES))
    table = FeatureTable(values, motor_ids, mech_types, event_files, event_times)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "features.csv"
    write_feature_table(table, out_path, digest=config_digest(cfg))
    print(f"extract: {table.n_events} events, {len(files) - table.n_events} skipped -> {out_path}")
    return 0


def cmd_experiment(cfg: RunConfig, input_path: Path, out_dir: Path) -> int:
    table_path = input_path / "features.csv" if input_path.is_dir() else input_path
    try:
        table = read_feature_table(table_path)
    except ValueError as exc:
        raise OSError(str(exc)) from exc
    ecfg = experiment_config(cfg)
    if cfg.protocol == "motors":
        report = run_motor_experiment(table, ecfg)
    else:
        report = run_mech_experiment(table, ecfg)
    written = render_report(report, out_dir)
    for kernel in report.traces:
        best = report.traces[kernel].best_entry()
        print(
            f"{cfg.protocol} {kernel}: best f1 {best.f1_mean:.4f} "
            f"with {best.k} features (added {best.feature_name})"
        )
    print(f"experiment: {len(written)} files -> {out_dir}")
    return 0


def cmd_report(cfg: RunConfig, input_path: Path, out_dir: Path) -> int:
    report_path = input_path / "report.json" if input_path.is_dir() else input_path
    try:
        with open(report_path, "r", encoding="ascii") as fh:
            report = report_from_dict(json.load(fh))
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise OSError(f"cannot load report {report_path}: {exc}") from exc
    render_report(report, out_dir)
    for kernel, trace in report.traces.items():
        for e in trace.entries:
            print(f"{kernel} k={e.k} {e.feature_name} f1={e.f1_mean:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="inrush",
        description="Turn-on transient analysis and load identification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, needs_out: bool) -> None:
        p.add_argument("--config", type=Path, help="key=value configuration file")
        p.add_argument("--out", type=Path, required=needs_out, help="output directory")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--jobs", type=int, help="override run.jobs")
        p.add_argument("--kernel", choices=KERNELS, help="restrict to one kernel")

    p = sub.add_parser("synth", help="generate a labelled synthetic corpus")
    common(p, needs_out=True)

    p = sub.add_parser("detect", help="find turn-on events in raw records")
    p.add_argument("input", type=Path, help="record file or directory")
    common(p, needs_out=False)

    p = sub.add_parser("extract", help="feature table from event files")
    p.add_argument("input", type=Path, help="event file directory")
    common(p, needs_out=True)

    p = sub.add_parser("experiment", help="run a classification protocol")
    p.add_argument("input", type=Path, help="feature table or its directory")
    common(p, needs_out=True)

    p = sub.add_parser("report", help="re-render a stored report")
    p.add_argument("input", type=Path, help="report.json or its directory")
    common(p, needs_out=True)

    return parser


def _effective_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        overrides["seed"] = args.seed
    if args.jobs is not None:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        overrides["jobs"] = args.jobs
    if args.kernel is not None:
        overrides["kernels"] = (args.kernel,)
    return validate_config(replace(cfg, **overrides)) if overrides else cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _effective_config(args)
        if args.command == "synth":
            return cmd_synth(cfg, args.out)
        if args.command == "detect":
            return cmd_detect(cfg, args.input, args.out)
        if args.command == "extract":
            return cmd_extract(cfg, args.input, args.out)
        if args.command == "experiment":
            return cmd_experiment(cfg, args.input, args.out)
        if args.command == "report":
            return cmd_report(cfg, args.input, args.out)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return 3
    except (OSError, WaveformError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
