"""Cross-validated greedy feature selection over a feature table.

Two protocols share the machinery.  The motor protocol asks "which of the
known motors switched on" and scores stratified k-fold splits of all
events.  The mechanical protocol asks "what kind of load is this motor"
and scores leave-one-motor-per-type-out splits, so the tested motor is
never seen during training; every combination of one held-out pump,
compressor and fan forms one fold.

Selection is greedy and forward: starting from the empty set, each round
scores every remaining feature appended to the current set by mean
macro-f1 over the folds and keeps the best.  Ties go to the lowest feature
index.  Scaling to [0, 1] is fitted on each fold's training block only.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from inrush.features import FEATURE_NAMES, N_FEATURES, FeatureTable
from inrush.ml import (
    KERNELS,
    ConfusionMatrix,
    apply_scaler,
    balanced_weights,
    confusion_matrix,
    fit_scaler,
    macro_f1,
    svm_predict,
    svm_train,
)

MECH_LABELS = ("compressor", "fan", "pump")


class ProtocolError(ValueError):
    """Raised when a corpus cannot support the requested protocol."""


@dataclass(frozen=True)
class FoldPlan:
    """Train/test index pairs plus bookkeeping about how they were made."""

    folds: tuple
    strategy: str
    seed: int
    held_out: tuple = ()

    @property
    def n_folds(self) -> int:
        return len(self.folds)


@dataclass(frozen=True)
class ExperimentConfig:
    kernels: tuple = KERNELS
    k_max: int = 15
    n_folds: int = 8
    per_motor: int = 8
    seed: int = 0
    jobs: int = 1
    c: float = 1.0
    tol: float = 1e-3
    max_iter: int = 100_000
    class_weighting: str = "balanced"
    digest: str = ""

    def __post_init__(self) -> None:
        for kern in self.kernels:
            if kern not in KERNELS:
                raise ValueError(f"unknown kernel {kern!r}")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.n_folds < 2:
            raise ValueError("n_folds must be at least 2")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")
        if self.class_weighting not in ("balanced", "none"):
            raise ValueError("class_weighting must be 'balanced' or 'none'")


@dataclass
class TraceEntry:
    """Outcome of one greedy round: the feature added and its CV score."""

    k: int
    feature_index: int
    feature_name: str
    f1_mean: float
    f1_std: float
    fold_f1: tuple
    n_candidates: int
    confusions: list[ConfusionMatrix] = field(default_factory=list)


@dataclass
class SelectionTrace:
    kernel: str
    entries: list[TraceEntry]

    @property
    def selected_indices(self) -> tuple[int, ...]:
        return tuple(e.feature_index for e in self.entries)

    @property
    def selected_names(self) -> tuple[str, ...]:
        return tuple(e.feature_name for e in self.entries)

    def best_entry(self) -> TraceEntry:
        best = self.entries[0]
        for e in self.entries[1:]:
            if e.f1_mean > best.f1_mean:
                best = e
        return best


@dataclass
class ScatterData:
    """Raw values of the first two selected features for every event."""

    feature_x: str
    feature_y: str
    points: np.ndarray
    labels: list[str]


@dataclass
class ExperimentReport:
    protocol: str
    class_labels: tuple
    traces: dict
    scatter: dict
    n_events: int
    n_folds: int
    fold_strategy: str
    seed: int
    config_digest: str


def stratified_kfold(labels: np.ndarray, k: int, seed: int = 0) -> FoldPlan:
    """Shuffled stratified folds; per-class counts differ by at most one.

    Classes whose remainder events would always land in the same folds are
    avoided by rotating which folds receive the extras.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ProtocolError("need at least two folds")
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    test_sets: list[list[int]] = [[] for _ in range(k)]
    cursor = 0
    for c in classes:
        idx = np.nonzero(labels == c)[0]
        if idx.size < k:
            raise ProtocolError(
                f"class {c!r} has only {idx.size} events; {k} folds need at least {k}"
            )
        perm = rng.permutation(idx)
        base, extra = divmod(idx.size, k)
        sizes = np.full(k, base)
        for e in range(extra):
            sizes[(cursor + e) % k] += 1
        cursor = (cursor + extra) % k
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        for f in range(k):
            test_sets[f].extend(perm[offsets[f] : offsets[f + 1]].tolist())
    folds = []
    all_idx = np.arange(labels.size)
    for f in range(k):
        test = np.sort(np.asarray(test_sets[f], dtype=int))
        mask = np.ones(labels.size, dtype=bool)
        mask[test] = False
        folds.append((all_idx[mask], test))
    return FoldPlan(tuple(folds), strategy="stratified", seed=seed)


def motor_holdout_splits(motor_ids: list[str], mech_types: list[str]) -> FoldPlan:
    """One fold per combination of one held-out motor of each mech type.

    The test block is every event of the three held-out motors; the
    training block is everything else.  Requires at least one motor per
    type and at least two of each so training always covers all types.
    """
    if len(motor_ids) != len(mech_types):
        raise ProtocolError("motor and mech label lists differ in length")
    motor_type: dict[str, str] = {}
    for m, t in zip(motor_ids, mech_types):
        if t not in MECH_LABELS:
            raise ProtocolError(f"mech type {t!r} is not one of {MECH_LABELS}")
        if m in motor_type and motor_type[m] != t:
            raise ProtocolError(f"motor {m!r} carries two mech types")
        motor_type[m] = t
    by_type: dict[str, list[str]] = {t: [] for t in MECH_LABELS}
    for m in sorted(motor_type):
        by_type[motor_type[m]].append(m)
    for t in MECH_LABELS:
        if not by_type[t]:
            raise ProtocolError(f"no motors of mech type {t!r}")
        if len(by_type[t]) < 2:
            raise ProtocolError(
                f"mech type {t!r} has a single motor; holdout training "
                "would never see that type"
            )
    ids = np.asarray(motor_ids)
    folds = []
    held = []
    for pump in by_type["pump"]:
        for comp in by_type["compressor"]:
            for fan in by_type["fan"]:
                test_mask = np.isin(ids, (pump, comp, fan))
                test = np.nonzero(test_mask)[0]
                train = np.nonzero(~test_mask)[0]
                folds.append((train, test))
                held.append((pump, comp, fan))
    return FoldPlan(tuple(folds), strategy="motor-holdout", seed=0, held_out=tuple(held))


def equalize_events(table: FeatureTable, per_motor: int = 8) -> FeatureTable:
    """Keep the first ``per_motor`` events of every motor.

    "First" means chronological when event times are known, otherwise row
    order.  A motor with fewer events is an error, named in the message.
    """
    if per_motor < 1:
        raise ProtocolError("per_motor must be at least 1")
    order: list[str] = []
    rows: dict[str, list[int]] = {}
    for r, m in enumerate(table.motor_ids):
        if m not in rows:
            rows[m] = []
            order.append(m)
        rows[m].append(r)
    keep: list[int] = []
    for m in order:
        idx = rows[m]
        if table.event_times is not None:
            idx = sorted(idx, key=lambda r: (table.event_times[r], r))
        if len(idx) < per_motor:
            raise ProtocolError(
                f"motor {m!r} has {len(idx)} events; equalisation needs {per_motor}"
            )
        keep.extend(idx[:per_motor])
    return table.subset(np.asarray(keep, dtype=int))


def _cv_score(x: np.ndarray, y: np.ndarray, plan: FoldPlan, kernel: str,
              cfg: ExperimentConfig, n_classes: int):
    """Macro-f1 and confusion per fold for one feature subset."""
    f1s: list[float] = []
    cms: list[ConfusionMatrix] = []
    class_range = tuple(range(n_classes))
    for train, test in plan.folds:
        bounds = fit_scaler(x[train])
        a = apply_scaler(bounds, x[train])
        b = apply_scaler(bounds, x[test])
        weights = balanced_weights(y[train]) if cfg.class_weighting == "balanced" else None
        model = svm_train(
            a, y[train], kernel, weights=weights,
            c=cfg.c, tol=cfg.tol, max_iter=cfg.max_iter,
        )
        pred = svm_predict(model, b)
        cm = confusion_matrix(y[test], pred, class_range)
        cms.append(cm)
        f1s.append(macro_f1(cm))
    return f1s, cms


def greedy_select(values: np.ndarray, labels: np.ndarray, plan: FoldPlan,
                  kernel: str, k_max: int, cfg: ExperimentConfig,
                  feature_names: tuple = FEATURE_NAMES) -> SelectionTrace:
    """Forward selection of up to ``k_max`` features.

    Every remaining feature is scored appended to the current set; the
    mean macro-f1 over the folds decides, ties resolve to the lowest
    feature index.  With ``cfg.jobs > 1`` candidates are scored in worker
    threads; the outcome is identical to the serial run.
    """
    values = np.asarray(values, dtype=float)
    labels = np.asarray(labels)
    n, d = values.shape
    if labels.shape != (n,):
        raise ProtocolError("labels must match the feature rows")
    if not np.issubdtype(labels.dtype, np.integer) or labels.min() < 0:
        raise ProtocolError("labels must be non-negative integer class codes")
    if not (1 <= k_max <= d):
        raise ProtocolError(f"k_max must lie in [1, {d}]")
    if len(feature_names) != d:
        raise ProtocolError("feature_names must match the feature width")
    n_classes = int(np.max(labels)) + 1
    selected: list[int] = []
    remaining = list(range(d))
    entries: list[TraceEntry] = []

    def score_candidate(c: int):
        cols = selected + [c]
        f1s, cms = _cv_score(values[:, cols], labels, plan, kernel, cfg, n_classes)
        return c, f1s, cms

    pool = ThreadPoolExecutor(max_workers=cfg.jobs) if cfg.jobs > 1 else None
    try:
        for r in range(1, k_max + 1):
            if pool is None:
                results = [score_candidate(c) for c in remaining]
            else:
                results = list(pool.map(score_candidate, remaining))
            best = None
            best_mean = -1.0
            for c, f1s, cms in results:
                mean = float(np.mean(f1s))
                if mean > best_mean:
                    best = (c, f1s, cms)
                    best_mean = mean
            c, f1s, cms = best
            entries.append(
                TraceEntry(
                    k=r,
                    feature_index=c,
                    feature_name=feature_names[c],
                    f1_mean=best_mean,
                    f1_std=float(np.std(f1s)),
                    fold_f1=tuple(float(v) for v in f1s),
                    n_candidates=len(remaining),
                    confusions=cms,
                )
            )
            selected.append(c)
            remaining.remove(c)
    finally:
        if pool is not None:
            pool.shutdown()
    return SelectionTrace(kernel=kernel, entries=entries)


def _encode_labels(names: list[str]) -> tuple[np.ndarray, tuple]:
    classes = tuple(sorted(set(names)))
    index = {c: i for i, c in enumerate(classes)}
    return np.asarray([index[n] for n in names], dtype=int), classes


def _scatter(table: FeatureTable, label_names: list[str],
             trace: SelectionTrace) -> ScatterData:
    first = trace.entries[0].feature_index
    second = trace.entries[1].feature_index if len(trace.entries) > 1 else first
    points = table.values[:, (first, second)].copy()
    return ScatterData(
        feature_x=FEATURE_NAMES[first],
        feature_y=FEATURE_NAMES[second],
        points=points,
        labels=list(label_names),
    )


def run_motor_experiment(table: FeatureTable,
                         cfg: ExperimentConfig = ExperimentConfig()) -> ExperimentReport:
    """Which motor switched on: stratified k-fold over all events."""
    if table.values.shape[1] != N_FEATURES:
        raise ProtocolError(f"corpus must carry {N_FEATURES} features")
    y, classes = _encode_labels(table.motor_ids)
    if len(classes) < 2:
        raise ProtocolError("motor protocol needs at least two motors")
    plan = stratified_kfold(y, cfg.n_folds, cfg.seed)
    traces = {}
    scatter = {}
    for kernel in cfg.kernels:
        trace = greedy_select(table.values, y, plan, kernel, cfg.k_max, cfg)
        traces[kernel] = trace
        scatter[kernel] = _scatter(table, table.motor_ids, trace)
    return ExperimentReport(
        protocol="motors",
        class_labels=classes,
        traces=traces,
        scatter=scatter,
        n_events=table.n_events,
        n_folds=plan.n_folds,
        fold_strategy=plan.strategy,
        seed=cfg.seed,
        config_digest=cfg.digest,
    )


def run_mech_experiment(table: FeatureTable,
                        cfg: ExperimentConfig = ExperimentConfig()) -> ExperimentReport:
    """What kind of load: leave one motor of each type out, all combos.

    Events with mech types outside pump/compressor/fan are dropped first;
    event counts are then equalised per motor so no motor dominates.
    """
    if table.values.shape[1] != N_FEATURES:
        raise ProtocolError(f"corpus must carry {N_FEATURES} features")
    usable = [r for r, t in enumerate(table.mech_types) if t in MECH_LABELS]
    if not usable:
        raise ProtocolError("no events with a usable mech type")
    table = table.subset(np.asarray(usable, dtype=int))
    table = equalize_events(table, cfg.per_motor)
    y, classes = _encode_labels(table.mech_types)
    if classes != MECH_LABELS:
        missing = set(MECH_LABELS) - set(classes)
        raise ProtocolError(f"mech protocol needs all three types; missing {sorted(missing)}")
    plan = motor_holdout_splits(table.motor_ids, table.mech_types)
    traces = {}
    scatter = {}
    for kernel in cfg.kernels:
        trace = greedy_select(table.values, y, plan, kernel, cfg.k_max, cfg)
        traces[kernel] = trace
        scatter[kernel] = _scatter(table, table.mech_types, trace)
    return ExperimentReport(
        protocol="mech",
        class_labels=classes,
        traces=traces,
        scatter=scatter,
        n_events=table.n_events,
        n_folds=plan.n_folds,
        fold_strategy=plan.strategy,
        seed=cfg.seed,
        config_digest=cfg.digest,
    )


def _fmt(x: float) -> str:
    return repr(float(x))


def render_report(report: ExperimentReport, out_dir) -> list[Path]:
    """Write the result tables and the full report; returns written paths.

    Files: ``results.csv`` (kernel, k, feature_added, f1_mean, f1_std),
    one ``winning_features_<kernel>.csv`` per kernel in the layout
    (number of features, additional winning feature, f1-score), one
    ``scatter_<kernel>.csv`` with the first two winning features of every
    event, one summed confusion matrix per kernel at its best k, and
    ``report.json`` with everything.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest_line = f"# config_digest={report.config_digest}\n"
    written: list[Path] = []

    path = out / "results.csv"
    with open(path, "w", encoding="ascii") as fh:
        fh.write(digest_line)
        fh.write("kernel,k,feature_added,f1_mean,f1_std\n")
        for kernel in report.traces:
            for e in report.traces[kernel].entries:
                fh.write(
                    f"{kernel},{e.k},{e.feature_name},{_fmt(e.f1_mean)},{_fmt(e.f1_std)}\n"
                )
    written.append(path)

    for kernel, trace in report.traces.items():
        path = out / f"winning_features_{kernel}.csv"
        with open(path, "w", encoding="ascii") as fh:
            fh.write(digest_line)
            fh.write("n_features,feature_added,f1\n")
            for e in trace.entries:
                fh.write(f"{e.k},{e.feature_name},{_fmt(e.f1_mean)}\n")
        written.append(path)

        sc = report.scatter[kernel]
        path = out / f"scatter_{kernel}.csv"
        with open(path, "w", encoding="ascii") as fh:
            fh.write(digest_line)
            fh.write(f"# x={sc.feature_x} y={sc.feature_y}\n")
            fh.write("label,x,y\n")
            for lab, (px, py) in zip(sc.labels, sc.points):
                fh.write(f"{lab},{_fmt(px)},{_fmt(py)}\n")
        written.append(path)

        best = trace.best_entry()
        total = np.zeros((len(report.class_labels), len(report.class_labels)), dtype=int)
        for cm in best.confusions:
            total += cm.counts
        path = out / f"confusion_{kernel}.csv"
        with open(path, "w", encoding="ascii") as fh:
            fh.write(digest_line)
            fh.write(f"# rows=true columns=predicted k={best.k}\n")
            fh.write("class," + ",".join(str(c) for c in report.class_labels) + "\n")
            for label, row in zip(report.class_labels, total):
                fh.write(f"{label}," + ",".join(str(v) for v in row) + "\n")
        written.append(path)

    path = out / "report.json"
    with open(path, "w", encoding="ascii") as fh:
        json.dump(report_to_dict(report), fh, indent=1, sort_keys=True)
        fh.write("\n")
    written.append(path)
    return written


def report_to_dict(report: ExperimentReport) -> dict:
    return {
        "protocol": report.protocol,
        "class_labels": list(report.class_labels),
        "n_events": report.n_events,
        "n_folds": report.n_folds,
        "fold_strategy": report.fold_strategy,
        "seed": report.seed,
        "config_digest": report.config_digest,
        "traces": {
            kernel: [
                {
                    "k": e.k,
                    "feature_index": e.feature_index,
                    "feature_name": e.feature_name,
                    "f1_mean": e.f1_mean,
                    "f1_std": e.f1_std,
                    "fold_f1": list(e.fold_f1),
                    "n_candidates": e.n_candidates,
                    "confusions": [cm.counts.tolist() for cm in e.confusions],
                }
                for e in trace.entries
            ]
            for kernel, trace in report.traces.items()
        },
        "scatter": {
            kernel: {
                "feature_x": sc.feature_x,
                "feature_y": sc.feature_y,
                "points": [[float(a), float(b)] for a, b in sc.points],
                "labels": list(sc.labels),
            }
            for kernel, sc in report.scatter.items()
        },
    }


def report_from_dict(data: dict) -> ExperimentReport:
    classes = tuple(data["class_labels"])
    traces = {}
    for kernel, entries in data["traces"].items():
        traces[kernel] = SelectionTrace(
            kernel=kernel,
            entries=[
                TraceEntry(
                    k=e["k"],
                    feature_index=e["feature_index"],
                    feature_name=e["feature_name"],
                    f1_mean=e["f1_mean"],
                    f1_std=e["f1_std"],
                    fold_f1=tuple(e["fold_f1"]),
                    n_candidates=e["n_candidates"],
                    confusions=[
                        ConfusionMatrix(np.asarray(c, dtype=int), classes)
                        for c in e["confusions"]
                    ],
                )
                for e in entries
            ],
        )
    scatter = {
        kernel: ScatterData(
            feature_x=sc["feature_x"],
            feature_y=sc["feature_y"],
            points=np.asarray(sc["points"], dtype=float),
            labels=list(sc["labels"]),
        )
        for kernel, sc in data["scatter"].items()
    }
    return ExperimentReport(
        protocol=data["protocol"],
        class_labels=classes,
        traces=traces,
        scatter=scatter,
        n_events=data["n_events"],
        n_folds=data["n_folds"],
        fold_strategy=data["fold_strategy"],
        seed=data["seed"],
        config_digest=data["config_digest"],
    )
