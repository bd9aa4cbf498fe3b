import numpy as np
import pytest

from inrush.experiments import (
    ExperimentConfig,
    ProtocolError,
    equalize_events,
    greedy_select,
    motor_holdout_splits,
    render_report,
    report_from_dict,
    report_to_dict,
    run_mech_experiment,
    run_motor_experiment,
    stratified_kfold,
)
from inrush.features import FeatureTable, N_FEATURES


def test_stratified_folds_cover_and_balance():
    labels = np.array([0] * 10 + [1] * 6 + [2] * 9)
    plan = stratified_kfold(labels, 4, seed=3)
    assert plan.n_folds == 4
    seen = np.concatenate([test for _, test in plan.folds])
    assert np.array_equal(np.sort(seen), np.arange(labels.size))
    for train, test in plan.folds:
        assert np.intersect1d(train, test).size == 0
        assert np.union1d(train, test).size == labels.size
        for c in (0, 1, 2):
            n_c = np.sum(labels == c)
            got = np.sum(labels[test] == c)
            assert abs(got - n_c / 4) < 1.0


def test_stratified_folds_deterministic_per_seed():
    labels = np.array([0, 1] * 12)
    a = stratified_kfold(labels, 3, seed=5)
    b = stratified_kfold(labels, 3, seed=5)
    for (tr1, te1), (tr2, te2) in zip(a.folds, b.folds):
        assert np.array_equal(tr1, tr2)
        assert np.array_equal(te1, te2)


def test_stratified_rejects_scarce_class():
    labels = np.array([0] * 10 + [1] * 3)
    with pytest.raises(ProtocolError, match="1"):
        stratified_kfold(labels, 4)


def make_typed_labels(counts=(6, 4, 5), per_motor=8):
    motors, types = [], []
    names = ("pump", "compressor", "fan")
    m = 0
    for t, c in zip(names, counts):
        for _ in range(c):
            m += 1
            motors += [f"T{m:02d}"] * per_motor
            types += [t] * per_motor
    return motors, types


def test_motor_holdout_is_full_product():
    motors, types = make_typed_labels()
    plan = motor_holdout_splits(motors, types)
    assert plan.n_folds == 6 * 4 * 5
    assert plan.strategy == "motor-holdout"
    assert len(set(plan.held_out)) == 120
    n = len(motors)
    for (train, test), held in zip(plan.folds, plan.held_out):
        assert test.size == 3 * 8
        assert train.size == n - 24
        held_set = set(held)
        assert {motors[i] for i in test} == held_set
        assert held_set.isdisjoint(motors[i] for i in train)


def test_motor_holdout_validation():
    with pytest.raises(ProtocolError, match="two mech types"):
        motor_holdout_splits(["a", "a"], ["pump", "fan"])
    with pytest.raises(ProtocolError, match="not one of"):
        motor_holdout_splits(["a"], ["other"])
    motors, types = make_typed_labels(counts=(1, 2, 2), per_motor=2)
    with pytest.raises(ProtocolError, match="single motor"):
        motor_holdout_splits(motors, types)


def table_of(values, motors, mechs, times=None):
    n = len(motors)
    full = np.zeros((n, N_FEATURES))
    values = np.asarray(values, dtype=float)
    full[:, : values.shape[1]] = values
    files = [f"{m}/ev{i:03d}.csv" for i, m in enumerate(motors)]
    return FeatureTable(full, motors, mechs, files, times)


def test_equalize_keeps_first_events_chronologically():
    motors = ["a"] * 3 + ["b"] * 4
    times = np.array([3.0, 1.0, 2.0, 0.0, 5.0, 4.0, 6.0])
    t = table_of(np.arange(7)[:, None], motors, ["pump"] * 7, times)
    out = equalize_events(t, per_motor=2)
    # earliest two of each motor, original motor order preserved
    assert [v[0] for v in out.values] == [1.0, 2.0, 3.0, 5.0]
    with pytest.raises(ProtocolError, match="'a'"):
        equalize_events(t, per_motor=4)


def test_equalize_uses_row_order_without_times():
    motors = ["a", "b", "a", "b", "a"]
    t = table_of(np.arange(5)[:, None], motors, ["pump"] * 5)
    out = equalize_events(t, per_motor=2)
    assert [v[0] for v in out.values] == [0.0, 2.0, 1.0, 3.0]


def separating_matrix(seed=0):
    """24 events, 10 features; feature 7 alone separates the classes,
    features 2 and 5 only separate jointly."""
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], 12)
    x = rng.uniform(0, 1, size=(24, 10))
    x[:, 7] = np.where(y == 0, 0.1, 0.9) + rng.uniform(-0.02, 0.02, 24)
    xor = np.array([0, 1] * 12)
    x[:, 2] = np.where(np.logical_xor(y, xor), 0.1, 0.9)
    x[:, 5] = np.where(xor, 0.1, 0.9)
    return x, y


def test_greedy_picks_the_separating_feature_first():
    x, y = separating_matrix()
    plan = stratified_kfold(y, 4, seed=0)
    cfg = ExperimentConfig(kernels=("linear",), k_max=3, n_folds=4)
    names = tuple(f"f{i}" for i in range(10))
    trace = greedy_select(x, y, plan, "linear", 3, cfg, feature_names=names)
    assert trace.entries[0].feature_index == 7
    assert trace.entries[0].f1_mean == 1.0
    # candidate pools shrink by one per round and winners never repeat
    assert [e.n_candidates for e in trace.entries] == [10, 9, 8]
    assert len(set(trace.selected_indices)) == 3
    for e in trace.entries:
        assert len(e.fold_f1) == 4
        assert len(e.confusions) == 4


def test_greedy_tie_breaks_to_lowest_index():
    x, y = separating_matrix()
    x[:, 4] = x[:, 7]  # identical twin of the winner at a lower index
    plan = stratified_kfold(y, 4, seed=0)
    cfg = ExperimentConfig(kernels=("linear",), k_max=1, n_folds=4)
    names = tuple(f"f{i}" for i in range(10))
    trace = greedy_select(x, y, plan, "linear", 1, cfg, feature_names=names)
    assert trace.entries[0].feature_index == 4


def test_greedy_completes_a_complementary_pair():
    # feature 5 is noisily informative on its own; feature 2 carries the
    # exact noise complement, so the pair is linearly separable together
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1], 12)
    x = rng.uniform(0, 1, size=(24, 10))
    noise = rng.uniform(-0.15, 0.15, 24)
    x[:, 5] = 0.4 + 0.2 * y + noise
    x[:, 2] = 0.55 + 0.05 * y - noise
    plan = stratified_kfold(y, 4, seed=0)
    cfg = ExperimentConfig(kernels=("linear",), k_max=2, n_folds=4)
    names = tuple(f"f{i}" for i in range(10))
    trace = greedy_select(x, y, plan, "linear", 2, cfg, feature_names=names)
    assert trace.selected_indices == (5, 2)
    assert trace.entries[0].f1_mean < 1.0
    assert trace.entries[1].f1_mean == 1.0


def test_greedy_threads_match_serial():
    x, y = separating_matrix(seed=2)
    plan = stratified_kfold(y, 4, seed=1)
    names = tuple(f"f{i}" for i in range(10))
    serial = greedy_select(x, y, plan, "linear", 4,
                           ExperimentConfig(kernels=("linear",), jobs=1, n_folds=4),
                           feature_names=names)
    threaded = greedy_select(x, y, plan, "linear", 4,
                             ExperimentConfig(kernels=("linear",), jobs=4, n_folds=4),
                             feature_names=names)
    assert serial.selected_indices == threaded.selected_indices
    for a, b in zip(serial.entries, threaded.entries):
        assert a.f1_mean == b.f1_mean
        assert a.fold_f1 == b.fold_f1


def test_greedy_rejects_bad_labels():
    x, y = separating_matrix()
    plan = stratified_kfold(y, 4, seed=0)
    cfg = ExperimentConfig(kernels=("linear",), n_folds=4)
    with pytest.raises(ProtocolError):
        greedy_select(x, y.astype(float), plan, "linear", 2, cfg)
    with pytest.raises(ProtocolError):
        greedy_select(x, y - 1, plan, "linear", 2, cfg)
    with pytest.raises(ProtocolError):
        greedy_select(x, y, plan, "linear", 99, cfg)


def test_motor_experiment_report_layout(twin_table):
    sub = twin_table.subset(np.arange(32))  # four motors, eight events each
    cfg = ExperimentConfig(kernels=("linear", "rbf"), k_max=2, n_folds=4, seed=0)
    report = run_motor_experiment(sub, cfg)
    assert report.protocol == "motors"
    assert report.n_events == 32
    assert report.n_folds == 4
    assert set(report.traces) == {"linear", "rbf"}
    for kernel in ("linear", "rbf"):
        entries = report.traces[kernel].entries
        assert [e.k for e in entries] == [1, 2]
        assert [e.n_candidates for e in entries] == [173, 172]
        sc = report.scatter[kernel]
        assert sc.points.shape == (32, 2)
        assert sc.feature_x == entries[0].feature_name


def test_mech_experiment_needs_all_types(twin_table):
    # the first four motors cover compressor, other and pump but no fan;
    # "other" events are dropped, so the fan class comes up missing
    sub = twin_table.subset(np.arange(32))
    cfg = ExperimentConfig(kernels=("linear",), k_max=1)
    with pytest.raises(ProtocolError, match="fan"):
        run_mech_experiment(sub, cfg)


def test_motor_experiment_needs_two_motors():
    t = FeatureTable(np.zeros((8, N_FEATURES)), ["m"] * 8, ["pump"] * 8,
                     [f"e{i}" for i in range(8)])
    with pytest.raises(ProtocolError, match="two motors"):
        run_motor_experiment(t, ExperimentConfig(kernels=("linear",), k_max=1))


def test_report_roundtrip_and_render(tmp_path, twin_table):
    sub = twin_table.subset(np.arange(32))
    cfg = ExperimentConfig(kernels=("linear",), k_max=2, n_folds=4, seed=0,
                           digest="feedfacefeedface")
    report = run_motor_experiment(sub, cfg)
    back = report_from_dict(report_to_dict(report))
    assert report_to_dict(back) == report_to_dict(report)
    files = render_report(report, tmp_path)
    names = {p.name for p in files}
    assert names == {
        "results.csv",
        "winning_features_linear.csv",
        "scatter_linear.csv",
        "confusion_linear.csv",
        "report.json",
    }
    for p in files:
        if p.suffix == ".csv":
            assert p.read_text().splitlines()[0] == "# config_digest=feedfacefeedface"
    rows = (tmp_path / "results.csv").read_text().splitlines()
    assert rows[1] == "kernel,k,feature_added,f1_mean,f1_std"
    assert len(rows) == 2 + 2  # digest, header, one row per k per kernel
    # re-rendering from the serialised report reproduces every byte
    out2 = tmp_path / "again"
    render_report(back, out2)
    for p in files:
        assert (out2 / p.name).read_bytes() == p.read_bytes()
