"""Min-max scaling, class weighting, one-vs-one SVMs and macro-f1.

The binary subproblems are solved by libsvm through scikit-learn, which is
the standard tooling for this kind of classifier; everything around it is
explicit here so the behaviour is pinned: the kernel-scale default is
1/n_features, voting breaks ties toward the lowest class index, and models
serialise to a versioned text format holding the support vectors, pair
coefficients and biases, from which predictions can be reproduced without
the fitted estimator object.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.svm import SVC

KERNELS = ("linear", "poly3", "rbf")

DEFAULT_C = 1.0
DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITER = 100_000

_MODEL_FORMAT_VERSION = 1


class TrainingError(ValueError):
    """Raised for unusable training input (single class, bad shapes)."""


@dataclass
class ScalerBounds:
    """Per-feature minima and maxima captured from a training block."""

    min_values: np.ndarray
    max_values: np.ndarray

    def __post_init__(self) -> None:
        self.min_values = np.asarray(self.min_values, dtype=float)
        self.max_values = np.asarray(self.max_values, dtype=float)
        if self.min_values.shape != self.max_values.shape or self.min_values.ndim != 1:
            raise ValueError("bounds must be 1-D arrays of equal length")
        if np.any(self.max_values < self.min_values):
            raise ValueError("max bound below min bound")


def fit_scaler(rows: np.ndarray) -> ScalerBounds:
    rows = _as_matrix(rows)
    if rows.shape[0] < 1:
        raise ValueError("cannot fit a scaler on zero rows")
    return ScalerBounds(rows.min(axis=0), rows.max(axis=0))


def apply_scaler(bounds: ScalerBounds, rows: np.ndarray) -> np.ndarray:
    """Map features onto [0, 1] by the stored bounds.

    Values outside the bounds are clipped; a feature that was constant in
    the fitting block maps to 0.5 so it stays uninformative rather than
    exploding.
    """
    rows = _as_matrix(rows)
    if rows.shape[1] != bounds.min_values.size:
        raise ValueError("row width does not match scaler bounds")
    span = bounds.max_values - bounds.min_values
    degenerate = span == 0
    safe_span = np.where(degenerate, 1.0, span)
    scaled = (rows - bounds.min_values) / safe_span
    scaled = np.clip(scaled, 0.0, 1.0)
    scaled[:, degenerate] = 0.5
    return scaled


def _as_matrix(rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2:
        raise ValueError("rows must be a 2-D array")
    return rows


def balanced_weights(labels: np.ndarray) -> dict:
    """Inverse-frequency class weights: N / (n_classes * count_c)."""
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    n = labels.size
    k = classes.size
    return {c: n / (k * cnt) for c, cnt in zip(classes.tolist(), counts.tolist())}


@dataclass
class PairClassifier:
    """One binary subproblem of a one-vs-one model.

    ``decision(x) > 0`` votes for ``class_a``.  Support vectors are stored
    in scaled feature space; ``coefficients`` are the signed dual weights.
    """

    class_a: int
    class_b: int
    support_vectors: np.ndarray
    coefficients: np.ndarray
    bias: float


@dataclass
class SvmModel:
    """One-vs-one support-vector classifier over integer class labels."""

    kernel: str
    c: float
    gamma: float
    degree: int
    coef0: float
    classes: tuple[int, ...]
    class_weights: dict
    n_features: int
    pairs: list[PairClassifier] = field(default_factory=list)
    _svc: SVC | None = field(default=None, repr=False, compare=False)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def pair_index(self) -> list[tuple[int, int]]:
        """(i, j) class-index pairs in decision-column order."""
        k = self.n_classes
        return [(i, j) for i in range(k) for j in range(i + 1, k)]


def _kernel_params(kernel: str) -> tuple[str, int]:
    if kernel == "linear":
        return "linear", 3
    if kernel == "poly3":
        return "poly", 3
    if kernel == "rbf":
        return "rbf", 3
    raise ValueError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")


def svm_train(rows: np.ndarray, labels: np.ndarray, kernel: str = "linear",
              weights: dict | None = None, c: float = DEFAULT_C,
              gamma: float | None = None, tol: float = DEFAULT_TOL,
              max_iter: int = DEFAULT_MAX_ITER) -> SvmModel:
    """Fit a one-vs-one SVM.

    ``gamma`` defaults to 1 / n_features.  ``weights`` scale the penalty C
    per class; omitted classes default to 1.  Training is deterministic
    for fixed inputs; hitting ``max_iter`` raises a warning but returns
    the truncated model.
    """
    rows = _as_matrix(rows)
    labels = np.asarray(labels)
    if labels.shape != (rows.shape[0],):
        raise TrainingError("labels must match row count")
    classes = np.unique(labels)
    if classes.size < 2:
        raise TrainingError("training needs at least two classes")
    if gamma is None:
        gamma = 1.0 / rows.shape[1]
    sk_kernel, degree = _kernel_params(kernel)
    class_weight = None if weights is None else dict(weights)
    svc = SVC(
        C=c,
        kernel=sk_kernel,
        degree=degree,
        gamma=gamma,
        coef0=0.0,
        tol=tol,
        max_iter=max_iter,
        class_weight=class_weight,
        decision_function_shape="ovo",
        cache_size=64,
    )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        svc.fit(rows, labels)
    for w in caught:
        if issubclass(w.category, ConvergenceWarning):
            warnings.warn(
                f"svm_train: solver hit max_iter={max_iter} before tol={tol}",
                ConvergenceWarning,
                stacklevel=2,
            )
    model = SvmModel(
        kernel=kernel,
        c=float(c),
        gamma=float(gamma),
        degree=degree,
        coef0=0.0,
        classes=tuple(int(x) for x in svc.classes_),
        class_weights={} if weights is None else dict(weights),
        n_features=int(rows.shape[1]),
        _svc=svc,
    )
    return model


def extract_pairs(model: SvmModel) -> list[PairClassifier]:
    """Unpack the fitted estimator into explicit binary classifiers.

    For the pair (i, j) the relevant dual weights live in rows j-1 and i
    of the stacked coefficient matrix, restricted to the support vectors
    of classes i and j respectively.
    """
    svc = model._svc
    if svc is None:
        raise ValueError("model carries no fitted estimator to unpack")
    sv = svc.support_vectors_
    n_sv = svc.n_support_
    starts = np.concatenate([[0], np.cumsum(n_sv)])
    pairs: list[PairClassifier] = []
    for col, (i, j) in enumerate(model.pair_index):
        slice_i = slice(starts[i], starts[i + 1])
        slice_j = slice(starts[j], starts[j + 1])
        vectors = np.vstack([sv[slice_i], sv[slice_j]])
        coefs = np.concatenate([svc.dual_coef_[j - 1, slice_i], svc.dual_coef_[i, slice_j]])
        pairs.append(
            PairClassifier(
                class_a=model.classes[i],
                class_b=model.classes[j],
                support_vectors=vectors,
                coefficients=coefs,
                bias=float(svc.intercept_[col]),
            )
        )
    return pairs


def _kernel_matrix(model: SvmModel, x: np.ndarray, sv: np.ndarray) -> np.ndarray:
    if model.kernel == "linear":
        return x @ sv.T
    if model.kernel == "poly3":
        return (model.gamma * (x @ sv.T) + model.coef0) ** model.degree
    if model.kernel == "rbf":
        xx = np.sum(x * x, axis=1)[:, None]
        ss = np.sum(sv * sv, axis=1)[None, :]
        d2 = np.maximum(xx + ss - 2.0 * (x @ sv.T), 0.0)
        return np.exp(-model.gamma * d2)
    raise ValueError(f"unknown kernel {model.kernel!r}")


def pairwise_scores(model: SvmModel, rows: np.ndarray) -> np.ndarray:
    """Decision values, one column per class pair in ``pair_index`` order.

    Positive means the first class of the pair.  Uses the fitted estimator
    when present, otherwise recomputes from the stored pairs.
    """
    rows = _as_matrix(rows)
    if rows.shape[1] != model.n_features:
        raise ValueError("row width does not match the trained model")
    if model._svc is not None:
        scores = model._svc.decision_function(rows)
        if scores.ndim == 1:
            # Two-class estimators flip the sign so that positive means the
            # second class; undo that to keep one convention everywhere.
            scores = -scores[:, None]
        return scores
    if not model.pairs:
        raise ValueError("model has neither an estimator nor stored pairs")
    cols = []
    for p in model.pairs:
        k = _kernel_matrix(model, rows, p.support_vectors)
        cols.append(k @ p.coefficients + p.bias)
    return np.column_stack(cols)


def vote_predict(model: SvmModel, scores: np.ndarray) -> np.ndarray:
    """Majority vote over pair decisions; ties go to the lowest class index."""
    n = scores.shape[0]
    votes = np.zeros((n, model.n_classes), dtype=int)
    for col, (i, j) in enumerate(model.pair_index):
        win_a = scores[:, col] > 0
        votes[win_a, i] += 1
        votes[~win_a, j] += 1
    classes = np.asarray(model.classes)
    return classes[np.argmax(votes, axis=1)]


def svm_predict(model: SvmModel, rows: np.ndarray) -> np.ndarray:
    return vote_predict(model, pairwise_scores(model, rows))


@dataclass
class ConfusionMatrix:
    """Row = true class, column = predicted class, in ``labels`` order."""

    counts: np.ndarray
    labels: tuple[int, ...]

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=int)
        k = len(self.labels)
        if self.counts.shape != (k, k):
            raise ValueError("counts must be square and match labels")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def n_total(self) -> int:
        return int(self.counts.sum())


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray,
                     labels: tuple[int, ...]) -> ConfusionMatrix:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError("prediction length mismatch")
    index = {c: i for i, c in enumerate(labels)}
    k = len(labels)
    counts = np.zeros((k, k), dtype=int)
    for t, p in zip(y_true.tolist(), y_pred.tolist()):
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(counts, tuple(labels))


def macro_f1(cm: ConfusionMatrix) -> float:
    """Unweighted mean of per-class f1.

    Precision and recall are taken as 0 when their denominator is 0, and
    a class's f1 is 0 when precision + recall is 0, so absent classes drag
    the average down instead of being skipped.
    """
    counts = cm.counts.astype(float)
    tp = np.diag(counts)
    pred_totals = counts.sum(axis=0)
    true_totals = counts.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred_totals > 0, tp / pred_totals, 0.0)
        recall = np.where(true_totals > 0, tp / true_totals, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    return float(f1.mean())


def save_model(model: SvmModel, path) -> None:
    """Write a model as versioned text; floats use ``repr`` for exactness."""
    pairs = model.pairs if model.pairs else extract_pairs(model)
    lines = [
        f"format_version={_MODEL_FORMAT_VERSION}",
        f"kernel={model.kernel}",
        f"c={float(model.c)!r}",
        f"gamma={float(model.gamma)!r}",
        f"degree={model.degree}",
        f"coef0={float(model.coef0)!r}",
        f"n_features={model.n_features}",
        "classes=" + ",".join(str(c) for c in model.classes),
        "class_weights=" + ",".join(
            f"{c}:{float(w)!r}" for c, w in sorted(model.class_weights.items())
        ),
        f"n_pairs={len(pairs)}",
    ]
    for p in pairs:
        lines.append(f"pair={p.class_a},{p.class_b}")
        lines.append(f"bias={float(p.bias)!r}")
        lines.append(f"n_support={p.support_vectors.shape[0]}")
        for coef, vec in zip(p.coefficients, p.support_vectors):
            lines.append(repr(float(coef)) + ";" + ",".join(repr(float(v)) for v in vec))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> SvmModel:
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    fields: dict[str, str] = {}
    pos = 0
    while pos < len(lines) and not lines[pos].startswith("pair="):
        key, _, value = lines[pos].partition("=")
        fields[key] = value
        pos += 1
    version = int(fields.get("format_version", "-1"))
    if version != _MODEL_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model format version {version}")
    classes = tuple(int(x) for x in fields["classes"].split(",") if x != "")
    weights = {}
    if fields.get("class_weights"):
        for item in fields["class_weights"].split(","):
            cls, _, w = item.partition(":")
            weights[int(cls)] = float(w)
    model = SvmModel(
        kernel=fields["kernel"],
        c=float(fields["c"]),
        gamma=float(fields["gamma"]),
        degree=int(fields["degree"]),
        coef0=float(fields["coef0"]),
        classes=classes,
        class_weights=weights,
        n_features=int(fields["n_features"]),
    )
    n_pairs = int(fields["n_pairs"])
    for _ in range(n_pairs):
        if not lines[pos].startswith("pair="):
            raise ValueError(f"{path}: malformed pair block")
        a, b = (int(x) for x in lines[pos][5:].split(","))
        bias = float(lines[pos + 1].partition("=")[2])
        n_support = int(lines[pos + 2].partition("=")[2])
        pos += 3
        coefs = np.empty(n_support)
        vectors = np.empty((n_support, model.n_features))
        for r in range(n_support):
            coef_part, _, vec_part = lines[pos + r].partition(";")
            coefs[r] = float(coef_part)
            vectors[r] = [float(v) for v in vec_part.split(",")]
        pos += n_support
        model.pairs.append(PairClassifier(a, b, vectors, coefs, bias))
    if len(model.pairs) != model.n_classes * (model.n_classes - 1) // 2:
        raise ValueError(f"{path}: pair count does not match class count")
    return model
