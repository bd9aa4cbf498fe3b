"""Fixed 173-value feature catalogue for a segmented turn-on event.

Feature names encode what they measure and which period they come from;
period labels run p2..p6 because the first period after switching is
discarded before extraction.  The catalogue, in vector order:

====================  =====  ==================================================
block                 count  names
====================  =====  ==================================================
decay rates            4     lambda_max, lambda_min, lambda_abs, lambda_power
peak slopes            4     slope_max, slope_min, slope_abs, slope_power
period peaks          10     peak_max_p2..p6, peak_min_p2..p6
relative peaks        10     rpeak_max_p2..p6, rpeak_min_p2..p6
period energies       10     energy_p2..p6, renergy_p2..p6
energy sums           10     esum_p2..p6, resum_p2..p6
harmonic magnitudes  100     h01_p2..h20_p2, 's, h01_p6..h20_p6
distortion             5     thd_p2..thd_p6
extrema flags         10     extrema_p2_h1, extrema_p2_h2, .., extrema_p6_h2
inflection flags      10     inflect_p2_h1, .., inflect_p6_h2
====================  =====  ==================================================

Relative peaks divide by the period-3 maximum, relative energies by the
period-6 energy, harmonic magnitudes by the fundamental of their own period.
When a divisor is zero the whole relative block is set to zero and a quality
flag is recorded instead of raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from inrush.transients import N_RESAMPLE, N_RETAINED, PERIOD_LABEL_OFFSET, TurnOnEvent

_HALF = N_RESAMPLE // 2
_N_HARMONICS = 20

PEAK_VARIANTS = ("max", "min", "abs", "power")


def _build_names() -> tuple[str, ...]:
    periods = [f"p{k + PERIOD_LABEL_OFFSET}" for k in range(N_RETAINED)]
    names: list[str] = []
    names += [f"lambda_{v}" for v in PEAK_VARIANTS]
    names += [f"slope_{v}" for v in PEAK_VARIANTS]
    names += [f"peak_max_{p}" for p in periods]
    names += [f"peak_min_{p}" for p in periods]
    names += [f"rpeak_max_{p}" for p in periods]
    names += [f"rpeak_min_{p}" for p in periods]
    names += [f"energy_{p}" for p in periods]
    names += [f"renergy_{p}" for p in periods]
    names += [f"esum_{p}" for p in periods]
    names += [f"resum_{p}" for p in periods]
    for p in periods:
        names += [f"h{n:02d}_{p}" for n in range(1, _N_HARMONICS + 1)]
    names += [f"thd_{p}" for p in periods]
    names += [f"extrema_{p}_h{h}" for p in periods for h in (1, 2)]
    names += [f"inflect_{p}_h{h}" for p in periods for h in (1, 2)]
    return tuple(names)


FEATURE_NAMES: tuple[str, ...] = _build_names()
N_FEATURES = len(FEATURE_NAMES)
FEATURE_INDEX: dict[str, int] = {n: i for i, n in enumerate(FEATURE_NAMES)}

assert N_FEATURES == 173


@dataclass(frozen=True)
class FeatureConfig:
    """Knobs for the shape-flag detectors.

    ``extrema_prominence_frac`` and ``inflect_band_frac`` are fractions of
    the period's peak amplitude; ``smooth_width`` is the odd moving-average
    length applied to the second difference before inflection counting.
    """

    extrema_prominence_frac: float = 0.01
    smooth_width: int = 5
    inflect_band_frac: float = 0.1

    def __post_init__(self) -> None:
        if not (0 < self.extrema_prominence_frac < 1):
            raise ValueError("extrema_prominence_frac must lie in (0, 1)")
        if not (0 < self.inflect_band_frac < 1):
            raise ValueError("inflect_band_frac must lie in (0, 1)")
        if self.smooth_width < 3 or self.smooth_width % 2 == 0:
            raise ValueError("smooth_width must be an odd integer >= 3")


@dataclass(frozen=True)
class PeakSeries:
    """Per-period (or per-half-period) peak track of one event.

    ``times`` are seconds after the onset anchor, strictly increasing.
    """

    times: np.ndarray
    values: np.ndarray
    variant: str

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if t.shape != v.shape or t.ndim != 1:
            raise ValueError("times and values must be 1-D arrays of equal length")
        if t.size >= 2 and not np.all(np.diff(t) > 0):
            raise ValueError("peak times must be strictly increasing")


@dataclass
class FeatureVector:
    values: np.ndarray
    names: tuple[str, ...] = FEATURE_NAMES
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.names),):
            raise ValueError("values length must match names")

    def __getitem__(self, name: str) -> float:
        return float(self.values[FEATURE_INDEX[name]])


def extract_peaks(e: TurnOnEvent, variant: str) -> PeakSeries:
    """Peak track of one event.

    ``max`` and ``min`` give one signed extremum per period; ``abs`` the
    largest rectified current per half period; ``power`` the largest
    instantaneous power per half period.
    """
    st = e.sample_times()
    if variant == "max":
        idx = np.argmax(e.periods, axis=1)
        rows = np.arange(N_RETAINED)
        return PeakSeries(st[rows, idx], e.periods[rows, idx], variant)
    if variant == "min":
        idx = np.argmin(e.periods, axis=1)
        rows = np.arange(N_RETAINED)
        return PeakSeries(st[rows, idx], e.periods[rows, idx], variant)
    if variant == "abs":
        return _half_period_peaks(np.abs(e.periods), st, variant)
    if variant == "power":
        return _half_period_peaks(e.power_periods, st, variant)
    raise ValueError(f"unknown peak variant {variant!r}")


def _half_period_peaks(x: np.ndarray, st: np.ndarray, variant: str) -> PeakSeries:
    halves = x.reshape(N_RETAINED * 2, _HALF)
    times = st.reshape(N_RETAINED * 2, _HALF)
    idx = np.argmax(halves, axis=1)
    rows = np.arange(N_RETAINED * 2)
    return PeakSeries(times[rows, idx], halves[rows, idx], variant)


#: Search bracket for decay rates; a motor transient visible across the
#: retained 100 ms window falls well inside it.
_DECAY_LO = 0.5
_DECAY_HI = 5000.0

#: Minimum curvature of the error surface around the fitted rate, relative
#: to the constant-fit error.  Below this the rate is unconstrained by the
#: data (typically a fit that only explains the first peak) and its exact
#: value would be decided by rounding noise.
_FLATNESS_TOL = 1e-8


def fit_exponential(series: PeakSeries) -> float:
    """Decay rate of ``a * exp(-lambda t) + c`` least-squares fitted to peaks.

    Returns 0.0 for tracks that do not settle toward an asymptote or whose
    rate the data cannot pin down: constants, tracks whose best rate sits at
    the search bracket edge, tracks that end further from the fitted offset
    than they started, and fits whose error surface is flat around the
    minimum.  The amplitude and offset are eliminated in closed form at each
    candidate rate; the rate itself is found by a coarse log-spaced scan
    followed by bisection on the objective's derivative.  Together with the
    flatness gate this keeps the result reproducible to well below 1e-9
    under last-digit input perturbations.
    """
    t = np.asarray(series.times, dtype=float)
    y = np.asarray(series.values, dtype=float)
    if t.size < 4:
        raise ValueError("need at least four peaks to fit a decay")
    if not np.all(np.isfinite(y)):
        return 0.0
    if y.max() == y.min():
        return 0.0
    tau = t - t[0]
    lam = _minimise_decay(tau, y, _DECAY_LO, _DECAY_HI)
    if lam == 0.0:
        return 0.0
    a, c, sse = _decay_ls(tau, y, lam)
    if not (np.isfinite(a) and np.isfinite(c) and np.isfinite(sse)):
        return 0.0
    centred = y - y.mean()
    sse_const = float(centred @ centred)
    if sse >= sse_const * (1.0 - 1e-9):
        return 0.0
    if abs(y[-1] - c) >= abs(y[0] - c):
        return 0.0
    up = _decay_ls(tau, y, min(lam * 1.4, _DECAY_HI))[2]
    down = _decay_ls(tau, y, max(lam / 1.4, _DECAY_LO))[2]
    if (up - sse) + (down - sse) < 2.0 * _FLATNESS_TOL * sse_const:
        return 0.0
    return float(lam)


def _decay_ls(tau: np.ndarray, y: np.ndarray, lam: float) -> tuple[float, float, float]:
    """Closed-form least squares of a*exp(-lam*tau)+c; returns (a, c, sse)."""
    e = np.exp(-lam * tau)
    n = y.size
    s_e = e.sum()
    den = n * (e @ e) - s_e * s_e
    if den <= 1e-300:
        c = y.mean()
        r = y - c
        return 0.0, float(c), float(r @ r)
    a = (n * (e @ y) - s_e * y.sum()) / den
    c = (y.sum() - a * s_e) / n
    r = y - a * e - c
    return float(a), float(c), float(r @ r)


def _decay_grad(tau: np.ndarray, y: np.ndarray, lam: float) -> float:
    """d(sse)/d(lam) at the per-lambda optimal amplitude and offset."""
    a, c, _ = _decay_ls(tau, y, lam)
    e = np.exp(-lam * tau)
    r = y - a * e - c
    return float(2.0 * a * (r @ (tau * e)))


def _minimise_decay(tau: np.ndarray, y: np.ndarray, lo: float, hi: float) -> float:
    """Coarse log scan plus derivative bisection; 0.0 flags a bracket-edge
    minimum, which means the data carry no resolvable decay."""
    grid = np.exp(np.linspace(math.log(lo), math.log(hi), 160))
    sse = np.array([_decay_ls(tau, y, g)[2] for g in grid])
    i = int(np.argmin(sse))
    if i == 0 or i == len(grid) - 1:
        return 0.0
    a = float(grid[i - 1])
    b = float(grid[i + 1])
    ga = _decay_grad(tau, y, a)
    gb = _decay_grad(tau, y, b)
    if not (ga < 0 < gb):
        return float(grid[i])
    for _ in range(90):
        m = math.sqrt(a * b)
        if _decay_grad(tau, y, m) < 0:
            a = m
        else:
            b = m
    return math.sqrt(a * b)


def fit_linear(series: PeakSeries) -> float:
    """Ordinary least-squares slope of the peak track over time."""
    t = np.asarray(series.times, dtype=float)
    y = np.asarray(series.values, dtype=float)
    if t.size < 2:
        raise ValueError("need at least two peaks to fit a slope")
    return float(np.polyfit(t, y, 1)[0])


def decay_features(e: TurnOnEvent) -> tuple[np.ndarray, list[str]]:
    """Four decay rates and four slopes, one pair per peak variant."""
    lams = []
    slopes = []
    flags: list[str] = []
    for variant in PEAK_VARIANTS:
        series = extract_peaks(e, variant)
        lam = fit_exponential(series)
        if lam == 0.0:
            flags.append(f"decay_degenerate_{variant}")
        lams.append(lam)
        slopes.append(fit_linear(series))
    return np.asarray(lams + slopes), flags


def peak_features(e: TurnOnEvent) -> tuple[np.ndarray, list[str]]:
    """Signed per-period extrema and the same relative to the period-3 max."""
    maxima = e.periods.max(axis=1)
    minima = e.periods.min(axis=1)
    divisor = maxima[1]
    flags: list[str] = []
    if divisor == 0:
        flags.append("period3_peak_zero")
        rel_max = np.zeros(N_RETAINED)
        rel_min = np.zeros(N_RETAINED)
    else:
        rel_max = maxima / divisor
        rel_min = minima / divisor
    return np.concatenate([maxima, minima, rel_max, rel_min]), flags


def energy_features(e: TurnOnEvent) -> tuple[np.ndarray, list[str]]:
    """Trapezoidal per-period energies, cumulative sums, and both relative
    to the period-6 energy."""
    h = e.period_seconds / N_RESAMPLE
    energies = np.trapezoid(e.power_periods, dx=h, axis=1)
    sums = np.cumsum(energies)
    e6 = energies[-1]
    flags: list[str] = []
    if e6 == 0:
        flags.append("period6_energy_zero")
        rel = np.zeros(N_RETAINED)
        rel_sums = np.zeros(N_RETAINED)
    else:
        rel = energies / e6
        rel_sums = sums / e6
    return np.concatenate([energies, rel, sums, rel_sums]), flags


def harmonic_features(e: TurnOnEvent) -> tuple[np.ndarray, list[str]]:
    """Per-period harmonic magnitudes 1..20 relative to the fundamental,
    plus one distortion ratio per period.

    The fundamental of each period is therefore exactly 1 whenever it is
    nonzero; a zero fundamental zeroes that period's block and records a
    quality flag.
    """
    mags_rel = np.zeros((N_RETAINED, _N_HARMONICS))
    thd = np.zeros(N_RETAINED)
    flags: list[str] = []
    for k in range(N_RETAINED):
        spectrum = np.fft.rfft(e.periods[k])
        mags = np.abs(spectrum[1 : _N_HARMONICS + 1])
        fund = mags[0]
        if fund == 0:
            flags.append(f"fundamental_zero_p{k + PERIOD_LABEL_OFFSET}")
            continue
        mags_rel[k] = mags / fund
        thd[k] = mags[1:].sum() / fund
    return np.concatenate([mags_rel.ravel(), thd]), flags


def shape_flags(e: TurnOnEvent, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Binary half-period flags: several prominent extrema, and inflection
    points away from the zero crossings."""
    extrema = np.zeros((N_RETAINED, 2))
    inflect = np.zeros((N_RETAINED, 2))
    for k in range(N_RETAINED):
        row = e.periods[k]
        amp = float(np.max(np.abs(row)))
        if amp == 0:
            continue
        for h in range(2):
            half = row[h * _HALF : (h + 1) * _HALF]
            extrema[k, h] = float(_count_extrema(half, cfg, amp) > 1)
            inflect[k, h] = float(_has_inflection(half, cfg, amp))
    return np.concatenate([extrema.ravel(), inflect.ravel()])


def _count_extrema(half: np.ndarray, cfg: FeatureConfig, amp: float) -> int:
    prominence = cfg.extrema_prominence_frac * amp
    n_up = len(find_peaks(half, prominence=prominence)[0])
    n_down = len(find_peaks(-half, prominence=prominence)[0])
    return n_up + n_down


def _has_inflection(half: np.ndarray, cfg: FeatureConfig, amp: float) -> bool:
    d2 = np.diff(half, n=2)
    w = cfg.smooth_width
    if d2.size <= w:
        return False
    kernel = np.full(w, 1.0 / w)
    smooth = np.convolve(d2, kernel, mode="valid")
    # smooth[m] covers half[m .. m+w+1]; its centre sample in `half`.
    centre0 = (w + 1) // 2 + 1
    sign_change = smooth[:-1] * smooth[1:] < 0
    if not np.any(sign_change):
        return False
    centres = np.nonzero(sign_change)[0] + centre0
    band = cfg.inflect_band_frac * amp
    return bool(np.any(np.abs(half[centres]) >= band))


def extract_all(e: TurnOnEvent, cfg: FeatureConfig = FeatureConfig()) -> FeatureVector:
    """Full 173-value feature vector of one event."""
    decay, f1 = decay_features(e)
    peaks, f2 = peak_features(e)
    energies, f3 = energy_features(e)
    harmonics, f4 = harmonic_features(e)
    shapes = shape_flags(e, cfg)
    values = np.concatenate([decay, peaks, energies, harmonics, shapes])
    if values.shape != (N_FEATURES,):
        raise AssertionError(f"feature vector has {values.shape[0]} values")
    if not np.all(np.isfinite(values)):
        bad = [FEATURE_NAMES[i] for i in np.nonzero(~np.isfinite(values))[0]]
        raise ValueError(f"non-finite features: {bad}")
    return FeatureVector(values, FEATURE_NAMES, tuple(f1 + f2 + f3 + f4))


@dataclass
class FeatureTable:
    """Feature vectors of a corpus plus per-event labels.

    ``event_times`` is kept in memory for chronological ordering but is not
    part of the on-disk table; tables written to disk keep rows in
    chronological order per motor instead.
    """

    values: np.ndarray
    motor_ids: list[str]
    mech_types: list[str]
    event_files: list[str]
    event_times: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        n = self.values.shape[0]
        if self.values.ndim != 2 or self.values.shape[1] != N_FEATURES:
            raise ValueError(f"values must be (n, {N_FEATURES})")
        if not (len(self.motor_ids) == len(self.mech_types) == len(self.event_files) == n):
            raise ValueError("label lists must match row count")
        if self.event_times is not None:
            self.event_times = np.asarray(self.event_times, dtype=float)
            if self.event_times.shape != (n,):
                raise ValueError("event_times must match row count")

    @property
    def n_events(self) -> int:
        return int(self.values.shape[0])

    def subset(self, idx: np.ndarray) -> "FeatureTable":
        idx = np.asarray(idx)
        return FeatureTable(
            self.values[idx],
            [self.motor_ids[i] for i in idx],
            [self.mech_types[i] for i in idx],
            [self.event_files[i] for i in idx],
            None if self.event_times is None else self.event_times[idx],
        )


_LABEL_COLUMNS = ("motor_id", "mech_type", "event_file")


def write_feature_table(table: FeatureTable, path, digest: str | None = None) -> None:
    """Write the feature table as comma-separated text.

    Header row: the 173 feature names, then motor_id, mech_type,
    event_file.  Floats use ``repr`` so reading back is bitwise exact.
    """
    cells: list[list[str]] = []
    for r in range(table.n_events):
        labels = (table.motor_ids[r], table.mech_types[r], table.event_files[r])
        for cell in labels:
            if "," in cell or "\n" in cell:
                raise ValueError(f"label {cell!r} must not contain commas or newlines")
        cells.append([repr(float(v)) for v in table.values[r]] + list(labels))
    with open(path, "w", encoding="ascii") as fh:
        if digest is not None:
            fh.write(f"# config_digest={digest}\n")
        fh.write(",".join(FEATURE_NAMES + _LABEL_COLUMNS) + "\n")
        for row in cells:
            fh.write(",".join(row) + "\n")


def read_feature_table(path) -> FeatureTable:
    """Read a table written by :func:`write_feature_table`."""
    header: list[str] | None = None
    values: list[list[float]] = []
    motor_ids: list[str] = []
    mech_types: list[str] = []
    event_files: list[str] = []
    expected = list(FEATURE_NAMES + _LABEL_COLUMNS)
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if header is None:
                header = parts
                if header != expected:
                    raise ValueError(f"{path}: unexpected feature table header")
                continue
            if len(parts) != len(expected):
                raise ValueError(f"{path}:{lineno}: expected {len(expected)} columns")
            values.append([float(x) for x in parts[:N_FEATURES]])
            motor_ids.append(parts[N_FEATURES])
            mech_types.append(parts[N_FEATURES + 1])
            event_files.append(parts[N_FEATURES + 2])
    if header is None:
        raise ValueError(f"{path}: empty feature table")
    arr = np.asarray(values, dtype=float) if values else np.empty((0, N_FEATURES))
    return FeatureTable(arr, motor_ids, mech_types, event_files)
