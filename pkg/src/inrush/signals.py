"""Waveform containers, text record parsing and mains-period geometry.

A record is a pair of synchronously sampled channels, current and voltage,
taken at a rate high enough to resolve at least the 20th mains harmonic.
Everything downstream (event detection, period slicing, feature extraction)
works in seconds and converts to sample indices as late as possible, so the
zero-crossing positions carry sub-sample resolution from the start.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_SAMPLE_RATE = 10_000.0
DEFAULT_MAINS_FREQ = 50.0

#: Relative deviation from the nominal mains period above which a slice is
#: flagged as irregular rather than rejected.
IRREGULAR_PERIOD_TOL = 0.2


class WaveformError(ValueError):
    """Raised for malformed record files or degenerate channel data."""


@dataclass(frozen=True)
class IngestConfig:
    """Defaults applied when a record file omits header metadata."""

    sample_rate: float = DEFAULT_SAMPLE_RATE
    mains_freq: float = DEFAULT_MAINS_FREQ


@dataclass
class Waveform:
    """Synchronously sampled current and voltage.

    ``samples_voltage`` is always populated; when the source record carried
    no voltage column a placeholder zero channel is stored and
    ``voltage_missing`` is set, so power-based quantities degrade to zero
    instead of crashing.
    """

    samples_current: np.ndarray
    samples_voltage: np.ndarray
    sample_rate: float
    mains_freq: float
    voltage_missing: bool = False

    def __post_init__(self) -> None:
        self.samples_current = np.asarray(self.samples_current, dtype=float)
        self.samples_voltage = np.asarray(self.samples_voltage, dtype=float)
        if self.samples_current.ndim != 1 or self.samples_voltage.ndim != 1:
            raise WaveformError("channels must be one-dimensional")
        n = self.samples_current.size
        if n < 2:
            raise WaveformError("record needs at least two samples")
        if self.samples_voltage.size != n:
            raise WaveformError(
                f"channel length mismatch: {n} current vs "
                f"{self.samples_voltage.size} voltage samples"
            )
        if not (self.mains_freq > 0):
            raise WaveformError("mains_freq must be positive")
        # Nyquist for the 20th harmonic; below that the harmonic features
        # are meaningless.
        if self.sample_rate <= 2 * 20 * self.mains_freq:
            raise WaveformError(
                f"sample_rate {self.sample_rate} too low to resolve the "
                f"20th harmonic of {self.mains_freq} Hz mains"
            )

    @property
    def n_samples(self) -> int:
        return int(self.samples_current.size)

    @property
    def duration(self) -> float:
        """Record length in seconds (time of the last sample)."""
        return (self.n_samples - 1) / self.sample_rate

    @property
    def period_seconds(self) -> float:
        return 1.0 / self.mains_freq

    @property
    def samples_per_period(self) -> float:
        return self.sample_rate / self.mains_freq

    def channel(self, name: str) -> np.ndarray:
        if name == "current":
            return self.samples_current
        if name == "voltage":
            return self.samples_voltage
        raise ValueError(f"unknown channel {name!r}")


@dataclass(frozen=True)
class PeriodSlice:
    """Half-open sample window [start_index, end_index) of one mains period.

    Times are the exact (interpolated) zero-crossing instants; indices are
    the samples contained in the window.  ``irregular`` marks slices whose
    duration deviates from the nominal mains period by more than
    ``IRREGULAR_PERIOD_TOL``.
    """

    start_index: int
    end_index: int
    start_time: float
    end_time: float
    irregular: bool

    @property
    def duration(self) -> float:
        return self.end_time - self.start_time


def parse_waveform(path, config: IngestConfig = IngestConfig()) -> Waveform:
    """Read a text record: '#' key=value headers, then one or two columns.

    Column one is current in amperes, optional column two is voltage in
    volts.  Recognised headers are ``sample_rate`` and ``mains_freq``;
    missing ones fall back to ``config``.  Raises :class:`WaveformError`
    on malformed numbers, ragged rows or an empty body.
    """
    headers, rows = _read_tabular(path)
    sample_rate = float(headers.get("sample_rate", config.sample_rate))
    mains_freq = float(headers.get("mains_freq", config.mains_freq))
    if not rows:
        raise WaveformError(f"{path}: no samples")
    width = len(rows[0])
    if width not in (1, 2):
        raise WaveformError(f"{path}: expected 1 or 2 columns, got {width}")
    if any(len(r) != width for r in rows):
        raise WaveformError(f"{path}: ragged rows")
    data = np.asarray(rows, dtype=float)
    current = data[:, 0]
    if width == 2:
        voltage = data[:, 1]
        missing = False
    else:
        voltage = np.zeros_like(current)
        missing = True
    if not np.all(np.isfinite(data)):
        raise WaveformError(f"{path}: non-finite sample values")
    return Waveform(current, voltage, sample_rate, mains_freq, voltage_missing=missing)


def write_waveform(w: Waveform, path) -> None:
    """Write a record in the format :func:`parse_waveform` reads.

    Floats are written with ``repr`` so a read back is bitwise identical.
    """
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# sample_rate={_fmt(w.sample_rate)}\n")
        fh.write(f"# mains_freq={_fmt(w.mains_freq)}\n")
        if w.voltage_missing:
            for c in w.samples_current:
                fh.write(f"{_fmt(c)}\n")
        else:
            for c, v in zip(w.samples_current, w.samples_voltage):
                fh.write(f"{_fmt(c)},{_fmt(v)}\n")


def _fmt(x: float) -> str:
    return repr(float(x))


def _read_tabular(path) -> tuple[dict[str, str], list[list[str]]]:
    """Shared reader for '#' headers plus comma/whitespace separated rows."""
    headers: dict[str, str] = {}
    rows: list[list[str]] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, value = body.partition("=")
                    headers[key.strip()] = value.strip()
                continue
            parts = [p for p in line.replace(",", " ").split() if p]
            try:
                [float(p) for p in parts]
            except ValueError as exc:
                raise WaveformError(f"{path}:{lineno}: bad number: {line!r}") from exc
            rows.append(parts)
    return headers, rows


def _rising_positions(x: np.ndarray) -> np.ndarray:
    """Fractional sample positions of negative-to-positive sign changes.

    A crossing exists between samples k and k+1 when ``x[k] <= 0`` and
    ``x[k+1] > 0``; its position is refined by linear interpolation to
    ``k + x[k] / (x[k] - x[k+1])``.  A sample exactly on zero followed by a
    positive sample therefore yields a crossing at the sample itself.
    """
    a = x[:-1]
    b = x[1:]
    k = np.nonzero((a <= 0) & (b > 0))[0]
    if k.size == 0:
        return np.empty(0, dtype=float)
    ak = a[k]
    return k + ak / (ak - b[k])


def zero_crossing_times(w: Waveform, channel: str = "current",
                        direction: str = "rising") -> np.ndarray:
    """Zero-crossing instants in seconds, sorted ascending.

    ``direction`` selects rising (negative-to-positive), falling, or both.
    Falling crossings are the rising crossings of the negated channel,
    which keeps the interpolated positions bit-identical under sign flips
    of the input.
    """
    x = w.channel(channel)
    if direction == "rising":
        pos = _rising_positions(x)
    elif direction == "falling":
        pos = _rising_positions(-x)
    elif direction == "both":
        pos = np.sort(np.concatenate([_rising_positions(x), _rising_positions(-x)]))
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return pos / w.sample_rate


def positive_zero_crossings(w: Waveform, channel: str = "current") -> np.ndarray:
    """Times of negative-to-positive zero crossings of the chosen channel."""
    return zero_crossing_times(w, channel, direction="rising")


def slice_periods(w: Waveform, crossings: np.ndarray) -> list[PeriodSlice]:
    """Build one :class:`PeriodSlice` per consecutive pair of crossings.

    Slices are contiguous: each slice ends exactly where the next begins.
    ``crossings`` must be strictly increasing times within the record.
    """
    crossings = np.asarray(crossings, dtype=float)
    if crossings.ndim != 1:
        raise ValueError("crossings must be a 1-D array of times")
    if crossings.size >= 2 and not np.all(np.diff(crossings) > 0):
        raise ValueError("crossings must be strictly increasing")
    nominal = w.period_seconds
    out: list[PeriodSlice] = []
    for t0, t1 in zip(crossings[:-1], crossings[1:]):
        i0 = _ceil_index(t0, w.sample_rate)
        i1 = _ceil_index(t1, w.sample_rate)
        dur = t1 - t0
        irregular = abs(dur - nominal) / nominal > IRREGULAR_PERIOD_TOL
        out.append(PeriodSlice(i0, i1, float(t0), float(t1), irregular))
    return out


def _ceil_index(t: float, fs: float) -> int:
    # The snap tolerance keeps a crossing that lands on a sample up to
    # float rounding from being pushed to the next index.
    return int(math.ceil(t * fs - 1e-9))


def resample_slice(w: Waveform, s: PeriodSlice, n: int,
                   channel: str = "current") -> np.ndarray:
    """Linearly resample one slice onto ``n`` evenly spaced points.

    Point j sits at ``start_time + duration * j / n``; the end crossing
    itself is excluded so consecutive slices never share a point.  Values
    come from linear interpolation between the enclosing raw samples.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if s.end_time <= s.start_time:
        raise ValueError("slice has non-positive duration")
    fs = w.sample_rate
    x = w.channel(channel)
    t = s.start_time + (s.end_time - s.start_time) * np.arange(n) / n
    k0 = max(0, _ceil_index(s.start_time, fs) - 1)
    k1 = min(x.size, _ceil_index(s.end_time, fs) + 2)
    if k1 - k0 < 2:
        raise ValueError("slice lies outside the sampled record")
    grid = np.arange(k0, k1) / fs
    if t[-1] > grid[-1] + 1e-12:
        raise ValueError("slice extends past the end of the record")
    return np.interp(t, grid, x[k0:k1])
