"""Turn-on event detection, normalisation and period segmentation.

A switching event is located by a rectified-current threshold with a quiet
guard window, the record is normalised so the steady-state current peaks at
one ampere, and the stretch after the onset is cut into mains periods at the
zero crossings of the current.  The first, usually partial, period is
discarded; the following five are resampled onto a fixed grid of 200 points
each.  When the retained current starts with a negative peak, current and
voltage are negated together, which canonicalises polarity while leaving the
instantaneous power untouched.

Period indices carry an offset of two in all user-facing names: retained row
0 is the second period after switching, row 4 the sixth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from inrush.signals import (
    PeriodSlice,
    Waveform,
    WaveformError,
    _ceil_index,
    _read_tabular,
    resample_slice,
    slice_periods,
    zero_crossing_times,
)

#: Points per resampled period.
N_RESAMPLE = 200
#: Retained periods per event (the first period after the onset is dropped).
N_RETAINED = 5
#: Label offset: retained row k is period ``k + PERIOD_LABEL_OFFSET``.
PERIOD_LABEL_OFFSET = 2

_BOUNDARIES_NEEDED = 2 * (N_RETAINED + 1) + 1


@dataclass(frozen=True)
class DetectionConfig:
    """Thresholds for onset detection and steady-state measurement.

    ``on_threshold`` is relative to the steady-state amplitude,
    ``quiet_samples`` is the guard window that must be free of threshold
    crossings before an onset, ``steady_tail_periods`` sizes the trailing
    window used as the one-ampere reference, and events closer than
    ``min_separation_periods`` to an accepted onset are suppressed.
    """

    on_threshold: float = 0.1
    quiet_samples: int = 2000
    steady_tail_periods: int = 25
    min_separation_periods: float = 7.0

    def __post_init__(self) -> None:
        if not (0 < self.on_threshold < 1):
            raise ValueError("on_threshold must lie in (0, 1)")
        if self.quiet_samples < 1:
            raise ValueError("quiet_samples must be positive")
        if self.steady_tail_periods < 5:
            raise ValueError("steady_tail_periods must be at least 5")
        if self.min_separation_periods <= 0:
            raise ValueError("min_separation_periods must be positive")


@dataclass
class TurnOnEvent:
    """Normalised, segmented turn-on transient.

    ``periods`` holds the resampled current (amperes, steady peak ~1) as a
    ``(N_RETAINED, N_RESAMPLE)`` array, ``voltage_periods`` the voltage on
    the same grid.  ``power_periods`` is always the elementwise product of
    the two and is recomputed on construction.
    """

    periods: np.ndarray
    voltage_periods: np.ndarray
    event_time: float
    scale_factor: float
    polarity_flipped: bool
    mains_freq: float
    motor_id: str = ""
    mech_type: str = ""
    power_periods: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.periods = np.asarray(self.periods, dtype=float)
        self.voltage_periods = np.asarray(self.voltage_periods, dtype=float)
        expected = (N_RETAINED, N_RESAMPLE)
        if self.periods.shape != expected or self.voltage_periods.shape != expected:
            raise ValueError(f"period matrices must have shape {expected}")
        if not (np.all(np.isfinite(self.periods))
                and np.all(np.isfinite(self.voltage_periods))):
            raise ValueError("period matrices must be finite")
        if not (self.mains_freq > 0):
            raise ValueError("mains_freq must be positive")
        if not (self.scale_factor > 0):
            raise ValueError("scale_factor must be positive")
        self.power_periods = self.periods * self.voltage_periods

    @property
    def period_seconds(self) -> float:
        return 1.0 / self.mains_freq

    def sample_times(self) -> np.ndarray:
        """Times of the resampled grid relative to the onset anchor.

        Row k spans periods ``k+1``..``k+2`` after the anchor because the
        first period was discarded.
        """
        base = (np.arange(N_RETAINED) + 1.0)[:, None]
        frac = np.arange(N_RESAMPLE)[None, :] / N_RESAMPLE
        return (base + frac) * self.period_seconds


def detect_turn_on(w: Waveform, cfg: DetectionConfig = DetectionConfig()) -> np.ndarray:
    """Times of switching onsets, in seconds, sorted ascending.

    An onset is the first sample whose rectified current exceeds
    ``on_threshold`` times the steady-state amplitude after at least
    ``quiet_samples`` samples below it.  Returns an empty array when the
    record never switches.
    """
    n = w.n_samples
    min_len = cfg.quiet_samples + 6 * w.samples_per_period
    if n <= min_len:
        raise WaveformError(
            f"record of {n} samples is too short for detection "
            f"(needs more than {min_len:.0f})"
        )
    i = w.samples_current
    amp = _tail_amplitude(i, w, cfg.steady_tail_periods)
    if amp <= 0:
        amp = float(np.max(np.abs(i)))
        if amp <= 0:
            return np.empty(0, dtype=float)
    thr = cfg.on_threshold * amp
    exceed = np.abs(i) > thr
    counts = np.concatenate([[0], np.cumsum(exceed)])
    k = np.nonzero(exceed)[0]
    k = k[k >= cfg.quiet_samples]
    quiet = counts[k] - counts[k - cfg.quiet_samples] == 0
    candidates = k[quiet]
    min_gap = cfg.min_separation_periods * w.period_seconds
    times: list[float] = []
    for idx in candidates:
        t = idx / w.sample_rate
        if not times or t - times[-1] >= min_gap * (1 - 1e-12):
            times.append(t)
    return np.asarray(times, dtype=float)


def _tail_amplitude(i: np.ndarray, w: Waveform, periods: int,
                    end_index: int | None = None) -> float:
    """Mean per-period peak of |i| over the trailing window."""
    nominal = int(round(w.samples_per_period))
    end = i.size if end_index is None else end_index
    m = min(periods, end // nominal)
    if m < 1:
        return 0.0
    tail = np.abs(i[end - m * nominal:end]).reshape(m, nominal)
    return float(np.mean(tail.max(axis=1)))


def steady_scale_factor(w: Waveform, event_time: float,
                        cfg: DetectionConfig = DetectionConfig(),
                        window_end: float | None = None) -> float:
    """Reciprocal of the steady-state current amplitude after the onset.

    The amplitude is the mean per-period peak of |i| over the last
    ``steady_tail_periods`` full periods before ``window_end`` (record end
    by default).  Multiplying the current by the returned factor brings its
    steady peaks to one ampere.  The window must clear the transient, i.e.
    start at least ``min_separation_periods`` periods after the onset.
    """
    n = w.n_samples
    end = n if window_end is None else min(n, _ceil_index(window_end, w.sample_rate))
    nominal = int(round(w.samples_per_period))
    total = cfg.steady_tail_periods * nominal
    start = end - total
    guard = event_time + cfg.min_separation_periods * w.period_seconds
    if start < 0 or start / w.sample_rate < guard - 1e-9:
        raise WaveformError(
            "steady window too short: fewer than "
            f"{cfg.steady_tail_periods} periods after the transient"
        )
    amp = _tail_amplitude(w.samples_current, w, cfg.steady_tail_periods, end_index=end)
    if amp <= 0:
        raise WaveformError("steady amplitude is zero; cannot normalise")
    return 1.0 / amp


def event_period_slices(w: Waveform, event_time: float,
                        window_end: float | None = None) -> list[PeriodSlice]:
    """Period windows for one event, anchored at the first zero crossing
    of either direction at or after ``event_time``.

    Boundaries are every other crossing, so each slice spans one full
    mains period regardless of whether the current enters through a rising
    or a falling crossing.  This keeps the windows identical when the raw
    channels are negated.  Returns ``N_RETAINED + 1`` slices; the caller
    drops the first.
    """
    horizon = event_time + (N_RETAINED + 4) * w.period_seconds
    if window_end is not None:
        horizon = min(horizon, window_end)
    crossings = zero_crossing_times(w, "current", direction="both")
    sel = crossings[(crossings >= event_time - 1e-12) & (crossings <= horizon)]
    kept = _dejitter(sel, 0.15 * w.period_seconds)
    if kept.size < _BOUNDARIES_NEEDED:
        raise WaveformError(
            "event truncated: fewer than "
            f"{N_RETAINED + 1} full periods after the onset"
        )
    boundaries = kept[:_BOUNDARIES_NEEDED:2]
    return slice_periods(w, boundaries)


def _dejitter(times: np.ndarray, min_gap: float) -> np.ndarray:
    """Drop crossings closer than ``min_gap`` to the previously kept one.

    Noise near a zero produces clusters of spurious crossings; keeping the
    first of each cluster preserves the half-period alternation.
    """
    if times.size == 0:
        return times
    kept = [times[0]]
    for t in times[1:]:
        if t - kept[-1] >= min_gap:
            kept.append(t)
    return np.asarray(kept)


def preprocess_event(w: Waveform, event_time: float,
                     cfg: DetectionConfig = DetectionConfig(),
                     window_end: float | None = None) -> TurnOnEvent:
    """Normalise, segment and canonicalise one turn-on event.

    Steps: scale the current so steady peaks sit at one ampere, slice six
    periods starting at the onset anchor, discard the first, resample the
    rest onto 200 points per period, and if the first retained peak is
    negative flip current and voltage together.
    """
    if not (0 <= event_time < w.duration):
        raise ValueError("event_time outside the record")
    scale = steady_scale_factor(w, event_time, cfg, window_end)
    slices = event_period_slices(w, event_time, window_end)
    cur = np.empty((N_RETAINED, N_RESAMPLE))
    vol = np.empty((N_RETAINED, N_RESAMPLE))
    for row, s in enumerate(slices[1:]):
        cur[row] = resample_slice(w, s, N_RESAMPLE, channel="current") * scale
        vol[row] = resample_slice(w, s, N_RESAMPLE, channel="voltage")
    first_half = cur[0, : N_RESAMPLE // 2]
    first_peak = first_half[int(np.argmax(np.abs(first_half)))]
    flipped = first_peak <= 0
    if flipped:
        cur = -cur
        vol = -vol
    return TurnOnEvent(
        periods=cur,
        voltage_periods=vol,
        event_time=float(event_time),
        scale_factor=scale,
        polarity_flipped=bool(flipped),
        mains_freq=w.mains_freq,
    )


def process_record(w: Waveform, cfg: DetectionConfig = DetectionConfig()) -> list[TurnOnEvent]:
    """Detect every onset in a record and preprocess each one.

    The steady window of an event ends where the next event begins, so
    stacked motors do not contaminate each other's normalisation.
    """
    times = detect_turn_on(w, cfg)
    events = []
    for j, t in enumerate(times):
        window_end = float(times[j + 1]) if j + 1 < len(times) else None
        events.append(preprocess_event(w, t, cfg, window_end))
    return events


def write_event(e: TurnOnEvent, path, digest: str | None = None) -> None:
    """Store an event as text: metadata headers, then current,voltage rows.

    Floats use ``repr`` so :func:`read_event` round-trips bitwise.
    """
    flag = "true" if e.polarity_flipped else "false"
    with open(path, "w", encoding="ascii") as fh:
        if digest is not None:
            fh.write(f"# config_digest={digest}\n")
        fh.write(f"# mains_freq={float(e.mains_freq)!r}\n")
        fh.write(f"# points_per_period={N_RESAMPLE}\n")
        fh.write(f"# event_time={float(e.event_time)!r}\n")
        fh.write(f"# motor_id={e.motor_id}\n")
        fh.write(f"# mech_type={e.mech_type}\n")
        fh.write(f"# polarity_flipped={flag}\n")
        fh.write(f"# scale_factor={float(e.scale_factor)!r}\n")
        for c, v in zip(e.periods.ravel(), e.voltage_periods.ravel()):
            fh.write(f"{float(c)!r},{float(v)!r}\n")


def read_event(path) -> TurnOnEvent:
    """Read an event stored by :func:`write_event`."""
    headers, rows = _read_tabular(path)
    try:
        mains_freq = float(headers["mains_freq"])
        event_time = float(headers["event_time"])
        scale = float(headers["scale_factor"])
        flag = headers["polarity_flipped"].lower()
    except KeyError as exc:
        raise WaveformError(f"{path}: missing event header {exc}") from exc
    if flag not in ("true", "false"):
        raise WaveformError(f"{path}: bad polarity_flipped value {flag!r}")
    ppp = int(headers.get("points_per_period", N_RESAMPLE))
    if ppp != N_RESAMPLE:
        raise WaveformError(f"{path}: unsupported points_per_period {ppp}")
    if len(rows) != N_RETAINED * N_RESAMPLE or any(len(r) != 2 for r in rows):
        raise WaveformError(
            f"{path}: expected {N_RETAINED * N_RESAMPLE} current,voltage rows"
        )
    data = np.asarray(rows, dtype=float)
    shape = (N_RETAINED, N_RESAMPLE)
    return TurnOnEvent(
        periods=data[:, 0].reshape(shape),
        voltage_periods=data[:, 1].reshape(shape),
        event_time=event_time,
        scale_factor=scale,
        polarity_flipped=flag == "true",
        mains_freq=mains_freq,
        motor_id=headers.get("motor_id", ""),
        mech_type=headers.get("mech_type", ""),
    )
