"""Synthetic turn-on corpora with known ground truth, plus slow oracles.

An archetype describes one motor: steady amplitude, inrush envelope, decay
rate, harmonic content of the steady waveform, and noise level.  Events are
generated by switching the motor onto an ideal grid at a phase-locked
instant, so the current is in phase with the voltage and the transferred
energy is positive.  The switch phase varies per event, which spreads the
envelope sampling and the residual flux offset the way switching angle does
on real motors.

The oracle functions at the bottom recompute quantities of the production
pipeline by deliberately different, slower routes; tests compare the two.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from inrush.signals import Waveform
from inrush.transients import DetectionConfig, TurnOnEvent, detect_turn_on, preprocess_event

TWO_PI = 2.0 * math.pi

MECH_TYPES = ("pump", "compressor", "fan", "other")

#: Cap on the envelope remaining at the sixth period; keeps the last
#: retained period within ~10 percent of the steady amplitude.
_PERIOD6_ENVELOPE_CAP = 0.06
_PERIOD6_TIME = 0.105


@dataclass(frozen=True)
class MotorArchetype:
    """Generative description of one fixed-speed motor."""

    motor_id: str
    mech_type: str
    steady_amplitude: float
    envelope_scale: float
    decay_rate: float
    harmonics: dict[int, tuple[float, float]] = field(default_factory=dict)
    noise_level: float = 0.02
    dc_scale: float = 0.3
    dc_rate: float = 50.0
    mains_freq: float = 50.0
    n_events: int = 8

    def __post_init__(self) -> None:
        if self.mech_type not in MECH_TYPES:
            raise ValueError(f"mech_type must be one of {MECH_TYPES}")
        if self.steady_amplitude <= 0:
            raise ValueError("steady_amplitude must be positive")
        if self.envelope_scale < 0 or self.decay_rate < 0:
            raise ValueError("envelope must be non-negative")
        if self.noise_level < 0:
            raise ValueError("noise_level must be non-negative")
        for n, (mag, _) in self.harmonics.items():
            if n < 2:
                raise ValueError("harmonics start at order 2; the fundamental is implicit")
            if mag < 0:
                raise ValueError("harmonic magnitudes must be non-negative")

    def profile(self, n_max: int = 20) -> np.ndarray:
        """Harmonic magnitudes 2..n_max as a vector (for distance checks)."""
        return np.array([self.harmonics.get(n, (0.0, 0.0))[0] for n in range(2, n_max + 1)])


@dataclass(frozen=True)
class GroundTruth:
    switch_time: float
    switch_phase: float
    archetype: MotorArchetype


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def generate_event(arch: MotorArchetype, switch_phase: float | None = None,
                   duration: float = 1.6, sample_rate: float = 10_000.0,
                   seed=0, switch_time: float | None = None,
                   grid_phase: float = 0.0,
                   voltage_amplitude: float = 325.0) -> tuple[Waveform, GroundTruth]:
    """One record containing a single turn-on.

    The switch instant is the first time at or after ``switch_time``
    (default 45 percent of the record) where the grid phase equals
    ``switch_phase``, so the motor current starts in phase with the
    voltage.  Noise is added only while current flows.
    """
    rng = _as_rng(seed)
    if switch_phase is None:
        switch_phase = float(rng.uniform(0.0, TWO_PI))
    omega = TWO_PI * arch.mains_freq
    period = 1.0 / arch.mains_freq
    earliest = 0.45 * duration if switch_time is None else switch_time
    base = ((switch_phase - grid_phase) % TWO_PI) / omega
    k = math.ceil((earliest - base) / period - 1e-12)
    t0 = base + max(k, 0) * period
    if t0 + 8 * period >= duration:
        raise ValueError("record too short for the requested switch time")

    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    u = voltage_amplitude * np.sin(omega * t + grid_phase)

    i = np.zeros(n)
    on = t >= t0 - 1e-12
    tau = t[on] - t0
    theta = omega * tau + switch_phase
    wave = np.sin(theta)
    for order, (mag, phase) in sorted(arch.harmonics.items()):
        wave = wave + mag * np.sin(order * theta + phase)
    envelope = 1.0 + arch.envelope_scale * np.exp(-arch.decay_rate * tau)
    flux_offset = -arch.dc_scale * math.cos(switch_phase) * np.exp(-arch.dc_rate * tau)
    signal = arch.steady_amplitude * (envelope * wave + flux_offset)
    if arch.noise_level > 0:
        signal = signal + rng.normal(0.0, arch.noise_level * arch.steady_amplitude, tau.size)
    i[on] = signal

    w = Waveform(i, u, sample_rate, arch.mains_freq)
    return w, GroundTruth(float(t0), float(switch_phase), arch)


def generate_corpus(roster: list[MotorArchetype], events_per_motor: int | None = 8,
                    seed: int = 0, duration: float = 1.6,
                    sample_rate: float = 10_000.0,
                    cfg: DetectionConfig = DetectionConfig()) -> list[TurnOnEvent]:
    """Generate, detect and preprocess every event of a roster.

    Events are ordered motor-major and carry a virtual per-motor timeline
    (record offset per event index) so chronological ordering is
    meaningful.  Each record must contain exactly one detectable onset;
    anything else is a roster bug and raises.
    """
    events: list[TurnOnEvent] = []
    for mi, arch in enumerate(roster):
        count = arch.n_events if events_per_motor is None else events_per_motor
        for ei in range(count):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(mi, ei)))
            switch_phase = float(rng.uniform(0.0, TWO_PI))
            w, _ = generate_event(
                arch, switch_phase=switch_phase, duration=duration,
                sample_rate=sample_rate, seed=rng,
            )
            times = detect_turn_on(w, cfg)
            if len(times) != 1:
                raise RuntimeError(
                    f"{arch.motor_id} event {ei}: expected one onset, found {len(times)}"
                )
            ev = preprocess_event(w, float(times[0]), cfg)
            ev.motor_id = arch.motor_id
            ev.mech_type = arch.mech_type
            ev.event_time = float(times[0]) + ei * duration
            events.append(ev)
    return events


def _cap_envelope(env: float, decay: float) -> float:
    return min(env, _PERIOD6_ENVELOPE_CAP * math.exp(_PERIOD6_TIME * decay))


def _draw_archetype(motor_id: str, mech_type: str, rng: np.random.Generator,
                    noise_level: float) -> MotorArchetype:
    decay = float(rng.uniform(40.0, 110.0))
    env = _cap_envelope(float(rng.uniform(1.5, 6.0)), decay)
    harmonics: dict[int, tuple[float, float]] = {}
    for order, hi in ((2, 0.04), (3, 0.25), (5, 0.12), (7, 0.06), (9, 0.03)):
        mag = float(rng.uniform(0.0, hi))
        if mag > 0.003:
            harmonics[order] = (mag, float(rng.uniform(0.0, TWO_PI)))
    return MotorArchetype(
        motor_id=motor_id,
        mech_type=mech_type,
        steady_amplitude=float(rng.uniform(0.8, 12.0)),
        envelope_scale=env,
        decay_rate=decay,
        harmonics=harmonics,
        noise_level=noise_level,
        dc_scale=float(rng.uniform(0.1, 0.4)),
        dc_rate=float(rng.uniform(30.0, 80.0)),
    )


#: Mechanical types of the 18-motor reference roster, in motor order.
_REFERENCE_TYPES = (
    "compressor", "other", "other", "pump", "compressor", "fan",
    "pump", "pump", "other", "fan", "pump", "compressor",
    "fan", "pump", "compressor", "fan", "fan", "pump",
)

#: Event counts of the reference roster (376 in total).
_REFERENCE_COUNTS = (14, 12, 21, 12, 8, 9, 27, 8, 10, 28, 15, 38, 39, 47, 46, 14, 18, 10)


def default_roster(seed: int = 0, noise_level: float = 0.02) -> list[MotorArchetype]:
    """Eighteen motors with randomly drawn, unconstrained parameters."""
    roster = []
    for mi, mech in enumerate(_REFERENCE_TYPES):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(mi,)))
        roster.append(_draw_archetype(f"M{mi + 1:02d}", mech, rng, noise_level))
    return roster


def reference_roster(seed: int = 0, noise_level: float = 0.02) -> list[MotorArchetype]:
    """The reference roster with its per-motor event counts attached."""
    roster = default_roster(seed=seed, noise_level=noise_level)
    return [replace(a, n_events=c) for a, c in zip(roster, _REFERENCE_COUNTS)]


def discriminable_roster(n_motors: int = 18, min_distance: float = 0.05,
                         noise_level: float = 0.02, seed: int = 0) -> list[MotorArchetype]:
    """Motors with structured harmonic signatures a classifier can untangle
    only gradually.

    Motors come in twin pairs.  Each pair shares a group signature (a bump
    pair on two low harmonics plus common envelope, decay and amplitude),
    so a handful of features separates the groups; the two twins of a pair
    differ only by one extra bump on a dedicated high harmonic, so telling
    them apart needs one feature each.  The pairwise distance between
    harmonic profiles is asserted to be at least ``min_distance``, far
    above the per-bin noise floor of the extractor.
    """
    if n_motors > len(_REFERENCE_TYPES):
        raise ValueError(f"at most {len(_REFERENCE_TYPES)} motors supported")
    group_axes = list(itertools.combinations((3, 4, 5, 6, 7, 8, 9, 11), 2))
    twin_axes = (12, 13, 14, 15, 16, 17, 18, 19, 20)
    roster = []
    n_groups = (n_motors + 1) // 2
    for g in range(n_groups):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1000 + g,)))
        a, b = group_axes[g % len(group_axes)]
        decay = float(rng.uniform(50.0, 100.0))
        env = _cap_envelope(float(rng.uniform(2.0, 5.0)), decay)
        amplitude = float(rng.uniform(0.8, 12.0))
        dc_scale = float(rng.uniform(0.1, 0.4))
        dc_rate = float(rng.uniform(30.0, 80.0))
        base: dict[int, tuple[float, float]] = {
            2: (0.02, float(rng.uniform(0, TWO_PI))),
            a: (0.16 + float(rng.uniform(-0.015, 0.015)), float(rng.uniform(0, TWO_PI))),
            b: (0.10 + float(rng.uniform(-0.015, 0.015)), float(rng.uniform(0, TWO_PI))),
        }
        twin_phase = float(rng.uniform(0, TWO_PI))
        for half in range(2):
            mi = 2 * g + half
            if mi >= n_motors:
                break
            harmonics = dict(base)
            if half == 1:
                harmonics[twin_axes[g % len(twin_axes)]] = (0.055, twin_phase)
            roster.append(
                MotorArchetype(
                    motor_id=f"M{mi + 1:02d}",
                    mech_type=_REFERENCE_TYPES[mi],
                    steady_amplitude=amplitude,
                    envelope_scale=env,
                    decay_rate=decay,
                    harmonics=harmonics,
                    noise_level=noise_level,
                    dc_scale=dc_scale,
                    dc_rate=dc_rate,
                )
            )
    _check_distances(roster, min_distance)
    return roster


def _check_distances(roster: list[MotorArchetype], min_distance: float) -> None:
    profiles = np.array([a.profile() for a in roster])
    for i in range(len(roster)):
        for j in range(i + 1, len(roster)):
            d = float(np.linalg.norm(profiles[i] - profiles[j]))
            if d < min_distance:
                raise RuntimeError(
                    f"profiles of {roster[i].motor_id} and {roster[j].motor_id} "
                    f"are only {d:.4f} apart (need {min_distance})"
                )


_TYPE_COUNTS = {"pump": 6, "compressor": 4, "fan": 5}


def typed_roster(keyed: bool = True, seed: int = 0,
                 noise_level: float = 0.02) -> list[MotorArchetype]:
    """Fifteen motors over three mechanical types (6 pumps, 4 compressors,
    5 fans).

    With ``keyed=True`` the signal parameters are drawn from per-type
    distributions, so mechanical type is recoverable from the waveform.
    With ``keyed=False`` the types share parameter templates: the i-th
    motor of every type is a jittered copy of the same template, which
    makes the label carry no information about the signal even for this
    one finite roster, not just in expectation.
    """
    ranges = {
        "pump": {"h3": (0.20, 0.26), "h5": (0.03, 0.06), "decay": (45.0, 65.0)},
        "compressor": {"h5": (0.20, 0.26), "h7": (0.05, 0.09), "decay": (82.0, 105.0)},
        "fan": {"h2": (0.00, 0.02), "h3": (0.00, 0.02), "decay": (40.0, 52.0)},
    }
    templates = []
    for t in range(max(_TYPE_COUNTS.values())):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2100 + t,)))
        decay = float(rng.uniform(40.0, 105.0))
        harmonics = {}
        for order in (2, 3, 5, 7):
            mag = float(rng.uniform(0.0, 0.26))
            if mag > 0.003:
                harmonics[order] = (mag, float(rng.uniform(0, TWO_PI)))
        templates.append(
            {
                "decay": decay,
                "harmonics": harmonics,
                "env": float(rng.uniform(1.5, 6.0)),
                "amplitude": float(rng.uniform(0.8, 12.0)),
                "dc_scale": float(rng.uniform(0.1, 0.4)),
                "dc_rate": float(rng.uniform(30.0, 80.0)),
            }
        )
    roster = []
    mi = 0
    for mech, count in _TYPE_COUNTS.items():
        for slot in range(count):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2000 + mi,)))
            if keyed:
                mech_ranges = ranges[mech]
                decay = float(rng.uniform(*mech_ranges["decay"]))
                harmonics = {}
                for key, bounds in mech_ranges.items():
                    if key == "decay":
                        continue
                    order = int(key[1:])
                    mag = float(rng.uniform(*bounds))
                    if mag > 0.003:
                        harmonics[order] = (mag, float(rng.uniform(0, TWO_PI)))
                env = _cap_envelope(float(rng.uniform(1.5, 6.0)), decay)
                amplitude = float(rng.uniform(0.8, 12.0))
                dc_scale = float(rng.uniform(0.1, 0.4))
                dc_rate = float(rng.uniform(30.0, 80.0))
            else:
                tpl = templates[slot]
                decay = tpl["decay"] + float(rng.uniform(-1.0, 1.0))
                harmonics = {
                    order: (mag + float(rng.uniform(-0.004, 0.004)), phase)
                    for order, (mag, phase) in tpl["harmonics"].items()
                }
                env = _cap_envelope(tpl["env"] * float(rng.uniform(0.98, 1.02)), decay)
                amplitude = tpl["amplitude"] * float(rng.uniform(0.95, 1.05))
                dc_scale = tpl["dc_scale"]
                dc_rate = tpl["dc_rate"]
            roster.append(
                MotorArchetype(
                    motor_id=f"T{mi + 1:02d}",
                    mech_type=mech,
                    steady_amplitude=amplitude,
                    envelope_scale=env,
                    decay_rate=decay,
                    harmonics=harmonics,
                    noise_level=noise_level,
                    dc_scale=dc_scale,
                    dc_rate=dc_rate,
                )
            )
            mi += 1
    return roster


def write_roster(roster: list[MotorArchetype], path) -> None:
    """Store a roster as key=value blocks separated by blank lines."""
    with open(path, "w", encoding="ascii") as fh:
        for a in roster:
            fh.write(f"motor_id={a.motor_id}\n")
            fh.write(f"mech_type={a.mech_type}\n")
            fh.write(f"steady_amplitude={float(a.steady_amplitude)!r}\n")
            fh.write(f"envelope_scale={float(a.envelope_scale)!r}\n")
            fh.write(f"decay_rate={float(a.decay_rate)!r}\n")
            fh.write(f"noise_level={float(a.noise_level)!r}\n")
            fh.write(f"dc_scale={float(a.dc_scale)!r}\n")
            fh.write(f"dc_rate={float(a.dc_rate)!r}\n")
            fh.write(f"mains_freq={float(a.mains_freq)!r}\n")
            fh.write(f"n_events={a.n_events}\n")
            parts = [
                f"{n}:{float(mag)!r}:{float(ph)!r}"
                for n, (mag, ph) in sorted(a.harmonics.items())
            ]
            fh.write("harmonics=" + ";".join(parts) + "\n\n")


def read_roster(path) -> list[MotorArchetype]:
    roster: list[MotorArchetype] = []
    block: dict[str, str] = {}
    with open(path, "r", encoding="ascii") as fh:
        lines = list(fh) + [""]
    for line in lines:
        line = line.strip()
        if line.startswith("#"):
            continue
        if not line:
            if block:
                roster.append(_archetype_from_block(block, path))
                block = {}
            continue
        key, _, value = line.partition("=")
        block[key.strip()] = value.strip()
    return roster


def _archetype_from_block(block: dict[str, str], path) -> MotorArchetype:
    try:
        harmonics: dict[int, tuple[float, float]] = {}
        raw = block.get("harmonics", "")
        if raw:
            for part in raw.split(";"):
                order, mag, phase = part.split(":")
                harmonics[int(order)] = (float(mag), float(phase))
        return MotorArchetype(
            motor_id=block["motor_id"],
            mech_type=block["mech_type"],
            steady_amplitude=float(block["steady_amplitude"]),
            envelope_scale=float(block["envelope_scale"]),
            decay_rate=float(block["decay_rate"]),
            harmonics=harmonics,
            noise_level=float(block.get("noise_level", "0.02")),
            dc_scale=float(block.get("dc_scale", "0.3")),
            dc_rate=float(block.get("dc_rate", "50.0")),
            mains_freq=float(block.get("mains_freq", "50.0")),
            n_events=int(block.get("n_events", "8")),
        )
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: malformed roster block: {exc}") from exc


NAMED_ROSTERS = {
    "default": default_roster,
    "reference": reference_roster,
    "discriminable": discriminable_roster,
    "typed-keyed": lambda seed=0, noise_level=0.02: typed_roster(True, seed, noise_level),
    "typed-null": lambda seed=0, noise_level=0.02: typed_roster(False, seed, noise_level),
}


def naive_dft(x: np.ndarray, n: int) -> float:
    """Magnitude of DFT bin ``n`` by direct correlation (no FFT).

    Matches the unnormalised convention of ``numpy.fft.rfft``: a pure
    sine of amplitude A at bin n over N samples yields A*N/2.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("x must be 1-D")
    if not (1 <= n <= x.size // 2):
        raise ValueError("harmonic order out of range")
    k = np.arange(x.size)
    angle = TWO_PI * n * k / x.size
    return float(math.hypot(float(x @ np.cos(angle)), float(x @ np.sin(angle))))


def oracle_energy(i: np.ndarray, u: np.ndarray, sample_rate: float) -> float:
    """Energy of i*u by midpoint Riemann sum on a 10x oversampled grid.

    Channels are linearly interpolated separately and multiplied at the
    midpoints; covers the same span as the trapezoidal production route.
    """
    i = np.asarray(i, dtype=float)
    u = np.asarray(u, dtype=float)
    if i.shape != u.shape or i.ndim != 1 or i.size < 2:
        raise ValueError("need two equal-length channels")
    sub = 10
    n_cells = (i.size - 1) * sub
    h = 1.0 / (sample_rate * sub)
    mid = (np.arange(n_cells) + 0.5) * h
    grid = np.arange(i.size) / sample_rate
    return float(np.sum(np.interp(mid, grid, i) * np.interp(mid, grid, u)) * h)


def oracle_lambda(times: np.ndarray, values: np.ndarray,
                  grid_lo: float = 0.01, grid_hi: float = 500.0,
                  grid_n: int = 10_000) -> float:
    """Decay rate by brute-force scan of a dense logarithmic grid.

    At each candidate rate the amplitude and offset are solved in closed
    form; returns the grid point with the smallest residual.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    tau = t - t[0]
    lams = np.exp(np.linspace(math.log(grid_lo), math.log(grid_hi), grid_n))
    e = np.exp(-lams[:, None] * tau[None, :])
    m = y.size
    s_e = e.sum(axis=1)
    s_ee = (e * e).sum(axis=1)
    s_ey = e @ y
    s_y = y.sum()
    den = m * s_ee - s_e * s_e
    safe = np.where(np.abs(den) < 1e-300, 1.0, den)
    a = np.where(np.abs(den) < 1e-300, 0.0, (m * s_ey - s_e * s_y) / safe)
    c = (s_y - a * s_e) / m
    resid = y[None, :] - a[:, None] * e - c[:, None]
    sse = (resid * resid).sum(axis=1)
    return float(lams[int(np.argmin(sse))])
