import numpy as np
import pytest

from inrush.signals import Waveform, WaveformError
from inrush.transients import (
    DetectionConfig,
    TurnOnEvent,
    detect_turn_on,
    event_period_slices,
    preprocess_event,
    process_record,
    read_event,
    steady_scale_factor,
    write_event,
)

FS = 10_000.0
F = 50.0


def burst_record(spans, amp=1.0, total=2.2):
    """Zero current except sine bursts over the given (start, stop) spans."""
    n = int(total * FS)
    t = np.arange(n) / FS
    i = np.zeros(n)
    for a, b in spans:
        m = (t >= a) & (t < b)
        i[m] = amp * np.sin(2 * np.pi * F * (t[m] - a))
    u = 325.0 * np.sin(2 * np.pi * F * t)
    return Waveform(i, u, FS, F)


def test_detection_config_defaults():
    cfg = DetectionConfig()
    assert cfg.on_threshold == 0.1
    assert cfg.quiet_samples == 2000
    assert cfg.steady_tail_periods == 25
    assert cfg.min_separation_periods == 7.0


def test_detects_two_onsets_one_second_apart():
    w = burst_record([(0.3, 0.9), (1.3, 2.2)])
    times = detect_turn_on(w)
    assert times.size == 2
    assert abs(times[0] - 0.3) < 1.0 / F
    assert abs(times[1] - 1.3) < 1.0 / F
    assert abs((times[1] - times[0]) - 1.0) < 2.0 / F


def test_no_event_in_quiet_record():
    w = burst_record([])
    assert detect_turn_on(w).size == 0


def test_loud_from_the_start_is_not_an_onset():
    n = int(2.0 * FS)
    t = np.arange(n) / FS
    i = np.sin(2 * np.pi * F * t)
    w = Waveform(i, np.zeros(n), FS, F)
    # no quiet stretch before the tone, so nothing qualifies
    assert detect_turn_on(w).size == 0


def test_short_record_raises():
    w = Waveform(np.zeros(1000), np.zeros(1000), FS, F)
    with pytest.raises(WaveformError):
        detect_turn_on(w)


def test_steady_scale_factor_is_exact_quarter():
    # steady amplitude 4 with the peak landing exactly on a sample
    w = burst_record([(0.3, 2.2)], amp=4.0)
    t = detect_turn_on(w)
    assert t.size == 1
    assert steady_scale_factor(w, float(t[0])) == 0.25


def test_steady_window_must_fit():
    w = burst_record([(0.3, 2.2)], amp=4.0)
    with pytest.raises(WaveformError):
        steady_scale_factor(w, 2.15)


def test_event_slices_are_six_regular_periods():
    w = burst_record([(0.3, 2.2)])
    t = float(detect_turn_on(w)[0])
    slices = event_period_slices(w, t)
    assert len(slices) == 6
    for s in slices:
        assert not s.irregular
        assert abs(s.duration - 1.0 / F) < 1e-9
    starts = np.array([s.start_time for s in slices])
    assert np.all(np.diff(starts) > 0)
    assert starts[0] >= t - 1e-12


def test_preprocess_shapes_and_steady_peak():
    w = burst_record([(0.3, 2.2)], amp=4.0)
    t = float(detect_turn_on(w)[0])
    e = preprocess_event(w, t)
    assert e.periods.shape == (5, 200)
    assert e.voltage_periods.shape == (5, 200)
    assert e.scale_factor == 0.25
    # normalised steady peak sits at 1
    assert abs(np.max(e.periods[-1]) - 1.0) < 0.05
    assert np.array_equal(e.power_periods, e.periods * e.voltage_periods)


def test_polarity_flip_makes_first_half_peak_positive():
    from inrush.synth import default_roster, generate_event

    arch = default_roster()[0]
    flipped_any = False
    for phase in (0.3, np.pi + 0.3):
        w, _ = generate_event(arch, switch_phase=phase, seed=9)
        t = float(detect_turn_on(w)[0])
        e = preprocess_event(w, t)
        half = e.periods[0, :100]
        assert half[np.argmax(np.abs(half))] > 0
        flipped_any = flipped_any or e.polarity_flipped
    assert flipped_any


def test_joint_negation_gives_identical_event():
    from inrush.synth import default_roster, generate_event

    arch = default_roster()[3]
    w, _ = generate_event(arch, switch_phase=1.0, seed=4)
    neg = Waveform(-w.samples_current, -w.samples_voltage, w.sample_rate, w.mains_freq)
    t = float(detect_turn_on(w)[0])
    t2 = float(detect_turn_on(neg)[0])
    assert t == t2
    a = preprocess_event(w, t)
    b = preprocess_event(neg, t2)
    assert a.polarity_flipped != b.polarity_flipped
    assert np.array_equal(a.periods, b.periods)
    assert np.array_equal(a.voltage_periods, b.voltage_periods)


def test_process_record_matches_manual_pipeline():
    w = burst_record([(0.3, 2.2)], amp=2.0)
    events = process_record(w)
    assert len(events) == 1
    t = float(detect_turn_on(w)[0])
    manual = preprocess_event(w, t)
    assert np.array_equal(events[0].periods, manual.periods)
    assert events[0].event_time == manual.event_time


def test_sample_times_grid():
    w = burst_record([(0.3, 2.2)])
    e = process_record(w)[0]
    st = e.sample_times()
    assert st.shape == (5, 200)
    # row k spans mains periods k+1 .. k+2 after the anchor
    assert st[0, 0] == pytest.approx(0.02)
    assert st[0, -1] == pytest.approx(0.04 - 0.02 / 200)
    assert st[4, 0] == pytest.approx(0.10)


def test_event_file_roundtrip_is_bitwise(tmp_path, bench_event):
    e = bench_event
    p = tmp_path / "ev.csv"
    write_event(e, p, digest="deadbeefdeadbeef")
    first = p.read_text().splitlines()[0]
    assert first == "# config_digest=deadbeefdeadbeef"
    back = read_event(p)
    assert np.array_equal(back.periods, e.periods)
    assert np.array_equal(back.voltage_periods, e.voltage_periods)
    assert back.event_time == e.event_time
    assert back.scale_factor == e.scale_factor
    assert back.polarity_flipped == e.polarity_flipped
    assert back.mains_freq == e.mains_freq
    assert back.motor_id == e.motor_id
    assert back.mech_type == e.mech_type


def test_read_event_rejects_malformed(tmp_path, bench_event):
    p = tmp_path / "ev.csv"
    write_event(bench_event, p)
    body = p.read_text()
    truncated = tmp_path / "short.csv"
    truncated.write_text("\n".join(body.splitlines()[:-10]) + "\n")
    with pytest.raises(WaveformError):
        read_event(truncated)
    wrong = tmp_path / "wrong.csv"
    wrong.write_text(body.replace("points_per_period=200", "points_per_period=100"))
    with pytest.raises(WaveformError):
        read_event(wrong)


def test_turn_on_event_validation():
    good = np.zeros((5, 200))
    with pytest.raises(ValueError):
        TurnOnEvent(np.zeros((4, 200)), good, 0.5, 1.0, False, 50.0)
    with pytest.raises(ValueError):
        TurnOnEvent(good, good, 0.5, 0.0, False, 50.0)
    with pytest.raises(ValueError):
        TurnOnEvent(good, good, 0.5, 1.0, False, -1.0)
    bad = good.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        TurnOnEvent(bad, good, 0.5, 1.0, False, 50.0)
