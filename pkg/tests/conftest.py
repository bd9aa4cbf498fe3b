import numpy as np
import pytest

from inrush.features import FeatureTable, extract_all
from inrush.synth import discriminable_roster, generate_corpus, generate_event, default_roster
from inrush.transients import TurnOnEvent


def _table_from_corpus(roster, per_motor, seed):
    """Generate a roster's events and extract every feature vector."""
    vals, mids, mechs, files, times = [], [], [], [], []
    counts = {}
    for ev in generate_corpus(roster, per_motor, seed=seed):
        vals.append(extract_all(ev).values)
        mids.append(ev.motor_id)
        mechs.append(ev.mech_type)
        k = counts.get(ev.motor_id, 0)
        counts[ev.motor_id] = k + 1
        files.append(f"{ev.motor_id}/ev{k:03d}.csv")
        times.append(ev.event_time)
    return FeatureTable(np.array(vals), mids, mechs, files, np.array(times))


@pytest.fixture(scope="session")
def build_table():
    return _table_from_corpus


@pytest.fixture(scope="session")
def twin_table():
    """18 motors in twin pairs, 8 events each; the classification bench."""
    return _table_from_corpus(discriminable_roster(seed=0), 8, 0)


@pytest.fixture(scope="session")
def bench_record():
    arch = default_roster()[0]
    w, gt = generate_event(arch, switch_phase=1.3, seed=42)
    return w, gt


@pytest.fixture(scope="session")
def bench_event(bench_record):
    from inrush.transients import detect_turn_on, preprocess_event

    w, _ = bench_record
    times = detect_turn_on(w)
    assert len(times) == 1
    return preprocess_event(w, float(times[0]))


@pytest.fixture
def harmonic_event():
    """Factory for events whose periods are a fixed harmonic recipe."""

    def make(harmonics, mains_freq=50.0):
        th = 2.0 * np.pi * np.arange(200) / 200.0
        row = np.zeros(200)
        for order, (mag, phase) in harmonics.items():
            row += mag * np.sin(order * th + phase)
        periods = np.tile(row, (5, 1))
        voltage = np.tile(325.0 * np.sin(th), (5, 1))
        return TurnOnEvent(periods, voltage, 0.5, 1.0, False, mains_freq)

    return make
