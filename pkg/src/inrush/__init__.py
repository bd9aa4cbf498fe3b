"""Turn-on transient analysis and load identification for fixed-speed motors.

The pipeline runs in stages: raw current/voltage records are segmented
into mains periods (:mod:`inrush.signals`), turn-on events are located and
normalised (:mod:`inrush.transients`), each event is condensed into a fixed
feature vector (:mod:`inrush.features`), and support-vector classifiers with
greedy forward feature selection identify the load (:mod:`inrush.ml`,
:mod:`inrush.experiments`).  :mod:`inrush.synth` generates labelled test
corpora and :mod:`inrush.cli` ties the stages into a command line tool.
"""

__version__ = "0.1.0"

from inrush.signals import Waveform, PeriodSlice, parse_waveform, write_waveform
from inrush.transients import TurnOnEvent, DetectionConfig, detect_turn_on, preprocess_event
from inrush.features import FeatureVector, FeatureConfig, extract_all, FEATURE_NAMES

__all__ = [
    "Waveform",
    "PeriodSlice",
    "parse_waveform",
    "write_waveform",
    "TurnOnEvent",
    "DetectionConfig",
    "detect_turn_on",
    "preprocess_event",
    "FeatureVector",
    "FeatureConfig",
    "extract_all",
    "FEATURE_NAMES",
    "__version__",
]
