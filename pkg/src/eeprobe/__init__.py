"""Measure and model energy-efficiency mechanisms of x86 server processors."""

from .core import (ExperimentReport, FrequencyLevel, Histogram, LatencyTrace, LicensePhaseRecord,
                   PowerSample, RegressionFit, TransitionMeasurement, validate_trace)
from .hwif import BackendConfig, SimBackend, SimParameters, open_backend

__version__ = "0.1.0"

__all__ = ["BackendConfig", "ExperimentReport", "FrequencyLevel", "Histogram", "LatencyTrace",
           "LicensePhaseRecord", "PowerSample", "RegressionFit", "SimBackend", "SimParameters",
           "TransitionMeasurement", "open_backend", "validate_trace"]
