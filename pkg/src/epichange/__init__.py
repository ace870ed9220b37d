"""Epidemic change-point detection in causal time series by a Gaussian
quasi-likelihood scan."""

from __future__ import annotations

from epichange.models import (
    FAMILIES,
    DomainError,
    EpidemicScenario,
    ModelSpec,
    get_model,
    simulate,
    simulate_epidemic,
    validate_params,
)
from epichange.qmle import ConfigurationError, Segment, SegmentFit, fit, sigma_hat
from epichange.scan import (
    DegenerateNormalizationError,
    ScanConfig,
    ScanError,
    ScanReport,
    default_windows,
    run_scan,
    scan_set,
)

__version__ = "0.1.0"

__all__ = [
    "FAMILIES", "ConfigurationError", "DegenerateNormalizationError",
    "DomainError", "EpidemicScenario", "ModelSpec", "ScanConfig", "ScanError",
    "ScanReport", "Segment", "SegmentFit", "default_windows", "fit",
    "get_model", "run_scan", "scan_set", "sigma_hat", "simulate",
    "simulate_epidemic", "validate_params",
]
