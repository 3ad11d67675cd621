"""Intensity estimation for non-homogeneous Poisson processes with
compositions of increasing triangular maps (neural autoregressive flows)."""

from .estimate import FitConfig, FittedIntensity, fit, intensity_at, kl_between, normalize_pattern
from .flow import SublayerKind, TransportStack, init_stack, log_process_density
from .pattern import DomainBounds, GridSurface, PointPattern

__all__ = [
    "DomainBounds", "FitConfig", "FittedIntensity", "GridSurface", "PointPattern",
    "SublayerKind", "TransportStack", "fit", "init_stack", "intensity_at", "kl_between",
    "log_process_density", "normalize_pattern",
]
