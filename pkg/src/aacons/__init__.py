"""Accountable consensus with adaptive thresholds, simulated under partial synchrony."""
from .model import FaultConfig, Verdict, validate_config

__all__ = ["FaultConfig", "Verdict", "validate_config"]
__version__ = "0.1.0"
