"""Radiotherapy dosimetry audit analysis: gamma metrics, factorial sensitivities, correlations."""
__version__ = "0.1.0"
