"""Automated machine-learning pipelines for remaining-useful-life prediction."""

__version__ = "0.1.0"
