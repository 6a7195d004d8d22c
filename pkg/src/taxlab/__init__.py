"""Household dispatch under alternative electricity-tax schemes."""

__version__ = "0.1.0"
