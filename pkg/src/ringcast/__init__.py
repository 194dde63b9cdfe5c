"""Subseasonal forecasting with latitude-ring tokens and frequency-domain attention."""

__version__ = "0.1.0"
