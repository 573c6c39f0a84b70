"""Action-sequence and future-frame forecasting from per-frame feature sequences."""

__version__ = "0.1.0"
