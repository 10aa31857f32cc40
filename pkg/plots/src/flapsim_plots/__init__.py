"""Figure rendering for flapsim pipeline outputs (CSV/JSON only)."""

__version__ = "0.1.0"
