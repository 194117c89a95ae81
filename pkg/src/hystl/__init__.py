"""Knowledge-guided hypernetwork crime forecasting across cities."""

__version__ = "0.1.0"
